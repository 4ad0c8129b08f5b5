mod common;

use common::wire_gen::{decode_in_pieces, message};
use fleetswap::wire::{decode_frame, encode_frame, read_message, Decoded};
use proptest::collection::vec;
use proptest::prelude::*;
use tokio::io::AsyncWriteExt;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn messages_round_trip_byte_exactly(msg in message()) {
        let bytes = encode_frame(&msg).unwrap();
        match decode_frame(&bytes).unwrap() {
            Decoded::Message { message, consumed } => {
                prop_assert_eq!(consumed, bytes.len());
                prop_assert_eq!(&encode_frame(&message).unwrap(), &bytes);
                prop_assert_eq!(message, msg);
            }
            Decoded::NeedMore => prop_assert!(false, "complete frame reported as partial"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn arbitrary_splits_never_desynchronize(
        msgs in vec(message(), 1..12),
        raw_cuts in vec(any::<prop::sample::Index>(), 0..40),
    ) {
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
        let mut cuts: Vec<usize> = raw_cuts.iter().map(|i| i.index(stream.len() + 1)).collect();
        cuts.sort_unstable();
        prop_assert_eq!(decode_in_pieces(&stream, &cuts), msgs);
    }

    #[test]
    fn byte_at_a_time_socket_reads(msgs in vec(message(), 1..4), chunk in 1usize..7) {
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let got = rt.block_on(async {
            let (mut tx, mut rx) = tokio::io::duplex(8);
            let writer = tokio::spawn(async move {
                for piece in stream.chunks(chunk) {
                    tx.write_all(piece).await.unwrap();
                }
            });
            let mut got = Vec::new();
            while let Some(m) = read_message(&mut rx).await.unwrap() {
                got.push(m);
            }
            writer.await.unwrap();
            got
        });
        prop_assert_eq!(got, msgs);
    }
}

#[test]
fn oversized_header_is_rejected_before_reading_the_payload() {
    let header = (16u32 * 1024 * 1024 + 1).to_be_bytes();
    assert!(decode_frame(&header).is_err());
}
