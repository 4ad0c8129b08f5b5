use serde_json::Value;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::{validate_message, Message, WireError};

pub const FRAME_HEADER_LEN: usize = 4;

/// Largest accepted payload (16 MiB).
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

/// Result of attempting to decode one frame from the front of a buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Message { message: Message, consumed: usize },
    /// The buffer holds an incomplete frame; nothing was consumed.
    NeedMore,
}

/// Prefixes raw payload bytes with their big-endian length.
pub fn frame_bytes(payload: &[u8]) -> Result<Vec<u8>, WireError> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let payload =
        serde_json::to_vec(&msg.to_value()).map_err(|e| WireError::Json(e.to_string()))?;
    frame_bytes(&payload)
}

fn parse_payload(payload: &[u8]) -> Result<Message, WireError> {
    let value: Value =
        serde_json::from_slice(payload).map_err(|e| WireError::Json(e.to_string()))?;
    let message = Message::from_value(value)?;
    if let Err(violations) = validate_message(&message) {
        let first = &violations[0];
        return Err(WireError::protocol(&first.field, &first.reason));
    }
    Ok(message)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Decoded, WireError> {
    let Some(header) = bytes.get(..FRAME_HEADER_LEN) else {
        return Ok(Decoded::NeedMore);
    };
    let len = u32::from_be_bytes(header.try_into().expect("4-byte header")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let end = FRAME_HEADER_LEN + len;
    let Some(payload) = bytes.get(FRAME_HEADER_LEN..end) else {
        return Ok(Decoded::NeedMore);
    };
    Ok(Decoded::Message {
        message: parse_payload(payload)?,
        consumed: end,
    })
}

/// Reads one message. Returns `Ok(None)` on a clean end of stream between
/// frames.
pub async fn read_message<R>(reader: &mut R) -> Result<Option<Message>, WireError>
where
    R: AsyncRead + Unpin,
{
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut filled = 0;
    while filled < FRAME_HEADER_LEN {
        let n = reader.read(&mut header[filled..]).await?;
        if n == 0 {
            return if filled == 0 {
                Ok(None)
            } else {
                Err(WireError::Truncated)
            };
        }
        filled += n;
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(e)
        }
    })?;
    parse_payload(&payload).map(Some)
}

pub async fn write_message<W>(writer: &mut W, msg: &Message) -> Result<(), WireError>
where
    W: AsyncWrite + Unpin,
{
    let frame = encode_frame(msg)?;
    writer.write_all(&frame).await?;
    writer.flush().await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::Kind;

    #[test]
    fn forty_byte_payload_gets_length_prefix() {
        let payload = br#"{"kind":"ack","body":{"note":"abcdefg"}}"#;
        assert_eq!(payload.len(), 40);
        let framed = frame_bytes(payload).unwrap();
        assert_eq!(framed.len(), 44);
        assert_eq!(&framed[..4], &[0, 0, 0, 0x28]);
        match decode_frame(&framed).unwrap() {
            Decoded::Message { message, consumed } => {
                assert_eq!(consumed, 44);
                assert_eq!(message.kind, Kind::Ack);
            }
            Decoded::NeedMore => panic!("complete frame"),
        }
    }

    #[test]
    fn encoded_ack_prefix_matches_payload_length() {
        let bytes = encode_frame(&Message::ack()).unwrap();
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - 4);
    }

    #[test]
    fn empty_payload_is_rejected() {
        let framed = frame_bytes(b"").unwrap();
        assert!(matches!(decode_frame(&framed), Err(WireError::Json(_))));
    }

    #[test]
    fn truncated_frame_needs_more() {
        let mut bytes = 100u32.to_be_bytes().to_vec();
        bytes.extend(std::iter::repeat_n(b' ', 50));
        assert_eq!(decode_frame(&bytes).unwrap(), Decoded::NeedMore);
        assert_eq!(decode_frame(&bytes[..2]).unwrap(), Decoded::NeedMore);
    }

    #[test]
    fn bogus_kind_is_protocol_error() {
        let framed = frame_bytes(br#"{"kind":"bogus"}"#).unwrap();
        let err = decode_frame(&framed).unwrap_err();
        assert!(matches!(err, WireError::Protocol { ref field, .. } if field == "kind"));
        assert!(err.to_string().contains("unknown kind"));
    }

    #[test]
    fn missing_field_is_named() {
        let framed = frame_bytes(br#"{"kind":"task","assignment_id":"a","body":{}}"#).unwrap();
        let err = decode_frame(&framed).unwrap_err();
        assert!(matches!(err, WireError::Protocol { ref field, .. } if field == "user_id"));
    }

    #[test]
    fn oversize_frames_are_refused() {
        let mut bytes = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes().to_vec();
        bytes.push(b'{');
        assert!(matches!(decode_frame(&bytes), Err(WireError::FrameTooLarge(_))));
        let big = vec![b' '; MAX_FRAME_LEN + 1];
        assert!(matches!(frame_bytes(&big), Err(WireError::FrameTooLarge(_))));
    }

    #[tokio::test]
    async fn async_read_write_roundtrip() {
        let msg = Message::new(Kind::Status, "u1-1", "u1").with("state", "running");
        let mut buf = Vec::new();
        write_message(&mut buf, &msg).await.unwrap();
        write_message(&mut buf, &Message::ack()).await.unwrap();
        let mut reader = &buf[..];
        assert_eq!(read_message(&mut reader).await.unwrap(), Some(msg));
        assert_eq!(read_message(&mut reader).await.unwrap(), Some(Message::ack()));
        assert_eq!(read_message(&mut reader).await.unwrap(), None);

        let mut cut = &buf[..buf.len() - 3];
        read_message(&mut cut).await.unwrap();
        assert!(matches!(read_message(&mut cut).await, Err(WireError::Truncated)));
    }
}
