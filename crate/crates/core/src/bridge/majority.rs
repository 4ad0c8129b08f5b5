use std::collections::BTreeMap;

use crate::envelope::ResultEnvelope;

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityOutcome {
    pub winning_signature: Option<String>,
    pub kept: Vec<ResultEnvelope>,
    pub discarded: Vec<ResultEnvelope>,
}

/// Keeps the envelopes carrying the plurality signature. A tie goes to
/// `deployed` if it is among the tied signatures; otherwise nothing wins and
/// every envelope is discarded. Error envelopes must be removed beforehand.
pub fn majority_filter(results: Vec<ResultEnvelope>, deployed: Option<&str>) -> MajorityOutcome {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &results {
        *counts.entry(r.signature.as_str()).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let tied: Vec<&str> = counts
        .iter()
        .filter(|(_, &n)| n == top)
        .map(|(&s, _)| s)
        .collect();
    let winner = match tied.as_slice() {
        [] => None,
        [only] => Some((*only).to_owned()),
        many => deployed.filter(|d| many.contains(d)).map(str::to_owned),
    };
    let (kept, discarded) = results
        .into_iter()
        .partition(|r| winner.as_deref() == Some(r.signature.as_str()));
    MajorityOutcome {
        winning_signature: winner,
        kept,
        discarded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::Payload;
    use proptest::prelude::*;

    fn envs(sigs: &[&str]) -> Vec<ResultEnvelope> {
        sigs.iter()
            .enumerate()
            .map(|(i, s)| {
                ResultEnvelope::ok("u1-1", &format!("c{i}"), 0, *s, Payload::Scalar(i as f64))
            })
            .collect()
    }

    #[test]
    fn plurality() {
        let out = majority_filter(envs(&["A", "A", "B"]), None);
        assert_eq!(out.winning_signature.as_deref(), Some("A"));
        assert_eq!((out.kept.len(), out.discarded.len()), (2, 1));

        let out = majority_filter(envs(&["A", "A", "A"]), None);
        assert_eq!((out.kept.len(), out.discarded.len()), (3, 0));
    }

    #[test]
    fn tie_goes_to_the_deployed_signature() {
        let out = majority_filter(envs(&["A", "B"]), Some("B"));
        assert_eq!(out.winning_signature.as_deref(), Some("B"));
        assert_eq!(out.kept[0].client_id, "c1");
    }

    #[test]
    fn tie_without_the_deployed_signature_keeps_nothing() {
        let out = majority_filter(envs(&["A", "B"]), Some("C"));
        assert_eq!(out.winning_signature, None);
        assert!(out.kept.is_empty());
        assert_eq!(out.discarded.len(), 2);
    }

    #[test]
    fn empty_input() {
        let out = majority_filter(Vec::new(), Some("A"));
        assert_eq!(out.winning_signature, None);
        assert!(out.kept.is_empty() && out.discarded.is_empty());
    }

    proptest! {
        #[test]
        fn outcome_partitions_the_input(
            picks in proptest::collection::vec(0usize..4, 0..12),
            deployed in proptest::option::of(0usize..5),
        ) {
            let names = ["A", "B", "C", "D", "E"];
            let sigs: Vec<&str> = picks.iter().map(|&i| names[i]).collect();
            let input = envs(&sigs);
            let out = majority_filter(input.clone(), deployed.map(|i| names[i]));

            let mut ids: Vec<&str> = out.kept.iter().chain(&out.discarded).map(|e| e.client_id.as_str()).collect();
            ids.sort();
            let mut expected: Vec<&str> = input.iter().map(|e| e.client_id.as_str()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);

            match &out.winning_signature {
                Some(w) => {
                    prop_assert!(out.kept.iter().all(|e| &e.signature == w));
                    prop_assert!(out.discarded.iter().all(|e| &e.signature != w));
                    let n = out.kept.len();
                    for s in names {
                        let c = sigs.iter().filter(|&&x| x == s).count();
                        prop_assert!(c <= n);
                    }
                }
                None => prop_assert!(out.kept.is_empty()),
            }
        }
    }
}
