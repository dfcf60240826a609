use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::CallKey;
use crate::profile::ProtocolProfile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DuplicateFinding {
    pub key: CallKey,
    /// At least two distinct protocols.
    pub protocols: BTreeSet<String>,
}

/// Balance queries issued by more than one protocol in the same snapshot,
/// sorted by key.
pub fn find_duplicates(profiles: &[ProtocolProfile]) -> Vec<DuplicateFinding> {
    let mut owners: BTreeMap<CallKey, BTreeSet<String>> = BTreeMap::new();
    for p in profiles {
        for key in &p.balance_call_keys {
            owners.entry(*key).or_default().insert(p.protocol_id.clone());
        }
    }
    owners
        .into_iter()
        .filter(|(_, protocols)| protocols.len() >= 2)
        .map(|(key, protocols)| DuplicateFinding { key, protocols })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::Address;
    use proptest::prelude::*;

    fn with_keys(id: &str, keys: &[CallKey]) -> ProtocolProfile {
        let mut p = ProtocolProfile::empty(id, "s");
        p.balance_call_keys = keys.iter().copied().collect();
        p
    }

    #[test]
    fn curve_and_bent_share_steth_pool() {
        let key = CallKey::TokenBalance {
            token: "0xae7ab96520de3a18e5e111b5eaab095312d7fe84".parse().unwrap(),
            owner: "0xdc24316b9ae028f1497c275eb9192a3ea0f67022".parse().unwrap(),
        };
        let other = CallKey::NativeBalance { owner: Address([7; 20]) };
        let found =
            find_duplicates(&[with_keys("curve", &[key, other]), with_keys("bent", &[key]), with_keys("lido", &[])]);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].key, key);
        assert_eq!(found[0].protocols.iter().map(String::as_str).collect::<Vec<_>>(), vec!["bent", "curve"]);
    }

    #[test]
    fn same_protocol_twice_is_not_a_duplicate() {
        let key = CallKey::NativeBalance { owner: Address([1; 20]) };
        let a = with_keys("a", &[key]);
        assert!(find_duplicates(&[a.clone(), a]).is_empty());
    }

    proptest! {
        #[test]
        fn matches_nested_loop_oracle(
            corpus in proptest::collection::vec(
                proptest::collection::vec((0u8..6, 0u8..30), 0..15), 1..12)
        ) {
            let profiles: Vec<ProtocolProfile> = corpus
                .iter()
                .enumerate()
                .map(|(i, keys)| {
                    let keys: Vec<CallKey> = keys
                        .iter()
                        .map(|(t, o)| CallKey::TokenBalance { token: Address([*t; 20]), owner: Address([*o; 20]) })
                        .collect();
                    with_keys(&format!("p{}", i % 8), &keys)
                })
                .collect();
            let mut oracle: Vec<DuplicateFinding> = Vec::new();
            let all: BTreeSet<CallKey> = profiles.iter().flat_map(|p| p.balance_call_keys.iter().copied()).collect();
            for key in all {
                let mut who = BTreeSet::new();
                for p in &profiles {
                    if p.balance_call_keys.contains(&key) {
                        who.insert(p.protocol_id.clone());
                    }
                }
                if who.len() >= 2 {
                    oracle.push(DuplicateFinding { key, protocols: who });
                }
            }
            prop_assert_eq!(find_duplicates(&profiles), oracle);
        }
    }
}
