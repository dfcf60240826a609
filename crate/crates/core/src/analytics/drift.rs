use std::collections::BTreeMap;

use serde::Serialize;

use super::jaccard;
use crate::profile::ProtocolProfile;

#[derive(Debug, Clone, Default)]
pub struct DriftOptions {
    /// Keep protocols that used external hosts or raised errors.
    pub include_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub protocol_id: String,
    pub similarity: f64,
    /// Neither snapshot issued a standard balance query.
    pub both_empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftPair {
    pub reference: String,
    pub other: String,
    /// Sorted by similarity descending, then protocol id.
    pub rows: Vec<DriftRow>,
    pub mean: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub pairs: Vec<DriftPair>,
}

impl DriftReport {
    pub fn means(&self) -> Vec<Option<f64>> {
        self.pairs.iter().map(|p| p.mean).collect()
    }
}

fn index<'a>(profiles: &'a [ProtocolProfile], options: &DriftOptions) -> BTreeMap<&'a str, &'a ProtocolProfile> {
    profiles
        .iter()
        .filter(|p| options.include_flagged || !p.is_flagged())
        .map(|p| (p.protocol_id.as_str(), p))
        .collect()
}

/// Compares the reference snapshot with every older snapshot, protocol by
/// protocol, over their sets of standard balance queries.
pub fn drift_report(
    reference: (&str, &[ProtocolProfile]),
    older: &[(&str, &[ProtocolProfile])],
    options: &DriftOptions,
) -> DriftReport {
    let current = index(reference.1, options);
    let pairs = older
        .iter()
        .map(|(other_id, profiles)| {
            let previous = index(profiles, options);
            let mut rows: Vec<DriftRow> = current
                .iter()
                .filter_map(|(id, now)| {
                    let then = previous.get(id)?;
                    Some(DriftRow {
                        protocol_id: id.to_string(),
                        similarity: jaccard(&now.balance_call_keys, &then.balance_call_keys),
                        both_empty: now.balance_call_keys.is_empty() && then.balance_call_keys.is_empty(),
                    })
                })
                .collect();
            rows.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.protocol_id.cmp(&b.protocol_id)));
            let (mean, warning) = if rows.is_empty() {
                (None, Some(format!("no protocols shared between {} and {other_id}", reference.0)))
            } else {
                let sum: f64 = rows.iter().map(|r| r.similarity).sum();
                (Some(sum / rows.len() as f64), None)
            };
            DriftPair { reference: reference.0.to_string(), other: other_id.to_string(), rows, mean, warning }
        })
        .collect();
    DriftReport { pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::CallKey;
    use crate::primitives::Address;

    fn profile(id: &str, owners: &[u8]) -> ProtocolProfile {
        let mut p = ProtocolProfile::empty(id, "s");
        p.used_onchain = true;
        p.balance_call_keys = owners.iter().map(|o| CallKey::NativeBalance { owner: Address([*o; 20]) }).collect();
        p
    }

    #[test]
    fn unchanged_protocols_score_one() {
        let now = vec![profile("a", &[1, 2]), profile("b", &[3])];
        let then = now.clone();
        let report = drift_report(("new", &now), &[("old", &then)], &DriftOptions::default());
        assert_eq!(report.means(), vec![Some(1.0)]);
        assert!(report.pairs[0].rows.iter().all(|r| r.similarity == 1.0));
    }

    #[test]
    fn protocol_only_in_newer_snapshot_is_skipped() {
        let now = vec![profile("a", &[1, 2]), profile("fresh", &[9])];
        let then = vec![profile("a", &[2, 3])];
        let report = drift_report(("new", &now), &[("old", &then)], &DriftOptions::default());
        let rows = &report.pairs[0].rows;
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].similarity, 1.0 / 3.0);
    }

    #[test]
    fn flagged_protocols_toggle() {
        let mut flagged = profile("f", &[1]);
        flagged.used_external_hosts = true;
        let now = vec![flagged.clone(), profile("a", &[1])];
        let then = vec![profile("f", &[2]), profile("a", &[1])];
        let default = drift_report(("n", &now), &[("o", &then)], &DriftOptions::default());
        assert_eq!(default.pairs[0].rows.len(), 1);
        let all = drift_report(("n", &now), &[("o", &then)], &DriftOptions { include_flagged: true });
        assert_eq!(all.pairs[0].rows.len(), 2);
        assert_eq!(all.pairs[0].rows[1].protocol_id, "f");
    }

    #[test]
    fn no_overlap_warns() {
        let now = vec![profile("a", &[1])];
        let then = vec![profile("b", &[1])];
        let report = drift_report(("n", &now), &[("o", &then)], &DriftOptions::default());
        assert_eq!(report.pairs[0].mean, None);
        assert!(report.pairs[0].warning.is_some());
    }
}
