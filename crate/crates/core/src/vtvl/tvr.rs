use std::collections::BTreeMap;

use chrono::{DateTime, Datelike};
use serde::Serialize;

use crate::taxonomy::{is_plain, PlainPolicy, TokenCategory};

/// Share of value held in plain tokens. `None` for a zero total.
pub fn tvr_ratio(by_category: &BTreeMap<TokenCategory, f64>, policy: PlainPolicy) -> Option<f64> {
    let total: f64 = by_category.values().sum();
    if total <= 0.0 {
        return None;
    }
    let plain: f64 = by_category.iter().filter(|(c, _)| is_plain(**c, policy)).map(|(_, v)| v).sum();
    Some(plain / total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvrInput {
    pub protocol_id: String,
    /// The protocol's own category (lending, DEX, ...).
    pub protocol_category: String,
    pub points: Vec<(u64, BTreeMap<TokenCategory, f64>)>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { (xs[m - 1] + xs[m]) / 2.0 })
}

/// Mean ratio over the protocol's dates with a positive total.
pub fn protocol_tvr(input: &TvrInput, policy: PlainPolicy) -> Option<f64> {
    let rs: Vec<f64> = input.points.iter().filter_map(|(_, c)| tvr_ratio(c, policy)).collect();
    mean(&rs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    /// Below 1e6, up to 1e8, above 1e8 USD average value.
    pub fn of(avg_usd: f64) -> Self {
        if avg_usd < 1e6 {
            SizeBucket::Small
        } else if avg_usd <= 1e8 {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::Small => "<1e6",
            SizeBucket::Medium => "1e6-1e8",
            SizeBucket::Large => ">1e8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    pub group: String,
    pub protocols: usize,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvrReport {
    pub wbtc_plain: bool,
    pub per_protocol: BTreeMap<String, f64>,
    pub by_protocol_category: Vec<GroupStat>,
    pub by_size: Vec<GroupStat>,
    pub by_year: Vec<GroupStat>,
}

fn stats(groups: BTreeMap<String, Vec<f64>>) -> Vec<GroupStat> {
    groups
        .into_iter()
        .filter_map(|(group, rs)| {
            let protocols = rs.len();
            median(rs).map(|median| GroupStat { group, protocols, median })
        })
        .collect()
}

fn year_of(t: u64) -> i32 {
    DateTime::from_timestamp(t as i64, 0).map_or(1970, |d| d.year())
}

/// Medians of the per-protocol ratio by protocol category, by size bucket
/// of average total value, and by calendar year (per-protocol means within
/// each year).
pub fn tvr_groups(inputs: &[TvrInput], policy: PlainPolicy) -> TvrReport {
    let mut per_protocol = BTreeMap::new();
    let mut by_cat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_size: BTreeMap<SizeBucket, Vec<f64>> = BTreeMap::new();
    let mut by_year: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for input in inputs {
        let Some(r) = protocol_tvr(input, policy) else { continue };
        per_protocol.insert(input.protocol_id.clone(), r);
        by_cat.entry(input.protocol_category.clone()).or_default().push(r);
        let totals: Vec<f64> = input.points.iter().map(|(_, c)| c.values().sum()).collect();
        by_size.entry(SizeBucket::of(mean(&totals).unwrap_or(0.0))).or_default().push(r);
        let mut years: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
        for (t, c) in &input.points {
            if let Some(r) = tvr_ratio(c, policy) {
                years.entry(year_of(*t)).or_default().push(r);
            }
        }
        for (y, rs) in years {
            by_year.entry(y.to_string()).or_default().extend(mean(&rs));
        }
    }
    TvrReport {
        wbtc_plain: policy.wbtc_plain,
        per_protocol,
        by_protocol_category: stats(by_cat),
        by_size: stats(by_size.into_iter().map(|(k, v)| (k.label().to_string(), v)).collect()),
        by_year: stats(by_year),
    }
}
