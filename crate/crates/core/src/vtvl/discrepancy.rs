use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::VtvlError;
use crate::price::DAY;

/// Chain-scoped columns summed into the published Ethereum TVL by default.
pub const DEFAULT_PUBLISHED_COLUMNS: [&str; 5] =
    ["Ethereum", "Ethereum-borrowed", "Ethereum-pool2", "Ethereum-staking", "Ethereum-vesting"];

/// Published TVL per UTC day.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PublishedSeries {
    pub by_day: BTreeMap<u64, f64>,
}

impl PublishedSeries {
    pub fn from_points(points: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut by_day = BTreeMap::new();
        for (t, v) in points {
            *by_day.entry(t / DAY).or_insert(0.0) += v;
        }
        PublishedSeries { by_day }
    }

    pub fn at(&self, t: u64) -> Option<f64> {
        self.by_day.get(&(t / DAY)).copied()
    }
}

#[derive(Deserialize)]
struct Export {
    #[serde(rename = "chainTvls", default)]
    chain_tvls: BTreeMap<String, ChainColumn>,
}

#[derive(Deserialize)]
struct ChainColumn {
    #[serde(default)]
    tvl: Vec<DatedValue>,
}

#[derive(Deserialize)]
struct DatedValue {
    date: u64,
    #[serde(rename = "totalLiquidityUSD")]
    total_liquidity_usd: f64,
}

/// Parses an aggregator export and sums the named columns per day. Columns
/// absent from the file contribute nothing.
pub fn parse_published(json: &str, columns: &[&str]) -> Result<PublishedSeries, serde_json::Error> {
    let export: Export = serde_json::from_str(json)?;
    let mut by_day: BTreeMap<u64, f64> = BTreeMap::new();
    for name in columns {
        if let Some(col) = export.chain_tvls.get(*name) {
            let mut per_day: BTreeMap<u64, f64> = BTreeMap::new();
            for p in &col.tvl {
                per_day.insert(p.date / DAY, p.total_liquidity_usd);
            }
            for (day, v) in per_day {
                *by_day.entry(day).or_insert(0.0) += v;
            }
        }
    }
    Ok(PublishedSeries { by_day })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Tight,
    Aligned,
    Divergent,
}

impl Band {
    pub fn label(self) -> &'static str {
        match self {
            Band::Tight => "tight",
            Band::Aligned => "aligned",
            Band::Divergent => "divergent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandThresholds {
    pub tight: f64,
    pub aligned: f64,
}

impl Default for BandThresholds {
    fn default() -> Self {
        BandThresholds { tight: 0.05, aligned: 0.5 }
    }
}

impl BandThresholds {
    pub fn band(&self, ratio: f64) -> Band {
        let r = ratio.abs();
        if r <= self.tight {
            Band::Tight
        } else if r <= self.aligned {
            Band::Aligned
        } else {
            Band::Divergent
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancySummary {
    pub protocol_id: String,
    pub ratio: f64,
    pub n_dates: usize,
    pub band: Band,
}

/// Mean of vTVL/published over dates present in both series with a
/// positive published value, minus one. Dates match on the UTC day.
pub fn discrepancy_ratio(
    protocol_id: &str,
    vtvl: &[(u64, f64)],
    published: &PublishedSeries,
    thresholds: &BandThresholds,
) -> Result<DiscrepancySummary, VtvlError> {
    let ratios: Vec<f64> =
        vtvl.iter().filter_map(|&(t, v)| published.at(t).filter(|p| *p > 0.0).map(|p| v / p)).collect();
    if ratios.is_empty() {
        return Err(VtvlError::NoComparableDates);
    }
    let ratio = ratios.iter().sum::<f64>() / ratios.len() as f64 - 1.0;
    Ok(DiscrepancySummary {
        protocol_id: protocol_id.to_string(),
        ratio,
        n_dates: ratios.len(),
        band: thresholds.band(ratio),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandCounts {
    pub total: usize,
    pub tight: usize,
    /// Aligned but not tight.
    pub aligned: usize,
    pub divergent: usize,
    /// Tight plus aligned.
    pub within_aligned: usize,
    pub above_one: usize,
    pub minus_one: usize,
}

impl BandCounts {
    pub fn tails(&self) -> usize {
        self.above_one + self.minus_one
    }

    pub fn share(&self, count: usize) -> f64 {
        count as f64 / self.total as f64
    }
}

pub fn band_distribution(summaries: &[DiscrepancySummary]) -> Result<BandCounts, VtvlError> {
    if summaries.is_empty() {
        return Err(VtvlError::NoSummaries);
    }
    let count = |b: Band| summaries.iter().filter(|s| s.band == b).count();
    let (tight, aligned) = (count(Band::Tight), count(Band::Aligned));
    Ok(BandCounts {
        total: summaries.len(),
        tight,
        aligned,
        divergent: count(Band::Divergent),
        within_aligned: tight + aligned,
        above_one: summaries.iter().filter(|s| s.ratio > 1.0).count(),
        minus_one: summaries.iter().filter(|s| s.ratio == -1.0).count(),
    })
}
