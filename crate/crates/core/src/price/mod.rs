//! Token/wETH exchange-rate series from AMM reserves, outlier cleaning and
//! USD conversion.

mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainClient, ChainError};
use crate::primitives::{u256_to_f64, Address, U256};

pub use store::{EthUsdSeries, SeriesStore, StoreError};

pub const DAY: u64 = 86_400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub t: u64,
    /// wETH per one whole token.
    pub rate: f64,
    pub source_pair: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceStatus {
    Priced,
    LowLiquidity,
    ManualExcluded,
    StablePegged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub token: Address,
    /// Strictly increasing in `t`.
    pub points: Vec<PricePoint>,
    pub cleaned: bool,
    pub dropped_outliers: usize,
    pub status: PriceStatus,
}

impl PriceSeries {
    pub fn with_status(token: Address, status: PriceStatus) -> Self {
        PriceSeries { token, points: Vec::new(), cleaned: false, dropped_outliers: 0, status }
    }

    /// Latest point at or before `t`.
    pub fn at_or_before(&self, t: u64) -> Option<&PricePoint> {
        let i = self.points.partition_point(|p| p.t <= t);
        i.checked_sub(1).map(|i| &self.points[i])
    }
}

/// Reserves of a pair at one moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReserveSample {
    pub t: u64,
    pub reserve0: U256,
    pub reserve1: U256,
}

/// How to read a pair: which side holds the priced token and both decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLayout {
    pub pair: Address,
    pub token_is_token0: bool,
    pub token_decimals: u8,
    pub weth_decimals: u8,
}

/// wETH per whole token implied by the two reserves, each rescaled by its
/// decimals. `None` when either side is empty.
pub fn rate_from_reserves(
    weth_reserve: U256,
    weth_decimals: u8,
    token_reserve: U256,
    token_decimals: u8,
) -> Option<f64> {
    if weth_reserve.is_zero() || token_reserve.is_zero() {
        return None;
    }
    let weth = u256_to_f64(weth_reserve) / 10f64.powi(weth_decimals as i32);
    let token = u256_to_f64(token_reserve) / 10f64.powi(token_decimals as i32);
    let rate = weth / token;
    (rate.is_finite() && rate > 0.0).then_some(rate)
}

#[derive(Debug, Clone)]
pub struct SeriesOptions {
    /// Fewer raw points than this marks the token low-liquidity.
    pub min_points: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions { min_points: 10_000 }
    }
}

/// Rate series from reserve samples. Samples sharing a timestamp keep the
/// last one. Without a pair the token is low-liquidity.
pub fn build_series(
    token: Address,
    layout: Option<PairLayout>,
    samples: &[ReserveSample],
    options: &SeriesOptions,
) -> PriceSeries {
    let Some(layout) = layout else {
        return PriceSeries::with_status(token, PriceStatus::LowLiquidity);
    };
    let mut by_time: BTreeMap<u64, f64> = BTreeMap::new();
    for s in samples {
        let (tok, weth) = if layout.token_is_token0 { (s.reserve0, s.reserve1) } else { (s.reserve1, s.reserve0) };
        if let Some(rate) = rate_from_reserves(weth, layout.weth_decimals, tok, layout.token_decimals) {
            by_time.insert(s.t, rate);
        }
    }
    let points: Vec<PricePoint> =
        by_time.into_iter().map(|(t, rate)| PricePoint { t, rate, source_pair: layout.pair }).collect();
    let status = if points.len() < options.min_points { PriceStatus::LowLiquidity } else { PriceStatus::Priced };
    PriceSeries { token, points, cleaned: false, dropped_outliers: 0, status }
}

/// Reserve samples of a pair from its `Sync` logs over a block range.
pub fn sample_sync_events(
    client: &ChainClient,
    pair: Address,
    from_block: u64,
    to_block: u64,
) -> Result<Vec<ReserveSample>, ChainError> {
    client
        .sync_events(pair, from_block, to_block)?
        .into_iter()
        .map(|e| Ok(ReserveSample { t: client.block(e.block)?.timestamp, reserve0: e.reserve0, reserve1: e.reserve1 }))
        .collect()
}

/// Centered rolling mean over `[t - w/2, t + w/2]` at every point, on the
/// raw series.
pub fn centered_rolling_mean(points: &[PricePoint], window_secs: u64) -> Vec<f64> {
    let half = window_secs / 2;
    let mut prefix = Vec::with_capacity(points.len() + 1);
    prefix.push(0.0);
    for p in points {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + p.rate);
    }
    let (mut lo, mut hi) = (0usize, 0usize);
    points
        .iter()
        .map(|p| {
            while points[lo].t + half < p.t {
                lo += 1;
            }
            while hi < points.len() && points[hi].t <= p.t.saturating_add(half) {
                hi += 1;
            }
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Single-pass outlier filter: drops every point whose relative deviation
/// from the centered rolling mean is strictly larger than `max_dev`.
pub fn clean_series(series: &PriceSeries, window_days: f64, max_dev: f64) -> PriceSeries {
    let window = (window_days * DAY as f64).round() as u64;
    let means = centered_rolling_mean(&series.points, window);
    let points: Vec<PricePoint> = series
        .points
        .iter()
        .zip(&means)
        .filter(|(p, m)| ((p.rate - **m) / **m).abs() <= max_dev)
        .map(|(p, _)| *p)
        .collect();
    let dropped = series.points.len() - points.len();
    let status = if points.is_empty() && !series.points.is_empty() { PriceStatus::LowLiquidity } else { series.status };
    PriceSeries {
        token: series.token,
        points,
        cleaned: true,
        dropped_outliers: series.dropped_outliers + dropped,
        status,
    }
}

#[derive(Debug, Clone)]
pub struct PegOptions {
    pub max_deviation: f64,
    pub max_share: f64,
}

impl Default for PegOptions {
    fn default() -> Self {
        PegOptions { max_deviation: 0.05, max_share: 0.10 }
    }
}

/// True when a stablecoin holds its peg: at most `max_share` of its
/// pair-implied USD prices deviate from 1 by more than `max_deviation`.
/// A stablecoin without observations is trusted.
pub fn holds_peg(usd_prices: &[f64], options: &PegOptions) -> bool {
    if usd_prices.is_empty() {
        return true;
    }
    let off = usd_prices.iter().filter(|p| (**p - 1.0).abs() > options.max_deviation).count();
    (off as f64 / usd_prices.len() as f64) <= options.max_share
}

/// Pair-implied USD prices of a series, for the peg check.
pub fn implied_usd(series: &PriceSeries, ethusd: &EthUsdSeries, staleness: u64) -> Vec<f64> {
    series.points.iter().filter_map(|p| ethusd.at(p.t, staleness).map(|usd| p.rate * usd)).collect()
}

/// Applies the peg sanity check: pegged stablecoins get the
/// `StablePegged` status; those failing it keep their pair-derived series.
pub fn apply_peg(series: PriceSeries, ethusd: &EthUsdSeries, staleness: u64, options: &PegOptions) -> PriceSeries {
    if holds_peg(&implied_usd(&series, ethusd, staleness), options) {
        PriceSeries { status: PriceStatus::StablePegged, ..series }
    } else {
        series
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quote {
    Usd { price: f64 },
    Unpriced,
}

impl Quote {
    pub fn usd(&self) -> Option<f64> {
        match self {
            Quote::Usd { price } => Some(*price),
            Quote::Unpriced => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriceError {
    #[error("no ETH/USD rate within the staleness horizon of t={0}")]
    NoEthUsd(u64),
}

#[derive(Debug, Clone)]
pub struct PricingOptions {
    /// Oldest usable observation, in seconds before `t`.
    pub staleness: u64,
}

impl Default for PricingOptions {
    fn default() -> Self {
        PricingOptions { staleness: 30 * DAY }
    }
}

/// USD price of one whole token at `t`. The native asset and wETH are
/// priced at the ETH/USD rate.
pub fn price_at(
    token: Option<Address>,
    t: u64,
    store: &SeriesStore,
    weth: Address,
    ethusd: &EthUsdSeries,
    options: &PricingOptions,
) -> Result<Quote, PriceError> {
    let usd_per_eth = ethusd.at(t, options.staleness).ok_or(PriceError::NoEthUsd(t))?;
    let token = match token {
        None => return Ok(Quote::Usd { price: usd_per_eth }),
        Some(tok) if tok == weth => return Ok(Quote::Usd { price: usd_per_eth }),
        Some(tok) => tok,
    };
    let Some(series) = store.get(&token) else {
        return Ok(Quote::Unpriced);
    };
    match series.status {
        PriceStatus::StablePegged => Ok(Quote::Usd { price: 1.0 }),
        PriceStatus::LowLiquidity | PriceStatus::ManualExcluded => Ok(Quote::Unpriced),
        PriceStatus::Priced => Ok(series
            .at_or_before(t)
            .filter(|p| t - p.t <= options.staleness)
            .map_or(Quote::Unpriced, |p| Quote::Usd { price: p.rate * usd_per_eth })),
    }
}
