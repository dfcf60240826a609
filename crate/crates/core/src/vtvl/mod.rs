//! Quantity snapshots, valuation and the series built from them.

mod discrepancy;
mod pipeline;
mod tvr;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use serde::Serialize;
use thiserror::Error;

use crate::analytics::CallKey;
use crate::chain::{BalanceQuery, BlockRef, ChainClient, ChainError};
use crate::price::{price_at, EthUsdSeries, PriceError, PricingOptions, Quote, SeriesStore};
use crate::primitives::{u256_dec, u256_to_f64, Address, U256};
use crate::taxonomy::TokenCategory;

pub use discrepancy::{
    band_distribution, discrepancy_ratio, parse_published, Band, BandCounts, BandThresholds, DiscrepancySummary,
    PublishedSeries, DEFAULT_PUBLISHED_COLUMNS,
};
pub use pipeline::{
    price_tokens, reconstruct, token_book, tokens_of, EcosystemPoint, PricingPlan, ReconstructOptions, Reconstruction,
};
pub use tvr::{protocol_tvr, tvr_groups, tvr_ratio, GroupStat, SizeBucket, TvrInput, TvrReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VtvlError {
    #[error("key {0} is shared with other protocols and must be removed first")]
    ContestedKey(CallKey),
    #[error(transparent)]
    Price(#[from] PriceError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("no date with both a vTVL value and a positive published TVL")]
    NoComparableDates,
    #[error("no summaries to distribute")]
    NoSummaries,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedQuery {
    pub key: CallKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantitySnapshot {
    pub protocol_id: String,
    pub block: BlockRef,
    /// Base-unit amounts per (owner, token-or-native).
    #[serde(serialize_with = "serialize_entries")]
    pub entries: BTreeMap<CallKey, U256>,
    pub failed: Vec<FailedQuery>,
    /// More than the tolerated share of queries failed.
    pub unreliable: bool,
}

fn serialize_entries<S: serde::Serializer>(entries: &BTreeMap<CallKey, U256>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(entries.len()))?;
    for (k, v) in entries {
        seq.serialize_element(&(k.to_string(), v.to_string()))?;
    }
    seq.end()
}

/// Issues one balance query per key. Failing queries are recorded, not
/// fatal; the snapshot is marked unreliable when their share exceeds
/// `max_failure_share`.
pub fn build_quantity_snapshot(
    protocol_id: &str,
    keys: &BTreeSet<CallKey>,
    contested: &BTreeSet<CallKey>,
    block: BlockRef,
    client: &ChainClient,
    max_failure_share: f64,
) -> Result<QuantitySnapshot, VtvlError> {
    if let Some(k) = keys.iter().find(|k| contested.contains(k)) {
        return Err(VtvlError::ContestedKey(*k));
    }
    let keys: Vec<CallKey> = keys.iter().copied().collect();
    let queries: Vec<BalanceQuery> =
        keys.iter().map(|k| BalanceQuery { token: k.token(), owner: k.owner(), block }).collect();
    let mut entries = BTreeMap::new();
    let mut failed = Vec::new();
    for (key, result) in keys.iter().zip(client.balances(&queries)) {
        match result {
            Ok(b) => {
                entries.insert(*key, b.amount);
            }
            Err(e) => failed.push(FailedQuery { key: *key, reason: e.to_string() }),
        }
    }
    let unreliable = !keys.is_empty() && failed.len() as f64 / keys.len() as f64 > max_failure_share;
    Ok(QuantitySnapshot { protocol_id: protocol_id.to_string(), block, entries, failed, unreliable })
}

/// Source of USD prices per whole token.
pub trait Prices: Sync {
    fn quote(&self, token: Option<Address>, t: u64) -> Result<Quote, PriceError>;
}

impl<F> Prices for F
where
    F: Fn(Option<Address>, u64) -> Result<Quote, PriceError> + Sync,
{
    fn quote(&self, token: Option<Address>, t: u64) -> Result<Quote, PriceError> {
        self(token, t)
    }
}

/// Prices from stored series and an ETH/USD series.
#[derive(Debug, Clone)]
pub struct PriceBook {
    pub store: SeriesStore,
    pub ethusd: EthUsdSeries,
    pub weth: Address,
    pub options: PricingOptions,
}

impl Prices for PriceBook {
    fn quote(&self, token: Option<Address>, t: u64) -> Result<Quote, PriceError> {
        price_at(token, t, &self.store, self.weth, &self.ethusd, &self.options)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenInfo {
    pub symbol: String,
    pub decimals: u8,
    pub category: TokenCategory,
}

/// Decimals and category of every token that may be valued.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenBook {
    pub tokens: BTreeMap<Address, TokenInfo>,
}

impl TokenBook {
    pub fn native() -> TokenInfo {
        TokenInfo { symbol: "ETH".into(), decimals: 18, category: TokenCategory::EthWeth }
    }

    pub fn insert(&mut self, token: Address, info: TokenInfo) {
        self.tokens.insert(token, info);
    }

    pub fn get(&self, token: Option<Address>) -> Option<TokenInfo> {
        match token {
            None => Some(TokenBook::native()),
            Some(t) => self.tokens.get(&t).cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnpricedEntry {
    pub key: CallKey,
    #[serde(with = "u256_dec")]
    pub amount: U256,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VtvlPoint {
    pub t: u64,
    pub block: u64,
    pub total_usd: f64,
    /// Every category present, zero when empty.
    pub by_category: BTreeMap<TokenCategory, f64>,
    /// Distinct tokens held but without a price.
    pub unpriced_tokens: usize,
    pub unpriced: Vec<UnpricedEntry>,
    pub failed_queries: usize,
    pub unreliable: bool,
}

fn empty_categories() -> BTreeMap<TokenCategory, f64> {
    TokenCategory::ALL.iter().map(|c| (*c, 0.0)).collect()
}

/// USD value of `amount` base units at a whole-token price.
pub fn entry_value(amount: U256, decimals: u8, usd: f64) -> f64 {
    u256_to_f64(amount) / 10f64.powi(decimals as i32) * usd
}

/// Values a snapshot: each entry is amount / 10^decimals × USD price,
/// summed per category in key order. Unpriced entries add nothing and are
/// listed.
pub fn compute_vtvl(
    q: &QuantitySnapshot,
    t: u64,
    prices: &dyn Prices,
    book: &TokenBook,
) -> Result<VtvlPoint, VtvlError> {
    let mut by_category = empty_categories();
    let mut total = 0.0;
    let mut unpriced = Vec::new();
    let mut unpriced_tokens = BTreeSet::new();
    let mut quotes: BTreeMap<Option<Address>, Quote> = BTreeMap::new();
    for (key, amount) in &q.entries {
        if amount.is_zero() {
            continue;
        }
        let token = key.token();
        let quote = match quotes.get(&token) {
            Some(q) => *q,
            None => {
                let q = prices.quote(token, t)?;
                quotes.insert(token, q);
                q
            }
        };
        match (book.get(token), quote.usd()) {
            (Some(info), Some(usd)) => {
                let v = entry_value(*amount, info.decimals, usd);
                *by_category.entry(info.category).or_default() += v;
                total += v;
            }
            _ => {
                unpriced_tokens.insert(token);
                unpriced.push(UnpricedEntry { key: *key, amount: *amount });
            }
        }
    }
    Ok(VtvlPoint {
        t,
        block: q.block.number,
        total_usd: total,
        by_category,
        unpriced_tokens: unpriced_tokens.len(),
        unpriced,
        failed_queries: q.failed.len(),
        unreliable: q.unreliable,
    })
}

/// Midnight UTC of the first day of every month from `from` to `to`
/// inclusive, as `(year, month)` pairs.
pub fn monthly_schedule(from: (i32, u32), to: (i32, u32)) -> Vec<u64> {
    let mut out = Vec::new();
    let Some(mut d) = NaiveDate::from_ymd_opt(from.0, from.1, 1) else {
        return out;
    };
    let Some(end) = NaiveDate::from_ymd_opt(to.0, to.1, 1) else {
        return out;
    };
    while d <= end {
        out.push(d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp() as u64);
        d = if d.month() == 12 {
            NaiveDate::from_ymd_opt(d.year() + 1, 1, 1)
        } else {
            NaiveDate::from_ymd_opt(d.year(), d.month() + 1, 1)
        }
        .expect("first of month exists");
    }
    out
}

/// Chain access, prices and token metadata used to value snapshots.
#[derive(Clone, Copy)]
pub struct Valuation<'a> {
    pub client: &'a ChainClient,
    pub prices: &'a dyn Prices,
    pub book: &'a TokenBook,
}

/// One valued snapshot per schedule entry, at the block current at `t`.
pub fn vtvl_series(
    ctx: Valuation<'_>,
    protocol_id: &str,
    keys: &BTreeSet<CallKey>,
    contested: &BTreeSet<CallKey>,
    schedule: &[u64],
    max_failure_share: f64,
) -> Result<Vec<VtvlPoint>, VtvlError> {
    schedule
        .iter()
        .map(|&t| {
            let block = ctx.client.resolve_block_at(t)?;
            let q = build_quantity_snapshot(protocol_id, keys, contested, block, ctx.client, max_failure_share)?;
            compute_vtvl(&q, t, ctx.prices, ctx.book)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContestedPoint {
    pub t: u64,
    pub block: u64,
    pub total_usd: f64,
    pub keys: usize,
    pub unpriced_tokens: usize,
    pub failed_queries: usize,
}

/// Value of the keys shared between protocols, each counted once.
pub fn contested_value_series(
    ctx: Valuation<'_>,
    contested: &BTreeSet<CallKey>,
    schedule: &[u64],
) -> Result<Vec<ContestedPoint>, VtvlError> {
    let none = BTreeSet::new();
    schedule
        .iter()
        .map(|&t| {
            let block = ctx.client.resolve_block_at(t)?;
            let q = build_quantity_snapshot("contested", contested, &none, block, ctx.client, 1.0)?;
            let p = compute_vtvl(&q, t, ctx.prices, ctx.book)?;
            Ok(ContestedPoint {
                t,
                block: block.number,
                total_usd: p.total_usd,
                keys: contested.len(),
                unpriced_tokens: p.unpriced_tokens,
                failed_queries: p.failed_queries,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn token(n: u8) -> Address {
        Address([n; 20])
    }

    fn book() -> TokenBook {
        let mut b = TokenBook::default();
        let cats = [
            TokenCategory::EthWeth,
            TokenCategory::Wbtc,
            TokenCategory::StableNcb,
            TokenCategory::StableCryptoBacked,
            TokenCategory::Governance,
            TokenCategory::Derivative,
            TokenCategory::Other,
        ];
        for (i, c) in cats.iter().enumerate() {
            b.insert(
                token(i as u8 + 1),
                TokenInfo { symbol: format!("T{i}"), decimals: [18, 8, 6, 18, 18, 12, 0][i], category: *c },
            );
        }
        b
    }

    fn prices(token: Option<Address>, _t: u64) -> Result<Quote, PriceError> {
        Ok(match token {
            None => Quote::Usd { price: 1000.0 },
            Some(a) if a.0[0] <= 6 => Quote::Usd { price: 0.5 + a.0[0] as f64 * 1.25 },
            Some(_) => Quote::Unpriced,
        })
    }

    fn snapshot(entries: &[(CallKey, U256)]) -> QuantitySnapshot {
        QuantitySnapshot {
            protocol_id: "p".into(),
            block: BlockRef { number: 1, timestamp: 0 },
            entries: entries.iter().copied().collect(),
            failed: vec![],
            unreliable: false,
        }
    }

    #[test]
    fn five_weth_at_1000() {
        let weth = Address([1; 20]);
        let mut b = TokenBook::default();
        b.insert(weth, TokenInfo { symbol: "WETH".into(), decimals: 18, category: TokenCategory::EthWeth });
        let q =
            snapshot(&[(CallKey::TokenBalance { token: weth, owner: token(9) }, U256::from(5u64) * U256::exp10(18))]);
        let fixed = |_: Option<Address>, _: u64| -> Result<Quote, PriceError> { Ok(Quote::Usd { price: 1000.0 }) };
        let p = compute_vtvl(&q, 0, &fixed, &b).unwrap();
        assert_eq!(p.total_usd, 5000.0);
        assert_eq!(p.by_category[&TokenCategory::EthWeth], 5000.0);
        assert_eq!(compute_vtvl(&snapshot(&[]), 0, &fixed, &b).unwrap().total_usd, 0.0);
    }

    #[test]
    fn unpriced_entries_are_listed() {
        let q = snapshot(&[
            (CallKey::TokenBalance { token: token(7), owner: token(9) }, U256::from(3u64)),
            (CallKey::TokenBalance { token: token(99), owner: token(9) }, U256::from(4u64)),
        ]);
        let p = compute_vtvl(&q, 0, &prices, &book()).unwrap();
        assert_eq!(p.unpriced_tokens, 2);
        assert_eq!(p.unpriced.len(), 2);
        assert_eq!(p.total_usd, 0.0);
    }

    #[test]
    fn schedule_covers_study_range() {
        let s = monthly_schedule((2021, 1), (2024, 2));
        assert_eq!(s.len(), 38);
        assert_eq!(s[0], 1_609_459_200);
        assert_eq!(*s.last().unwrap(), 1_706_745_600);
        assert_eq!(monthly_schedule((2023, 5), (2023, 5)).len(), 1);
    }

    fn keyed(entries: &[(u8, u8, u128)]) -> Vec<(CallKey, U256)> {
        entries
            .iter()
            .map(|(t, o, a)| {
                let key = if *t == 0 {
                    CallKey::NativeBalance { owner: token(*o) }
                } else {
                    CallKey::TokenBalance { token: token(*t), owner: token(*o) }
                };
                (key, U256::from(*a))
            })
            .collect()
    }

    proptest! {
        #[test]
        fn doubling_balances_doubles_every_value(entries in proptest::collection::vec((0u8..9, 0u8..40, 0u128..u128::MAX / 4), 0..60)) {
            let b = book();
            let q = snapshot(&keyed(&entries));
            let mut doubled = q.clone();
            for v in doubled.entries.values_mut() {
                *v *= 2;
            }
            let p1 = compute_vtvl(&q, 0, &prices, &b).unwrap();
            let p2 = compute_vtvl(&doubled, 0, &prices, &b).unwrap();
            prop_assert_eq!(p2.total_usd, 2.0 * p1.total_usd);
            for c in TokenCategory::ALL {
                prop_assert_eq!(p2.by_category[&c], 2.0 * p1.by_category[&c]);
            }
            let sum: f64 = p1.by_category.values().sum();
            prop_assert!((sum - p1.total_usd).abs() <= 1e-6 * p1.total_usd.max(1.0));
        }
    }
}
