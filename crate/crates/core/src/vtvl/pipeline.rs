use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::discrepancy::{
    band_distribution, discrepancy_ratio, BandCounts, BandThresholds, DiscrepancySummary, PublishedSeries,
};
use super::tvr::{tvr_groups, TvrInput, TvrReport};
use super::{
    contested_value_series, empty_categories, vtvl_series, ContestedPoint, Prices, TokenBook, TokenInfo, Valuation,
    VtvlError, VtvlPoint,
};
use crate::analytics::{find_duplicates, CallKey};
use crate::chain::{ChainClient, ChainError};
use crate::price::{
    apply_peg, build_series, clean_series, sample_sync_events, EthUsdSeries, PairLayout, PegOptions, PriceSeries,
    PriceStatus, SeriesOptions, SeriesStore,
};
use crate::primitives::{u256_to_f64, Address};
use crate::profile::ProtocolProfile;
use crate::taxonomy::{categorize, CuratedLists, PlainPolicy, TokenCategory, TokenLabel};

/// Reads metadata for every token and assigns its category.
pub fn token_book(
    client: &ChainClient,
    tokens: &BTreeSet<Address>,
    lists: &CuratedLists,
) -> Result<TokenBook, ChainError> {
    let tokens: Vec<Address> = tokens.iter().copied().collect();
    let metas = client.par_map(&tokens, |t| client.token_metadata(*t));
    let mut book = TokenBook::default();
    for (token, meta) in tokens.into_iter().zip(metas) {
        let meta = meta?;
        let label = TokenLabel { symbol: meta.symbol.clone(), name: meta.name.clone() };
        let category = categorize(Some(token), &label, lists);
        book.insert(token, TokenInfo { symbol: meta.symbol, decimals: meta.decimals, category });
    }
    Ok(book)
}

#[derive(Debug, Clone)]
pub struct PricingPlan {
    pub factories: Vec<Address>,
    pub weth: Address,
    pub from_block: u64,
    pub to_block: u64,
    pub window_days: f64,
    pub max_deviation: f64,
    pub series: SeriesOptions,
    pub peg: PegOptions,
    pub staleness: u64,
    pub manual_exclusions: BTreeSet<Address>,
}

impl PricingPlan {
    pub fn new(factories: Vec<Address>, weth: Address, from_block: u64, to_block: u64) -> Self {
        PricingPlan {
            factories,
            weth,
            from_block,
            to_block,
            window_days: 10.0,
            max_deviation: 0.20,
            series: SeriesOptions::default(),
            peg: PegOptions::default(),
            staleness: crate::price::PricingOptions::default().staleness,
            manual_exclusions: BTreeSet::new(),
        }
    }
}

/// The registered wETH pair holding the most wETH at the middle of the range.
fn reference_pair(
    client: &ChainClient,
    plan: &PricingPlan,
    token: Address,
    weth_decimals: u8,
    token_decimals: u8,
) -> Result<Option<PairLayout>, ChainError> {
    let mid = client.block(plan.from_block + (plan.to_block - plan.from_block) / 2)?;
    let mut best: Option<(f64, PairLayout)> = None;
    for factory in &plan.factories {
        let Some(pair) = client.get_pair(*factory, token, plan.weth)? else { continue };
        let reserves = match client.get_reserves(pair, mid) {
            Ok(r) => r,
            Err(ChainError::PairUnavailable { .. }) => continue,
            Err(e) => return Err(e),
        };
        let token_is_token0 = reserves.token0 == token;
        let depth = u256_to_f64(if token_is_token0 { reserves.reserve1 } else { reserves.reserve0 });
        if best.as_ref().is_none_or(|(d, _)| depth > *d) {
            best = Some((depth, PairLayout { pair, token_is_token0, token_decimals, weth_decimals }));
        }
    }
    Ok(best.map(|(_, l)| l))
}

/// Builds, cleans and peg-checks a wETH-denominated series for every
/// non-wETH token in the book.
pub fn price_tokens(
    client: &ChainClient,
    book: &TokenBook,
    plan: &PricingPlan,
    ethusd: &EthUsdSeries,
) -> Result<SeriesStore, ChainError> {
    let weth_decimals = book.get(Some(plan.weth)).map_or(18, |i| i.decimals);
    let tokens: Vec<(Address, TokenInfo)> =
        book.tokens.iter().filter(|(t, _)| **t != plan.weth).map(|(t, i)| (*t, i.clone())).collect();
    let built = client.par_map(&tokens, |(token, info)| -> Result<PriceSeries, ChainError> {
        if plan.manual_exclusions.contains(token) {
            return Ok(PriceSeries::with_status(*token, PriceStatus::ManualExcluded));
        }
        let layout = reference_pair(client, plan, *token, weth_decimals, info.decimals)?;
        let samples = match &layout {
            Some(l) => sample_sync_events(client, l.pair, plan.from_block, plan.to_block)?,
            None => Vec::new(),
        };
        let mut series = build_series(*token, layout, &samples, &plan.series);
        if !series.points.is_empty() {
            series = clean_series(&series, plan.window_days, plan.max_deviation);
        }
        if matches!(info.category, TokenCategory::StableNcb | TokenCategory::StableCryptoBacked) {
            series = apply_peg(series, ethusd, plan.staleness, &plan.peg);
            if series.status != PriceStatus::StablePegged {
                warn!("{token} ({}) fails the peg check; priced from its pair", info.symbol);
            }
        }
        Ok(series)
    });
    let mut store = SeriesStore::new();
    for s in built {
        store.insert(s?);
    }
    Ok(store)
}

#[derive(Debug, Clone)]
pub struct ReconstructOptions {
    pub max_failure_share: f64,
    pub bands: BandThresholds,
    /// Published series per protocol id.
    pub published: BTreeMap<String, PublishedSeries>,
    /// Protocol category (lending, DEX, ...) per protocol id.
    pub protocol_categories: BTreeMap<String, String>,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            max_failure_share: 0.20,
            bands: BandThresholds::default(),
            published: BTreeMap::new(),
            protocol_categories: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EcosystemPoint {
    pub t: u64,
    pub total_usd: f64,
    pub by_category: BTreeMap<TokenCategory, f64>,
    pub contested_usd: f64,
    pub protocols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reconstruction {
    pub protocols: BTreeMap<String, Vec<VtvlPoint>>,
    /// Keys removed from every protocol and valued once in `contested`.
    pub contested_keys: BTreeSet<CallKey>,
    pub contested: Vec<ContestedPoint>,
    pub ecosystem: Vec<EcosystemPoint>,
    pub discrepancies: Vec<DiscrepancySummary>,
    pub bands: Option<BandCounts>,
    pub tvr: Vec<TvrReport>,
    pub warnings: Vec<String>,
}

/// Every token appearing in the protocols' standard balance queries.
pub fn tokens_of(profiles: &[ProtocolProfile]) -> BTreeSet<Address> {
    profiles.iter().flat_map(|p| p.balance_call_keys.iter().filter_map(|k| k.token())).collect()
}

/// vTVL of every protocol with standard balance queries, after removing
/// keys shared across protocols, plus the derived reports.
pub fn reconstruct(
    profiles: &[ProtocolProfile],
    schedule: &[u64],
    client: &ChainClient,
    prices: &dyn Prices,
    book: &TokenBook,
    options: &ReconstructOptions,
) -> Result<Reconstruction, VtvlError> {
    let contested_keys: BTreeSet<CallKey> = find_duplicates(profiles).into_iter().map(|f| f.key).collect();
    let mut targets: Vec<(&str, BTreeSet<CallKey>)> = profiles
        .iter()
        .filter(|p| !p.balance_call_keys.is_empty())
        .map(|p| (p.protocol_id.as_str(), p.balance_call_keys.difference(&contested_keys).copied().collect()))
        .collect();
    targets.sort_by(|a, b| a.0.cmp(b.0));

    let ctx = Valuation { client, prices, book };
    let series: Vec<Result<(String, Vec<VtvlPoint>), VtvlError>> = targets
        .par_iter()
        .map(|(id, keys)| {
            vtvl_series(ctx, id, keys, &contested_keys, schedule, options.max_failure_share)
                .map(|s| (id.to_string(), s))
        })
        .collect();
    let mut protocols = BTreeMap::new();
    for s in series {
        let (id, points) = s?;
        protocols.insert(id, points);
    }
    let contested = contested_value_series(ctx, &contested_keys, schedule)?;

    let mut warnings = Vec::new();
    for (id, points) in &protocols {
        let unreliable = points.iter().filter(|p| p.unreliable).count();
        if unreliable > 0 {
            warnings.push(format!("{id}: {unreliable} unreliable snapshot(s)"));
        }
    }

    let ecosystem = schedule
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut by_category = empty_categories();
            let mut total = 0.0;
            for points in protocols.values() {
                let p = &points[i];
                total += p.total_usd;
                for (c, v) in &p.by_category {
                    *by_category.entry(*c).or_default() += v;
                }
            }
            EcosystemPoint {
                t,
                total_usd: total,
                by_category,
                contested_usd: contested[i].total_usd,
                protocols: protocols.len(),
            }
        })
        .collect();

    let mut discrepancies = Vec::new();
    for (id, points) in &protocols {
        let Some(published) = options.published.get(id) else {
            warnings.push(format!("{id}: no published series; discrepancy skipped"));
            continue;
        };
        let pairs: Vec<(u64, f64)> = points.iter().map(|p| (p.t, p.total_usd)).collect();
        match discrepancy_ratio(id, &pairs, published, &options.bands) {
            Ok(s) => discrepancies.push(s),
            Err(e) => warnings.push(format!("{id}: {e}")),
        }
    }
    let bands = band_distribution(&discrepancies).ok();

    let inputs: Vec<TvrInput> = protocols
        .iter()
        .map(|(id, points)| TvrInput {
            protocol_id: id.clone(),
            protocol_category: options.protocol_categories.get(id).cloned().unwrap_or_else(|| "Others".into()),
            points: points.iter().map(|p| (p.t, p.by_category.clone())).collect(),
        })
        .collect();
    let tvr = [false, true].into_iter().map(|w| tvr_groups(&inputs, PlainPolicy { wbtc_plain: w })).collect();

    for w in &warnings {
        warn!("{w}");
    }
    Ok(Reconstruction { protocols, contested_keys, contested, ecosystem, discrepancies, bands, tvr, warnings })
}
