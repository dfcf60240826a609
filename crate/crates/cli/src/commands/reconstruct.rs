use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use chrono::DateTime;
use serde::Deserialize;
use vtvl_core::chain::{ChainClient, ClientOptions, FixtureStore, HttpBackend, Recorder, Replay, RpcBackend};
use vtvl_core::price::{EthUsdSeries, PegOptions, PricingOptions, SeriesOptions, DAY};
use vtvl_core::primitives::Address;
use vtvl_core::taxonomy::{CuratedLists, TokenCategory, DEFAULT_CURATED_LISTS, DEFAULT_DERIVATIVE_RULES};
use vtvl_core::vtvl::{
    monthly_schedule, parse_published, price_tokens, reconstruct, token_book, tokens_of, BandThresholds, PriceBook,
    PricingPlan, PublishedSeries, ReconstructOptions, Reconstruction,
};

use super::{snapshot_order, CliError, Outcome, RunDir};
use crate::config::{parse_month, RunConfig};
use crate::output::{num, Reports};
use crate::store::{file_stem, ProfileStore};

const ATTRIBUTION_NOTE: &str =
    "assumes every address queried during a protocol's TVL computation holds value of that protocol";

fn date(t: u64) -> String {
    DateTime::from_timestamp(t as i64, 0).map_or_else(|| t.to_string(), |d| d.format("%Y-%m-%d").to_string())
}

fn address(s: &str, what: &str) -> anyhow::Result<Address> {
    s.parse().map_err(|e| anyhow!("{what} {s:?}: {e}"))
}

#[derive(Deserialize)]
struct PublishedEntry {
    file: String,
    #[serde(default)]
    category: Option<String>,
}

struct Published {
    series: BTreeMap<String, PublishedSeries>,
    categories: BTreeMap<String, String>,
}

fn load_published(config: &RunConfig) -> anyhow::Result<Published> {
    let mut out = Published { series: BTreeMap::new(), categories: BTreeMap::new() };
    let Some(manifest) = &config.reconstruct.published_manifest else { return Ok(out) };
    let path = config.resolve(manifest);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let entries: BTreeMap<String, PublishedEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let dir = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let columns: Vec<&str> = config.reconstruct.published_columns.iter().map(String::as_str).collect();
    for (id, entry) in entries {
        let p = dir.join(&entry.file);
        let json = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let series = parse_published(&json, &columns).with_context(|| format!("parsing {}", p.display()))?;
        out.series.insert(id.clone(), series);
        if let Some(c) = entry.category {
            out.categories.insert(id, c);
        }
    }
    Ok(out)
}

fn lists(config: &RunConfig) -> anyhow::Result<CuratedLists> {
    let read = |p: &Option<std::path::PathBuf>, default: &str| -> anyhow::Result<String> {
        match p {
            Some(p) => {
                let p = config.resolve(p);
                fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))
            }
            None => Ok(default.to_string()),
        }
    };
    let l = read(&config.reconstruct.curated_lists, DEFAULT_CURATED_LISTS)?;
    let r = read(&config.reconstruct.derivative_rules, DEFAULT_DERIVATIVE_RULES)?;
    Ok(CuratedLists::parse(&l, &r)?)
}

enum Backend {
    Replay,
    Live { recorder: Option<(Arc<FixtureStore>, std::path::PathBuf)> },
}

fn backend(config: &RunConfig) -> anyhow::Result<(Arc<dyn RpcBackend>, Backend)> {
    if let Some(fixture) = &config.chain.fixture {
        let path = config.resolve(fixture);
        let store = FixtureStore::load(&path).with_context(|| format!("loading {}", path.display()))?;
        return Ok((Arc::new(Replay::new(Arc::new(store))), Backend::Replay));
    }
    let url = config.endpoint_url()?.ok_or_else(|| anyhow!("no endpoint configured"))?;
    let http = HttpBackend::new(&url, Duration::from_secs(config.chain.timeout_secs))?;
    match &config.chain.record {
        Some(p) => {
            let path = config.resolve(p);
            let store = Arc::new(if path.exists() { FixtureStore::load(&path)? } else { FixtureStore::new() });
            let rec = Recorder::new(http, store.clone());
            Ok((Arc::new(rec), Backend::Live { recorder: Some((store, path)) }))
        }
        None => Ok((Arc::new(http), Backend::Live { recorder: None })),
    }
}

/// Values every protocol of the chosen snapshot over the monthly schedule
/// and writes the series, comparison and redeemability reports.
pub fn cmd_reconstruct(config: &RunConfig, run: &RunDir) -> Result<Outcome, CliError> {
    let (rpc, mode) = backend(config)?;
    let outcome = reconstruct_with_backend(config, run, rpc)?;
    if let Backend::Live { recorder: Some((store, path)) } = mode {
        store.save(&path).with_context(|| format!("saving {}", path.display()))?;
    }
    Ok(outcome)
}

/// As [`cmd_reconstruct`] over an explicit backend; the configured chain
/// source is ignored.
pub fn reconstruct_with_backend(
    config: &RunConfig,
    run: &RunDir,
    rpc: Arc<dyn RpcBackend>,
) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let store = ProfileStore::new(run.store());
    let stored = store.snapshots()?;
    let snapshot = match &config.reconstruct.snapshot {
        Some(s) => s.clone(),
        None => snapshot_order(config, &stored).into_iter().next().ok_or_else(|| anyhow!("profile store is empty"))?,
    };
    let profiles = store.read_snapshot(&snapshot)?;
    let t = &config.thresholds;
    let schedule = monthly_schedule(
        parse_month(&config.reconstruct.schedule_from)?,
        parse_month(&config.reconstruct.schedule_to)?,
    );
    let ethusd_path = config
        .reconstruct
        .ethusd
        .as_ref()
        .map(|p| config.resolve(p))
        .ok_or_else(|| anyhow!("reconstruct.ethusd is required"))?;
    let ethusd = EthUsdSeries::load(&ethusd_path).map_err(anyhow::Error::from)?;
    let weth = address(&config.reconstruct.weth, "weth")?;
    let factories =
        config.reconstruct.factories.iter().map(|f| address(f, "factory")).collect::<anyhow::Result<Vec<_>>>()?;
    let published = load_published(config)?;
    let lists = lists(config)?;

    let client = ChainClient::new(
        rpc,
        ClientOptions {
            max_attempts: config.chain.max_attempts,
            max_in_flight: config.chain.max_in_flight,
            ..ClientOptions::default()
        },
    );

    let book = token_book(&client, &tokens_of(&profiles), &lists).map_err(anyhow::Error::from)?;
    let staleness = (t.staleness_days * DAY as f64).round() as u64;
    let to_block = match config.reconstruct.price_to_block {
        Some(b) => b,
        None => {
            client
                .resolve_block_at(*schedule.last().expect("schedule is non-empty"))
                .map_err(anyhow::Error::from)?
                .number
        }
    };
    let mut plan = PricingPlan::new(factories, weth, config.reconstruct.price_from_block, to_block);
    plan.window_days = t.outlier_window_days;
    plan.max_deviation = t.outlier_max_deviation;
    plan.series = SeriesOptions { min_points: t.min_liquidity_points };
    plan.peg = PegOptions { max_deviation: t.peg_max_deviation, max_share: t.peg_max_share };
    plan.staleness = staleness;
    plan.manual_exclusions = config
        .reconstruct
        .manual_exclusions
        .iter()
        .map(|a| address(a, "manual exclusion"))
        .collect::<anyhow::Result<BTreeSet<_>>>()?;
    let series = price_tokens(&client, &book, &plan, &ethusd).map_err(anyhow::Error::from)?;

    let reports = Reports::new(run.reports(), &config.hash())?.sub("reconstruct")?;
    series.save(&reports.dir().join("prices")).map_err(anyhow::Error::from)?;
    let prices = PriceBook { store: series, ethusd, weth, options: PricingOptions { staleness } };
    let options = ReconstructOptions {
        max_failure_share: t.failure_tolerance,
        bands: BandThresholds { tight: t.band_tight, aligned: t.band_aligned },
        published: published.series,
        protocol_categories: published.categories,
    };
    let r = reconstruct(&profiles, &schedule, &client, &prices, &book, &options).map_err(anyhow::Error::from)?;
    outcome.warnings.extend(r.warnings.iter().cloned());

    write_reports(&reports, &r, &book, &prices, &mut outcome)?;
    Ok(outcome)
}

fn category_columns() -> Vec<&'static str> {
    TokenCategory::ALL.iter().map(|c| c.label()).collect()
}

fn write_reports(
    reports: &Reports,
    r: &Reconstruction,
    book: &vtvl_core::vtvl::TokenBook,
    prices: &PriceBook,
    outcome: &mut Outcome,
) -> anyhow::Result<()> {
    let notes = [ATTRIBUTION_NOTE];
    let w = &mut outcome.written;

    w.push(reports.csv(
        "tokens.csv",
        &[],
        &["token", "symbol", "decimals", "category", "price_status", "points", "dropped_outliers"],
        book.tokens.iter().map(|(addr, info)| {
            let s = prices.store.get(addr);
            vec![
                addr.to_string(),
                info.symbol.clone(),
                info.decimals.to_string(),
                info.category.label().to_string(),
                s.map_or_else(
                    || if *addr == prices.weth { "eth_usd".into() } else { String::new() },
                    |s| {
                        serde_json::to_value(s.status)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_string))
                            .unwrap_or_default()
                    },
                ),
                s.map_or(0, |s| s.points.len()).to_string(),
                s.map_or(0, |s| s.dropped_outliers).to_string(),
            ]
        }),
    )?);

    let protocols = reports.sub("protocols")?;
    let mut columns = vec!["date", "total_usd"];
    columns.extend(category_columns());
    columns.extend(["unpriced_tokens", "failed_queries", "unreliable"]);
    let mut unpriced = Vec::new();
    for (id, points) in &r.protocols {
        let rows = points.iter().map(|p| {
            let mut row = vec![date(p.t), num(p.total_usd)];
            row.extend(p.by_category.values().map(|v| num(*v)));
            row.extend([p.unpriced_tokens.to_string(), p.failed_queries.to_string(), p.unreliable.to_string()]);
            row
        });
        w.push(protocols.csv(&format!("{}.csv", file_stem(id)), &notes, &columns, rows)?);
        for p in points {
            for u in &p.unpriced {
                unpriced.push(vec![
                    id.clone(),
                    date(p.t),
                    u.key.owner().to_string(),
                    u.key.token().map_or_else(|| "native".into(), |t| t.to_string()),
                    u.amount.to_string(),
                ]);
            }
        }
    }
    w.push(reports.csv("unpriced.csv", &[], &["protocol", "date", "owner", "token", "amount"], unpriced)?);

    let mut eco_cols = vec!["date", "total_usd"];
    eco_cols.extend(category_columns());
    eco_cols.extend(["contested_usd", "protocols"]);
    w.push(reports.csv(
        "ecosystem.csv",
        &notes,
        &eco_cols,
        r.ecosystem.iter().map(|e| {
            let mut row = vec![date(e.t), num(e.total_usd)];
            row.extend(e.by_category.values().map(|v| num(*v)));
            row.extend([num(e.contested_usd), e.protocols.to_string()]);
            row
        }),
    )?);
    w.push(reports.csv(
        "contested.csv",
        &[],
        &["date", "total_usd", "keys", "unpriced_tokens", "failed_queries"],
        r.contested.iter().map(|c| {
            vec![
                date(c.t),
                num(c.total_usd),
                c.keys.to_string(),
                c.unpriced_tokens.to_string(),
                c.failed_queries.to_string(),
            ]
        }),
    )?);
    w.push(
        reports.csv(
            "contested_keys.csv",
            &[],
            &["owner", "token"],
            r.contested_keys
                .iter()
                .map(|k| vec![k.owner().to_string(), k.token().map_or_else(|| "native".into(), |t| t.to_string())]),
        )?,
    );
    w.push(
        reports.csv(
            "discrepancy.csv",
            &notes,
            &["protocol", "ratio", "n_dates", "band"],
            r.discrepancies
                .iter()
                .map(|d| vec![d.protocol_id.clone(), num(d.ratio), d.n_dates.to_string(), d.band.label().to_string()]),
        )?,
    );
    let bands: Vec<Vec<String>> = match &r.bands {
        Some(b) => [
            ("tight", b.tight),
            ("aligned", b.aligned),
            ("divergent", b.divergent),
            ("within_aligned", b.within_aligned),
            ("above_one", b.above_one),
            ("minus_one", b.minus_one),
        ]
        .into_iter()
        .map(|(name, n)| vec![name.to_string(), n.to_string(), num(b.share(n))])
        .collect(),
        None => Vec::new(),
    };
    w.push(reports.csv("bands.csv", &[], &["band", "protocols", "share"], bands)?);

    let mut groups = Vec::new();
    let mut per_protocol = Vec::new();
    for report in &r.tvr {
        let policy = if report.wbtc_plain { "wbtc_plain" } else { "wbtc_derivative" };
        for (grouping, stats) in
            [("protocol_category", &report.by_protocol_category), ("size", &report.by_size), ("year", &report.by_year)]
        {
            for g in stats.iter() {
                groups.push(vec![
                    policy.to_string(),
                    grouping.to_string(),
                    g.group.clone(),
                    g.protocols.to_string(),
                    num(g.median),
                ]);
            }
        }
        for (id, ratio) in &report.per_protocol {
            per_protocol.push(vec![policy.to_string(), id.clone(), num(*ratio)]);
        }
    }
    w.push(reports.csv(
        "tvr_groups.csv",
        &[],
        &["policy", "grouping", "group", "protocols", "median_ratio"],
        groups,
    )?);
    w.push(reports.csv("tvr_protocols.csv", &[], &["policy", "protocol", "ratio"], per_protocol)?);
    Ok(())
}
