//! A small self-contained workspace: traces for two snapshots, a recorded
//! chain fixture, an ETH/USD series, published exports and a config.
//! Everything runs offline.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde_json::json;
use vtvl_core::chain::{abi, FixtureStore, Recorder, SimSymbol, SimulatedNode};
use vtvl_core::primitives::{Address, Selector, U256};
use vtvl_core::trace::{write_trace, Target, TraceKind, TraceRecord};

use crate::commands::{cmd_ingest, reconstruct_with_backend, RunDir};
use crate::config::RunConfig;

pub const WETH: &str = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2";
pub const WBTC: &str = "0x2260fac5e5542a773aa44fbcfedf7c193bc2c599";
pub const USDC: &str = "0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48";
pub const MKR: &str = "0x9f8f72aa9304c8b593d555f12ef6589cc3a579a2";
pub const LP: &str = "0x5555555555555555555555555555555555555555";
pub const FACTORY: &str = "0xf0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0";

/// First block: 2022-12-15 00:00 UTC; one block per day.
pub const GENESIS: u64 = 1_671_062_400;
pub const BLOCKS: u64 = 130;
/// USD per ETH on the first day of January to April 2023.
pub const ETH_USD: [f64; 4] = [1200.0, 1600.0, 1500.0, 1800.0];
pub const SCHEDULE: [u64; 4] = [1_672_531_200, 1_675_209_600, 1_677_628_800, 1_680_307_200];

pub const NEW_SNAPSHOT: &str = "2024-01-04";
pub const OLD_SNAPSHOT: &str = "2023-10-04";

fn addr(s: &str) -> Address {
    s.parse().expect("valid constant address")
}

fn a(n: u8) -> Address {
    Address([n; 20])
}

fn units(n: u64, decimals: usize) -> U256 {
    U256::from(n) * U256::exp10(decimals)
}

/// The chain behind the demo. Alpha holds 100 ETH and 50 wETH at `0xa1..`
/// and 1,000,000 USDC at `0xa2..`; beta holds 2,000 MKR and 3 wBTC (4 from
/// block 76) at `0xb1..` and queries the same USDC position; gamma holds 10
/// unpriceable LP tokens and 20 wETH at `0xc1..`. MKR trades at 0.5 wETH
/// (0.55 from block 76) and wBTC at 15 wETH.
pub fn chain() -> SimulatedNode {
    let (weth, wbtc, usdc, mkr, lp) = (addr(WETH), addr(WBTC), addr(USDC), addr(MKR), addr(LP));
    let mut n = SimulatedNode::with_spacing(BLOCKS, GENESIS, 86_400);
    n.add_token(weth, SimSymbol::String(b"WETH".to_vec()), "Wrapped Ether", Some(18));
    n.add_token(wbtc, SimSymbol::String(b"WBTC".to_vec()), "Wrapped BTC", Some(8));
    n.add_token(usdc, SimSymbol::String(b"USDC".to_vec()), "USD Coin", Some(6));
    n.add_token(mkr, SimSymbol::Bytes32(b"MKR".to_vec()), "Maker", Some(18));
    n.add_token(lp, SimSymbol::String(b"UNI-V2".to_vec()), "Uniswap V2", Some(18));

    n.set_native(a(0xa1), 0, units(100, 18));
    n.set_token_balance(weth, a(0xa1), 0, units(50, 18));
    n.set_token_balance(usdc, a(0xa2), 0, units(1_000_000, 6));
    n.set_token_balance(mkr, a(0xb1), 0, units(2000, 18));
    n.set_token_balance(wbtc, a(0xb1), 0, units(3, 8));
    n.set_token_balance(wbtc, a(0xb1), 76, units(4, 8));
    n.set_token_balance(lp, a(0xc1), 0, units(10, 18));
    n.set_token_balance(weth, a(0xc1), 0, units(20, 18));

    let factory = addr(FACTORY);
    n.add_pair(a(0xe1), mkr, weth, 0);
    n.add_pair(a(0xe2), wbtc, weth, 0);
    n.register_pair(factory, a(0xe1));
    n.register_pair(factory, a(0xe2));
    for b in 0..BLOCKS {
        let mkr_weth = if b < 76 { 500 } else { 550 };
        n.set_reserves(a(0xe1), b, units(1000, 18), units(mkr_weth, 18));
        n.set_reserves(a(0xe2), b, units(10, 8), units(150, 18));
    }
    n
}

/// Hand-computed vTVL in USD per schedule date.
pub const ALPHA_USD: [f64; 4] = [180_000.0, 240_000.0, 225_000.0, 270_000.0];
pub const BETA_USD: [f64; 4] = [1_254_000.0, 1_672_000.0, 1_740_000.0, 2_088_000.0];
pub const GAMMA_USD: [f64; 4] = [24_000.0, 32_000.0, 30_000.0, 36_000.0];
pub const CONTESTED_USD: f64 = 1_000_000.0;

fn balance_of(protocol: &str, snapshot: &str, token: &str, owner: Address) -> TraceRecord {
    TraceRecord {
        protocol_id: protocol.into(),
        snapshot_id: snapshot.into(),
        kind: TraceKind::RpcCall,
        target: Target::Contract(addr(token)),
        calldata: abi::balance_of_calldata(owner),
        block: 100,
        error: None,
    }
}

fn call(protocol: &str, snapshot: &str, target: Address, signature: &str) -> TraceRecord {
    TraceRecord {
        protocol_id: protocol.into(),
        snapshot_id: snapshot.into(),
        kind: TraceKind::RpcCall,
        target: Target::Contract(target),
        calldata: Selector::of_signature(signature).0.to_vec(),
        block: 100,
        error: None,
    }
}

fn native(protocol: &str, snapshot: &str, owner: Address) -> TraceRecord {
    TraceRecord {
        protocol_id: protocol.into(),
        snapshot_id: snapshot.into(),
        kind: TraceKind::RpcGetBalance,
        target: Target::Contract(owner),
        calldata: Vec::new(),
        block: 100,
        error: None,
    }
}

fn http(protocol: &str, snapshot: &str, host: &str, error: Option<&str>) -> TraceRecord {
    TraceRecord {
        protocol_id: protocol.into(),
        snapshot_id: snapshot.into(),
        kind: TraceKind::Http,
        target: Target::Host(host.into()),
        calldata: Vec::new(),
        block: 100,
        error: error.map(str::to_string),
    }
}

pub fn traces(snapshot: &str) -> Vec<TraceRecord> {
    let s = snapshot;
    let newest = snapshot == NEW_SNAPSHOT;
    let mut r = vec![native("alpha", s, a(0xa1)), balance_of("alpha", s, WETH, a(0xa1))];
    if newest {
        r.push(balance_of("alpha", s, USDC, a(0xa2)));
    }
    r.extend([
        balance_of("beta", s, MKR, a(0xb1)),
        balance_of("beta", s, WBTC, a(0xb1)),
        balance_of("beta", s, USDC, a(0xa2)),
        call("beta", s, a(0xe1), "getReserves()"),
        call("beta", s, a(0xe1), "totalSupply()"),
        balance_of("gamma", s, LP, a(0xc1)),
        balance_of("gamma", s, WETH, a(0xc1)),
        call("delta", s, a(0xd1), "getTotalPooledEther()"),
        http("delta", s, "coins.llama.fi", None),
        http("epsilon", s, "api.example.org", Some("GraphQL error: field missing")),
    ]);
    r
}

fn published_export(points: &[(u64, f64, f64)]) -> serde_json::Value {
    let col = |f: &dyn Fn(&(u64, f64, f64)) -> f64| -> serde_json::Value {
        json!({ "tvl": points.iter().map(|p| json!({ "date": p.0, "totalLiquidityUSD": f(p) })).collect::<Vec<_>>() })
    };
    json!({
        "name": "demo",
        "chainTvls": {
            "Ethereum": col(&|p| p.1),
            "Ethereum-staking": col(&|p| p.2),
            "Polygon": col(&|_| 5.0e9),
        }
    })
}

pub const CONFIG: &str = r#"# Demo run: replay the recorded chain fixture, four monthly dates.
[chain]
fixture = "chain.vtvlfx"

[ingest]
traces = ["traces"]
roster = ["zeta"]

[audit]
seed = 7
replicates = 200
min_samples = 5

[reconstruct]
schedule_from = "2023-01"
schedule_to = "2023-04"
ethusd = "ethusd.csv"
factories = ["0xf0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0f0"]
published_manifest = "published/manifest.json"

[thresholds]
min_liquidity_points = 30
"#;

/// Writes the demo workspace into `dir` and records its chain fixture.
pub fn write_demo(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("traces"))?;
    fs::create_dir_all(dir.join("published"))?;
    for s in [OLD_SNAPSHOT, NEW_SNAPSHOT] {
        let mut out = Vec::new();
        write_trace(&mut out, &traces(s))?;
        fs::write(dir.join("traces").join(format!("{s}.jsonl")), out)?;
    }
    let mut ethusd = String::from("timestamp,usd_per_eth\n");
    for (t, p) in SCHEDULE.iter().zip(ETH_USD) {
        ethusd.push_str(&format!("{t},{p}\n"));
    }
    fs::write(dir.join("ethusd.csv"), ethusd)?;

    let alpha: Vec<_> = SCHEDULE.iter().zip(ALPHA_USD).map(|(t, v)| (*t, v - 30_000.0, 30_000.0)).collect();
    let beta: Vec<_> = SCHEDULE.iter().zip(BETA_USD).map(|(t, v)| (*t, v / 1.25, 0.0)).collect();
    let gamma: Vec<_> = SCHEDULE.iter().zip(GAMMA_USD).skip(2).map(|(t, v)| (*t, v / 4.0, 0.0)).collect();
    for (id, pts) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        fs::write(
            dir.join("published").join(format!("{id}.json")),
            serde_json::to_string_pretty(&published_export(&pts))?,
        )?;
    }
    let manifest = json!({
        "alpha": { "file": "alpha.json", "category": "Lending" },
        "beta": { "file": "beta.json", "category": "DEXs" },
        "gamma": { "file": "gamma.json", "category": "Yield" },
    });
    fs::write(dir.join("published/manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let config_path = dir.join("config.toml");
    fs::write(&config_path, CONFIG)?;

    let config = RunConfig::load(&config_path)?;
    let scratch = tempdir_in(dir)?;
    let run = RunDir::new(&scratch);
    cmd_ingest(&config, &run).map_err(|e| anyhow::anyhow!("{e}"))?;
    let store = Arc::new(FixtureStore::new());
    let recorder = Recorder::new(Arc::new(chain()), store.clone());
    reconstruct_with_backend(&config, &run, Arc::new(recorder)).map_err(|e| anyhow::anyhow!("{e}"))?;
    store.save(&dir.join("chain.vtvlfx")).context("saving fixture")?;
    fs::remove_dir_all(&scratch)?;
    Ok(())
}

fn tempdir_in(dir: &Path) -> Result<std::path::PathBuf> {
    let p = dir.join(".recording");
    if p.exists() {
        fs::remove_dir_all(&p)?;
    }
    fs::create_dir_all(&p)?;
    Ok(p)
}
