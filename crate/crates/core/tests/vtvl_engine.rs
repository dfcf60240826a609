use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use vtvl_core::analytics::CallKey;
use vtvl_core::chain::{ChainClient, ClientOptions, SimSymbol, SimulatedNode};
use vtvl_core::price::{EthUsdSeries, PriceError, PriceStatus, PricingOptions, Quote, SeriesOptions};
use vtvl_core::primitives::{Address, U256};
use vtvl_core::profile::ProtocolProfile;
use vtvl_core::taxonomy::{CuratedLists, TokenCategory};
use vtvl_core::vtvl::{
    compute_vtvl, monthly_schedule, price_tokens, reconstruct, token_book, tokens_of, PriceBook, PricingPlan,
    QuantitySnapshot, ReconstructOptions, TokenBook, TokenInfo,
};

const WETH: &str = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2";
const WBTC: &str = "0x2260fac5e5542a773aa44fbcfedf7c193bc2c599";
const USDC: &str = "0xa0b86991c6218b36c1d19d4a2e9eb0ce3606eb48";
const MKR: &str = "0x9f8f72aa9304c8b593d555f12ef6589cc3a579a2";

fn a(n: u8) -> Address {
    Address([n; 20])
}

fn addr(s: &str) -> Address {
    s.parse().unwrap()
}

fn units(n: u64, decimals: usize) -> U256 {
    U256::from(n) * U256::exp10(decimals)
}

/// Naive per-entry valuation with an independent decimal conversion.
fn oracle(
    q: &QuantitySnapshot,
    book: &TokenBook,
    price: impl Fn(Option<Address>) -> Option<f64>,
) -> (f64, BTreeMap<TokenCategory, f64>) {
    let mut total = 0.0;
    let mut cats = BTreeMap::new();
    for (key, amount) in &q.entries {
        let Some(usd) = price(key.token()) else { continue };
        let info = book.get(key.token()).unwrap();
        let whole: f64 = amount.to_string().parse::<f64>().unwrap() / 10f64.powi(info.decimals as i32);
        let v = whole * usd;
        total += v;
        *cats.entry(info.category).or_insert(0.0) += v;
    }
    (total, cats)
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn compute_matches_naive_loop(
        tokens in proptest::collection::vec((0u8..=24, 0usize..7, 0.0f64..5e4), 1..12),
        entries in proptest::collection::vec((0usize..12, 0u8..60, any::<u128>()), 0..=100),
        unpriced_mask in any::<u16>(),
    ) {
        let mut book = TokenBook::default();
        let mut prices = BTreeMap::new();
        for (i, (dec, cat, usd)) in tokens.iter().enumerate() {
            let t = a(i as u8 + 1);
            book.insert(t, TokenInfo { symbol: format!("T{i}"), decimals: *dec, category: TokenCategory::ALL[*cat] });
            if unpriced_mask & (1 << i) == 0 {
                prices.insert(t, *usd);
            }
        }
        let lookup = |token: Option<Address>| match token {
            None => Some(1850.25),
            Some(t) => prices.get(&t).copied(),
        };
        let q = QuantitySnapshot {
            protocol_id: "p".into(),
            block: vtvl_core::chain::BlockRef { number: 1, timestamp: 0 },
            entries: entries
                .iter()
                .map(|(ti, owner, amt)| {
                    let key = if *ti >= tokens.len() {
                        CallKey::NativeBalance { owner: a(*owner) }
                    } else {
                        CallKey::TokenBalance { token: a(*ti as u8 + 1), owner: a(*owner) }
                    };
                    (key, U256::from(*amt))
                })
                .collect(),
            failed: vec![],
            unreliable: false,
        };
        let quote = |t: Option<Address>, _| -> Result<Quote, PriceError> {
            Ok(lookup(t).map_or(Quote::Unpriced, |price| Quote::Usd { price }))
        };
        let got = compute_vtvl(&q, 0, &quote, &book).unwrap();
        let (total, cats) = oracle(&q, &book, lookup);
        prop_assert!(rel(got.total_usd, total) <= 1e-9, "{} vs {}", got.total_usd, total);
        for c in TokenCategory::ALL {
            let want = cats.get(&c).copied().unwrap_or(0.0);
            prop_assert!(rel(got.by_category[&c], want) <= 1e-9);
        }
        let sum: f64 = got.by_category.values().sum();
        prop_assert!(rel(sum, got.total_usd) <= 1e-6);
    }
}

const GENESIS: u64 = 1_671_062_400; // 2022-12-15
const ETH_USD: [f64; 4] = [1200.0, 1600.0, 1500.0, 1800.0];

/// Daily blocks; alpha holds ETH, wETH and USDC, beta holds MKR, wBTC and
/// the same USDC position, gamma holds an unpriceable LP token and wETH.
fn chain() -> SimulatedNode {
    let (weth, wbtc, usdc, mkr, lp) = (addr(WETH), addr(WBTC), addr(USDC), addr(MKR), a(0x55));
    let mut n = SimulatedNode::with_spacing(130, GENESIS, 86_400);
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

    let factory = a(0xf0);
    n.add_pair(a(0xe1), mkr, weth, 0);
    n.add_pair(a(0xe2), wbtc, weth, 0);
    n.register_pair(factory, a(0xe1));
    n.register_pair(factory, a(0xe2));
    for b in 0..130 {
        let mkr_weth = if b < 76 { 500 } else { 550 };
        n.set_reserves(a(0xe1), b, units(1000, 18), units(mkr_weth, 18));
        n.set_reserves(a(0xe2), b, units(10, 8), units(150, 18));
    }
    n
}

fn profile(id: &str, keys: &[(Option<&str>, u8)]) -> ProtocolProfile {
    let mut p = ProtocolProfile::empty(id, "s1");
    p.used_onchain = true;
    p.balance_call_keys = keys
        .iter()
        .map(|(t, o)| match t {
            Some(t) => CallKey::TokenBalance { token: addr(t), owner: a(*o) },
            None => CallKey::NativeBalance { owner: a(*o) },
        })
        .collect();
    p
}

fn profiles() -> Vec<ProtocolProfile> {
    vec![
        profile("alpha", &[(None, 0xa1), (Some(WETH), 0xa1), (Some(USDC), 0xa2)]),
        profile("beta", &[(Some(MKR), 0xb1), (Some(WBTC), 0xb1), (Some(USDC), 0xa2)]),
        profile("gamma", &[(Some("0x5555555555555555555555555555555555555555"), 0xc1), (Some(WETH), 0xc1)]),
    ]
}

#[test]
fn reconstruction_matches_hand_sums() {
    let node = Arc::new(chain());
    let client = ChainClient::new(node, ClientOptions { base_backoff: Duration::ZERO, ..ClientOptions::default() });
    let schedule = monthly_schedule((2023, 1), (2023, 4));
    let ethusd = EthUsdSeries::new(schedule.iter().copied().zip(ETH_USD).collect());
    let profiles = profiles();
    let book = token_book(&client, &tokens_of(&profiles), &CuratedLists::standard()).unwrap();
    assert_eq!(book.get(Some(addr(USDC))).unwrap().category, TokenCategory::StableNcb);
    assert_eq!(book.get(Some(a(0x55))).unwrap().category, TokenCategory::Derivative);

    let mut plan = PricingPlan::new(vec![a(0xf0)], addr(WETH), 0, 129);
    plan.series = SeriesOptions { min_points: 30 };
    let store = price_tokens(&client, &book, &plan, &ethusd).unwrap();
    assert_eq!(store.get(&addr(USDC)).unwrap().status, PriceStatus::StablePegged);
    assert_eq!(store.get(&a(0x55)).unwrap().status, PriceStatus::LowLiquidity);
    assert_eq!(store.get(&addr(MKR)).unwrap().dropped_outliers, 0);

    let prices = PriceBook { store, ethusd, weth: addr(WETH), options: PricingOptions::default() };
    let r = reconstruct(&profiles, &schedule, &client, &prices, &book, &ReconstructOptions::default()).unwrap();

    let alpha = [180_000.0, 240_000.0, 225_000.0, 270_000.0];
    let beta = [1_254_000.0, 1_672_000.0, 1_740_000.0, 2_088_000.0];
    let gamma = [24_000.0, 32_000.0, 30_000.0, 36_000.0];
    for i in 0..4 {
        let p = |id: &str| &r.protocols[id][i];
        assert!(rel(p("alpha").total_usd, alpha[i]) <= 1e-9, "{i} {}", p("alpha").total_usd);
        assert!(rel(p("beta").total_usd, beta[i]) <= 1e-9, "{i} {}", p("beta").total_usd);
        assert!(rel(p("gamma").total_usd, gamma[i]) <= 1e-9);
        assert_eq!(p("gamma").unpriced_tokens, 1);
        assert_eq!(r.contested[i].total_usd, 1_000_000.0);
        let eco = &r.ecosystem[i];
        assert!(rel(eco.total_usd, alpha[i] + beta[i] + gamma[i]) <= 1e-12);
        assert_eq!(eco.by_category[&TokenCategory::StableNcb], 0.0);
    }
    let wbtc = [45.0 * 1200.0, 45.0 * 1600.0, 60.0 * 1500.0, 60.0 * 1800.0];
    for (i, w) in wbtc.iter().enumerate() {
        assert!(rel(r.protocols["beta"][i].by_category[&TokenCategory::Wbtc], *w) <= 1e-9);
    }
    let shared = CallKey::TokenBalance { token: addr(USDC), owner: a(0xa2) };
    assert_eq!(r.contested_keys, BTreeSet::from([shared]));
    assert_eq!(r.warnings.len(), 3, "{:?}", r.warnings);
}
