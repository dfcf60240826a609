use std::sync::Arc;
use std::time::Duration;

use vtvl_core::chain::{
    BalanceQuery, BlockRef, ChainClient, ChainError, ClientOptions, FixtureStore, Recorder, Replay, RpcBackend,
    SimSymbol, SimulatedNode,
};
use vtvl_core::primitives::{Address, U256};

const WETH: &str = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2";

fn a(n: u8) -> Address {
    Address([n; 20])
}

fn e18(n: u64) -> U256 {
    U256::from(n) * U256::exp10(18)
}

fn quick() -> ClientOptions {
    ClientOptions { base_backoff: Duration::ZERO, ..ClientOptions::default() }
}

fn node() -> SimulatedNode {
    let weth: Address = WETH.parse().unwrap();
    let mut n = SimulatedNode::with_spacing(10, 1_600_000_000, 12);
    n.set_native(a(1), 3, e18(5));
    n.add_token(weth, SimSymbol::String(b"WETH".to_vec()), "Wrapped Ether", Some(18));
    n.set_token_balance(weth, a(1), 2, e18(7));
    n.add_token(a(0x20), SimSymbol::Bytes32(b"MKR".to_vec()), "Maker", None);
    n.add_token(a(0x21), SimSymbol::String(vec![0x41, 0xfe, 0x42]), "Odd", Some(6));
    n.add_reverting(a(0x30));
    n.add_pair(a(0x40), weth, a(0x21), 4);
    n.set_reserves(a(0x40), 4, e18(100), e18(200));
    n.set_reserves(a(0x40), 7, e18(120), e18(190));
    n
}

fn client(n: SimulatedNode) -> (Arc<SimulatedNode>, ChainClient) {
    let n = Arc::new(n);
    let c = ChainClient::new(n.clone(), quick());
    (n, c)
}

fn block(c: &ChainClient, n: u64) -> BlockRef {
    c.block(n).unwrap()
}

#[test]
fn native_balances() {
    let (_, c) = client(node());
    assert_eq!(c.get_native_balance(a(9), block(&c, 5)).unwrap().amount, U256::zero());
    assert_eq!(c.get_native_balance(a(1), block(&c, 2)).unwrap().amount, U256::zero());
    let b = c.get_native_balance(a(1), block(&c, 5)).unwrap();
    assert_eq!(b.amount, U256::from(5_000_000_000_000_000_000u64));
    assert_eq!(b.token, None);
}

#[test]
fn pruned_state_is_distinguishable() {
    let mut n = node();
    n.prune_before(6);
    let (_, c) = client(n);
    let err = c.get_native_balance(a(1), block(&c, 5)).unwrap_err();
    assert!(matches!(err, ChainError::PrunedState { block: 5, .. }), "{err}");
    let weth: Address = WETH.parse().unwrap();
    assert!(matches!(c.get_token_balance(weth, a(1), block(&c, 2)).unwrap_err(), ChainError::PrunedState { .. }));
    assert!(c.get_native_balance(a(1), block(&c, 6)).is_ok());
}

#[test]
fn token_balances_and_reverts() {
    let (_, c) = client(node());
    let weth: Address = WETH.parse().unwrap();
    assert_eq!(c.get_token_balance(weth, a(8), block(&c, 5)).unwrap().amount, U256::zero());
    assert_eq!(c.get_token_balance(weth, a(1), block(&c, 5)).unwrap().amount, e18(7));
    assert!(matches!(c.get_token_balance(a(0x30), a(1), block(&c, 5)).unwrap_err(), ChainError::NonQueryable { .. }));
    // No code at the address: empty return data.
    assert!(matches!(c.get_token_balance(a(0x77), a(1), block(&c, 5)).unwrap_err(), ChainError::NonQueryable { .. }));
}

#[test]
fn reserves_and_pair_cache() {
    let (n, c) = client(node());
    let r = c.get_reserves(a(0x40), block(&c, 5)).unwrap();
    assert_eq!((r.reserve0, r.reserve1), (e18(100), e18(200)));
    assert_eq!(r.token0, WETH.parse().unwrap());
    let calls = n.calls("eth_call");
    let r = c.get_reserves(a(0x40), block(&c, 8)).unwrap();
    assert_eq!((r.reserve0, r.reserve1), (e18(120), e18(190)));
    assert_eq!(n.calls("eth_call"), calls + 1, "token0/token1 must come from cache");
    assert!(matches!(c.get_reserves(a(0x40), block(&c, 2)).unwrap_err(), ChainError::PairUnavailable { .. }));
    let events = c.sync_events(a(0x40), 0, 9).unwrap();
    assert_eq!(events.iter().map(|e| e.block).collect::<Vec<_>>(), vec![4, 7]);
    assert_eq!(events[1].reserve1, e18(190));
}

#[test]
fn metadata_defaults_and_sanitizing() {
    let (_, c) = client(node());
    let weth = c.token_metadata(WETH.parse().unwrap()).unwrap();
    assert_eq!((weth.symbol.as_str(), weth.decimals), ("WETH", 18));
    assert!(weth.warnings.is_empty());
    let mkr = c.token_metadata(a(0x20)).unwrap();
    assert_eq!((mkr.symbol.as_str(), mkr.decimals), ("MKR", 18));
    assert_eq!(mkr.warnings.len(), 1);
    let odd = c.token_metadata(a(0x21)).unwrap();
    assert_eq!(odd.symbol, "A\u{fffd}B");
    assert_eq!(odd.decimals, 6);
    let none = c.token_metadata(a(0x30)).unwrap();
    assert_eq!(none.symbol, a(0x30).short());
}

#[test]
fn block_resolution() {
    let (_, c) = client(node());
    let t0 = 1_600_000_000;
    assert_eq!(c.resolve_block_at(t0 + 36).unwrap().number, 3);
    assert_eq!(c.resolve_block_at(t0 + 40).unwrap().number, 3);
    assert_eq!(c.resolve_block_at(t0).unwrap().number, 0);
    assert_eq!(c.resolve_block_at(t0 + 10_000).unwrap().number, 9);
    assert_eq!(c.resolve_block_at(t0 - 1).unwrap_err(), ChainError::BeforeGenesis(t0 - 1));
}

#[test]
fn retries_only_transport_failures() {
    let (n, c) = client(node());
    n.fail_next(4);
    assert_eq!(c.get_native_balance(a(1), BlockRef { number: 5, timestamp: 0 }).unwrap().amount, e18(5));
    assert_eq!(n.calls("eth_getBalance"), 5);

    n.fail_next(9);
    let err = c.get_native_balance(a(1), BlockRef { number: 5, timestamp: 0 }).unwrap_err();
    assert!(matches!(err, ChainError::Transport { attempts: 5, .. }), "{err}");
    n.fail_next(0);

    let before = n.calls("eth_call");
    let _ = c.get_token_balance(a(0x30), a(1), BlockRef { number: 5, timestamp: 0 });
    assert_eq!(n.calls("eth_call"), before + 1, "reverts are not retried");
}

#[test]
fn batch_respects_parallelism_bound_and_order() {
    let mut n = node();
    n.set_latency(Duration::from_millis(3));
    let n = Arc::new(n);
    let c = ChainClient::new(n.clone(), ClientOptions { max_in_flight: 3, ..quick() });
    let b = BlockRef { number: 5, timestamp: 0 };
    let queries: Vec<BalanceQuery> = (0..30)
        .map(|i| BalanceQuery { token: None, owner: if i % 3 == 0 { a(1) } else { a(50 + i as u8) }, block: b })
        .collect();
    let out = c.balances(&queries);
    assert!(n.max_in_flight() <= 3 && n.max_in_flight() >= 1);
    assert_eq!(n.total_calls(), 30);
    for (i, r) in out.iter().enumerate() {
        let r = r.as_ref().unwrap();
        assert_eq!(r.owner, queries[i].owner);
        assert_eq!(r.amount, if i % 3 == 0 { e18(5) } else { U256::zero() });
    }
}

fn session(c: &ChainClient) -> String {
    let weth: Address = WETH.parse().unwrap();
    let b5 = c.resolve_block_at(1_600_000_000 + 60).unwrap();
    format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
        b5,
        c.get_native_balance(a(1), b5),
        c.get_token_balance(weth, a(1), b5),
        c.get_token_balance(a(0x30), a(1), b5),
        c.get_reserves(a(0x40), b5),
        c.token_metadata(a(0x21)),
        c.sync_events(a(0x40), 0, 9),
    )
}

#[test]
fn recorded_session_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.fix");
    let store = Arc::new(FixtureStore::new());
    let recorder: Arc<dyn RpcBackend> = Arc::new(Recorder::new(node(), store.clone()));
    let live = session(&ChainClient::new(recorder, quick()));
    store.save(&path).unwrap();

    let replayed = Arc::new(FixtureStore::load(&path).unwrap());
    let replay = session(&ChainClient::new(Arc::new(Replay::new(replayed.clone())), quick()));
    assert_eq!(live, replay);

    let offline = ChainClient::new(Arc::new(Replay::new(replayed)), quick());
    let err = offline.get_native_balance(a(2), BlockRef { number: 1, timestamp: 0 }).unwrap_err();
    assert!(matches!(err, ChainError::MissingFixture(_)));
}
