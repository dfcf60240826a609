//! Seeded synthetic inputs shared by the benchmarks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtvl_core::analytics::powerlaw::sample_discrete;
use vtvl_core::chain::BlockRef;
use vtvl_core::primitives::{Address, U256};
use vtvl_core::taxonomy::TokenCategory;
use vtvl_core::vtvl::{QuantitySnapshot, TokenBook, TokenInfo};
use vtvl_core::{CallKey, ProtocolProfile};

fn address(i: u32) -> Address {
    let mut a = [0u8; 20];
    a[16..].copy_from_slice(&i.to_be_bytes());
    Address(a)
}

fn key(rng: &mut ChaCha8Rng, owners: u32, tokens: u32) -> CallKey {
    let owner = address(rng.gen_range(0..owners));
    match rng.gen_range(0..=tokens) {
        0 => CallKey::NativeBalance { owner },
        t => CallKey::TokenBalance { token: address(1 << 24 | t), owner },
    }
}

/// `protocols` profiles drawing balance keys from a shared pool, so some keys
/// collide across protocols.
pub fn corpus(seed: u64, protocols: usize, keys_per_protocol: usize) -> Vec<ProtocolProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let owners = (protocols * keys_per_protocol / 4).max(1) as u32;
    (0..protocols)
        .map(|i| {
            let mut p = ProtocolProfile::empty(&format!("p{i}"), "bench");
            p.used_onchain = true;
            p.balance_call_keys = (0..keys_per_protocol).map(|_| key(&mut rng, owners, 64)).collect();
            p
        })
        .collect()
}

/// Draws from a discrete power law.
pub fn heavy_tail(seed: u64, n: usize, alpha: f64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_discrete(&mut rng, 1, alpha)).collect()
}

/// A snapshot of `entries` positions over `tokens` tokens, with a book and a
/// USD price per token.
pub fn snapshot(seed: u64, entries: usize, tokens: u32) -> (QuantitySnapshot, TokenBook, BTreeMap<Address, f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut book = TokenBook::default();
    let mut prices = BTreeMap::new();
    for t in 1..=tokens {
        let token = address(1 << 24 | t);
        let category = TokenCategory::ALL[t as usize % TokenCategory::ALL.len()];
        book.insert(token, TokenInfo { symbol: format!("T{t}"), decimals: rng.gen_range(6..=18), category });
        prices.insert(token, rng.gen_range(0.01..5_000.0));
    }
    let entries = (0..entries)
        .map(|_| (key(&mut rng, entries as u32, tokens), U256::from(rng.gen::<u64>()) * U256::exp10(6)))
        .collect();
    let q = QuantitySnapshot {
        protocol_id: "bench".into(),
        block: BlockRef { number: 1, timestamp: 0 },
        entries,
        failed: Vec::new(),
        unreliable: false,
    };
    (q, book, prices)
}
