use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::abi;
use super::rpc::{BackendError, RpcBackend, RpcErrorObject, RpcReply, RpcRequest};
use crate::primitives::{decode_hex, encode_hex, u256_dec, Address, U256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub number: u64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBalance {
    /// `None` for the native balance.
    pub token: Option<Address>,
    pub owner: Address,
    pub block: BlockRef,
    #[serde(with = "u256_dec")]
    pub amount: U256,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reserves {
    pub token0: Address,
    pub token1: Address,
    pub reserve0: U256,
    pub reserve1: U256,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub symbol: String,
    pub name: String,
    pub decimals: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncEvent {
    pub block: u64,
    pub reserve0: U256,
    pub reserve1: U256,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("no fixture for request: {0}")]
    MissingFixture(String),
    #[error("malformed node response: {0}")]
    Malformed(String),
    #[error("state at block {block} is not available on this endpoint: {message}")]
    PrunedState { block: u64, message: String },
    #[error("token {token} cannot be queried: {reason}")]
    NonQueryable { token: Address, reason: String },
    #[error("pair {pair} unavailable: {reason}")]
    PairUnavailable { pair: Address, reason: String },
    #[error("rpc error {code}: {message}")]
    Rpc { code: i64, message: String },
    #[error("timestamp {0} precedes genesis")]
    BeforeGenesis(u64),
    #[error("block {0} not found")]
    UnknownBlock(u64),
}

impl ChainError {
    fn from_backend(e: BackendError, attempts: u32) -> Self {
        match e {
            BackendError::Transport(message) => ChainError::Transport { attempts, message },
            BackendError::MissingFixture(m) => ChainError::MissingFixture(m),
            BackendError::Malformed(m) => ChainError::Malformed(m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    /// Upper bound on concurrently outstanding requests in batch calls.
    pub max_in_flight: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions { max_attempts: 5, base_backoff: Duration::from_millis(200), max_in_flight: 8 }
    }
}

/// Why a contract read did not produce data.
enum CallFailure {
    Reverted(String),
    Chain(ChainError),
}

fn is_pruned(e: &RpcErrorObject) -> bool {
    let m = e.message.to_ascii_lowercase();
    ["missing trie node", "pruned", "state is not available", "historical state"].iter().any(|n| m.contains(n))
}

fn is_revert(e: &RpcErrorObject) -> bool {
    e.code == 3 || e.message.to_ascii_lowercase().contains("revert")
}

fn tag(block: u64) -> String {
    format!("0x{block:x}")
}

fn parse_quantity(v: &Value) -> Result<U256, ChainError> {
    let s = v.as_str().ok_or_else(|| ChainError::Malformed(format!("expected hex quantity, got {v}")))?;
    let digits = s.strip_prefix("0x").ok_or_else(|| ChainError::Malformed(format!("bad quantity {s}")))?;
    if digits.is_empty() {
        return Ok(U256::zero());
    }
    U256::from_str_radix(digits, 16).map_err(|_| ChainError::Malformed(format!("bad quantity {s}")))
}

fn parse_u64(v: &Value) -> Result<u64, ChainError> {
    let q = parse_quantity(v)?;
    if q > U256::from(u64::MAX) {
        return Err(ChainError::Malformed(format!("quantity {v} exceeds 64 bits")));
    }
    Ok(q.as_u64())
}

/// Read-only Ethereum access with retries, caches and bounded batching.
/// Safe to share across threads.
pub struct ChainClient {
    backend: Arc<dyn RpcBackend>,
    options: ClientOptions,
    pair_tokens: Mutex<HashMap<Address, (Address, Address)>>,
    headers: Mutex<HashMap<u64, BlockRef>>,
    metadata: Mutex<HashMap<Address, TokenMeta>>,
}

impl ChainClient {
    pub fn new(backend: Arc<dyn RpcBackend>, options: ClientOptions) -> Self {
        ChainClient {
            backend,
            options,
            pair_tokens: Mutex::new(HashMap::new()),
            headers: Mutex::new(HashMap::new()),
            metadata: Mutex::new(HashMap::new()),
        }
    }

    pub fn options(&self) -> &ClientOptions {
        &self.options
    }

    /// One request with exponential backoff on transport errors only.
    fn send(&self, req: &RpcRequest) -> Result<RpcReply, ChainError> {
        let mut attempt = 1;
        loop {
            match self.backend.request(req) {
                Ok(reply) => return Ok(reply),
                Err(e) if e.is_retryable() && attempt < self.options.max_attempts => {
                    let delay = self.options.base_backoff * 2u32.saturating_pow(attempt - 1);
                    warn!("{} attempt {attempt} failed ({e}); retrying in {delay:?}", req.method);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(ChainError::from_backend(e, attempt)),
            }
        }
    }

    fn result(&self, req: &RpcRequest, block: Option<u64>) -> Result<Value, ChainError> {
        match self.send(req)? {
            RpcReply::Result(v) => Ok(v),
            RpcReply::Error(e) if is_pruned(&e) => {
                Err(ChainError::PrunedState { block: block.unwrap_or_default(), message: e.message })
            }
            RpcReply::Error(e) => Err(ChainError::Rpc { code: e.code, message: e.message }),
        }
    }

    fn call(&self, to: Address, data: &[u8], block: Option<u64>) -> Result<Vec<u8>, CallFailure> {
        let block_tag = block.map_or_else(|| "latest".to_string(), tag);
        let req = RpcRequest::new("eth_call", json!([{ "to": to.to_string(), "data": encode_hex(data) }, block_tag]));
        match self.send(&req).map_err(CallFailure::Chain)? {
            RpcReply::Result(v) => {
                let s = v
                    .as_str()
                    .ok_or_else(|| CallFailure::Chain(ChainError::Malformed(format!("eth_call returned {v}"))))?;
                decode_hex(s).map_err(|e| CallFailure::Chain(ChainError::Malformed(e.to_string())))
            }
            RpcReply::Error(e) if is_pruned(&e) => Err(CallFailure::Chain(ChainError::PrunedState {
                block: block.unwrap_or_default(),
                message: e.message,
            })),
            RpcReply::Error(e) if is_revert(&e) => Err(CallFailure::Reverted(e.message)),
            RpcReply::Error(e) => Err(CallFailure::Chain(ChainError::Rpc { code: e.code, message: e.message })),
        }
    }

    pub fn latest_block_number(&self) -> Result<u64, ChainError> {
        parse_u64(&self.result(&RpcRequest::new("eth_blockNumber", json!([])), None)?)
    }

    pub fn block(&self, number: u64) -> Result<BlockRef, ChainError> {
        if let Some(b) = self.headers.lock().expect("header cache").get(&number) {
            return Ok(*b);
        }
        let v = self.result(&RpcRequest::new("eth_getBlockByNumber", json!([tag(number), false])), Some(number))?;
        if v.is_null() {
            return Err(ChainError::UnknownBlock(number));
        }
        let b = BlockRef { number, timestamp: parse_u64(&v["timestamp"])? };
        self.headers.lock().expect("header cache").insert(number, b);
        Ok(b)
    }

    /// Greatest block with timestamp at or before `t`.
    pub fn resolve_block_at(&self, t: u64) -> Result<BlockRef, ChainError> {
        let genesis = self.block(0)?;
        if t < genesis.timestamp {
            return Err(ChainError::BeforeGenesis(t));
        }
        let (mut lo, mut hi) = (0u64, self.latest_block_number()?);
        if self.block(hi)?.timestamp <= t {
            return self.block(hi);
        }
        // Invariant: ts(lo) <= t < ts(hi).
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.block(mid)?.timestamp <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.block(lo)
    }

    pub fn get_native_balance(&self, owner: Address, block: BlockRef) -> Result<RawBalance, ChainError> {
        let req = RpcRequest::new("eth_getBalance", json!([owner.to_string(), tag(block.number)]));
        let amount = parse_quantity(&self.result(&req, Some(block.number))?)?;
        Ok(RawBalance { token: None, owner, block, amount })
    }

    pub fn get_token_balance(&self, token: Address, owner: Address, block: BlockRef) -> Result<RawBalance, ChainError> {
        let data = match self.call(token, &abi::balance_of_calldata(owner), Some(block.number)) {
            Ok(d) => d,
            Err(CallFailure::Reverted(reason)) => return Err(ChainError::NonQueryable { token, reason }),
            Err(CallFailure::Chain(e)) => return Err(e),
        };
        let amount = abi::decode_uint(&data, 0)
            .ok_or_else(|| ChainError::NonQueryable { token, reason: "empty return data".into() })?;
        Ok(RawBalance { token: Some(token), owner, block, amount })
    }

    fn read_address(&self, contract: Address, selector: crate::primitives::Selector) -> Result<Address, CallFailure> {
        let data = self.call(contract, &abi::encode_call(selector, &[]), None)?;
        abi::decode_address(&data, 0).ok_or_else(|| CallFailure::Reverted("empty return data".into()))
    }

    /// `(token0, token1)` of a pair, fetched once per pair.
    pub fn pair_tokens(&self, pair: Address) -> Result<(Address, Address), ChainError> {
        if let Some(t) = self.pair_tokens.lock().expect("pair cache").get(&pair) {
            return Ok(*t);
        }
        let unavailable = |f: CallFailure| match f {
            CallFailure::Reverted(reason) => ChainError::PairUnavailable { pair, reason },
            CallFailure::Chain(e) => e,
        };
        let t0 = self.read_address(pair, abi::TOKEN0).map_err(unavailable)?;
        let t1 = self.read_address(pair, abi::TOKEN1).map_err(unavailable)?;
        self.pair_tokens.lock().expect("pair cache").insert(pair, (t0, t1));
        Ok((t0, t1))
    }

    pub fn get_reserves(&self, pair: Address, block: BlockRef) -> Result<Reserves, ChainError> {
        let data = match self.call(pair, &abi::encode_call(abi::GET_RESERVES, &[]), Some(block.number)) {
            Ok(d) => d,
            Err(CallFailure::Reverted(reason)) => return Err(ChainError::PairUnavailable { pair, reason }),
            Err(CallFailure::Chain(e)) => return Err(e),
        };
        let (Some(reserve0), Some(reserve1)) = (abi::decode_uint(&data, 0), abi::decode_uint(&data, 1)) else {
            return Err(ChainError::PairUnavailable { pair, reason: "no reserves at this block".into() });
        };
        let (token0, token1) = self.pair_tokens(pair)?;
        Ok(Reserves { token0, token1, reserve0, reserve1 })
    }

    /// Pair for `(a, b)` registered in an AMM factory, if any.
    pub fn get_pair(&self, factory: Address, a: Address, b: Address) -> Result<Option<Address>, ChainError> {
        let data = abi::encode_call(abi::GET_PAIR, &[a.to_word(), b.to_word()]);
        match self.call(factory, &data, None) {
            Ok(d) => Ok(abi::decode_address(&d, 0).filter(|p| *p != Address::ZERO)),
            Err(CallFailure::Reverted(_)) => Ok(None),
            Err(CallFailure::Chain(e)) => Err(e),
        }
    }

    /// Symbol, name and decimals; never fails on contract-level problems.
    pub fn token_metadata(&self, token: Address) -> Result<TokenMeta, ChainError> {
        if let Some(m) = self.metadata.lock().expect("metadata cache").get(&token) {
            return Ok(m.clone());
        }
        let mut warnings = Vec::new();
        let mut text = |sel, what: &str| -> Result<Option<String>, ChainError> {
            match self.call(token, &abi::encode_call(sel, &[]), None) {
                Ok(d) => Ok(abi::decode_text(&d).filter(|s| !s.is_empty())),
                Err(CallFailure::Reverted(r)) => {
                    warnings.push(format!("{what} reverted: {r}"));
                    Ok(None)
                }
                Err(CallFailure::Chain(e)) => Err(e),
            }
        };
        let symbol = text(abi::SYMBOL, "symbol")?.unwrap_or_else(|| token.short());
        let name = text(abi::NAME, "name")?.unwrap_or_default();
        let decimals = match self.call(token, &abi::encode_call(abi::DECIMALS, &[]), None) {
            Ok(d) => match abi::decode_uint(&d, 0) {
                Some(v) if v <= U256::from(77u8) => v.as_u32() as u8,
                _ => {
                    warnings.push("decimals unreadable; assuming 18".into());
                    18
                }
            },
            Err(CallFailure::Reverted(_)) => {
                warnings.push("decimals reverted; assuming 18".into());
                18
            }
            Err(CallFailure::Chain(e)) => return Err(e),
        };
        for w in &warnings {
            warn!("{token}: {w}");
        }
        let meta = TokenMeta { symbol, name, decimals, warnings };
        self.metadata.lock().expect("metadata cache").insert(token, meta.clone());
        Ok(meta)
    }

    /// Reserve updates logged by a pair in `[from, to]`.
    pub fn sync_events(&self, pair: Address, from: u64, to: u64) -> Result<Vec<SyncEvent>, ChainError> {
        let filter = json!({
            "address": pair.to_string(),
            "topics": [encode_hex(&abi::SYNC_TOPIC)],
            "fromBlock": tag(from),
            "toBlock": tag(to),
        });
        let v = self.result(&RpcRequest::new("eth_getLogs", json!([filter])), Some(to))?;
        let logs = v.as_array().ok_or_else(|| ChainError::Malformed("eth_getLogs did not return a list".into()))?;
        let mut out = Vec::with_capacity(logs.len());
        for log in logs {
            let data = log["data"]
                .as_str()
                .and_then(|s| decode_hex(s).ok())
                .ok_or_else(|| ChainError::Malformed("log without data".into()))?;
            let (Some(reserve0), Some(reserve1)) = (abi::decode_uint(&data, 0), abi::decode_uint(&data, 1)) else {
                return Err(ChainError::Malformed("short Sync log".into()));
            };
            out.push(SyncEvent { block: parse_u64(&log["blockNumber"])?, reserve0, reserve1 });
        }
        out.sort_by_key(|e| e.block);
        Ok(out)
    }

    /// Runs `f` over `items` on at most `max_in_flight` threads. Results keep
    /// input order.
    pub fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        let workers = self.options.max_in_flight.max(1).min(items.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = items.get(i) else { break };
                    *slots[i].lock().expect("slot") = Some(f(item));
                });
            }
        });
        slots.into_iter().map(|m| m.into_inner().expect("slot").expect("every slot filled")).collect()
    }

    pub fn balances(&self, queries: &[BalanceQuery]) -> Vec<Result<RawBalance, ChainError>> {
        self.par_map(queries, |q| match q.token {
            Some(token) => self.get_token_balance(token, q.owner, q.block),
            None => self.get_native_balance(q.owner, q.block),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BalanceQuery {
    pub token: Option<Address>,
    pub owner: Address,
    pub block: BlockRef,
}
