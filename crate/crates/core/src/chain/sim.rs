//! In-memory Ethereum node answering the read methods the client uses.
//! Drives tests, benches and fixture generation without a network.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::abi::{self, encode_string, uint_word};
use super::rpc::{BackendError, RpcBackend, RpcErrorObject, RpcReply, RpcRequest};
use crate::primitives::{decode_hex, encode_hex, Address, Selector, U256};

#[derive(Debug, Clone)]
pub enum SimSymbol {
    String(Vec<u8>),
    Bytes32(Vec<u8>),
    Missing,
}

#[derive(Debug, Clone)]
struct SimToken {
    symbol: SimSymbol,
    name: String,
    decimals: Option<u8>,
    balances: HashMap<Address, Vec<(u64, U256)>>,
}

#[derive(Debug, Clone)]
struct SimPair {
    token0: Address,
    token1: Address,
    created: u64,
    reserves: Vec<(u64, U256, U256)>,
}

#[derive(Debug, Clone)]
enum Contract {
    Token(SimToken),
    Pair(SimPair),
    Factory(HashMap<(Address, Address), Address>),
    Reverting,
}

fn at_block<T: Clone>(history: &[(u64, T)], block: u64) -> Option<T> {
    history.iter().rev().find(|(b, _)| *b <= block).map(|(_, v)| v.clone())
}

fn quantity(n: u64) -> String {
    format!("0x{n:x}")
}

fn u256_quantity(v: U256) -> String {
    format!("0x{v:x}")
}

#[derive(Debug, Default)]
pub struct SimulatedNode {
    timestamps: Vec<u64>,
    native: HashMap<Address, Vec<(u64, U256)>>,
    contracts: HashMap<Address, Contract>,
    pruned_before: Option<u64>,
    latency: Option<Duration>,
    fail_next: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: Mutex<BTreeMap<String, usize>>,
}

impl SimulatedNode {
    /// A chain whose block `i` has timestamp `timestamps[i]`.
    pub fn new(timestamps: Vec<u64>) -> Self {
        assert!(timestamps.windows(2).all(|w| w[0] < w[1]), "timestamps must increase");
        SimulatedNode { timestamps, ..Default::default() }
    }

    /// Evenly spaced blocks starting at `genesis`.
    pub fn with_spacing(blocks: u64, genesis: u64, spacing: u64) -> Self {
        SimulatedNode::new((0..blocks).map(|i| genesis + i * spacing).collect())
    }

    pub fn latest(&self) -> u64 {
        self.timestamps.len() as u64 - 1
    }

    pub fn timestamp(&self, block: u64) -> u64 {
        self.timestamps[block as usize]
    }

    pub fn prune_before(&mut self, block: u64) {
        self.pruned_before = Some(block);
    }

    pub fn set_latency(&mut self, latency: Duration) {
        self.latency = Some(latency);
    }

    /// The next `n` requests fail with a transport error.
    pub fn fail_next(&self, n: usize) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn set_native(&mut self, owner: Address, from_block: u64, amount: U256) {
        let h = self.native.entry(owner).or_default();
        h.push((from_block, amount));
        h.sort_by_key(|(b, _)| *b);
    }

    pub fn add_token(&mut self, token: Address, symbol: SimSymbol, name: &str, decimals: Option<u8>) {
        self.contracts.insert(
            token,
            Contract::Token(SimToken { symbol, name: name.to_string(), decimals, balances: HashMap::new() }),
        );
    }

    pub fn set_token_balance(&mut self, token: Address, owner: Address, from_block: u64, amount: U256) {
        let Some(Contract::Token(t)) = self.contracts.get_mut(&token) else {
            panic!("{token} is not a simulated token");
        };
        let h = t.balances.entry(owner).or_default();
        h.push((from_block, amount));
        h.sort_by_key(|(b, _)| *b);
    }

    pub fn add_pair(&mut self, pair: Address, token0: Address, token1: Address, created: u64) {
        self.contracts.insert(pair, Contract::Pair(SimPair { token0, token1, created, reserves: Vec::new() }));
    }

    /// Sets reserves from `block` on and emits a `Sync` log there.
    pub fn set_reserves(&mut self, pair: Address, block: u64, reserve0: U256, reserve1: U256) {
        let Some(Contract::Pair(p)) = self.contracts.get_mut(&pair) else {
            panic!("{pair} is not a simulated pair");
        };
        p.reserves.retain(|(b, _, _)| *b != block);
        p.reserves.push((block, reserve0, reserve1));
        p.reserves.sort_by_key(|(b, _, _)| *b);
    }

    pub fn add_factory(&mut self, factory: Address) {
        self.contracts.entry(factory).or_insert_with(|| Contract::Factory(HashMap::new()));
    }

    pub fn register_pair(&mut self, factory: Address, pair: Address) {
        let (a, b) = match self.contracts.get(&pair) {
            Some(Contract::Pair(p)) => (p.token0, p.token1),
            _ => panic!("{pair} is not a simulated pair"),
        };
        self.add_factory(factory);
        if let Some(Contract::Factory(map)) = self.contracts.get_mut(&factory) {
            map.insert((a, b), pair);
            map.insert((b, a), pair);
        }
    }

    pub fn add_reverting(&mut self, contract: Address) {
        self.contracts.insert(contract, Contract::Reverting);
    }

    pub fn calls(&self, method: &str) -> usize {
        self.calls.lock().expect("sim lock").get(method).copied().unwrap_or(0)
    }

    pub fn total_calls(&self) -> usize {
        self.calls.lock().expect("sim lock").values().sum()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn block_tag(&self, tag: &Value) -> Result<u64, RpcErrorObject> {
        let s = tag.as_str().ok_or_else(|| invalid("block tag must be a string"))?;
        if s == "latest" {
            return Ok(self.latest());
        }
        let n = u64::from_str_radix(s.trim_start_matches("0x"), 16).map_err(|_| invalid("bad block tag"))?;
        if n > self.latest() {
            return Err(RpcErrorObject { code: -32000, message: "header not found".into(), data: None });
        }
        Ok(n)
    }

    fn check_state(&self, block: u64) -> Result<(), RpcErrorObject> {
        match self.pruned_before {
            Some(p) if block < p => Err(RpcErrorObject {
                code: -32000,
                message: format!("missing trie node (state at block {block} is pruned)"),
                data: None,
            }),
            _ => Ok(()),
        }
    }

    fn eth_call(&self, target: Address, data: &[u8], block: u64) -> Result<Vec<u8>, RpcErrorObject> {
        self.check_state(block)?;
        let Some(contract) = self.contracts.get(&target) else {
            return Ok(Vec::new());
        };
        let selector = data.get(..4).map(|s| Selector(s.try_into().expect("4 bytes")));
        let args = data.get(4..).unwrap_or_default();
        match (contract, selector) {
            (Contract::Reverting, _) => Err(reverted()),
            (Contract::Token(t), Some(abi::BALANCE_OF)) => {
                let owner = abi::decode_address(args, 0).ok_or_else(reverted)?;
                let amount = t.balances.get(&owner).and_then(|h| at_block(h, block)).unwrap_or_default();
                Ok(uint_word(amount).to_vec())
            }
            (Contract::Token(t), Some(abi::DECIMALS)) => match t.decimals {
                Some(d) => Ok(uint_word(U256::from(d)).to_vec()),
                None => Err(reverted()),
            },
            (Contract::Token(t), Some(abi::SYMBOL)) => match &t.symbol {
                SimSymbol::String(b) => Ok(encode_string(b)),
                SimSymbol::Bytes32(b) => {
                    let mut w = [0u8; 32];
                    w[..b.len().min(32)].copy_from_slice(&b[..b.len().min(32)]);
                    Ok(w.to_vec())
                }
                SimSymbol::Missing => Err(reverted()),
            },
            (Contract::Token(t), Some(abi::NAME)) => Ok(encode_string(t.name.as_bytes())),
            (Contract::Pair(p), Some(sel)) => {
                if block < p.created {
                    return Ok(Vec::new());
                }
                match sel {
                    abi::TOKEN0 => Ok(p.token0.to_word().to_vec()),
                    abi::TOKEN1 => Ok(p.token1.to_word().to_vec()),
                    abi::GET_RESERVES => {
                        let (r0, r1) = p
                            .reserves
                            .iter()
                            .rev()
                            .find(|(b, _, _)| *b <= block)
                            .map(|(_, a, b)| (*a, *b))
                            .unwrap_or_default();
                        let mut out = uint_word(r0).to_vec();
                        out.extend_from_slice(&uint_word(r1));
                        out.extend_from_slice(&uint_word(U256::from(self.timestamp(block) % (1 << 32))));
                        Ok(out)
                    }
                    _ => Err(reverted()),
                }
            }
            (Contract::Factory(map), Some(abi::GET_PAIR)) => {
                let a = abi::decode_address(args, 0).ok_or_else(reverted)?;
                let b = abi::decode_address(args, 1).ok_or_else(reverted)?;
                Ok(map.get(&(a, b)).copied().unwrap_or(Address::ZERO).to_word().to_vec())
            }
            _ => Err(reverted()),
        }
    }

    fn logs(&self, filter: &Value) -> Result<Value, RpcErrorObject> {
        let address: Address = filter["address"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid("log filter needs an address"))?;
        let from = self.block_tag(&filter["fromBlock"])?;
        let to = self.block_tag(&filter["toBlock"])?;
        let Some(Contract::Pair(p)) = self.contracts.get(&address) else {
            return Ok(json!([]));
        };
        let topic = encode_hex(&abi::SYNC_TOPIC);
        let logs: Vec<Value> = p
            .reserves
            .iter()
            .filter(|(b, _, _)| (from..=to).contains(b) && *b >= p.created)
            .map(|(b, r0, r1)| {
                let mut data = uint_word(*r0).to_vec();
                data.extend_from_slice(&uint_word(*r1));
                json!({
                    "address": address.to_string(),
                    "topics": [topic],
                    "data": encode_hex(&data),
                    "blockNumber": quantity(*b),
                    "logIndex": "0x0",
                })
            })
            .collect();
        Ok(Value::Array(logs))
    }

    fn answer(&self, req: &RpcRequest) -> Result<Value, RpcErrorObject> {
        let params = req.params.as_array().cloned().unwrap_or_default();
        let param = |i: usize| params.get(i).cloned().unwrap_or(Value::Null);
        match req.method.as_str() {
            "eth_blockNumber" => Ok(json!(quantity(self.latest()))),
            "eth_getBlockByNumber" => {
                let n = match self.block_tag(&param(0)) {
                    Ok(n) => n,
                    Err(_) => return Ok(Value::Null),
                };
                Ok(json!({ "number": quantity(n), "timestamp": quantity(self.timestamp(n)) }))
            }
            "eth_getBalance" => {
                let owner: Address =
                    param(0).as_str().and_then(|s| s.parse().ok()).ok_or_else(|| invalid("bad address"))?;
                let block = self.block_tag(&param(1))?;
                self.check_state(block)?;
                let amount = self.native.get(&owner).and_then(|h| at_block(h, block)).unwrap_or_default();
                Ok(json!(u256_quantity(amount)))
            }
            "eth_call" => {
                let call = param(0);
                let to: Address =
                    call["to"].as_str().and_then(|s| s.parse().ok()).ok_or_else(|| invalid("bad call target"))?;
                let data = call["data"].as_str().and_then(|s| decode_hex(s).ok()).unwrap_or_default();
                let block = self.block_tag(&param(1))?;
                Ok(json!(encode_hex(&self.eth_call(to, &data, block)?)))
            }
            "eth_getLogs" => self.logs(&param(0)),
            other => Err(RpcErrorObject { code: -32601, message: format!("method {other} not found"), data: None }),
        }
    }
}

fn reverted() -> RpcErrorObject {
    RpcErrorObject { code: 3, message: "execution reverted".into(), data: None }
}

fn invalid(msg: &str) -> RpcErrorObject {
    RpcErrorObject { code: -32602, message: msg.into(), data: None }
}

impl RpcBackend for SimulatedNode {
    fn request(&self, req: &RpcRequest) -> Result<RpcReply, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let failing = self.fail_next.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok();
        *self.calls.lock().expect("sim lock").entry(req.method.clone()).or_default() += 1;
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if failing {
            return Err(BackendError::Transport("simulated connection reset".into()));
        }
        Ok(match self.answer(req) {
            Ok(v) => RpcReply::Result(v),
            Err(e) => RpcReply::Error(e),
        })
    }
}
