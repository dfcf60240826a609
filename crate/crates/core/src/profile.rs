//! Per-protocol provenance classification and corpus frequency tables.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::CallKey;
use crate::primitives::{Address, Selector};
use crate::signatures::{FunctionSig, Resolution, SignatureResolver, ERC20_BALANCE_OF};
use crate::trace::{decode_selector, TraceKind, TraceRecord};

/// Hosts belonging to the aggregator's own infrastructure; interactions with
/// them do not count as external provenance.
pub const DEFAULT_IGNORED_HOSTS: &[&str] = &["coins.llama.fi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolProfile {
    pub protocol_id: String,
    pub snapshot_id: String,
    /// At least one RPC record completed without an error.
    pub used_onchain: bool,
    pub used_external_hosts: bool,
    pub raised_errors: bool,
    pub hosts: BTreeSet<String>,
    /// Histogram key (see [`FunctionSig::key`]) to call count, over every
    /// RPC-kind record. `eth_getBalance` appears under its synthetic signature.
    pub method_histogram: BTreeMap<String, u64>,
    /// Resolved signature for every histogram key.
    pub signatures: BTreeMap<String, FunctionSig>,
    pub balance_call_keys: BTreeSet<CallKey>,
    /// `balanceOf(address)` call counts per token contract.
    #[serde(default)]
    pub token_calls: BTreeMap<Address, u64>,
    #[serde(default)]
    pub errors: Vec<String>,
    pub record_count: usize,
}

impl ProtocolProfile {
    pub fn empty(protocol_id: &str, snapshot_id: &str) -> Self {
        ProtocolProfile {
            protocol_id: protocol_id.to_string(),
            snapshot_id: snapshot_id.to_string(),
            used_onchain: false,
            used_external_hosts: false,
            raised_errors: false,
            hosts: BTreeSet::new(),
            method_histogram: BTreeMap::new(),
            signatures: BTreeMap::new(),
            balance_call_keys: BTreeSet::new(),
            token_calls: BTreeMap::new(),
            errors: Vec::new(),
            record_count: 0,
        }
    }

    pub fn cell(&self) -> ProvenanceCell {
        use ProvenanceCell::*;
        match (self.used_onchain, self.used_external_hosts, self.raised_errors) {
            (true, false, false) => OnchainOnly,
            (true, false, true) => OnchainErrors,
            (false, false, true) => ErrorsOnly,
            (true, true, true) => OnchainHostsErrors,
            (false, true, true) => HostsErrors,
            (false, true, false) => HostsOnly,
            (true, true, false) => OnchainHosts,
            (false, false, false) => Others,
        }
    }

    /// True when the protocol used external hosts or raised errors.
    pub fn is_flagged(&self) -> bool {
        self.used_external_hosts || self.raised_errors
    }

    pub fn rpc_call_count(&self) -> u64 {
        self.method_histogram.values().sum()
    }
}

/// Cell of the on-chain × external-hosts × errors cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceCell {
    OnchainOnly,
    OnchainErrors,
    ErrorsOnly,
    OnchainHostsErrors,
    HostsErrors,
    HostsOnly,
    OnchainHosts,
    /// No interaction recorded at all.
    Others,
}

impl ProvenanceCell {
    pub const ALL: [ProvenanceCell; 8] = [
        ProvenanceCell::OnchainOnly,
        ProvenanceCell::OnchainErrors,
        ProvenanceCell::ErrorsOnly,
        ProvenanceCell::OnchainHostsErrors,
        ProvenanceCell::HostsErrors,
        ProvenanceCell::HostsOnly,
        ProvenanceCell::OnchainHosts,
        ProvenanceCell::Others,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ProvenanceCell::OnchainOnly => "onchain_only",
            ProvenanceCell::OnchainErrors => "onchain_errors",
            ProvenanceCell::ErrorsOnly => "errors_only",
            ProvenanceCell::OnchainHostsErrors => "onchain_hosts_errors",
            ProvenanceCell::HostsErrors => "hosts_errors",
            ProvenanceCell::HostsOnly => "hosts_only",
            ProvenanceCell::OnchainHosts => "onchain_hosts",
            ProvenanceCell::Others => "others",
        }
    }
}

impl fmt::Display for ProvenanceCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Resolved signature of a record, if it is an RPC-kind record.
fn signature_of(record: &TraceRecord, signatures: &HashMap<Selector, FunctionSig>) -> Option<FunctionSig> {
    match record.kind {
        TraceKind::RpcGetBalance => Some(FunctionSig::native_balance()),
        TraceKind::RpcCall => {
            let (sel, _) = decode_selector(&record.calldata).ok()?;
            Some(signatures.get(&sel).cloned().unwrap_or_else(|| FunctionSig::unknown(sel)))
        }
        TraceKind::Http => None,
    }
}

fn is_standard_token_balance(sig: &FunctionSig) -> bool {
    sig.resolution != Resolution::Ambiguous
        && sig.resolution != Resolution::Unknown
        && sig.canonical_signature == ERC20_BALANCE_OF
}

/// Decoded standard balance query of a record, if it is one.
pub fn call_key_of(record: &TraceRecord, sig: &FunctionSig) -> Option<CallKey> {
    let target = record.target_address()?;
    match record.kind {
        TraceKind::RpcGetBalance => Some(CallKey::NativeBalance { owner: target }),
        TraceKind::RpcCall if is_standard_token_balance(sig) => {
            let (_, args) = decode_selector(&record.calldata).ok()?;
            let word: &[u8; 32] = args.get(..32)?.try_into().ok()?;
            Some(CallKey::TokenBalance { token: target, owner: Address::from_word(word) })
        }
        _ => None,
    }
}

/// Builds the profile of one protocol at one snapshot.
///
/// `signatures` must hold a resolution for every selector in the records
/// (missing selectors classify as unknown). Hosts in `ignored_hosts` are
/// dropped before provenance flags are set.
pub fn classify_protocol(
    protocol_id: &str,
    snapshot_id: &str,
    records: &[&TraceRecord],
    signatures: &HashMap<Selector, FunctionSig>,
    ignored_hosts: &HashSet<String>,
) -> ProtocolProfile {
    let mut profile = ProtocolProfile::empty(protocol_id, snapshot_id);
    profile.record_count = records.len();
    for record in records {
        debug_assert_eq!(record.protocol_id, protocol_id);
        if let Some(err) = &record.error {
            profile.raised_errors = true;
            profile.errors.push(err.clone());
        }
        match record.kind {
            TraceKind::Http => {
                let host = record.host().unwrap_or_default();
                if !ignored_hosts.contains(host) {
                    profile.hosts.insert(host.to_string());
                }
            }
            TraceKind::RpcCall | TraceKind::RpcGetBalance => {
                if record.error.is_none() {
                    profile.used_onchain = true;
                }
                let Some(sig) = signature_of(record, signatures) else {
                    continue;
                };
                let key = sig.key();
                *profile.method_histogram.entry(key.clone()).or_default() += 1;
                if let Some(call) = call_key_of(record, &sig) {
                    if let CallKey::TokenBalance { token, .. } = call {
                        *profile.token_calls.entry(token).or_default() += 1;
                    }
                    profile.balance_call_keys.insert(call);
                }
                profile.signatures.entry(key).or_insert(sig);
            }
        }
    }
    profile.used_external_hosts = !profile.hosts.is_empty();
    profile
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub ignored_hosts: HashSet<String>,
    /// Full protocol roster per snapshot. Protocols listed here without any
    /// record become empty profiles in the `others` cell.
    pub roster: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            ignored_hosts: DEFAULT_IGNORED_HOSTS.iter().map(|h| h.to_string()).collect(),
            roster: Vec::new(),
        }
    }
}

/// Groups records by (snapshot, protocol), resolves every selector once and
/// classifies each group. Output is sorted by snapshot then protocol.
pub fn build_profiles(
    records: &[TraceRecord],
    resolver: &mut SignatureResolver<'_>,
    options: &IngestOptions,
) -> Vec<ProtocolProfile> {
    let mut signatures = HashMap::new();
    let mut groups: BTreeMap<(&str, &str), Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        if let Some(sel) = r.selector() {
            signatures.entry(sel).or_insert_with(|| resolver.resolve(sel).clone());
        }
        groups.entry((r.snapshot_id.as_str(), r.protocol_id.as_str())).or_default().push(r);
    }
    let snapshots: BTreeSet<&str> = groups.keys().map(|(s, _)| *s).collect();
    for snapshot in &snapshots {
        for protocol in &options.roster {
            groups.entry((snapshot, protocol.as_str())).or_default();
        }
    }
    let groups: Vec<_> = groups.into_iter().collect();
    groups
        .par_iter()
        .map(|((snapshot, protocol), recs)| {
            classify_protocol(protocol, snapshot, recs, &signatures, &options.ignored_hosts)
        })
        .collect()
}

pub fn partition_counts(profiles: &[ProtocolProfile]) -> BTreeMap<ProvenanceCell, usize> {
    let mut counts: BTreeMap<ProvenanceCell, usize> = ProvenanceCell::ALL.iter().map(|c| (*c, 0)).collect();
    for p in profiles {
        *counts.entry(p.cell()).or_default() += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MethodRow {
    pub signature: String,
    pub total_count: u64,
    pub protocol_count: usize,
}

/// Corpus method table sorted by protocol count, then total count (both
/// descending), then signature.
pub fn method_frequency(profiles: &[ProtocolProfile]) -> Vec<MethodRow> {
    let mut acc: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
    for p in profiles {
        for (sig, count) in &p.method_histogram {
            let e = acc.entry(sig).or_default();
            e.0 += count;
            e.1 += 1;
        }
    }
    let mut rows: Vec<MethodRow> = acc
        .into_iter()
        .map(|(sig, (total, protocols))| MethodRow {
            signature: sig.to_string(),
            total_count: total,
            protocol_count: protocols,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.protocol_count
            .cmp(&a.protocol_count)
            .then(b.total_count.cmp(&a.total_count))
            .then(a.signature.cmp(&b.signature))
    });
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenRow {
    pub token: Address,
    pub symbol: String,
    pub count: u64,
}

/// Counts `balanceOf(address)` calls per token contract. Records that are not
/// standard balance calls are ignored.
pub fn token_frequency(records: &[TraceRecord], symbols: &HashMap<Address, String>) -> Vec<TokenRow> {
    let balance_of = Selector::of_signature(ERC20_BALANCE_OF);
    let mut counts: BTreeMap<Address, u64> = BTreeMap::new();
    for r in records {
        if r.kind == TraceKind::RpcCall && r.selector() == Some(balance_of) && r.calldata.len() >= 36 {
            if let Some(token) = r.target_address() {
                *counts.entry(token).or_default() += 1;
            }
        }
    }
    token_rows(counts, symbols)
}

/// Same table as [`token_frequency`] built from stored profiles.
pub fn token_frequency_from_profiles(
    profiles: &[ProtocolProfile],
    symbols: &HashMap<Address, String>,
) -> Vec<TokenRow> {
    let mut counts: BTreeMap<Address, u64> = BTreeMap::new();
    for p in profiles {
        for (token, n) in &p.token_calls {
            *counts.entry(*token).or_default() += n;
        }
    }
    token_rows(counts, symbols)
}

fn token_rows(counts: BTreeMap<Address, u64>, symbols: &HashMap<Address, String>) -> Vec<TokenRow> {
    let mut rows: Vec<TokenRow> = counts
        .into_iter()
        .map(|(token, count)| TokenRow {
            token,
            symbol: symbols.get(&token).cloned().unwrap_or_else(|| token.short()),
            count,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.token.cmp(&b.token)));
    rows
}

/// Report label for a recorded error message.
pub fn error_category(message: &str) -> &'static str {
    let m = message.to_ascii_lowercase();
    let rules: &[(&[&str], &str)] = &[
        (&["block height", "block number", "blockheight", "invalid block"], "Block height"),
        (&["promise.all", "allsettled", "async", "asynchronous"], "Asynchronous calls failed"),
        (&["api key", "key required", "apikey"], "Key required"),
        (&["missing", "required parameter", "required field"], "Missing field/parameter"),
        (&["undefined", "null", "cannot read propert"], "Undefined/null object"),
        (&["graphql"], "GraphQL error"),
        (&["call revert", "execution reverted", "multicall", "call method", "call failed"], "Call method failed"),
        (&["invalid token", "invalid balance", "balance"], "Invalid token/balance"),
    ];
    rules.iter().find(|(needles, _)| needles.iter().any(|n| m.contains(n))).map(|(_, label)| *label).unwrap_or("Other")
}

/// Number of protocols per error label and per external host.
pub fn error_and_host_tables(profiles: &[ProtocolProfile]) -> (BTreeMap<&'static str, usize>, BTreeMap<String, usize>) {
    let mut errors = BTreeMap::new();
    let mut hosts = BTreeMap::new();
    for p in profiles {
        let labels: BTreeSet<&'static str> = p.errors.iter().map(|e| error_category(e)).collect();
        for l in labels {
            *errors.entry(l).or_default() += 1;
        }
        for h in &p.hosts {
            *hosts.entry(h.clone()).or_default() += 1;
        }
    }
    (errors, hosts)
}
