//! Selector to function-signature resolution against a local table and an
//! optional remote directory.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::primitives::Selector;

/// Synthetic signature under which `eth_getBalance` flows through the classifier.
pub const NATIVE_BALANCE_SIGNATURE: &str = "eth_getBalance(address)";
pub const ERC20_BALANCE_OF: &str = "balanceOf(address)";

/// Default local table shipped with the crate.
pub const DEFAULT_SIGNATURE_DB: &str = include_str!("../data/signatures.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    LocalDb,
    RemoteDirectory,
    Unknown,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSig {
    pub selector: Selector,
    /// Function name; empty when unresolved.
    pub name: String,
    /// `name(type,...)`; empty when unresolved, first candidate when ambiguous.
    pub canonical_signature: String,
    pub resolution: Resolution,
    /// Every signature that hashes to `selector`, sorted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<String>,
    /// Set when a remote lookup failed and the result fell back to unknown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl FunctionSig {
    fn resolved(selector: Selector, canonical: &str, resolution: Resolution) -> Self {
        FunctionSig {
            selector,
            name: name_of(canonical).to_string(),
            canonical_signature: canonical.to_string(),
            resolution,
            candidates: vec![canonical.to_string()],
            warning: None,
        }
    }

    pub fn unknown(selector: Selector) -> Self {
        FunctionSig {
            selector,
            name: String::new(),
            canonical_signature: String::new(),
            resolution: Resolution::Unknown,
            candidates: Vec::new(),
            warning: None,
        }
    }

    /// Builds a signature from its canonical text, computing the selector.
    pub fn from_canonical(canonical: &str) -> Self {
        FunctionSig::resolved(Selector::of_signature(canonical), canonical, Resolution::LocalDb)
    }

    pub fn native_balance() -> Self {
        FunctionSig::from_canonical(NATIVE_BALANCE_SIGNATURE)
    }

    /// Histogram key: the canonical signature, the candidate list joined with
    /// `|` when ambiguous, or the selector hex when unknown.
    pub fn key(&self) -> String {
        match self.resolution {
            Resolution::Unknown => self.selector.to_hex(),
            Resolution::Ambiguous => self.candidates.join("|"),
            _ => self.canonical_signature.clone(),
        }
    }
}

/// Function name of a canonical signature (text before the parenthesis).
pub fn name_of(canonical: &str) -> &str {
    canonical.split('(').next().unwrap_or(canonical).trim()
}

#[derive(Debug, thiserror::Error)]
pub enum SignatureDbError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {signature:?} hashes to {actual}, not {declared}")]
    HashMismatch { line: usize, signature: String, declared: Selector, actual: Selector },
}

#[derive(Debug, Clone, Default)]
struct DbEntry {
    signatures: Vec<String>,
    pinned: Option<String>,
}

/// Local selector table. Duplicate selectors are kept and resolve as
/// ambiguous unless one line is marked `pin`.
#[derive(Debug, Clone, Default)]
pub struct SignatureDb {
    entries: BTreeMap<Selector, DbEntry>,
}

impl SignatureDb {
    pub fn parse(text: &str) -> Result<Self, SignatureDbError> {
        let mut db = SignatureDb::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let mut parts = content.split_whitespace();
            let (Some(sel), Some(sig)) = (parts.next(), parts.next()) else {
                return Err(SignatureDbError::Malformed { line, message: "expected `<selector> <signature>`".into() });
            };
            let pinned = match parts.next() {
                None => false,
                Some("pin") => true,
                Some(other) => {
                    return Err(SignatureDbError::Malformed { line, message: format!("unexpected token {other:?}") })
                }
            };
            let declared: Selector =
                sel.parse().map_err(|e| SignatureDbError::Malformed { line, message: format!("selector: {e}") })?;
            let actual = Selector::of_signature(sig);
            if actual != declared {
                return Err(SignatureDbError::HashMismatch { line, signature: sig.to_string(), declared, actual });
            }
            db.insert(declared, sig, pinned);
        }
        Ok(db)
    }

    pub fn standard() -> Self {
        SignatureDb::parse(DEFAULT_SIGNATURE_DB).expect("bundled signature table is valid")
    }

    pub fn insert(&mut self, selector: Selector, signature: &str, pinned: bool) {
        let entry = self.entries.entry(selector).or_default();
        if !entry.signatures.iter().any(|s| s == signature) {
            entry.signatures.push(signature.to_string());
            entry.signatures.sort();
        }
        if pinned {
            entry.pinned = Some(signature.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, selector: Selector) -> Option<FunctionSig> {
        let entry = self.entries.get(&selector)?;
        let mut sig = match (&entry.pinned, entry.signatures.as_slice()) {
            (Some(pin), _) => FunctionSig::resolved(selector, pin, Resolution::LocalDb),
            (None, [only]) => FunctionSig::resolved(selector, only, Resolution::LocalDb),
            (None, many) => ambiguous(selector, many.to_vec()),
        };
        sig.candidates = entry.signatures.clone();
        Some(sig)
    }
}

fn ambiguous(selector: Selector, mut candidates: Vec<String>) -> FunctionSig {
    candidates.sort();
    candidates.dedup();
    let first = candidates[0].clone();
    FunctionSig {
        selector,
        name: name_of(&first).to_string(),
        canonical_signature: first,
        resolution: Resolution::Ambiguous,
        candidates,
        warning: None,
    }
}

#[derive(Debug, thiserror::Error)]
#[error("signature directory: {0}")]
pub struct DirectoryError(pub String);

/// Remote selector directory (4byte-style).
pub trait SignatureDirectory: Send + Sync {
    fn lookup(&self, selector: Selector) -> Result<Vec<String>, DirectoryError>;
}

/// HTTP directory client. The URL template must contain `{selector}`, which is
/// replaced with the `0x`-prefixed hex selector; the response is expected to
/// carry `results[].text_signature`.
pub struct HttpDirectory {
    url_template: String,
    client: reqwest::blocking::Client,
}

impl HttpDirectory {
    pub fn new(url_template: impl Into<String>) -> Result<Self, DirectoryError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(20))
            .build()
            .map_err(|e| DirectoryError(e.to_string()))?;
        Ok(HttpDirectory { url_template: url_template.into(), client })
    }
}

#[derive(Deserialize)]
struct DirectoryPage {
    results: Vec<DirectoryEntry>,
}

#[derive(Deserialize)]
struct DirectoryEntry {
    text_signature: String,
}

/// Extracts candidate signatures from a directory response body.
pub fn parse_directory_response(body: &str) -> Result<Vec<String>, DirectoryError> {
    let page: DirectoryPage = serde_json::from_str(body).map_err(|e| DirectoryError(format!("bad response: {e}")))?;
    Ok(page.results.into_iter().map(|r| r.text_signature).collect())
}

impl SignatureDirectory for HttpDirectory {
    fn lookup(&self, selector: Selector) -> Result<Vec<String>, DirectoryError> {
        let url = self.url_template.replace("{selector}", &selector.to_hex());
        let body = self
            .client
            .get(url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| DirectoryError(e.to_string()))?;
        parse_directory_response(&body)
    }
}

/// Resolves a selector. The local table wins; otherwise the remote directory is
/// consulted when given. Remote candidates that do not hash to the selector are
/// discarded. A remote failure yields `Unknown` with a warning instead of an
/// error.
pub fn resolve_signature(
    selector: Selector,
    local: &SignatureDb,
    remote: Option<&dyn SignatureDirectory>,
) -> FunctionSig {
    if let Some(sig) = local.lookup(selector) {
        return sig;
    }
    let Some(remote) = remote else {
        return FunctionSig::unknown(selector);
    };
    match remote.lookup(selector) {
        Ok(found) => {
            let mut valid: Vec<String> = found
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| Selector::of_signature(s) == selector)
                .collect();
            valid.sort();
            valid.dedup();
            match valid.len() {
                0 => FunctionSig::unknown(selector),
                1 => FunctionSig::resolved(selector, &valid[0], Resolution::RemoteDirectory),
                _ => ambiguous(selector, valid),
            }
        }
        Err(e) => {
            warn!("remote lookup for {selector} failed: {e}");
            let mut sig = FunctionSig::unknown(selector);
            sig.warning = Some(e.to_string());
            sig
        }
    }
}

/// Memoizing resolver used during ingestion.
pub struct SignatureResolver<'a> {
    local: &'a SignatureDb,
    remote: Option<&'a dyn SignatureDirectory>,
    cache: HashMap<Selector, FunctionSig>,
}

impl<'a> SignatureResolver<'a> {
    pub fn new(local: &'a SignatureDb, remote: Option<&'a dyn SignatureDirectory>) -> Self {
        SignatureResolver { local, remote, cache: HashMap::new() }
    }

    pub fn resolve(&mut self, selector: Selector) -> &FunctionSig {
        let (local, remote) = (self.local, self.remote);
        self.cache.entry(selector).or_insert_with(|| resolve_signature(selector, local, remote))
    }
}
