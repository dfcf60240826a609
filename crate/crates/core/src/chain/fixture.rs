//! Record/replay container for RPC responses keyed by request hash.
//!
//! Layout: an 8-byte magic header, then `hash (32) | len (u32 LE) | bytes`
//! records sorted by hash. A sibling `.idx` text file lists
//! `hash<TAB>len<TAB>method params` per record for humans.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use super::rpc::{BackendError, RpcBackend, RpcReply, RpcRequest};
use crate::primitives::encode_hex;

pub const FIXTURE_MAGIC: &[u8; 8] = b"VTVLFX\x00\x01";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture io: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: not a fixture file (bad magic or version)")]
    BadMagic { path: String },
    #[error("{path}: truncated record at byte {offset}")]
    Truncated { path: String, offset: usize },
    #[error("conflicting response recorded for request {0}")]
    Conflict(String),
}

#[derive(Debug, Clone)]
struct Entry {
    bytes: Vec<u8>,
    label: String,
}

/// Thread-safe map of request hash to response bytes.
#[derive(Debug, Default)]
pub struct FixtureStore {
    entries: Mutex<BTreeMap<[u8; 32], Entry>>,
}

fn index_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".idx");
    PathBuf::from(p)
}

impl FixtureStore {
    pub fn new() -> Self {
        FixtureStore::default()
    }

    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let data = fs::read(path)?;
        let name = path.display().to_string();
        if data.len() < FIXTURE_MAGIC.len() || &data[..8] != FIXTURE_MAGIC {
            return Err(FixtureError::BadMagic { path: name });
        }
        let labels = Self::read_labels(&index_path(path));
        let mut entries = BTreeMap::new();
        let mut at = 8;
        while at < data.len() {
            let header = data.get(at..at + 36).ok_or(FixtureError::Truncated { path: name.clone(), offset: at })?;
            let key: [u8; 32] = header[..32].try_into().expect("32-byte slice");
            let len = u32::from_le_bytes(header[32..36].try_into().expect("4-byte slice")) as usize;
            let bytes = data
                .get(at + 36..at + 36 + len)
                .ok_or(FixtureError::Truncated { path: name.clone(), offset: at })?
                .to_vec();
            let label = labels.get(&encode_hex(&key)).cloned().unwrap_or_default();
            entries.insert(key, Entry { bytes, label });
            at += 36 + len;
        }
        Ok(FixtureStore { entries: Mutex::new(entries) })
    }

    fn read_labels(path: &Path) -> BTreeMap<String, String> {
        let Ok(text) = fs::read_to_string(path) else {
            return BTreeMap::new();
        };
        text.lines()
            .filter_map(|l| {
                let mut parts = l.splitn(3, '\t');
                let hash = parts.next()?;
                let _len = parts.next()?;
                Some((format!("0x{hash}"), parts.next().unwrap_or_default().to_string()))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("fixture lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &[u8; 32]) -> Option<Vec<u8>> {
        self.entries.lock().expect("fixture lock").get(key).map(|e| e.bytes.clone())
    }

    /// Adds a response. Re-recording identical bytes is a no-op; different
    /// bytes under an existing key are refused, since entries are append-only.
    pub fn insert(&self, key: [u8; 32], bytes: Vec<u8>, label: String) -> Result<(), FixtureError> {
        let mut entries = self.entries.lock().expect("fixture lock");
        match entries.get(&key) {
            Some(existing) if existing.bytes == bytes => Ok(()),
            Some(_) => Err(FixtureError::Conflict(encode_hex(&key))),
            None => {
                entries.insert(key, Entry { bytes, label });
                Ok(())
            }
        }
    }

    /// Writes the container and its index, merging with any entries already
    /// on disk so that saving never drops a record.
    pub fn save(&self, path: &Path) -> Result<(), FixtureError> {
        if path.exists() {
            let previous = FixtureStore::load(path)?;
            for (k, e) in previous.entries.into_inner().expect("fixture lock") {
                self.insert(k, e.bytes, e.label)?;
            }
        }
        let entries = self.entries.lock().expect("fixture lock");
        let mut data = FIXTURE_MAGIC.to_vec();
        let mut index = String::new();
        for (key, e) in entries.iter() {
            data.extend_from_slice(key);
            data.extend_from_slice(&(e.bytes.len() as u32).to_le_bytes());
            data.extend_from_slice(&e.bytes);
            index.push_str(&format!("{}\t{}\t{}\n", hex::encode(key), e.bytes.len(), e.label));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&data)?;
        fs::write(index_path(path), index)?;
        Ok(())
    }
}

fn label_of(req: &RpcRequest) -> String {
    format!("{} {}", req.method, req.params)
}

/// Forwards to a live backend and records every reply.
pub struct Recorder<B> {
    inner: B,
    store: std::sync::Arc<FixtureStore>,
}

impl<B: RpcBackend> Recorder<B> {
    pub fn new(inner: B, store: std::sync::Arc<FixtureStore>) -> Self {
        Recorder { inner, store }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }

    fn keep(&self, req: &RpcRequest, reply: &RpcReply) -> Result<(), BackendError> {
        self.store
            .insert(req.key(), reply.to_bytes(), label_of(req))
            .map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

impl<B: RpcBackend> RpcBackend for Recorder<B> {
    fn request(&self, req: &RpcRequest) -> Result<RpcReply, BackendError> {
        let reply = self.inner.request(req)?;
        self.keep(req, &reply)?;
        Ok(reply)
    }

    fn request_batch(&self, reqs: &[RpcRequest]) -> Vec<Result<RpcReply, BackendError>> {
        let replies = self.inner.request_batch(reqs);
        reqs.iter()
            .zip(replies)
            .map(|(req, reply)| {
                let reply = reply?;
                self.keep(req, &reply)?;
                Ok(reply)
            })
            .collect()
    }
}

/// Serves recorded replies; never touches the network.
pub struct Replay {
    store: std::sync::Arc<FixtureStore>,
}

impl Replay {
    pub fn new(store: std::sync::Arc<FixtureStore>) -> Self {
        Replay { store }
    }
}

impl RpcBackend for Replay {
    fn request(&self, req: &RpcRequest) -> Result<RpcReply, BackendError> {
        let key = req.key();
        let bytes = self
            .store
            .get(&key)
            .ok_or_else(|| BackendError::MissingFixture(format!("{} ({})", encode_hex(&key), label_of(req))))?;
        RpcReply::from_bytes(&bytes)
    }
}
