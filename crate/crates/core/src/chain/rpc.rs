//! JSON-RPC request/response plumbing and the HTTP backend.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RpcRequest {
    pub method: String,
    pub params: Value,
}

impl RpcRequest {
    pub fn new(method: &str, params: Value) -> Self {
        RpcRequest { method: method.to_string(), params }
    }

    /// Canonical bytes identifying the request: method and params with
    /// object keys sorted, no id and no whitespace.
    pub fn canonical(&self) -> Vec<u8> {
        let body = json!({ "method": self.method, "params": canonicalize(&self.params) });
        serde_json::to_vec(&canonicalize(&body)).expect("json values serialize")
    }

    pub fn key(&self) -> [u8; 32] {
        Sha256::digest(self.canonical()).into()
    }

    pub fn envelope(&self, id: u64) -> Value {
        json!({ "jsonrpc": "2.0", "id": id, "method": self.method, "params": self.params })
    }
}

fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalize(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcErrorObject {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

/// Node answer to one request: a result value or a JSON-RPC error object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RpcReply {
    Result(Value),
    Error(RpcErrorObject),
}

impl RpcReply {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("reply serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BackendError> {
        serde_json::from_slice(bytes).map_err(|e| BackendError::Malformed(e.to_string()))
    }

    fn from_envelope(value: &Value) -> Result<Self, BackendError> {
        if let Some(err) = value.get("error") {
            let err: RpcErrorObject =
                serde_json::from_value(err.clone()).map_err(|e| BackendError::Malformed(e.to_string()))?;
            return Ok(RpcReply::Error(err));
        }
        value
            .get("result")
            .cloned()
            .map(RpcReply::Result)
            .ok_or_else(|| BackendError::Malformed("response has neither result nor error".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Network-level failure; the only retryable kind.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for request {0}")]
    MissingFixture(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// Anything that answers JSON-RPC requests.
pub trait RpcBackend: Send + Sync {
    fn request(&self, req: &RpcRequest) -> Result<RpcReply, BackendError>;

    /// Answers a list of requests in input order. The default issues them
    /// one by one.
    fn request_batch(&self, reqs: &[RpcRequest]) -> Vec<Result<RpcReply, BackendError>> {
        reqs.iter().map(|r| self.request(r)).collect()
    }
}

impl<B: RpcBackend + ?Sized> RpcBackend for std::sync::Arc<B> {
    fn request(&self, req: &RpcRequest) -> Result<RpcReply, BackendError> {
        (**self).request(req)
    }

    fn request_batch(&self, reqs: &[RpcRequest]) -> Vec<Result<RpcReply, BackendError>> {
        (**self).request_batch(reqs)
    }
}

pub struct HttpBackend {
    url: String,
    client: reqwest::blocking::Client,
    next_id: AtomicU64,
}

impl HttpBackend {
    pub fn new(url: &str, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend { url: url.to_string(), client, next_id: AtomicU64::new(1) })
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let response =
            self.client.post(&self.url).json(body).send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transport(format!("http status {status}")));
        }
        response.json().map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

impl RpcBackend for HttpBackend {
    fn request(&self, req: &RpcRequest) -> Result<RpcReply, BackendError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let value = self.post(&req.envelope(id))?;
        if value.get("id").and_then(Value::as_u64) != Some(id) {
            return Err(BackendError::Malformed(format!("response id does not match request id {id}")));
        }
        RpcReply::from_envelope(&value)
    }

    fn request_batch(&self, reqs: &[RpcRequest]) -> Vec<Result<RpcReply, BackendError>> {
        if reqs.len() <= 1 {
            return reqs.iter().map(|r| self.request(r)).collect();
        }
        let first = self.next_id.fetch_add(reqs.len() as u64, Ordering::Relaxed);
        let body = Value::Array(reqs.iter().enumerate().map(|(i, r)| r.envelope(first + i as u64)).collect());
        let replies = match self.post(&body) {
            Ok(Value::Array(items)) => items,
            Ok(_) => return vec![Err(BackendError::Malformed("batch reply is not an array".into())); reqs.len()],
            Err(e) => return vec![Err(e); reqs.len()],
        };
        let mut out = vec![Err(BackendError::Malformed("missing batch entry".into())); reqs.len()];
        for item in &replies {
            let Some(id) = item.get("id").and_then(Value::as_u64) else { continue };
            if let Some(slot) = id.checked_sub(first).and_then(|i| out.get_mut(i as usize)) {
                *slot = RpcReply::from_envelope(item);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_sorts_keys_and_omits_id() {
        let a = RpcRequest::new("eth_call", json!([{"to": "0xab", "data": "0x01"}, "0x10"]));
        let b = RpcRequest::new("eth_call", json!([{"data": "0x01", "to": "0xab"}, "0x10"]));
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(
            String::from_utf8(a.canonical()).unwrap(),
            r#"{"method":"eth_call","params":[{"data":"0x01","to":"0xab"},"0x10"]}"#
        );
        assert_eq!(a.key(), b.key());
        assert_ne!(a.key(), RpcRequest::new("eth_call", json!([])).key());
    }

    #[test]
    fn reply_round_trips_and_reads_envelopes() {
        let ok = RpcReply::Result(json!("0x2a"));
        assert_eq!(RpcReply::from_bytes(&ok.to_bytes()).unwrap(), ok);
        let env = json!({"jsonrpc": "2.0", "id": 1, "error": {"code": 3, "message": "execution reverted"}});
        assert!(matches!(RpcReply::from_envelope(&env).unwrap(), RpcReply::Error(e) if e.code == 3));
        assert!(RpcReply::from_envelope(&json!({"id": 1})).is_err());
    }
}
