//! Recorded call traces: one JSON object per line, one line per interaction.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::primitives::{decode_hex, encode_hex, Address, Selector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    RpcCall,
    RpcGetBalance,
    Http,
}

impl TraceKind {
    pub fn is_rpc(self) -> bool {
        matches!(self, TraceKind::RpcCall | TraceKind::RpcGetBalance)
    }

    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "rpc_call" => Some(TraceKind::RpcCall),
            "rpc_get_balance" => Some(TraceKind::RpcGetBalance),
            "http" => Some(TraceKind::Http),
            _ => None,
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::RpcCall => "rpc_call",
            TraceKind::RpcGetBalance => "rpc_get_balance",
            TraceKind::Http => "http",
        })
    }
}

/// Where a record was directed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Contract(Address),
    Host(String),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Contract(a) => write!(f, "{a}"),
            Target::Host(h) => f.write_str(h),
        }
    }
}

/// One interaction observed while a protocol's TVL computation ran.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub protocol_id: String,
    pub snapshot_id: String,
    pub kind: TraceKind,
    pub target: Target,
    pub calldata: Vec<u8>,
    pub block: u64,
    pub error: Option<String>,
}

impl TraceRecord {
    pub fn target_address(&self) -> Option<Address> {
        match &self.target {
            Target::Contract(a) => Some(*a),
            Target::Host(_) => None,
        }
    }

    pub fn host(&self) -> Option<&str> {
        match &self.target {
            Target::Host(h) => Some(h),
            Target::Contract(_) => None,
        }
    }

    /// Selector of an `rpc_call` record.
    pub fn selector(&self) -> Option<Selector> {
        match self.kind {
            TraceKind::RpcCall => decode_selector(&self.calldata).ok().map(|(s, _)| s),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.protocol_id.is_empty() {
            return Err("empty protocol id".into());
        }
        match (self.kind, &self.target) {
            (TraceKind::RpcCall, Target::Contract(_)) => {
                if self.calldata.len() < 4 {
                    return Err(format!("rpc_call calldata has {} bytes, need at least 4", self.calldata.len()));
                }
            }
            (TraceKind::RpcGetBalance, Target::Contract(_)) => {
                if !self.calldata.is_empty() {
                    return Err("rpc_get_balance must carry empty calldata".into());
                }
            }
            (TraceKind::Http, Target::Host(h)) => {
                if h.is_empty() {
                    return Err("http record with empty hostname".into());
                }
            }
            _ => return Err("target does not match kind".into()),
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: no block number and no nominal block for snapshot {snapshot:?}")]
    MissingBlock { line: usize, snapshot: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A record with an unrecognised `kind` tag. These are reported, not fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    pub line: usize,
    pub kind: String,
}

#[derive(Debug, Default, Clone)]
pub struct ParsedTrace {
    pub records: Vec<TraceRecord>,
    pub rejected: Vec<RejectedLine>,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    protocol: String,
    snapshot: String,
    kind: String,
    target: String,
    #[serde(default)]
    calldata: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Parses a trace stream.
///
/// `nominal_blocks` maps snapshot labels to the block the recorder was pinned
/// to; records without a `block` field inherit it. When a snapshot has no
/// configured nominal block, the first explicit block seen in that snapshot
/// is used instead.
pub fn parse_trace<R: BufRead>(reader: R, nominal_blocks: &HashMap<String, u64>) -> Result<ParsedTrace, TraceError> {
    let mut out = ParsedTrace::default();
    let mut pending: Vec<(usize, usize)> = Vec::new();
    let mut seen_blocks: HashMap<String, u64> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(trimmed)
            .map_err(|e| TraceError::Malformed { line: line_no, message: e.to_string() })?;
        let Some(kind) = TraceKind::parse(&wire.kind) else {
            out.rejected.push(RejectedLine { line: line_no, kind: wire.kind });
            continue;
        };
        let malformed = |message: String| TraceError::Malformed { line: line_no, message };
        let target = if kind.is_rpc() {
            Target::Contract(wire.target.parse().map_err(|e| malformed(format!("target: {e}")))?)
        } else {
            Target::Host(wire.target.trim().to_ascii_lowercase())
        };
        let calldata = if wire.calldata.is_empty() {
            Vec::new()
        } else {
            decode_hex(&wire.calldata).map_err(|e| malformed(format!("calldata: {e}")))?
        };
        let record = TraceRecord {
            protocol_id: wire.protocol,
            snapshot_id: wire.snapshot,
            kind,
            target,
            calldata,
            block: wire.block.unwrap_or(0),
            error: wire.error,
        };
        record.validate().map_err(malformed)?;
        match wire.block {
            Some(b) => {
                seen_blocks.entry(record.snapshot_id.clone()).or_insert(b);
            }
            None => pending.push((out.records.len(), line_no)),
        }
        out.records.push(record);
    }

    for (index, line) in pending {
        let snapshot = &out.records[index].snapshot_id;
        let block = nominal_blocks
            .get(snapshot)
            .or_else(|| seen_blocks.get(snapshot))
            .copied()
            .ok_or_else(|| TraceError::MissingBlock { line, snapshot: snapshot.clone() })?;
        out.records[index].block = block;
    }
    Ok(out)
}

/// Writes records in the line format read by [`parse_trace`].
pub fn write_trace<W: Write>(mut writer: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        let wire = WireRecord {
            protocol: r.protocol_id.clone(),
            snapshot: r.snapshot_id.clone(),
            kind: r.kind.to_string(),
            target: r.target.to_string(),
            calldata: if r.calldata.is_empty() { String::new() } else { encode_hex(&r.calldata) },
            block: Some(r.block),
            error: r.error.clone(),
        };
        serde_json::to_writer(&mut writer, &wire)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("calldata has {0} bytes, a selector needs 4")]
pub struct ShortCalldata(pub usize);

/// Splits calldata into its 4-byte selector and the ABI-encoded arguments.
pub fn decode_selector(calldata: &[u8]) -> Result<(Selector, &[u8]), ShortCalldata> {
    if calldata.len() < 4 {
        return Err(ShortCalldata(calldata.len()));
    }
    let (head, args) = calldata.split_at(4);
    Ok((Selector([head[0], head[1], head[2], head[3]]), args))
}

#[cfg(test)]
mod tests {
    use super::*;

    const OWNER: &str = "000000000000000000000000dc24316b9ae028f1497c275eb9192a3ea0f67022";

    fn parse(s: &str) -> Result<ParsedTrace, TraceError> {
        parse_trace(s.as_bytes(), &HashMap::new())
    }

    #[test]
    fn parses_rpc_call_line() {
        let line = format!(
            r#"{{"protocol":"curve","snapshot":"676475@2024-01-04","kind":"rpc_call","target":"0xae7ab96520de3a18e5e111b5eaab095312d7fe84","calldata":"0x70a08231{OWNER}","block":18930000}}"#
        );
        let parsed = parse(&line).unwrap();
        assert_eq!(parsed.records.len(), 1);
        let r = &parsed.records[0];
        assert_eq!(r.kind, TraceKind::RpcCall);
        assert_eq!(r.calldata.len(), 36);
        assert_eq!(r.selector().unwrap().to_hex(), "0x70a08231");
    }

    #[test]
    fn parses_http_line() {
        let line = r#"{"protocol":"uniswap","snapshot":"s","kind":"http","target":"api.thegraph.com","block":1}"#;
        let parsed = parse(line).unwrap();
        assert_eq!(parsed.records[0].kind, TraceKind::Http);
        assert_eq!(parsed.records[0].host(), Some("api.thegraph.com"));
    }

    #[test]
    fn one_byte_calldata_is_a_parse_error_with_line_number() {
        let text = concat!(
            r#"{"protocol":"a","snapshot":"s","kind":"http","target":"x.io","block":1}"#,
            "\n",
            r#"{"protocol":"a","snapshot":"s","kind":"rpc_call","target":"0xae7ab96520de3a18e5e111b5eaab095312d7fe84","calldata":"0xab","block":1}"#
        );
        match parse(text) {
            Err(TraceError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_is_rejected_and_parsing_continues() {
        let text = concat!(
            r#"{"protocol":"a","snapshot":"s","kind":"websocket","target":"x.io","block":1}"#,
            "\n",
            r#"{"protocol":"a","snapshot":"s","kind":"http","target":"x.io","block":1}"#
        );
        let parsed = parse(text).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejected, vec![RejectedLine { line: 1, kind: "websocket".into() }]);
    }

    #[test]
    fn get_balance_with_calldata_is_rejected() {
        let line = r#"{"protocol":"a","snapshot":"s","kind":"rpc_get_balance","target":"0xae7ab96520de3a18e5e111b5eaab095312d7fe84","calldata":"0x00","block":1}"#;
        assert!(matches!(parse(line), Err(TraceError::Malformed { .. })));
    }

    #[test]
    fn missing_block_inherits_nominal_then_first_seen() {
        let text = concat!(
            r#"{"protocol":"a","snapshot":"s1","kind":"http","target":"x.io"}"#,
            "\n",
            r#"{"protocol":"a","snapshot":"s2","kind":"http","target":"x.io"}"#,
            "\n",
            r#"{"protocol":"b","snapshot":"s2","kind":"http","target":"x.io","block":77}"#
        );
        let nominal = HashMap::from([("s1".to_string(), 10u64)]);
        let parsed = parse_trace(text.as_bytes(), &nominal).unwrap();
        assert_eq!(parsed.records[0].block, 10);
        assert_eq!(parsed.records[1].block, 77);

        let lone = r#"{"protocol":"a","snapshot":"s3","kind":"http","target":"x.io"}"#;
        assert!(matches!(parse(lone), Err(TraceError::MissingBlock { line: 1, .. })));
    }

    #[test]
    fn decode_selector_splits_arguments() {
        let calldata = [0x70, 0xa0, 0x82, 0x31];
        let (sel, args) = decode_selector(&calldata).unwrap();
        assert_eq!(sel.to_hex(), "0x70a08231");
        assert!(args.is_empty());
        assert_eq!(decode_selector(&[1, 2, 3]), Err(ShortCalldata(3)));
    }
}
