//! Run configuration read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable substituted for `{secret}` in the endpoint URL.
pub const ENDPOINT_SECRET_VAR: &str = "VTVL_RPC_SECRET";

pub const UNISWAP_V2_FACTORY: &str = "0x5c69bee701ef814a2b6a3edd4b1652cb9cc5aa6f";
pub const WETH: &str = "0xc02aaa39b223fe8d0a0e5c4f27ead9083c756cc2";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chain: ChainConfig,
    pub ingest: IngestConfig,
    pub audit: AuditConfig,
    pub reconstruct: ReconstructConfig,
    pub thresholds: Thresholds,
    /// Directory the relative paths above are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Replay recorded responses from this fixture file.
    pub fixture: Option<PathBuf>,
    /// Live JSON-RPC endpoint; may contain `{secret}`.
    pub endpoint: Option<String>,
    /// With a live endpoint, record every response into this fixture file.
    pub record: Option<PathBuf>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub timeout_secs: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { fixture: None, endpoint: None, record: None, max_in_flight: 8, max_attempts: 5, timeout_secs: 30 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Trace files or directories of `*.jsonl` files.
    pub traces: Vec<PathBuf>,
    /// Snapshot labels, newest first. Empty means every label found, in
    /// descending lexical order.
    pub snapshots: Vec<String>,
    pub nominal_blocks: BTreeMap<String, u64>,
    pub ignored_hosts: Option<Vec<String>>,
    pub roster: Vec<String>,
    /// Extra `<selector> <signature>` lines added to the bundled table.
    pub signatures: Option<PathBuf>,
    /// Remote selector directory URL template containing `{selector}`.
    pub signature_directory: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    pub replicates: usize,
    pub min_samples: usize,
    pub review_min_protocols: usize,
    pub classifier_rules: Option<PathBuf>,
    pub include_flagged_in_drift: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            replicates: 1000,
            min_samples: 50,
            review_min_protocols: 2,
            classifier_rules: None,
            include_flagged_in_drift: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Snapshot whose balance queries are replayed; defaults to the newest.
    pub snapshot: Option<String>,
    /// First and last month of the schedule, as `YYYY-MM`.
    pub schedule_from: String,
    pub schedule_to: String,
    /// CSV with header `timestamp,usd_per_eth`.
    pub ethusd: Option<PathBuf>,
    pub weth: String,
    pub factories: Vec<String>,
    pub price_from_block: u64,
    /// Defaults to the block current at the end of the schedule.
    pub price_to_block: Option<u64>,
    /// JSON object mapping protocol id to `{ "file": ..., "category": ... }`.
    pub published_manifest: Option<PathBuf>,
    pub published_columns: Vec<String>,
    pub manual_exclusions: Vec<String>,
    pub curated_lists: Option<PathBuf>,
    pub derivative_rules: Option<PathBuf>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            snapshot: None,
            schedule_from: "2021-01".into(),
            schedule_to: "2024-02".into(),
            ethusd: None,
            weth: WETH.into(),
            factories: vec![UNISWAP_V2_FACTORY.into()],
            price_from_block: 0,
            price_to_block: None,
            published_manifest: None,
            published_columns: vtvl_core::vtvl::DEFAULT_PUBLISHED_COLUMNS.iter().map(|s| s.to_string()).collect(),
            manual_exclusions: Vec::new(),
            curated_lists: None,
            derivative_rules: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_liquidity_points: usize,
    pub outlier_window_days: f64,
    pub outlier_max_deviation: f64,
    pub band_tight: f64,
    pub band_aligned: f64,
    pub failure_tolerance: f64,
    pub staleness_days: f64,
    pub peg_max_deviation: f64,
    pub peg_max_share: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_liquidity_points: 10_000,
            outlier_window_days: 10.0,
            outlier_max_deviation: 0.20,
            band_tight: 0.05,
            band_aligned: 0.5,
            failure_tolerance: 0.20,
            staleness_days: 30.0,
            peg_max_deviation: 0.05,
            peg_max_share: 0.10,
        }
    }
}

/// Parses `"YYYY-MM"`.
pub fn parse_month(s: &str) -> Result<(i32, u32), ConfigError> {
    let bad = || ConfigError::Invalid(format!("month {s:?} is not YYYY-MM"));
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    let y: i32 = y.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&m) {
        return Err(bad());
    }
    Ok((y, m))
}

impl RunConfig {
    pub fn parse(text: &str, label: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: label.to_string(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut cfg = RunConfig::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.chain.fixture, &self.chain.endpoint) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid("set either chain.fixture or chain.endpoint, not both".into()))
            }
            (None, None) => {
                return Err(ConfigError::Invalid("one of chain.fixture or chain.endpoint is required".into()))
            }
            (Some(_), None) if self.chain.record.is_some() => {
                return Err(ConfigError::Invalid("chain.record needs a live endpoint".into()))
            }
            _ => {}
        }
        let t = &self.thresholds;
        let positive = [
            ("min_liquidity_points", t.min_liquidity_points as f64),
            ("outlier_window_days", t.outlier_window_days),
            ("outlier_max_deviation", t.outlier_max_deviation),
            ("band_tight", t.band_tight),
            ("band_aligned", t.band_aligned),
            ("failure_tolerance", t.failure_tolerance),
            ("staleness_days", t.staleness_days),
            ("peg_max_deviation", t.peg_max_deviation),
            ("peg_max_share", t.peg_max_share),
            ("chain.max_in_flight", self.chain.max_in_flight as f64),
            ("chain.max_attempts", self.chain.max_attempts as f64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        if t.band_tight > t.band_aligned {
            return Err(ConfigError::Invalid("band_tight exceeds band_aligned".into()));
        }
        let from = parse_month(&self.reconstruct.schedule_from)?;
        let to = parse_month(&self.reconstruct.schedule_to)?;
        if from > to {
            return Err(ConfigError::Invalid("schedule_from is after schedule_to".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Short SHA-256 of the parsed configuration, independent of its location.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }

    /// Endpoint URL with the secret substituted from the environment.
    pub fn endpoint_url(&self) -> Result<Option<String>, ConfigError> {
        let Some(url) = &self.chain.endpoint else { return Ok(None) };
        if !url.contains("{secret}") {
            return Ok(Some(url.clone()));
        }
        let secret = std::env::var(ENDPOINT_SECRET_VAR)
            .map_err(|_| ConfigError::Invalid(format!("endpoint needs {ENDPOINT_SECRET_VAR}")))?;
        Ok(Some(url.replace("{secret}", &secret)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_xor_endpoint() {
        assert!(RunConfig::parse("[chain]\nfixture = \"a.vtvlfx\"\n", "t").is_ok());
        assert!(RunConfig::parse("[chain]\nendpoint = \"http://x\"\n", "t").is_ok());
        assert!(RunConfig::parse("", "t").is_err());
        assert!(RunConfig::parse("[chain]\nfixture = \"a\"\nendpoint = \"http://x\"\n", "t").is_err());
    }

    #[test]
    fn rejects_bad_thresholds_and_unknown_keys() {
        let base = "[chain]\nfixture = \"a\"\n";
        assert!(RunConfig::parse(&format!("{base}[thresholds]\nband_tight = 0\n"), "t").is_err());
        assert!(RunConfig::parse(&format!("{base}[thresholds]\nfailure_tolerance = -1\n"), "t").is_err());
        assert!(RunConfig::parse(&format!("{base}[audit]\nsede = 3\n"), "t").is_err());
        assert!(RunConfig::parse(&format!("{base}[reconstruct]\nschedule_from = \"2021-13\"\n"), "t").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse("[chain]\nfixture = \"a\"\n", "t").unwrap();
        let mut b = a.clone();
        b.base_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.audit.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
