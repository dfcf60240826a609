mod audit;
mod ingest;
mod reconstruct;
mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};

pub use audit::cmd_audit;
pub use ingest::cmd_ingest;
pub use reconstruct::{cmd_reconstruct, reconstruct_with_backend};
pub use report::cmd_report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Data(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

/// Result of a command that ran to completion.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<String>,
    pub written: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.warnings.is_empty() {
            0
        } else {
            3
        }
    }
}

/// Layout of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        RunDir { root: root.to_path_buf() }
    }

    pub fn store(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Snapshot labels newest first: the configured order, else every stored
/// label in descending order.
fn snapshot_order(config: &RunConfig, stored: &[String]) -> Vec<String> {
    if config.ingest.snapshots.is_empty() {
        let mut s = stored.to_vec();
        s.sort_by(|a, b| b.cmp(a));
        s
    } else {
        config.ingest.snapshots.iter().filter(|s| stored.contains(s)).cloned().collect()
    }
}
