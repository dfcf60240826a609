//! Report files. Every CSV starts with `#` lines naming the tool version
//! and configuration hash.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Reports {
    dir: PathBuf,
    config_hash: String,
}

impl Reports {
    pub fn new(dir: impl Into<PathBuf>, config_hash: &str) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Reports { dir, config_hash: config_hash.to_string() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn sub(&self, name: &str) -> Result<Reports> {
        Reports::new(self.dir.join(name), &self.config_hash)
    }

    pub fn header(&self) -> String {
        format!("# vtvl {VERSION} config {}\n", self.config_hash)
    }

    /// Writes `name` with the provenance header, any `notes` as further
    /// comment lines, then the CSV body.
    pub fn csv<R, I>(&self, name: &str, notes: &[&str], columns: &[&str], rows: I) -> Result<PathBuf>
    where
        R: IntoIterator,
        R::Item: AsRef<str>,
        I: IntoIterator<Item = R>,
    {
        let mut out = self.header().into_bytes();
        for n in notes {
            out.extend_from_slice(format!("# {n}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(columns)?;
        for row in rows {
            w.write_record(row.into_iter().map(|c| c.as_ref().to_string()).collect::<Vec<_>>())?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv flush: {e}"))?;
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Fixed-format number for reports; NaN becomes an empty cell.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

/// Reads a report CSV, skipping the comment header.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let headers = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok((headers, rows))
}
