use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{PricePoint, PriceSeries, PriceStatus};
use crate::primitives::Address;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, message: impl ToString) -> StoreError {
    StoreError::Format { path: path.display().to_string(), message: message.to_string() }
}

/// USD per ETH over time, sorted by timestamp.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EthUsdSeries {
    points: Vec<(u64, f64)>,
}

impl EthUsdSeries {
    pub fn new(mut points: Vec<(u64, f64)>) -> Self {
        points.sort_by_key(|(t, _)| *t);
        points.dedup_by_key(|(t, _)| *t);
        EthUsdSeries { points }
    }

    /// Reads CSV with header `timestamp,usd_per_eth`.
    pub fn from_csv<R: io::Read>(reader: R, label: &Path) -> Result<Self, StoreError> {
        #[derive(Deserialize)]
        struct Row {
            timestamp: u64,
            usd_per_eth: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let mut points = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| format_err(label, e))?;
            if !(row.usd_per_eth.is_finite() && row.usd_per_eth > 0.0) {
                return Err(format_err(label, format!("non-positive rate at {}", row.timestamp)));
            }
            points.push((row.timestamp, row.usd_per_eth));
        }
        Ok(EthUsdSeries::new(points))
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let f = fs::File::open(path).map_err(io_err(path))?;
        EthUsdSeries::from_csv(f, path)
    }

    /// Latest rate at or before `t`, if no older than `staleness` seconds.
    pub fn at(&self, t: u64, staleness: u64) -> Option<f64> {
        let i = self.points.partition_point(|(pt, _)| *pt <= t);
        let (pt, usd) = *self.points.get(i.checked_sub(1)?)?;
        (t - pt <= staleness).then_some(usd)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    status: PriceStatus,
    cleaned: bool,
    dropped_outliers: usize,
    points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

/// Price series keyed by token.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesStore {
    series: BTreeMap<Address, PriceSeries>,
}

pub const MANIFEST: &str = "manifest.json";

impl SeriesStore {
    pub fn new() -> Self {
        SeriesStore::default()
    }

    pub fn insert(&mut self, series: PriceSeries) {
        self.series.insert(series.token, series);
    }

    pub fn get(&self, token: &Address) -> Option<&PriceSeries> {
        self.series.get(token)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PriceSeries> {
        self.series.values()
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    fn points_csv(series: &PriceSeries) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["timestamp", "rate", "pair"]).expect("in-memory write");
        for p in &series.points {
            w.write_record([p.t.to_string(), p.rate.to_string(), p.source_pair.to_string()]).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Writes one CSV per non-empty series, named by the SHA-256 of its
    /// content, and a manifest with every token's status.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut manifest = BTreeMap::new();
        for (token, s) in &self.series {
            let file = if s.points.is_empty() {
                None
            } else {
                let bytes = Self::points_csv(s);
                let name = format!("{}.csv", hex::encode(&Sha256::digest(&bytes)[..16]));
                let path = dir.join(&name);
                fs::write(&path, &bytes).map_err(io_err(&path))?;
                Some(name)
            };
            manifest.insert(
                token.to_string(),
                ManifestEntry {
                    status: s.status,
                    cleaned: s.cleaned,
                    dropped_outliers: s.dropped_outliers,
                    points: s.points.len(),
                    file,
                },
            );
        }
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: BTreeMap<String, ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| format_err(&path, e))?;
        let mut store = SeriesStore::new();
        for (token, entry) in manifest {
            let token: Address = token.parse().map_err(|e| format_err(&path, e))?;
            let mut points = Vec::with_capacity(entry.points);
            if let Some(file) = &entry.file {
                let p = dir.join(file);
                let bytes = fs::read(&p).map_err(io_err(&p))?;
                let digest = hex::encode(&Sha256::digest(&bytes)[..16]);
                if file.trim_end_matches(".csv") != digest {
                    return Err(format_err(&p, "content does not match its address"));
                }
                let mut rdr = csv::Reader::from_reader(bytes.as_slice());
                for rec in rdr.records() {
                    let rec = rec.map_err(|e| format_err(&p, e))?;
                    let parse_err = |what| format_err(&p, format!("bad {what} in {rec:?}"));
                    points.push(PricePoint {
                        t: rec[0].parse().map_err(|_| parse_err("timestamp"))?,
                        rate: rec[1].parse().map_err(|_| parse_err("rate"))?,
                        source_pair: rec[2].parse().map_err(|_| parse_err("pair"))?,
                    });
                }
            }
            store.insert(PriceSeries {
                token,
                points,
                cleaned: entry.cleaned,
                dropped_outliers: entry.dropped_outliers,
                status: entry.status,
            });
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ethusd_lookup_and_staleness() {
        let csv = "timestamp,usd_per_eth\n200,2000\n100,1000\n";
        let s = EthUsdSeries::from_csv(csv.as_bytes(), Path::new("x")).unwrap();
        assert_eq!(s.at(150, 1000), Some(1000.0));
        assert_eq!(s.at(200, 0), Some(2000.0));
        assert_eq!(s.at(99, 1000), None);
        assert_eq!(s.at(5000, 100), None);
        assert!(EthUsdSeries::from_csv("timestamp,usd_per_eth\n1,-3\n".as_bytes(), Path::new("x")).is_err());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = SeriesStore::new();
        store.insert(PriceSeries {
            token: Address([1; 20]),
            points: vec![
                PricePoint { t: 1, rate: 0.1 + 0.2, source_pair: Address([9; 20]) },
                PricePoint { t: 2, rate: 1e-12, source_pair: Address([9; 20]) },
            ],
            cleaned: true,
            dropped_outliers: 3,
            status: PriceStatus::Priced,
        });
        store.insert(PriceSeries::with_status(Address([2; 20]), PriceStatus::LowLiquidity));
        store.save(dir.path()).unwrap();
        assert_eq!(SeriesStore::load(dir.path()).unwrap(), store);
        let files = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 2);
    }
}
