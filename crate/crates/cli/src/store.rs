//! On-disk profile store: one directory per snapshot holding a JSON file
//! per protocol and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vtvl_core::profile::ProtocolProfile;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub protocol_id: String,
    pub file: String,
    pub cell: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub snapshot_id: String,
    pub protocols: Vec<ManifestEntry>,
}

/// File name for a protocol id: unsafe characters become `_`.
pub fn file_stem(protocol_id: &str) -> String {
    protocol_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

pub struct ProfileStore {
    root: PathBuf,
}

impl ProfileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ProfileStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Replaces the snapshot directory with the given profiles.
    pub fn write_snapshot(&self, snapshot_id: &str, profiles: &[ProtocolProfile]) -> Result<()> {
        let dir = self.root.join(file_stem(snapshot_id));
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut sorted: Vec<&ProtocolProfile> = profiles.iter().collect();
        sorted.sort_by(|a, b| a.protocol_id.cmp(&b.protocol_id));
        let mut entries = Vec::new();
        let mut used: BTreeMap<String, usize> = BTreeMap::new();
        for p in sorted {
            let stem = file_stem(&p.protocol_id);
            let n = used.entry(stem.clone()).or_default();
            let file = if *n == 0 { format!("{stem}.json") } else { format!("{stem}~{n}.json") };
            *n += 1;
            let text = serde_json::to_string_pretty(p)? + "\n";
            fs::write(dir.join(&file), text).with_context(|| format!("writing {file}"))?;
            entries.push(ManifestEntry {
                protocol_id: p.protocol_id.clone(),
                file,
                cell: p.cell().label().to_string(),
                records: p.record_count,
            });
        }
        let manifest = Manifest { snapshot_id: snapshot_id.to_string(), protocols: entries };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    pub fn snapshots(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let entries =
            fs::read_dir(&self.root).with_context(|| format!("no profile store at {}", self.root.display()))?;
        for e in entries {
            let path = e?.path().join(MANIFEST);
            if path.is_file() {
                let m: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?;
                out.push(m.snapshot_id);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn read_snapshot(&self, snapshot_id: &str) -> Result<Vec<ProtocolProfile>> {
        let dir = self.root.join(file_stem(snapshot_id));
        let path = dir.join(MANIFEST);
        let manifest: Manifest = serde_json::from_str(
            &fs::read_to_string(&path).with_context(|| format!("snapshot {snapshot_id:?} not in store"))?,
        )
        .with_context(|| format!("reading {}", path.display()))?;
        let mut out = Vec::with_capacity(manifest.protocols.len());
        for entry in &manifest.protocols {
            let p = dir.join(&entry.file);
            let profile: ProtocolProfile =
                serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("reading {}", p.display()))?;
            if profile.protocol_id != entry.protocol_id {
                bail!("{} holds {:?}, manifest says {:?}", p.display(), profile.protocol_id, entry.protocol_id);
            }
            out.push(profile);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_name_collisions() {
        let dir = tempfile::tempdir().unwrap();
        let store = ProfileStore::new(dir.path());
        let profiles = vec![ProtocolProfile::empty("a/b", "s1"), ProtocolProfile::empty("a?b", "s1")];
        store.write_snapshot("s1", &profiles).unwrap();
        assert_eq!(store.snapshots().unwrap(), ["s1"]);
        let back = store.read_snapshot("s1").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].protocol_id, "a/b");
        assert!(dir.path().join("s1/a_b~1.json").exists());
    }
}
