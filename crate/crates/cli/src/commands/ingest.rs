use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::{bail, Context};
use log::info;
use vtvl_core::profile::{
    build_profiles, error_and_host_tables, method_frequency, partition_counts, token_frequency_from_profiles,
    IngestOptions, ProvenanceCell,
};
use vtvl_core::signatures::{HttpDirectory, SignatureDb, SignatureDirectory, SignatureResolver, DEFAULT_SIGNATURE_DB};
use vtvl_core::trace::{parse_trace, TraceRecord};

use super::{CliError, Outcome, RunDir};
use crate::config::RunConfig;
use crate::output::Reports;
use crate::store::ProfileStore;

fn trace_files(config: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in &config.ingest.traces {
        let p = config.resolve(p);
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(&p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.is_file() {
            files.push(p);
        } else {
            bail!("trace path {} does not exist", p.display());
        }
    }
    Ok(files)
}

pub(crate) fn signature_db(config: &RunConfig) -> anyhow::Result<SignatureDb> {
    let mut text = DEFAULT_SIGNATURE_DB.to_string();
    if let Some(extra) = &config.ingest.signatures {
        let p = config.resolve(extra);
        text.push('\n');
        text.push_str(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(SignatureDb::parse(&text)?)
}

/// Parses traces, classifies every protocol and writes the profile store
/// and the ingest tables.
pub fn cmd_ingest(config: &RunConfig, run: &RunDir) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let files = trace_files(config)?;
    if files.is_empty() {
        return Err(anyhow::anyhow!("no trace files found").into());
    }
    let nominal: HashMap<String, u64> = config.ingest.nominal_blocks.clone().into_iter().collect();
    let mut records: Vec<TraceRecord> = Vec::new();
    for f in &files {
        let reader = BufReader::new(fs::File::open(f).with_context(|| format!("opening {}", f.display()))?);
        let parsed = parse_trace(reader, &nominal).with_context(|| format!("parsing {}", f.display()))?;
        for r in &parsed.rejected {
            outcome.warnings.push(format!("{}:{}: unknown record kind {:?}", f.display(), r.line, r.kind));
        }
        records.extend(parsed.records);
    }
    if records.is_empty() {
        return Err(anyhow::anyhow!("trace files contain no usable records").into());
    }
    info!("{} records from {} files", records.len(), files.len());

    let db = signature_db(config)?;
    let directory = match &config.ingest.signature_directory {
        Some(url) => Some(HttpDirectory::new(url.clone()).map_err(|e| anyhow::anyhow!("{e}"))?),
        None => None,
    };
    let mut resolver = SignatureResolver::new(&db, directory.as_ref().map(|d| d as &dyn SignatureDirectory));
    let mut options = IngestOptions { roster: config.ingest.roster.clone(), ..IngestOptions::default() };
    if let Some(hosts) = &config.ingest.ignored_hosts {
        options.ignored_hosts = hosts.iter().map(|h| h.to_ascii_lowercase()).collect();
    }
    let profiles = build_profiles(&records, &mut resolver, &options);

    let mut by_snapshot: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for p in &profiles {
        by_snapshot.entry(p.snapshot_id.as_str()).or_default().push(p.clone());
    }
    let store = ProfileStore::new(run.store());
    for (snapshot, ps) in &by_snapshot {
        store.write_snapshot(snapshot, ps)?;
    }

    let reports = Reports::new(run.reports(), &config.hash())?.sub("ingest")?;
    let mut partition = Vec::new();
    let mut methods = Vec::new();
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    let mut hosts = Vec::new();
    for (snapshot, ps) in &by_snapshot {
        let counts = partition_counts(ps);
        for cell in ProvenanceCell::ALL {
            partition.push(vec![snapshot.to_string(), cell.label().to_string(), counts[&cell].to_string()]);
        }
        for m in method_frequency(ps) {
            methods.push(vec![
                snapshot.to_string(),
                m.signature,
                m.total_count.to_string(),
                m.protocol_count.to_string(),
            ]);
        }
        for t in token_frequency_from_profiles(ps, &HashMap::new()) {
            tokens.push(vec![snapshot.to_string(), t.token.to_string(), t.count.to_string()]);
        }
        let (e, h) = error_and_host_tables(ps);
        errors.extend(e.into_iter().map(|(l, n)| vec![snapshot.to_string(), l.to_string(), n.to_string()]));
        hosts.extend(h.into_iter().map(|(l, n)| vec![snapshot.to_string(), l, n.to_string()]));
    }
    outcome.written.push(reports.csv("partition.csv", &[], &["snapshot", "cell", "protocols"], partition)?);
    outcome.written.push(reports.csv("methods.csv", &[], &["snapshot", "signature", "calls", "protocols"], methods)?);
    outcome.written.push(reports.csv("tokens.csv", &[], &["snapshot", "token", "balance_of_calls"], tokens)?);
    outcome.written.push(reports.csv("errors.csv", &[], &["snapshot", "category", "protocols"], errors)?);
    outcome.written.push(reports.csv("hosts.csv", &[], &["snapshot", "host", "protocols"], hosts)?);
    Ok(outcome)
}
