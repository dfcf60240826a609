use std::collections::BTreeMap;
use std::fs;

use anyhow::Context;
use vtvl_core::analytics::{drift_report, find_duplicates, fit_power_law, DriftOptions, PowerLawOptions};
use vtvl_core::classifier::{alt_ratio, classify_corpus, ClassifierRules};
use vtvl_core::profile::ProtocolProfile;

use super::{snapshot_order, CliError, Outcome, RunDir};
use crate::config::RunConfig;
use crate::output::{num, Reports};
use crate::store::ProfileStore;

fn rules(config: &RunConfig) -> anyhow::Result<ClassifierRules> {
    match &config.audit.classifier_rules {
        Some(p) => {
            let p = config.resolve(p);
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(ClassifierRules::parse(&text)?)
        }
        None => Ok(ClassifierRules::default()),
    }
}

/// Frequency samples for the heavy-tail fits: calls per function, protocols
/// per function and `balanceOf` calls per token.
fn frequency_samples(profiles: &[ProtocolProfile]) -> Vec<(&'static str, Vec<u64>)> {
    let mut calls: BTreeMap<&str, u64> = BTreeMap::new();
    let mut protocols: BTreeMap<&str, u64> = BTreeMap::new();
    let mut tokens: BTreeMap<_, u64> = BTreeMap::new();
    for p in profiles {
        for (sig, n) in &p.method_histogram {
            *calls.entry(sig).or_default() += n;
            *protocols.entry(sig).or_default() += 1;
        }
        for (t, n) in &p.token_calls {
            *tokens.entry(*t).or_default() += n;
        }
    }
    vec![
        ("function_calls", calls.into_values().collect()),
        ("function_protocols", protocols.into_values().collect()),
        ("token_calls", tokens.into_values().collect()),
    ]
}

/// Method classes, alternative-call ratios, drift, duplicates and
/// heavy-tail fits over the stored profiles.
pub fn cmd_audit(config: &RunConfig, run: &RunDir) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let store = ProfileStore::new(run.store());
    let order = snapshot_order(config, &store.snapshots()?);
    if order.is_empty() {
        return Err(anyhow::anyhow!("profile store is empty; run ingest first").into());
    }
    let snapshots: Vec<(String, Vec<ProtocolProfile>)> =
        order.iter().map(|s| Ok((s.clone(), store.read_snapshot(s)?))).collect::<anyhow::Result<_>>()?;
    let rules = rules(config)?;
    let reports = Reports::new(run.reports(), &config.hash())?.sub("audit")?;

    let mut classes = Vec::new();
    let mut review = Vec::new();
    let mut ratios = Vec::new();
    let mut duplicates = Vec::new();
    let mut fits = Vec::new();
    for (snapshot, profiles) in &snapshots {
        let corpus = classify_corpus(profiles, &rules, config.audit.review_min_protocols);
        let mut totals: BTreeMap<&str, (u64, usize)> = BTreeMap::new();
        for p in profiles {
            for (k, n) in &p.method_histogram {
                let e = totals.entry(k).or_default();
                e.0 += n;
                e.1 += 1;
            }
        }
        for (sig, m) in &corpus.methods {
            let (calls, protocols) = totals.get(sig.as_str()).copied().unwrap_or_default();
            classes.push(vec![
                snapshot.clone(),
                sig.clone(),
                m.class.label().to_string(),
                m.matched_rule.clone().unwrap_or_default(),
                calls.to_string(),
                protocols.to_string(),
            ]);
        }
        for r in &corpus.review_queue {
            review.push(vec![
                snapshot.clone(),
                r.signature.clone(),
                r.total_count.to_string(),
                r.protocol_count.to_string(),
            ]);
        }
        match alt_ratio(profiles, &rules) {
            Ok(r) => ratios.push(vec![
                snapshot.clone(),
                r.alternative_calls.to_string(),
                r.standard_calls.to_string(),
                num(r.ratio),
                num(corpus.standard_only_share),
            ]),
            Err(e) => {
                outcome.warnings.push(format!("{snapshot}: {e}"));
                ratios.push(vec![
                    snapshot.clone(),
                    String::new(),
                    "0".into(),
                    String::new(),
                    num(corpus.standard_only_share),
                ]);
            }
        }
        for f in find_duplicates(profiles) {
            let token = f.key.token().map(|t| t.to_string()).unwrap_or_else(|| "native".into());
            let protocols: Vec<&str> = f.protocols.iter().map(String::as_str).collect();
            duplicates.push(vec![snapshot.clone(), f.key.owner().to_string(), token, protocols.join(";")]);
        }
        for (series, samples) in frequency_samples(profiles) {
            let opts = PowerLawOptions {
                min_samples: config.audit.min_samples,
                replicates: config.audit.replicates,
                seed: config.audit.seed,
                ..PowerLawOptions::default()
            };
            match fit_power_law(&samples, &opts) {
                Ok(f) => fits.push(vec![
                    snapshot.clone(),
                    series.to_string(),
                    f.n.to_string(),
                    f.n_tail.to_string(),
                    f.xmin_hat.to_string(),
                    num(f.alpha_hat),
                    num(f.ks_distance),
                    num(f.bootstrap_p),
                    f.replicates.to_string(),
                    String::new(),
                ]),
                Err(e) => fits.push(vec![
                    snapshot.clone(),
                    series.to_string(),
                    samples.len().to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    "0".into(),
                    e.to_string(),
                ]),
            }
        }
    }

    let (reference, older) = snapshots.split_first().expect("at least one snapshot");
    let older: Vec<(&str, &[ProtocolProfile])> = older.iter().map(|(s, p)| (s.as_str(), p.as_slice())).collect();
    let drift = drift_report(
        (reference.0.as_str(), &reference.1),
        &older,
        &DriftOptions { include_flagged: config.audit.include_flagged_in_drift },
    );
    let mut drift_rows = Vec::new();
    let mut drift_means = Vec::new();
    for pair in &drift.pairs {
        if let Some(w) = &pair.warning {
            outcome.warnings.push(w.clone());
        }
        drift_means.push(vec![
            pair.reference.clone(),
            pair.other.clone(),
            pair.rows.len().to_string(),
            pair.mean.map(num).unwrap_or_default(),
        ]);
        for r in &pair.rows {
            drift_rows.push(vec![
                pair.reference.clone(),
                pair.other.clone(),
                r.protocol_id.clone(),
                num(r.similarity),
                r.both_empty.to_string(),
            ]);
        }
    }

    let w = &mut outcome.written;
    w.push(reports.csv(
        "method_classes.csv",
        &[],
        &["snapshot", "signature", "class", "rule", "calls", "protocols"],
        classes,
    )?);
    w.push(reports.csv("review_queue.csv", &[], &["snapshot", "signature", "calls", "protocols"], review)?);
    w.push(reports.csv(
        "alt_ratio.csv",
        &[],
        &["snapshot", "alternative_calls", "standard_calls", "ratio", "standard_only_share"],
        ratios,
    )?);
    w.push(reports.csv("duplicates.csv", &[], &["snapshot", "owner", "token", "protocols"], duplicates)?);
    w.push(reports.csv(
        "drift.csv",
        &[],
        &["reference", "other", "protocol", "similarity", "both_empty"],
        drift_rows,
    )?);
    w.push(reports.csv(
        "drift_means.csv",
        &[],
        &["reference", "other", "protocols", "mean_similarity"],
        drift_means,
    )?);
    w.push(reports.csv(
        "powerlaw.csv",
        &[],
        &["snapshot", "series", "n", "n_tail", "xmin", "alpha", "ks", "p_value", "replicates", "error"],
        fits,
    )?);
    Ok(outcome)
}
