use std::fmt::Write as _;
use std::path::Path;

use super::{CliError, Outcome, RunDir};
use crate::config::RunConfig;
use crate::output::{read_csv, Reports};

fn table(out: &mut String, title: &str, path: &Path) -> anyhow::Result<bool> {
    if !path.is_file() {
        return Ok(false);
    }
    let (headers, rows) = read_csv(path)?;
    let _ = writeln!(out, "## {title}\n");
    let _ = writeln!(out, "| {} |", headers.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(headers.len()));
    for r in &rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    if rows.is_empty() {
        let _ = writeln!(out, "| {} |", vec!["-"; headers.len()].join(" | "));
    }
    out.push('\n');
    Ok(true)
}

/// Collects the main tables of earlier commands into `summary.md` and
/// prints it.
pub fn cmd_report(config: &RunConfig, run: &RunDir) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let reports = Reports::new(run.reports(), &config.hash())?;
    let dir = reports.dir().to_path_buf();
    let mut out = format!("# vTVL run summary\n\n`{}`\n", reports.header().trim_start_matches("# ").trim_end());
    out.push('\n');
    let sections = [
        ("Provenance partition", "ingest/partition.csv"),
        ("Alternative balance calls", "audit/alt_ratio.csv"),
        ("Balance-query drift", "audit/drift_means.csv"),
        ("Shared balance queries", "audit/duplicates.csv"),
        ("Heavy-tail fits", "audit/powerlaw.csv"),
        ("Ecosystem value", "reconstruct/ecosystem.csv"),
        ("Contested value", "reconstruct/contested.csv"),
        ("Discrepancy", "reconstruct/discrepancy.csv"),
        ("Discrepancy bands", "reconstruct/bands.csv"),
        ("Redeemable share by group", "reconstruct/tvr_groups.csv"),
    ];
    let mut found = 0;
    for (title, file) in sections {
        if table(&mut out, title, &dir.join(file))? {
            found += 1;
        } else {
            outcome.warnings.push(format!("{file} missing"));
        }
    }
    if found == 0 {
        return Err(anyhow::anyhow!("no reports under {}", dir.display()).into());
    }
    outcome.written.push(reports.text("summary.md", &out)?);
    print!("{out}");
    Ok(outcome)
}
