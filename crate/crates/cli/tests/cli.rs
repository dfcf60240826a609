use std::fs;
use std::path::{Path, PathBuf};

use vtvl_cli::demo;
use vtvl_cli::output::read_csv;
use vtvl_cli::store::ProfileStore;
use vtvl_core::primitives::Address;
use vtvl_core::profile::ProtocolProfile;
use vtvl_core::signatures::FunctionSig;
use vtvl_core::CallKey;

fn vtvl(config: &Path, run_dir: &Path, command: &str) -> i32 {
    vtvl_cli::run([
        "vtvl".as_ref(),
        "--config".as_ref(),
        config.as_os_str(),
        "--run-dir".as_ref(),
        run_dir.as_os_str(),
        command.as_ref(),
    ])
}

fn demo_workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    demo::write_demo(dir.path()).unwrap();
    let config = dir.path().join("config.toml");
    (dir, config)
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    read_csv(path).unwrap().1
}

/// Minimal configuration for commands that only read the profile store.
fn store_only_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("[chain]\nfixture = \"unused.vtvlfx\"\n{extra}")).unwrap();
    path
}

#[test]
fn demo_runs_every_stage_cleanly() {
    let (dir, config) = demo_workspace();
    let run = dir.path().join("run");
    for cmd in ["ingest", "audit", "reconstruct", "report"] {
        assert_eq!(vtvl(&config, &run, cmd), 0, "{cmd}");
    }
    let beta = rows(&run.join("reports/reconstruct/protocols/beta.csv"));
    let totals: Vec<f64> = beta.iter().map(|r| r[1].parse().unwrap()).collect();
    for (got, want) in totals.iter().zip(demo::BETA_USD) {
        assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
    }
    let summary = fs::read_to_string(run.join("reports/summary.md")).unwrap();
    assert!(summary.contains("## Discrepancy bands"));
    let header = fs::read_to_string(run.join("reports/reconstruct/ecosystem.csv")).unwrap();
    assert!(header.starts_with("# vtvl "));
}

#[test]
fn empty_trace_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("traces")).unwrap();
    let config = store_only_config(dir.path(), "[ingest]\ntraces = [\"traces\"]\n");
    assert_eq!(vtvl(&config, &dir.path().join("run"), "ingest"), 2);
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = store_only_config(dir.path(), "[ingest]\ntracez = []\n");
    assert_eq!(vtvl(&config, &dir.path().join("run"), "ingest"), 1);

    let both = dir.path().join("both.toml");
    fs::write(&both, "[chain]\nfixture = \"a\"\nendpoint = \"http://localhost:8545\"\n").unwrap();
    assert_eq!(vtvl(&both, &dir.path().join("run"), "reconstruct"), 1);

    assert_eq!(vtvl_cli::run(["vtvl", "ingest"]), 1);
    assert_eq!(vtvl_cli::run(["vtvl", "frobnicate"]), 1);
    assert_eq!(vtvl(&dir.path().join("missing.toml"), &dir.path().join("run"), "audit"), 1);
}

#[test]
fn audit_without_profiles_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = store_only_config(dir.path(), "");
    assert_eq!(vtvl(&config, &dir.path().join("run"), "audit"), 2);
}

#[test]
fn missing_published_series_is_reported_as_a_warning() {
    let (dir, config) = demo_workspace();
    let manifest = dir.path().join("published/manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m.as_object_mut().unwrap().remove("gamma");
    fs::write(&manifest, m.to_string()).unwrap();
    let run = dir.path().join("run");
    assert_eq!(vtvl(&config, &run, "ingest"), 0);
    assert_eq!(vtvl(&config, &run, "reconstruct"), 3);
    let discrepancy = rows(&run.join("reports/reconstruct/discrepancy.csv"));
    let ids: Vec<&str> = discrepancy.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, vec!["alpha", "beta"]);
    assert!(run.join("reports/reconstruct/protocols/gamma.csv").exists());
}

#[test]
fn one_file_with_two_snapshots_yields_two_stores() {
    let (dir, config) = demo_workspace();
    let traces = dir.path().join("traces");
    let mut merged = String::new();
    for s in [demo::OLD_SNAPSHOT, demo::NEW_SNAPSHOT] {
        let p = traces.join(format!("{s}.jsonl"));
        merged.push_str(&fs::read_to_string(&p).unwrap());
        fs::remove_file(p).unwrap();
    }
    fs::write(traces.join("all.jsonl"), merged).unwrap();
    let run = dir.path().join("run");
    assert_eq!(vtvl(&config, &run, "ingest"), 0);
    let store = ProfileStore::new(run.join("store"));
    assert_eq!(store.snapshots().unwrap(), vec![demo::OLD_SNAPSHOT.to_string(), demo::NEW_SNAPSHOT.to_string()]);
    let newest = store.read_snapshot(demo::NEW_SNAPSHOT).unwrap();
    let alpha = newest.iter().find(|p| p.protocol_id == "alpha").unwrap();
    assert_eq!(alpha.balance_call_keys.len(), 3);
    let oldest = store.read_snapshot(demo::OLD_SNAPSHOT).unwrap();
    let alpha = oldest.iter().find(|p| p.protocol_id == "alpha").unwrap();
    assert_eq!(alpha.balance_call_keys.len(), 2);
}

#[test]
fn demo_partition_counts() {
    let (dir, config) = demo_workspace();
    let run = dir.path().join("run");
    assert_eq!(vtvl(&config, &run, "ingest"), 0);
    let partition = rows(&run.join("reports/ingest/partition.csv"));
    let newest: Vec<(String, u64)> = partition
        .iter()
        .filter(|r| r[0] == demo::NEW_SNAPSHOT)
        .map(|r| (r[1].clone(), r[2].parse().unwrap()))
        .collect();
    let get = |cell: &str| newest.iter().find(|(c, _)| c == cell).unwrap().1;
    assert_eq!(get("onchain_only"), 4);
    assert_eq!(get("hosts_errors"), 1);
    assert_eq!(get("others"), 1);
    assert_eq!(newest.iter().map(|(_, n)| n).sum::<u64>(), 6);
}

fn profile_with(id: &str, snapshot: &str, calls: &[(&str, u64)], keys: &[CallKey]) -> ProtocolProfile {
    let mut p = ProtocolProfile::empty(id, snapshot);
    p.used_onchain = true;
    for (sig, n) in calls {
        let fs = FunctionSig::from_canonical(sig);
        p.method_histogram.insert(fs.key(), *n);
        p.signatures.insert(fs.key(), fs);
    }
    p.balance_call_keys = keys.iter().copied().collect();
    p.record_count = calls.iter().map(|(_, n)| *n as usize).sum();
    p
}

#[test]
fn alternative_ratio_over_snapshot_history() {
    // Alternative and standard call counts of five historical snapshots.
    let history = [
        ("2024-01-04", 6_831, 70_073, 0.089),
        ("2023-10-04", 7_554, 54_144, 0.122),
        ("2023-06-28", 6_836, 27_534, 0.199),
        ("2023-03-29", 6_882, 23_426, 0.227),
        ("2022-12-21", 7_197, 18_367, 0.282),
    ];
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let store = ProfileStore::new(run.join("store"));
    for (snapshot, alt, std, _) in history {
        let half = alt / 2;
        let profiles = vec![
            profile_with(
                "a",
                snapshot,
                &[("balanceOf(address)", std - 100), ("balanceOfUnderlying(address)", half)],
                &[],
            ),
            profile_with(
                "b",
                snapshot,
                &[("eth_getBalance(address)", 100), ("getTotalPooledEther()", alt - half)],
                &[],
            ),
            profile_with("c", snapshot, &[("totalSupply()", 5_000), ("getReserves()", 900)], &[]),
        ];
        store.write_snapshot(snapshot, &profiles).unwrap();
    }
    let config = store_only_config(dir.path(), "[audit]\nreplicates = 10\n");
    assert_eq!(vtvl(&config, &run, "audit"), 0);
    let ratios = rows(&run.join("reports/audit/alt_ratio.csv"));
    assert_eq!(ratios.len(), history.len());
    for (row, (snapshot, alt, std, expected)) in ratios.iter().zip(history) {
        assert_eq!(row[0], snapshot);
        assert_eq!(row[1], alt.to_string());
        assert_eq!(row[2], std.to_string());
        let ratio: f64 = row[3].parse().unwrap();
        assert!((ratio - expected).abs() < 5e-4, "{snapshot}: {ratio}");
    }
    let duplicates = rows(&run.join("reports/audit/duplicates.csv"));
    assert!(duplicates.is_empty());
}

#[test]
fn identical_snapshots_do_not_drift() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let store = ProfileStore::new(run.join("store"));
    let keys = |n: u8| {
        [
            CallKey::NativeBalance { owner: Address([n; 20]) },
            CallKey::TokenBalance { token: Address([9; 20]), owner: Address([n; 20]) },
        ]
    };
    for snapshot in ["2023-01-01", "2023-02-01", "2023-03-01"] {
        let profiles: Vec<_> = (1..=4u8)
            .map(|i| profile_with(&format!("p{i}"), snapshot, &[("balanceOf(address)", 3)], &keys(i)))
            .collect();
        store.write_snapshot(snapshot, &profiles).unwrap();
    }
    let config = store_only_config(dir.path(), "[audit]\nreplicates = 10\n");
    assert_eq!(vtvl(&config, &run, "audit"), 0);
    let drift = rows(&run.join("reports/audit/drift.csv"));
    assert!(!drift.is_empty());
    let means = rows(&run.join("reports/audit/drift_means.csv"));
    assert_eq!(means.len(), 2);
    assert!(means.iter().all(|r| r[0] == "2023-03-01" && r[3] == "1"));
    assert!(rows(&run.join("reports/audit/duplicates.csv")).is_empty());
}

#[test]
fn shared_queries_are_listed_once_per_key() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let shared = CallKey::TokenBalance {
        token: "0xae7ab96520de3a18e5e111b5eaab095312d7fe84".parse().unwrap(),
        owner: "0xdc24316b9ae028f1497c275eb9192a3ea0f67022".parse().unwrap(),
    };
    let native = CallKey::NativeBalance { owner: "0xdc24316b9ae028f1497c275eb9192a3ea0f67022".parse().unwrap() };
    let profiles = vec![
        profile_with("curve", "s", &[("balanceOf(address)", 2)], &[shared, native]),
        profile_with("bent", "s", &[("balanceOf(address)", 1)], &[shared, native]),
        profile_with("lido", "s", &[("balanceOf(address)", 1)], &[CallKey::NativeBalance { owner: Address([1; 20]) }]),
    ];
    ProfileStore::new(run.join("store")).write_snapshot("s", &profiles).unwrap();
    let config = store_only_config(dir.path(), "[audit]\nreplicates = 10\n");
    assert_eq!(vtvl(&config, &run, "audit"), 0);
    let dups = rows(&run.join("reports/audit/duplicates.csv"));
    assert_eq!(dups.len(), 2);
    assert!(dups.iter().all(|r| r[3] == "bent;curve"));
    assert!(dups.iter().any(|r| r[2] == "native"));
}
