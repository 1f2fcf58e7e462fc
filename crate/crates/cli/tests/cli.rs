use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--sim-time",
    "0.3",
    "--override",
    "topology.node_count=60",
    "--override",
    "traffic.sources_per_bucket=2",
];

fn nanosim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanosim"))
        .args(args)
        .env("NANOSIM_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn sweep(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    nanosim(&args)
}

#[test]
fn sweep_writes_logs_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sweep(dir.path(), &["--protocols", "rmrls,sfr", "--seeds", "1..3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut logs: Vec<String> = fs::read_dir(dir.path().join("logs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    logs.sort();
    assert_eq!(
        logs,
        [
            "rmrls_seed1",
            "rmrls_seed2",
            "rmrls_seed3",
            "sfr_seed1",
            "sfr_seed2",
            "sfr_seed3"
        ]
        .map(|s| format!("{s}.ndjson"))
    );

    let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "protocol,distance_bucket,energy_per_bit,delivery_ratio,avg_throughput,seeds,\
         energy_per_bit_stderr,delivery_ratio_stderr,avg_throughput_stderr"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.len(), 9);
        assert_eq!(r[0], if i < 10 { "RMRLS" } else { "SFR" });
        assert_eq!(r[1], ((i % 10) + 1).to_string());
        assert_eq!(r[5], "3");
        let pdr: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&pdr));
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1, 2, 3]));
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["sim_time_s"], 0.3);
}

#[test]
fn same_invocation_gives_identical_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(sweep(d.path(), &["--protocols", "rmrls,random", "--seeds", "4,5"])
            .status
            .success());
    }
    let read = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "metrics.csv"), read(&b, "metrics.csv"));
    assert_eq!(read(&a, "logs/rmrls_seed5.ndjson"), read(&b, "logs/rmrls_seed5.ndjson"));
    let hash = |d: &tempfile::TempDir| {
        let m: serde_json::Value = serde_json::from_slice(&read(d, "manifest.json")).unwrap();
        m["config_sha256"].clone()
    };
    assert_eq!(hash(&a), hash(&b));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.toml");
    fs::write(&cfg, "[traffic]\nbuckets = 3\nsim_time_s = 5.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = sweep(&out_dir, &["--config", cfg.to_str().unwrap(), "--protocols", "sfr"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let manifest = fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"sim_time_s\": 0.3"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    let out = sweep(dir.path(), &["--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn error_kinds_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let bad_protocol = sweep(dir.path(), &["--protocols", "aodv"]);
    assert_eq!(bad_protocol.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&bad_protocol.stderr).contains("aodv"));

    let bad_key = sweep(dir.path(), &["--override", "radio.warp=9"]);
    assert_eq!(bad_key.status.code(), Some(4));

    let bad_seeds = sweep(dir.path(), &["--seeds", "9..2"]);
    assert_eq!(bad_seeds.status.code(), Some(6));

    let file = dir.path().join("plain-file");
    fs::write(&file, "").unwrap();
    let unwritable = sweep(&file, &["--protocols", "sfr"]);
    assert_eq!(unwritable.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&unwritable.stderr).contains("not writable"));
}
