use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use decoupling_lab_cli::manifest::{sha256_hex, RunManifest};

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decoupling-lab"))
        .current_dir(dir)
        .env_remove("DECOUPLING_LAB_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_with_defaults_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("PASS  kappa_table"));
    assert!(!table.contains("FAIL"));
    assert!(tmp.path().join("out/verify.csv").exists());
}

#[test]
fn config_file_with_only_command_runs() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.cfg"), "command=verify\n").unwrap();
    let o = lab(tmp.path(), &["--config", "run.cfg", "--out", "res"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("res/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.config["n"], 2);
    assert_eq!(m.config["p"], 4.0);
    assert_eq!(m.config["E"], 8.0);
    assert_eq!(m.config["M"], 8);
}

#[test]
fn validation_errors_are_reported_together() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.cfg"), "command=sweep\np=1\nwobble=2\nspacing=0.3\n").unwrap();
    let o = lab(tmp.path(), &["--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in ["p must be ≥ 2", "unknown key \"wobble\"", "spacing must be a dyadic", "seed: required"] {
        assert!(err.contains(needle), "missing {needle:?} in {err}");
    }
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn flags_override_file_values() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("s.cfg"), "command=sweep\nseed=1\ntrials=3\ndelta_exponents=1\n").unwrap();
    let o = lab(tmp.path(), &["--config", "s.cfg", "--seed", "9", "trials=2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/sweep.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[4], row[5]), ("2", "9"));
    assert!(stderr(&o).contains("no growth fit"));
}

#[test]
fn sweep_csv_is_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["sweep", "seed=2024", "trials=8", "delta_exponents=1,2,3", "M=4"];
    let one = lab(tmp.path(), &[&args[..], &["--workers", "1", "--out", "w1"]].concat());
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    let eight = Command::new(env!("CARGO_BIN_EXE_decoupling-lab"))
        .current_dir(tmp.path())
        .env("DECOUPLING_LAB_WORKERS", "8")
        .args(args)
        .args(["--out", "w8"])
        .output()
        .unwrap();
    assert_eq!(eight.status.code(), Some(0), "{}", stderr(&eight));
    let a = fs::read(tmp.path().join("w1/sweep.csv")).unwrap();
    let b = fs::read(tmp.path().join("w8/sweep.csv")).unwrap();
    assert_eq!(a, b);
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(tmp.path().join("w8/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.workers, Some(8));
}

#[test]
fn manifest_checksums_match_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["compare", "seed=3", "trials=2", "delta_exponents=1,2", "M=4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("out");
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.command, "compare");
    assert_eq!(m.outputs.len(), 2);
    for out in &m.outputs {
        let bytes = fs::read(dir.join(&out.file)).unwrap();
        assert_eq!(out.sha256, sha256_hex(&bytes), "{}", out.file);
        assert_eq!(out.bytes, bytes.len() as u64);
    }
    assert!(m.stages.iter().any(|s| s.stage == "compare" && s.wall_ms >= 0.0));
    assert!(!m.version.is_empty());
}

#[test]
fn kakeya_violation_names_the_tuple() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["kakeya", "R=16", "tiles=0,0/1,0;2,2/0,1|0,0/0,1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    // tile 1 of family 0 is parallel to the only tile of family 1
    assert!(err.contains("tuple [1, 0]"), "{err}");
}

#[test]
fn kakeya_random_families_write_a_row() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["kakeya", "R=16", "n=3", "tiles_per_family=3", "seed=5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/kakeya.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "3;3;3");
    assert!(row[5].parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn multiscale_ledger_has_the_documented_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["multiscale", "p=6", "seed=1", "delta_level=2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/ledger.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["kappa"], 0.5);
    let level = &v["levels"][0];
    assert_eq!(level["l"], 0);
    assert!(level["A"].as_f64().unwrap() > 0.0 && level["D"].as_f64().unwrap() > 0.0);
    let lhs = v["lhs"].as_f64().unwrap();
    let rhs = v["rhs"].as_f64().unwrap();
    let c = v["implied_constant"].as_f64().unwrap();
    assert!((c - lhs / rhs).abs() < 1e-12 * c);
}

#[test]
fn oversized_multiscale_is_rejected_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["multiscale", "g=constant", "m=3"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("exceeds the default cap"));
    assert!(err.contains("lower m or delta_level"));
}

#[test]
fn fit_reads_a_sweep_and_flags_too_few_scales() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = lab(tmp.path(), &["sweep", "seed=1", "trials=3", "delta_exponents=1,2,3", "M=4", "--out", "s"]);
    assert_eq!(sweep.status.code(), Some(0), "{}", stderr(&sweep));
    let o = lab(tmp.path(), &["fit", "input=s/sweep.csv", "--out", "f"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("f/fit.json")).unwrap()).unwrap();
    assert!(v["eta_hat"].as_f64().unwrap().is_finite());

    fs::write(tmp.path().join("two.csv"), "delta_exponent,best_ratio\n1,1.1\n2,1.2\n").unwrap();
    let o = lab(tmp.path(), &["fit", "input=two.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn io_failures_exit_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), "").unwrap();
    let o = lab(tmp.path(), &["verify", "--out", "blocker/sub"]);
    assert_eq!(o.status.code(), Some(4));
    let o = lab(tmp.path(), &["fit", "input=missing.csv"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn extend_and_ratio_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lab(tmp.path(), &["extend", "g=constant", "points=0,0;1,2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/extend.csv")).unwrap();
    let first: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    // E 1 (0) = integral of 1 over [0,1]
    assert!((first[2] - 1.0).abs() < 1e-12 && first[3].abs() < 1e-12);

    let o = lab(tmp.path(), &["ratio", "g=cap:1@1", "delta_exponents=1", "--out", "r"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("r/ratio.csv")).unwrap();
    let r: f64 = csv.lines().nth(1).unwrap().split(',').nth(5).unwrap().parse().unwrap();
    assert!((r - 1.0).abs() < 1e-12);
}
