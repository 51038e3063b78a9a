use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn drlab(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_drlab"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn classify_critical_example() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "mode": "exact", "initial": {"pmf": "0:4/5,2:1/5"}}"#);
    let out = dir.path().join("out");
    let o = drlab(&["classify"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&out.join("classification.json"));
    assert_eq!(v["class"], "Critical");
    assert_eq!(v["lhs"], "8/5");
    assert_eq!(v["degenerate_flag"], false);
    assert!(out.join("config.resolved.json").exists());
}

#[test]
fn pc_for_unit_y0_at_m3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 3, "initial": {"family": {"y0": "1:1"}}}"#);
    let out = dir.path().join("out");
    let o = drlab(&["pc"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&out.join("pc.json"));
    assert_eq!(v["p_c"], "1/4");
    assert_eq!(v["p_c_decimal"], 0.25);
    assert!(v["abs_difference"].as_f64().unwrap() < 1e-10);
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "initial": {"pmf": "0:1"}, "precision": 128}"#);
    let o = drlab(&["classify"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("precision"));
}

#[test]
fn degenerate_law_is_refused_by_conjectures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "initial": {"pmf": "1:1"}, "steps": 5}"#);
    let o = drlab(&["conjectures"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fixed point"));
}

#[test]
fn sampling_budget_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"m": 2, "initial": {"pmf": "0:4/5,2:1/5"}, "steps": 30, "samples": 1000, "budget": 1000000}"#,
    );
    let o = drlab(&["mc"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("1073741824000"));
}

#[test]
fn evolve_reproduces_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "initial": {"pmf": "0:4/5,2:1/5"}}"#);
    let a = dir.path().join("a");
    let o = drlab(&["evolve", "--steps", "12", "--precision", "128"], Some(&cfg), &a);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = read_json(&a.join("config.resolved.json"));
    assert_eq!(resolved["steps"], 12);
    assert_eq!(resolved["precision_bits"], 128);
    assert_eq!(resolved["truncation_tol"], "1e-30");

    let b = dir.path().join("b");
    let o = drlab(&["evolve"], Some(&a.join("config.resolved.json")), &b);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
    assert_eq!(fs::read(a.join("trace.snapshot")).unwrap(), fs::read(b.join("trace.snapshot")).unwrap());
}

#[test]
fn trace_csv_is_canonical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 3, "initial": {"pmf": "0:3/4,1:1/4"}, "steps": 8}"#);
    let out = dir.path().join("out");
    assert!(drlab(&["evolve"], Some(&cfg), &out).status.success());
    let text = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mode = drlab::NumericMode::big_float(256).unwrap();
    assert_eq!(drlab::evolution::recanonicalize_csv(&text, mode).unwrap(), text);
    assert_eq!(text.lines().next().unwrap(), drlab::evolution::CSV_COLUMNS.join(","));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "mode": "exact", "initial": {"pmf": "0:4/5,2:1/5"}}"#);
    let full = dir.path().join("full");
    assert!(drlab(&["evolve", "--steps", "8"], Some(&cfg), &full).status.success());
    let first = dir.path().join("first");
    assert!(drlab(&["evolve", "--steps", "4"], Some(&cfg), &first).status.success());
    let snap = first.join("trace.snapshot");
    let resume = write_config(
        dir.path(),
        "r.json",
        &format!(
            r#"{{"m": 2, "mode": "exact", "initial": {{"pmf": "0:4/5,2:1/5"}}, "resume_from": {:?}}}"#,
            snap.to_str().unwrap()
        ),
    );
    let second = dir.path().join("second");
    let o = drlab(&["evolve", "--steps", "4"], Some(&resume), &second);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(full.join("trace.csv")).unwrap(), fs::read(second.join("trace.csv")).unwrap());
}

#[test]
fn corrupted_snapshot_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("bad.snapshot");
    fs::write(&snap, "drlab-snapshot\nformat_version 1\nchecksum 00\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        &format!(r#"{{"m": 2, "initial": {{"pmf": "0:1"}}, "resume_from": {:?}}}"#, snap.to_str().unwrap()),
    );
    let o = drlab(&["evolve", "--steps", "1"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"));
}

#[test]
fn free_energy_of_delta_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "mode": "exact", "initial": {"pmf": "2:1"}, "steps": 10}"#);
    let out = dir.path().join("out");
    assert!(drlab(&["free-energy"], Some(&cfg), &out).status.success());
    let text = fs::read_to_string(out.join("free_energy.csv")).unwrap();
    assert_eq!(text.lines().last().unwrap(), "10,1025/1,1/1,1025/1024,1/1024");
}

#[test]
fn scan_k_fits_above_pc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"m": 2, "initial": {"family": {"y0": "2:1"}}, "p_grid": ["0.30", "0.35", "0.40"], "steps": 40}"#,
    );
    let out = dir.path().join("out");
    let o = drlab(&["scan-k"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit = read_json(&out.join("fit.json"));
    let k = fit["k_hat"].as_f64().unwrap();
    assert!(k.is_finite() && k > 0.0, "K_hat = {k}");
    assert_eq!(fit["monotone"], true);
    assert_eq!(fs::read_to_string(out.join("scan_k.csv")).unwrap().lines().count(), 4);
}

#[test]
fn mc_tree_writes_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "initial": {"pmf": "2:1"}, "steps": 3, "samples": 50}"#);
    let out = dir.path().join("out");
    assert!(drlab(&["mc"], Some(&cfg), &out).status.success());
    let h = read_json(&out.join("hist.json"));
    assert_eq!(h["hist"]["9"], 50);
    let csv = fs::read_to_string(out.join("mc.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "3,50,9,0,1");
}

#[test]
fn conjectures_emit_series_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"m": 2, "initial": {"pmf": "0:4/5,2:1/5"}, "steps": 30}"#);
    let out = dir.path().join("out");
    let o = drlab(&["conjectures"], Some(&cfg), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&out.join("verdict.json"));
    assert_eq!(v["n"], 30);
    let names: Vec<&str> = v["verdicts"].as_array().unwrap().iter().map(|x| x["name"].as_str().unwrap()).collect();
    for want in ["n2_p_nonzero", "n2_mean", "n_eps", "h_n_eps"] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    let series = fs::read_to_string(out.join("conj_n_eps.csv")).unwrap();
    assert_eq!(series.lines().next().unwrap(), "n,raw_value,target,rolling_mean,extrapolated");
    assert_eq!(series.lines().count(), 31);
    assert!(out.join("conj_h_ratio_s1p5.csv").exists());
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = drlab(&["evolve"], None, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = drlab(&["selftest"], None, dir.path());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert!(!text.contains("FAIL"), "{text}");
    assert!(dir.path().join("selftest.json").exists());
}
