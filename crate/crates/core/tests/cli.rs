use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use splitfdr::cli::theory_report;
use splitfdr::theory::TwoClusterSpec;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splitfdr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["simulate", "--out", s(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

fn report(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn selected(v: &Value) -> Vec<u64> {
    v["selected"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect()
}

const SMALL: [&str; 14] = [
    "--model", "gaussian", "--n", "100", "--p", "50", "--p1", "5", "--delta", "1", "--rho", "0", "--seed", "1",
];

#[test]
fn simulate_writes_matrix_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), "x.csv", &SMALL);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines.iter().all(|l| l.split(',').count() == 50));
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("x.truth.json")).unwrap()).unwrap();
    let rel: Vec<u64> = truth["relevant"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
    assert_eq!(rel, vec![1, 2, 3, 4, 5]);
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", &SMALL);
    let b = simulate(dir.path(), "b.csv", &SMALL);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.truth.json")).unwrap(),
        std::fs::read(dir.path().join("b.truth.json")).unwrap()
    );
}

#[test]
fn simulate_rejects_p1_above_p_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    let out = run(&["simulate", "--model", "gaussian", "--n", "10", "--p", "50", "--p1", "60", "--out", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p1"));
    assert!(!path.exists());
}

#[test]
fn ds_and_single_split_mds_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), "x.csv", &["--model", "gaussian", "--n", "200", "--p", "40", "--p1", "4", "--delta", "1.5", "--sigma-eps", "0.1", "--seed", "3"]);
    for seed in ["1", "2", "3", "4", "5"] {
        let ds = report(&ok(&["select", "-i", s(&path), "--method", "ds", "--seed", seed]));
        let mds = report(&ok(&["select", "-i", s(&path), "--method", "mds", "--m", "1", "--seed", seed]));
        assert_eq!(selected(&ds), selected(&mds), "seed {seed}");
    }
}

#[test]
fn mds_recovers_strong_signal() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), "x.csv", &["--model", "gaussian", "--n", "1000", "--p", "200", "--p1", "20", "--delta", "2", "--sigma-eps", "0.1", "--seed", "11"]);
    let v = report(&ok(&["select", "-i", s(&path), "--seed", "1"]));
    assert_eq!(v["method"], "mds");
    let sel = selected(&v);
    let hits = sel.iter().filter(|&&j| j <= 20).count();
    assert!(hits as f64 / 20.0 >= 0.9, "{sel:?}");
    assert_eq!(v["n_selected"].as_u64().unwrap() as usize, sel.len());
    assert_eq!(v["summary"], format!("{} features selected", sel.len()));
    assert!(v["diagnostics"]["inclusion_weighted"].is_array());
    assert_eq!(v["n"], 1000);
    assert_eq!(v["p"], 200);
}

#[test]
fn select_report_names_features_from_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("named.csv");
    let mut text = String::from("alpha,beta,gamma\n");
    for i in 0..60 {
        let g = if i < 30 { 0.0 } else { 5.0 };
        text.push_str(&format!("{},{},{}\n", g + (i % 7) as f64 * 0.1, (i % 5) as f64 * 0.3, (i % 3) as f64 * 0.2));
    }
    std::fs::write(&path, text).unwrap();
    let v = report(&ok(&["select", "-i", s(&path), "--method", "ds", "--header", "true"]));
    assert!(v["selected_names"].is_array());
}

/// Target: the null preset reports an empty selection. Each split keeps
/// its top feature whenever that mirror is positive, and weighted rates sum
/// to one once any split selects, so MDS is rarely empty on null data.
#[test]
#[ignore = "known to fail: null data almost always yields a nonempty MDS selection"]
fn null_preset_selects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), "x.csv", &["--model", "gaussian", "--n", "1000", "--p", "2000", "--p1", "0", "--sigma-eps", "0.1", "--seed", "5"]);
    let out = ok(&["select", "-i", s(&path), "--seed", "1"]);
    assert_eq!(report(&out)["summary"], "0 features selected");
}

#[test]
fn select_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(run(&["select", "-i", s(&missing)]).status.code(), Some(3));

    let path = simulate(dir.path(), "x.csv", &SMALL);
    assert_eq!(run(&["select", "-i", s(&path), "--q", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["select", "-i", s(&path), "--method", "bogus"]).status.code(), Some(2));

    let flat = dir.path().join("flat.csv");
    std::fs::write(&flat, "1,1\n".repeat(8)).unwrap();
    let out = run(&["select", "-i", s(&flat), "--header", "false", "--method", "ds"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clustering failed: degenerate data"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1,2\n3,oops\n").unwrap();
    assert_eq!(run(&["select", "-i", s(&bad), "--header", "false"]).status.code(), Some(3));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), "x.csv", &SMALL);
    let cfg = dir.path().join("sel.toml");
    std::fs::write(&cfg, "method = \"ds\"\nq = 0.2\nseed = 4\n").unwrap();
    let v = report(&ok(&["select", "--config", s(&cfg), "-i", s(&path), "--q", "0.3"]));
    assert_eq!(v["method"], "ds");
    assert_eq!(v["q"], 0.3);
    assert_eq!(v["seed"], 4);
    std::fs::write(&cfg, "methd = \"ds\"\n").unwrap();
    assert_eq!(run(&["select", "--config", s(&cfg), "-i", s(&path)]).status.code(), Some(2));
}

#[test]
fn theory_at_zero_delta_has_power_alpha() {
    let out = ok(&["theory", "--delta", "0,0.5", "--m", "200", "--n", "200", "--json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let f0 = &v["features"][0];
    assert!((f0["exact_power"].as_f64().unwrap() - 0.05).abs() < 1e-12);
    assert!((f0["asymptotic_power"].as_f64().unwrap() - 0.05).abs() < 1e-12);
}

#[test]
fn theory_matches_library_and_csv_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let sigma = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
    let csv = dir.path().join("sigma.csv");
    std::fs::write(&csv, "1,0.3\n0.3,2\n").unwrap();
    let out = ok(&["theory", "--delta", "0.4,-0.2", "--sigma", s(&csv), "--m", "300", "--n", "600", "--json"]);
    let got: Value = serde_json::from_slice(&out.stdout).unwrap();
    let spec = TwoClusterSpec {
        xi: vec![0.0, 0.0],
        eta: vec![0.4, -0.2],
        sigma,
        m: 300,
        n: 600,
        alpha_level: 0.05,
    };
    let want = serde_json::to_value(theory_report(&spec, None, &[0.3, 0.35, 0.4]).unwrap()).unwrap();
    assert_eq!(got, want);
    // the table form prints the same p_e
    let table = String::from_utf8(ok(&["theory", "--delta", "0.4,-0.2", "--sigma", s(&csv), "--m", "300", "--n", "600"]).stdout).unwrap();
    assert!(table.contains(&format!("{}", want["p_e"].as_f64().unwrap())));
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

#[test]
fn bench_smoke_grid_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let start = Instant::now();
    ok(&["bench", "--config", s(&smoke_config()), "--out", s(&out)]);
    assert!(start.elapsed().as_secs_f64() < 60.0);
    let first = std::fs::read_to_string(&out).unwrap();
    assert_eq!(first.lines().count(), 1 + 2 * 3);

    // rerun from the manifest
    let manifest = dir.path().join("m.manifest.json");
    let again = dir.path().join("again.csv");
    ok(&["bench", "--config", s(&manifest), "--out", s(&again)]);
    assert_eq!(first, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn bench_output_does_not_depend_on_threads() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["bench", "--config", s(&smoke_config()), "--out", s(&a), "--threads", "1"]);
    ok(&["bench", "--config", s(&smoke_config()), "--out", s(&b), "--threads", "8"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
