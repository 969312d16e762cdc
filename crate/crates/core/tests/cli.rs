use std::path::Path;
use std::process::{Command, Output};

use natfact::randomfield::write_field_csv;
use serde_json::Value;

fn natfact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_natfact")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_small() {
    let out = natfact(&["verify", "--n-max", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("counts/euler") && text.contains("orthogonality"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_reports_injected_fault() {
    let out = natfact(&["verify", "--n-max", "2", "--inject-fault"]);
    assert!(!out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("FAIL") && l.contains("orthogonality")));
}

#[test]
fn unknown_flags_and_bad_numbers_are_rejected() {
    assert!(!natfact(&["verify", "--frobnicate"]).status.success());
    assert!(!natfact(&["solve", "--n", "-3", "--kappa-const", "1", "--out", "x"]).status.success());
    assert!(!natfact(&["verify", "--n-max", "17"]).status.success());
    assert!(!natfact(&["mc", "--n", "2", "--cov", "matern", "--nu", "0.7", "--kl-terms", "2"]).status.success());
}

#[test]
fn solve_unit_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("u.csv");
    let out = natfact(&["solve", "--n", "6", "--kappa-const", "1", "--out", p(&sol)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&sol.with_extension("json"));
    assert_eq!(report["iterations"], 1);
    let csv = std::fs::read_to_string(&sol).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "edge,x,y,value");
    assert_eq!(csv.lines().count(), 1 + 3 * 36 - 2 * 6);
}

#[test]
fn solve_with_file_field_respects_bound() {
    let dir = tempfile::tempdir().unwrap();
    let n = 5;
    let kappa: Vec<f64> = (0..2 * n * n).map(|t| if t % 3 == 0 { 10.0 } else { 1.0 }).collect();
    let field = dir.path().join("kappa.csv");
    write_field_csv(&field, &kappa).unwrap();
    let sol = dir.path().join("u.csv");
    let report = dir.path().join("r.json");
    let out = natfact(&["solve", "--n", "5", "--kappa-csv", p(&field), "--out", p(&sol), "--report", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&report);
    assert_eq!(r["contrast"].as_f64().unwrap(), 10.0);
    assert!(r["condition_estimate"].as_f64().unwrap() <= 19.0);

    // Wrong length and nonpositive entries are rejected.
    assert!(!natfact(&["solve", "--n", "4", "--kappa-csv", p(&field), "--out", p(&sol)]).status.success());
    std::fs::write(&field, "kappa\n1\n0\n").unwrap();
    assert!(!natfact(&["solve", "--n", "1", "--kappa-csv", p(&field), "--out", p(&sol)]).status.success());
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let sol = dir.path().join(format!("{tag}.csv"));
        let out = natfact(&[
            "solve",
            "--n",
            "7",
            "--cov",
            "matern",
            "--nu",
            "0.5",
            "--ell",
            "1",
            "--kl-terms",
            "10",
            "--seed",
            "7",
            "--method",
            "qr",
            "--out",
            p(&sol),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push((std::fs::read(&sol).unwrap(), std::fs::read(sol.with_extension("json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn export_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let size_line = |args: &[&str], name: &str| {
        let path = dir.path().join(name);
        let mut full = args.to_vec();
        full.extend(["--out", p(&path)]);
        assert!(natfact(&full).status.success());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general"));
        text.lines().skip(1).take(2).map(str::to_owned).collect::<Vec<_>>()
    };
    assert!(size_line(&["export", "--n", "1", "--matrix", "G"], "g.mtx")[0].starts_with("4 1 "));
    assert!(size_line(&["export", "--n", "2", "--matrix", "H"], "h.mtx")[0].starts_with("16 16 "));
    assert!(size_line(&["export", "--n", "2", "--matrix", "C"], "c.mtx")[0].starts_with("16 8 "));
    let acr = size_line(&["export", "--n", "1", "--matrix", "Acr", "--kappa-const", "1"], "a.mtx");
    assert_eq!(acr[0], "1 1 1");
    let value: f64 = acr[1].split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((value - 8.0).abs() < 1e-13);
}

#[test]
fn mc_smoke_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "n=3\ncov=gaussian\nkl-terms=4\nrealizations=5\nseed=1\n").unwrap();
    let summary = dir.path().join("s.json");
    let samples = dir.path().join("s.csv");
    let out = natfact(&[
        "mc",
        "--config",
        p(&cfg),
        "--realizations",
        "1",
        "--out-summary",
        p(&summary),
        "--out-samples",
        p(&samples),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&summary);
    assert_eq!(s["config"]["realizations"], 1);
    assert_eq!(s["config"]["n"], 3);
    assert_eq!(s["config"]["kernel"]["kind"], "gaussian");
    assert_eq!(s["condition"]["variance"], 0.0);
    assert_eq!(std::fs::read_to_string(&samples).unwrap().lines().count(), 2);

    let echoed: natfact::montecarlo::McSummary = serde_json::from_value(s).unwrap();
    assert_eq!(echoed.config.kl_terms, 4);
    assert_eq!(echoed.config.base_seed, 1);
}

#[test]
fn mc_with_reference_error() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("s.json");
    let samples = dir.path().join("s.csv");
    let out = natfact(&[
        "mc",
        "--n",
        "4",
        "--cov",
        "matern",
        "--nu",
        "0.5",
        "--ell",
        "5",
        "--kl-terms",
        "4",
        "--realizations",
        "20",
        "--reference-terms",
        "12",
        "--reference-realizations",
        "40",
        "--threads",
        "2",
        "--out-summary",
        p(&summary),
        "--out-samples",
        p(&samples),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e = json(&summary)["h1_error"].as_f64().unwrap();
    assert!(e > 0.0 && e < 0.1);
}
