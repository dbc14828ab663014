use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn upr_opt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_upr-opt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic price file: `rows` dates, three tickers.
fn write_prices(dir: &Path, rows: usize) -> PathBuf {
    let mut s = String::from("date,AAA,BBB,CCC\n");
    let (mut a, mut b, mut c) = (100.0f64, 50.0f64, 20.0f64);
    for i in 0..rows {
        let t = i as f64;
        a *= 1.0 + 0.01 * (t * 0.7).sin();
        b *= 1.0 + 0.012 * (t * 1.3).cos();
        c *= 1.0 + 0.008 * (t * 0.4 + 1.0).sin();
        writeln!(s, "{},{a},{b},{c}", chrono_like_date(i)).unwrap();
    }
    let p = dir.join("prices.csv");
    fs::write(&p, s).unwrap();
    p
}

fn chrono_like_date(i: usize) -> String {
    // consecutive days are enough; months of 28 days keep the arithmetic simple
    let year = 2000 + i / (12 * 28);
    let month = 1 + (i / 28) % 12;
    let day = 1 + i % 28;
    format!("{year:04}-{month:02}-{day:02}")
}

fn ingest(dir: &TempDir, rows: usize) -> PathBuf {
    let prices = write_prices(dir.path(), rows);
    let out = upr_opt(&[
        "ingest",
        path_str(&prices),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir.path().join("returns.csv")
}

#[test]
fn ingest_writes_returns_and_reports_counts() {
    let dir = TempDir::new().unwrap();
    let prices = write_prices(dir.path(), 30);
    let out = upr_opt(&[
        "ingest",
        path_str(&prices),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("wrote 29 rows x 3 assets"), "{stdout}");
    let text = fs::read_to_string(dir.path().join("returns.csv")).unwrap();
    assert_eq!(text.lines().count(), 30);
}

#[test]
fn missing_file_exits_with_input_error() {
    let out = upr_opt(&["ingest", "/nonexistent/prices.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn negative_price_names_the_cell() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(&p, "date,AAA,BBB\n2024-01-02,10,5\n2024-01-03,-1,5\n").unwrap();
    let out = upr_opt(&["ingest", path_str(&p), "--out-dir", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("non-positive price") && err.contains("AAA"),
        "{err}"
    );
}

#[test]
fn unknown_model_is_rejected() {
    let dir = TempDir::new().unwrap();
    let returns = ingest(&dir, 40);
    let out = upr_opt(&[
        "fit",
        path_str(&returns),
        "--model",
        "magic",
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_writes_feasible_weights_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let returns = ingest(&dir, 200);
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = upr_opt(&[
            "fit",
            path_str(&returns),
            "--max-iters",
            "300",
            "--seed",
            "7",
            "--out-dir",
            path_str(&out_dir),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        fs::read(out_dir.join("fit_upr.json")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let beta: Vec<f64> = serde_json::from_value(json["weights"]["beta"].clone()).unwrap();
    let mu: Vec<f64> = serde_json::from_value(json["weights"]["mu_hat"].clone()).unwrap();
    let mu0 = json["weights"]["mu0"].as_f64().unwrap();
    assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!((beta.iter().zip(&mu).map(|(b, m)| b * m).sum::<f64>() - mu0).abs() < 1e-10);
    assert!(json["spline"].is_object());
    assert!(dir.path().join("a/curve_upr.csv").exists());
    assert!(dir.path().join("a/weights_upr.csv").exists());
}

#[test]
fn ew_backtest_and_sharpe_matrix() {
    let dir = TempDir::new().unwrap();
    let returns = ingest(&dir, 361);
    let out_dir = dir.path().join("bt");
    let out = upr_opt(&[
        "backtest",
        path_str(&returns),
        "--models",
        "ew,mv",
        "--sr-tests",
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Sharpe ratio Z"));
    let sr = fs::read_to_string(out_dir.join("sr_tests.csv")).unwrap();
    assert!(sr.lines().count() >= 3);

    // EW out-of-sample returns are the row means of the evaluation rows
    let panel: Vec<Vec<f64>> = fs::read_to_string(&returns)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let expected: Vec<f64> = panel[240..]
        .iter()
        .map(|r| r.iter().sum::<f64>() / 3.0)
        .collect();
    let cw = 1.0 + expected.iter().sum::<f64>();
    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let line = metrics.lines().find(|l| l.starts_with("ew,CW,")).unwrap();
    let got: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    assert!((got - cw).abs() < 1e-12, "{got} vs {cw}");

    let oos = fs::read_to_string(out_dir.join("returns_oos.csv")).unwrap();
    assert_eq!(oos.lines().filter(|l| l.starts_with("ew,")).count(), 120);
}

#[test]
fn adding_a_model_adds_one_report() {
    let dir = TempDir::new().unwrap();
    let returns = ingest(&dir, 301);
    let run = |sub: &str, models: &str| {
        let out_dir = dir.path().join(sub);
        let out = upr_opt(&[
            "backtest",
            path_str(&returns),
            "--models",
            models,
            "--max-iters",
            "200",
            "--out-dir",
            path_str(&out_dir),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out_dir
    };
    let one = run("one", "ew");
    let two = run("two", "ew,qr");
    let reports = |d: &Path| {
        let mut v: Vec<String> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.starts_with("backtest_"))
            .collect();
        v.sort();
        v
    };
    assert_eq!(reports(&one), ["backtest_ew.json"]);
    assert_eq!(reports(&two), ["backtest_ew.json", "backtest_qr.json"]);
    // the EW report only differs in its Sharpe comparison list
    let a: serde_json::Value =
        serde_json::from_slice(&fs::read(one.join("backtest_ew.json")).unwrap()).unwrap();
    let b: serde_json::Value =
        serde_json::from_slice(&fs::read(two.join("backtest_ew.json")).unwrap()).unwrap();
    assert_eq!(a["per_window"], b["per_window"]);
    assert_eq!(a["metrics"], b["metrics"]);
}

#[test]
fn simulate_writes_curves_and_responds_to_seed() {
    let dir = TempDir::new().unwrap();
    let run = |sub: &str, seed: &str| {
        let out_dir = dir.path().join(sub);
        let out = upr_opt(&[
            "simulate",
            "--replications",
            "1",
            "--max-iters",
            "300",
            "--seed",
            seed,
            "--write-panels",
            "--out-dir",
            path_str(&out_dir),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "2");
    for m in ["upr", "qr", "mv"] {
        assert!(a.join(format!("tail_curve_{m}.csv")).exists());
    }
    assert!(a.join("panel_fit.csv").exists() && a.join("panel_oos.csv").exists());
    let read = |d: &Path| fs::read(d.join("tail_experiment.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn invalid_tau_exits_with_input_error() {
    let dir = TempDir::new().unwrap();
    let out = upr_opt(&[
        "simulate",
        "--tau-fit",
        "1.0",
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_read_and_validated() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[simulate]\nn = 50\nmodels = \"mv\"\n").unwrap();
    let out = upr_opt(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("n 50"));

    fs::write(&cfg, "[simulate]\nunknown_key = 1\n").unwrap();
    let out = upr_opt(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
