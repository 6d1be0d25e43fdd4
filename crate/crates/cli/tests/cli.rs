//! End-to-end runs of the binary on simulated panels.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use yieldfield::simulate::{simulate_panel, SimulationConfig};

const MATS: [f64; 5] = [3.0, 12.0, 36.0, 60.0, 120.0];

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// 40 simulated months, 1990-01..1993-04.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SimulationConfig { n_times: 40, maturities: MATS.to_vec(), seed: 3, ..Default::default() };
        let panel = simulate_panel(&cfg).unwrap().panel;
        fs::write(dir.path().join("yields.csv"), panel.to_wide_csv()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_in(args, &self.path("out"))
    }

    fn run_in(&self, args: &[&str], out: &Path) -> Output {
        Command::new(env!("CARGO_BIN_EXE_yieldfield"))
            .args(args)
            .arg("--data")
            .arg(self.path("yields.csv"))
            .arg("--out")
            .arg(out)
            .env_remove("YIELDFIELD_DATA")
            .env_remove("RUST_LOG")
            .output()
            .unwrap()
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path("out").join(name)).unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const BACKTEST: &str = r#"
seed = 7

[[model]]
residual = "none"

[[model]]
trend = "two-step-baseline"

[backtest]
first_target = "1993-01"
last_target = "1993-04"
horizons = [1]
maturities = [3.0, 12.0, 36.0, 60.0, 120.0]
refit = "first-origin"
chains = 2

[scoring]
n_draws = 256

[portfolio]
benchmark = "BDNS"
maturities = [12.0, 36.0]
"#;

#[test]
fn ingest_reports_the_panel_and_is_idempotent() {
    let ws = Workspace::new();
    let o = ws.run(&["ingest"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("40 months × 5 maturities, 1990-01..1993-04"), "{stdout}");
    let first = ws.read("panel.csv");
    assert_eq!(code(&ws.run(&["ingest"])), 0);
    assert_eq!(first, ws.read("panel.csv"));
}

#[test]
fn usage_and_validation_failures_exit_2() {
    let ws = Workspace::new();
    let missing = Command::new(env!("CARGO_BIN_EXE_yieldfield"))
        .args(["ingest", "--data", "/nonexistent/yields.txt", "--out"])
        .arg(ws.path("out"))
        .output()
        .unwrap();
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("/nonexistent/yields.txt"));

    let bad_variant = ws.config("variant.toml", "[[model]]\nresidual = \"fractal\"\n");
    let o = ws.run(&["fit", "--config", bad_variant.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    for allowed in ["none", "stationary", "nonstationary", "anisotropic", "spatiotemporal"] {
        assert!(msg.contains(allowed), "{msg}");
    }

    let unknown = ws.config("unknown.toml", "seeed = 3\n");
    assert_eq!(code(&ws.run(&["fit", "--config", unknown.to_str().unwrap()])), 2);

    let bad_plan = ws.config("plan.toml", "[backtest]\nmaturities = [7.0]\n");
    assert_eq!(code(&ws.run(&["backtest", "--config", bad_plan.to_str().unwrap()])), 2);

    assert_eq!(code(&ws.run(&["no-such-command"])), 2);
}

#[test]
fn numerical_failures_exit_1() {
    // at this decay the slope and curvature loadings coincide, so the OLS step is singular
    let ws = Workspace::new();
    let cfg = ws.config(
        "singular.toml",
        "[[model]]\ntrend = \"two-step-baseline\"\nlambda = { mode = \"fixed\", value = 1000.0 }\n[forecast]\nhorizons = [1]\n",
    );
    let o = ws.run(&["forecast", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn fit_is_bitwise_reproducible() {
    let ws = Workspace::new();
    let cfg = ws.config("fit.toml", "[[model]]\nresidual = \"none\"\n");
    let a = ws.run(&["fit", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let json = ws.read("fit_bdns.json");
    let blob = fs::read(ws.path("out").join("fit_bdns.posterior.bin")).unwrap();
    assert_eq!(&blob[..8], b"YFLP0001");
    assert_eq!(code(&ws.run(&["fit", "--config", cfg.to_str().unwrap(), "--seed", "5"])), 0);
    assert_eq!(json, ws.read("fit_bdns.json"));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["model"], "BDNS");
    assert_eq!(v["n_times"], 40);
    // simulated level persistence is 0.97
    assert!(v["hyper"]["factor_phi"][0].as_f64().unwrap() > 0.8, "{}", v["hyper"]);
}

#[test]
fn forecast_writes_every_model_and_horizon() {
    let ws = Workspace::new();
    let cfg = ws.config("fc.toml", &format!("{BACKTEST}\n[forecast]\nhorizons = [1, 6]\norigin = \"1992-12\"\n"));
    let o = ws.run(&["forecast", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = ws.read("forecast.csv");
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("model,origin,horizon,maturity,mean,sd"));
    assert_eq!(lines.len(), 1 + 2 * 2 * MATS.len());
    assert!(lines.iter().skip(1).all(|l| l.contains(",199212,")));
}

#[test]
fn pipeline_is_deterministic_across_threads() {
    let ws = Workspace::new();
    let cfg = ws.config("bt.toml", BACKTEST);
    let cfg = cfg.to_str().unwrap();
    let o = ws.run(&["backtest", "--config", cfg, "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let forecasts = ws.read("forecasts.csv");
    let rmse = ws.read("rmse.csv");
    assert!(rmse.starts_with("model,horizon,maturity,rmse"));
    // 2 models × 5 maturities
    assert_eq!(rmse.lines().count(), 1 + 10);
    assert!(forecasts.contains("Baseline") && forecasts.contains("BDNS"));

    let other = ws.path("other");
    let o = ws.run_in(&["backtest", "--config", cfg, "--threads", "3"], &other);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(forecasts, fs::read_to_string(other.join("forecasts.csv")).unwrap());

    let o = ws.run(&["score", "--config", cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let scores = ws.read("scores.csv");
    assert!(scores.starts_with("model,horizon,maturity,crps,scrps,wcrps,swcrps,n_undefined"));
    assert_eq!(scores.lines().count(), 1 + 10);
    assert_eq!(code(&ws.run(&["score", "--config", cfg])), 0);
    assert_eq!(scores, ws.read("scores.csv"));
    // a different root seed moves the Monte Carlo weighted scores
    let o = ws.run_in(&["score", "--config", cfg, "--seed", "8", "--forecasts", ws.path("out/forecasts.csv").to_str().unwrap()], &other);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_ne!(scores, fs::read_to_string(other.join("scores.csv")).unwrap());

    let o = ws.run(&["portfolio", "--config", cfg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fees = ws.read("fees.csv");
    assert!(fees.starts_with("zeta,maturity,model,fee_pct"));
    let bdns: Vec<&str> = fees.lines().filter(|l| l.contains(",BDNS,")).collect();
    assert_eq!(bdns.len(), 3 * 2);
    assert!(bdns.iter().all(|l| l.ends_with(",0.0")), "{fees}");
}

#[test]
fn empty_forecasts_and_unknown_benchmark_exit_2() {
    let ws = Workspace::new();
    let empty = ws.path("empty.csv");
    fs::write(&empty, "model,origin,horizon,maturity,mean,sd,actual\n").unwrap();
    let o = ws.run(&["score", "--forecasts", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&ws.run(&["score", "--forecasts", empty.to_str().unwrap()])), 2);

    let one = ws.path("one.csv");
    fs::write(&one, "model,origin,horizon,maturity,mean,sd,actual\nBDNS-S,199212,1,12,5.0,0.2,5.1\n").unwrap();
    let o = ws.run(&["portfolio", "--forecasts", one.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("benchmark BDNS"));
}

#[test]
fn diagnose_writes_summary_and_variograms() {
    let ws = Workspace::new();
    let cfg = ws.config("diag.toml", "[[model]]\nresidual = \"none\"\n[diagnostics]\nvariogram_bins = 5\nvariogram_max_dist = 10.0\n");
    let o = ws.run(&["diagnose", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = ws.read("diagnostics.csv");
    assert!(summary.starts_with("model,definition,abs_corr,morans_i,gearys_c,acf1"));
    assert_eq!(summary.lines().count(), 2);
    assert_eq!(ws.read("variogram_bdns_vs-trend.csv").lines().count(), 1 + 5);
    assert_eq!(ws.read("correlation_bdns_vs-trend.csv").lines().count(), 1 + MATS.len());
}
