//! `yieldfield` command-line driver.
//!
//! Exit codes: 0 success, 1 numerical or convergence failure, 2 usage, validation or I/O failure.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use yieldfield::dataio::{self, YieldPanel};
use yieldfield::diagnostics::{self, ResidualKindTag};
use yieldfield::forecast::{self, BacktestReport, PredictiveDistribution};
use yieldfield::inference::{self, ModelSpec, ResidualKind, Trend};
use yieldfield::portfolio;
use yieldfield::scoring::{self, ScoreTable};
use yieldfield::stats::{derive_seed, tag};

use config::{RunConfig, DEFAULT_DATA, DEFAULT_OUT};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] yieldfield::Error),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Core(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "yieldfield", version, about = "Yield-curve forecasting with latent factors and SPDE residual fields")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Yield data file (overrides the config and the YIELDFIELD_DATA variable).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Root random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; machine parallelism by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the yield file and write the canonical panel CSV.
    Ingest,
    /// Fit every configured model on the fit window.
    Fit,
    /// Predictive distributions from one origin.
    Forecast,
    /// Out-of-sample backtest: forecasts.csv and rmse.csv.
    Backtest,
    /// Proper scores of backtest forecasts: scores.csv.
    Score(InputArgs),
    /// Residual dependence diagnostics of in-sample fits.
    Diagnose,
    /// Performance fees of each model against the benchmark: fees.csv.
    Portfolio(InputArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Backtest forecasts; `<out>/forecasts.csv` by default.
    #[arg(long)]
    forecasts: Option<PathBuf>,
}

/// Resolved settings shared by every command.
struct Session {
    cfg: RunConfig,
    out: PathBuf,
    data: PathBuf,
    seed: u64,
}

impl Session {
    fn new(g: &GlobalArgs) -> CliResult<Self> {
        let cfg = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.validate()?;
        let out = g.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| DEFAULT_OUT.into());
        let data = dataio::resolve_data_path(g.data.clone().or_else(|| cfg.data.path.clone()))
            .unwrap_or_else(|| DEFAULT_DATA.into());
        let seed = g.seed.unwrap_or(cfg.seed);
        Ok(Self { cfg, out, data, seed })
    }

    fn panel(&self) -> CliResult<YieldPanel> {
        let p = self.cfg.read_panel(&self.data)?;
        log::info!("data {}: {}", self.data.display(), p.summary());
        Ok(p)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn forecasts(&self, input: &InputArgs) -> CliResult<Vec<BacktestReport>> {
        let path = input.forecasts.clone().unwrap_or_else(|| self.out.join("forecasts.csv"));
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let reports = forecast::parse_forecasts_csv(&text)?;
        if reports.iter().all(|r| r.records.is_empty()) {
            return Err(CliError::Usage(format!("{}: no forecast records", path.display())));
        }
        Ok(reports)
    }
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase()
}

fn cmd_ingest(s: &Session) -> CliResult<()> {
    let panel = s.panel()?;
    s.write("panel.csv", panel.to_wide_csv())?;
    println!("{}", panel.summary());
    Ok(())
}

fn cmd_fit(s: &Session) -> CliResult<()> {
    let window = s.cfg.fit_window(&s.panel()?)?;
    let models = s.cfg.latent_models();
    if models.is_empty() {
        return Err(CliError::Usage("fit needs a bdns-trend model; the two-step baseline is only backtested".into()));
    }
    for spec in models {
        let fit = inference::fit_map(spec, &window, None)?;
        let summary = fit.summary();
        log::info!("{}: log marginal likelihood {:.4}", summary.model, summary.log_marginal_likelihood);
        let name = slug(&summary.model);
        let json = serde_json::to_string_pretty(&summary).map_err(yieldfield::Error::from)?;
        s.write(&format!("fit_{name}.json"), json + "\n")?;
        s.write(&format!("fit_{name}.posterior.bin"), fit.posterior_bytes())?;
    }
    Ok(())
}

fn predictive(spec: &ModelSpec, window: &YieldPanel, horizons: &[usize], mats: &[f64]) -> CliResult<Vec<PredictiveDistribution>> {
    if spec.trend == Trend::TwoStepBaseline {
        return horizons
            .iter()
            .map(|&h| {
                let pd = forecast::two_step_baseline(window, spec.nominal_lambda(), h, spec.baseline_ar)?;
                Ok(restrict_maturities(&pd, mats)?)
            })
            .collect();
    }
    let fit = inference::fit_map(spec, window, None)?;
    Ok(horizons.iter().map(|&h| forecast::predict_yield(&fit, h, mats)).collect::<yieldfield::Result<_>>()?)
}

/// Baseline forecasts live on the panel grid; other maturities are interpolated.
fn restrict_maturities(pd: &PredictiveDistribution, mats: &[f64]) -> yieldfield::Result<PredictiveDistribution> {
    let mut out = pd.clone();
    out.maturities = mats.to_vec();
    out.mean.clear();
    out.sd.clear();
    for &m in mats {
        let (mu, sd) = pd.at_maturity(m)?;
        out.mean.push(mu);
        out.sd.push(sd);
    }
    out.trend_mean = out.mean.clone();
    out.field_mean = vec![0.0; mats.len()];
    out.var_trend = out.sd.iter().map(|s| s * s).collect();
    out.var_field = vec![0.0; mats.len()];
    out.var_cross = vec![0.0; mats.len()];
    out.var_noise = vec![0.0; mats.len()];
    Ok(out)
}

fn cmd_forecast(s: &Session) -> CliResult<()> {
    let panel = s.panel()?;
    s.cfg.validate_forecast(&panel)?;
    let end = match s.cfg.forecast.origin {
        Some(o) => panel.index_of(o).expect("validated origin"),
        None => panel.n_dates() - 1,
    };
    let window = panel.slice_rows(0, end)?;
    let mats = s.cfg.forecast.maturities.clone().unwrap_or_else(|| panel.maturities().to_vec());
    let mut rows = Vec::new();
    for spec in &s.cfg.models {
        for pd in predictive(spec, &window, &s.cfg.forecast.horizons, &mats)? {
            rows.push((spec.label(), pd));
        }
    }
    s.write("forecast.csv", forecast::predictive_csv(&rows)?)
}

fn cmd_backtest(s: &Session) -> CliResult<()> {
    let panel = s.panel()?;
    s.cfg.backtest.validate(&panel)?;
    let mut reports = Vec::new();
    for spec in &s.cfg.models {
        let r = forecast::run_backtest(spec, &panel, &s.cfg.backtest)?;
        log::info!("{}: {} fits, {} failures, {:.1}s", r.model, r.n_fits, r.failures.len(), r.runtime_secs);
        for f in &r.failures {
            log::warn!("{} origin {}: {}", r.model, f.origin, f.message);
        }
        if r.records.is_empty() {
            return Err(CliError::Numerical(format!("{}: every origin failed", r.model)));
        }
        reports.push(r);
    }
    s.write("forecasts.csv", forecast::forecasts_csv(&reports)?)?;
    s.write("rmse.csv", forecast::rmse_csv(&reports)?)?;
    let mut failures = String::from("model,origin,message\n");
    for r in &reports {
        for f in &r.failures {
            failures.push_str(&format!("{},{},\"{}\"\n", r.model, f.origin, f.message.replace('"', "'")));
        }
    }
    s.write("failures.csv", failures)
}

fn cmd_score(s: &Session, input: &InputArgs) -> CliResult<()> {
    let reports = s.forecasts(input)?;
    let panel = s.panel()?;
    let opts = s.cfg.score_options(s.seed);
    let tables = reports
        .iter()
        .map(|r| scoring::score_backtest(r, &panel, opts))
        .collect::<yieldfield::Result<Vec<_>>>()?;
    s.write("scores.csv", ScoreTable::merge(tables).to_csv()?)
}

fn cmd_diagnose(s: &Session) -> CliResult<()> {
    let window = s.cfg.fit_window(&s.panel()?)?;
    let models = s.cfg.latent_models();
    if models.is_empty() {
        return Err(CliError::Usage("diagnose needs a bdns-trend model".into()));
    }
    let labels: Vec<String> = window.maturities().iter().map(|m| m.to_string()).collect();
    let d = &s.cfg.diagnostics;
    let mut summaries = Vec::new();
    for spec in models {
        let fit = inference::fit_map(spec, &window, None)?;
        let mut defs = vec![ResidualKindTag::VsTrend];
        if spec.residual != ResidualKind::None {
            defs.push(ResidualKindTag::VsFullLatent);
        }
        for def in defs {
            let res = diagnostics::extract_residuals(&fit, &window, def)?;
            let name = format!("{}_{}", slug(&spec.label()), def.as_str());
            let (by_maturity, _) = diagnostics::correlation_matrices(&res)?;
            s.write(&format!("correlation_{name}.csv"), by_maturity.to_csv(&labels)?)?;
            let seed = derive_seed(s.seed, &[tag("diagnostics"), tag(&spec.label()), tag(def.as_str())]);
            let bins = diagnostics::empirical_variogram(&res, d.variogram_bins, d.variogram_max_dist, seed)?;
            s.write(&format!("variogram_{name}.csv"), diagnostics::variogram_csv(&bins)?)?;
            summaries.push(diagnostics::summarize(&res)?);
        }
    }
    s.write("diagnostics.csv", diagnostics::summary_csv(&summaries)?)
}

fn cmd_portfolio(s: &Session, input: &InputArgs) -> CliResult<()> {
    let reports = s.forecasts(input)?;
    let panel = s.panel()?;
    let p = &s.cfg.portfolio;
    let bench = reports
        .iter()
        .find(|r| r.model == p.benchmark)
        .ok_or_else(|| CliError::Usage(format!("benchmark {} not among the forecasts", p.benchmark)))?;
    let models: Vec<(&str, &[forecast::ForecastRecord])> =
        reports.iter().map(|r| (r.model.as_str(), r.records.as_slice())).collect();
    let table = portfolio::run_portfolio_study(&panel, (&bench.model, &bench.records), &models, &p.study_config())?;
    for (zeta, m, model, why) in &table.failures {
        log::warn!("fee for {model} at zeta {zeta}, maturity {m}: {why}");
    }
    s.write("fees.csv", table.to_csv()?)
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads {n}: {e}")))?;
    }
    let s = Session::new(&cli.global)?;
    match &cli.command {
        Command::Ingest => cmd_ingest(&s),
        Command::Fit => cmd_fit(&s),
        Command::Forecast => cmd_forecast(&s),
        Command::Backtest => cmd_backtest(&s),
        Command::Score(a) => cmd_score(&s, a),
        Command::Diagnose => cmd_diagnose(&s),
        Command::Portfolio(a) => cmd_portfolio(&s, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
