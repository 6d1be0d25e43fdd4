//! TOML run configuration. Every key has a default; unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use yieldfield::dataio::{self, ParseOptions, YearMonth, YieldPanel};
use yieldfield::forecast::{BacktestPlan, EVAL_HORIZONS};
use yieldfield::inference::{ModelSpec, Trend};
use yieldfield::portfolio::{PortfolioConfig, RISKY_MATURITIES, ZETAS};
use yieldfield::scoring::{ScoreOptions, DEFAULT_DRAWS};

use crate::CliError;

/// Fallback data location, relative to the working directory.
pub const DEFAULT_DATA: &str = "data/FBFITTED.txt";
pub const DEFAULT_OUT: &str = "results";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream (scoring draws, variogram subsampling).
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    /// Models to run, as `[[model]]` tables; BDNS alone when omitted.
    #[serde(rename = "model")]
    pub models: Vec<ModelSpec>,
    pub fit: FitConfig,
    pub forecast: ForecastConfig,
    pub backtest: BacktestPlan,
    pub scoring: ScoringConfig,
    pub diagnostics: DiagnosticsConfig,
    pub portfolio: PortfolioSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            data: DataConfig::default(),
            models: vec![ModelSpec::default()],
            fit: FitConfig::default(),
            forecast: ForecastConfig::default(),
            backtest: BacktestPlan::default(),
            scoring: ScoringConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            portfolio: PortfolioSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Keep the 17 standard maturities and 1985-01..2000-12.
    pub restrict_standard: bool,
    /// Optional maturity subset (months).
    pub maturities: Option<Vec<f64>>,
    /// Column maturities for headerless whitespace files.
    pub column_maturities: Option<Vec<f64>>,
}

/// Estimation window for `fit` and `diagnose`; the whole panel by default.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub first: Option<YearMonth>,
    pub last: Option<YearMonth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Forecast origin; the last panel month by default. Data up to it are used.
    pub origin: Option<YearMonth>,
    pub horizons: Vec<usize>,
    /// Output maturities; the panel grid by default.
    pub maturities: Option<Vec<f64>>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { origin: None, horizons: EVAL_HORIZONS.to_vec(), maturities: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub n_draws: usize,
    /// Overrides the root seed for scoring only.
    pub seed: Option<u64>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { n_draws: DEFAULT_DRAWS, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub variogram_bins: usize,
    /// Largest lag, in (months, log-maturity) units.
    pub variogram_max_dist: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { variogram_bins: 15, variogram_max_dist: 24.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioSettings {
    /// Model label every other model is compared against.
    pub benchmark: String,
    pub maturities: Vec<f64>,
    pub zetas: Vec<f64>,
    pub horizon: usize,
}

impl Default for PortfolioSettings {
    fn default() -> Self {
        Self { benchmark: "BDNS".into(), maturities: RISKY_MATURITIES.to_vec(), zetas: ZETAS.to_vec(), horizon: 1 }
    }
}

impl PortfolioSettings {
    pub fn study_config(&self) -> PortfolioConfig {
        PortfolioConfig { maturities: self.maturities.clone(), zetas: self.zetas.clone(), horizon: self.horizon }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Checks that do not need the data.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.models.is_empty() {
            return Err(CliError::Usage("at least one [[model]] is required".into()));
        }
        let mut labels = BTreeSet::new();
        for spec in &self.models {
            spec.validate()?;
            if !labels.insert(spec.label()) {
                return Err(CliError::Usage(format!("model label {} appears twice", spec.label())));
            }
        }
        if self.forecast.horizons.is_empty() || self.forecast.horizons.contains(&0) {
            return Err(CliError::Usage("forecast.horizons must be nonempty and positive".into()));
        }
        if self.scoring.n_draws < 2 {
            return Err(CliError::Usage("scoring.n_draws must be at least 2".into()));
        }
        let d = &self.diagnostics;
        if d.variogram_bins < 2 || !(d.variogram_max_dist > 0.0 && d.variogram_max_dist.is_finite()) {
            return Err(CliError::Usage("diagnostics needs variogram_bins >= 2 and a positive variogram_max_dist".into()));
        }
        let p = &self.portfolio;
        if p.horizon == 0 || p.maturities.is_empty() || p.zetas.iter().any(|z| !(*z > 0.0 && z.is_finite())) {
            return Err(CliError::Usage("portfolio needs horizon >= 1, maturities and positive zetas".into()));
        }
        Ok(())
    }

    /// Forecast settings that depend on the panel.
    pub fn validate_forecast(&self, panel: &YieldPanel) -> Result<(), CliError> {
        for m in self.forecast.maturities.iter().flatten() {
            if !(*m > 0.0 && m.is_finite()) {
                return Err(CliError::Usage(format!("forecast maturity {m} must be positive")));
            }
        }
        if let Some(o) = self.forecast.origin {
            if panel.index_of(o).is_none() {
                return Err(CliError::Usage(format!("forecast origin {o} is not in the panel")));
            }
        }
        Ok(())
    }

    pub fn score_options(&self, root_seed: u64) -> ScoreOptions {
        ScoreOptions { n_draws: self.scoring.n_draws, seed: self.scoring.seed.unwrap_or(root_seed) }
    }

    /// Models with a latent state-space fit (the two-step baseline has none).
    pub fn latent_models(&self) -> Vec<&ModelSpec> {
        self.models.iter().filter(|s| s.trend == Trend::Bdns).collect()
    }

    pub fn read_panel(&self, path: &Path) -> Result<YieldPanel, CliError> {
        let opts = ParseOptions {
            maturities: self.data.column_maturities.clone(),
            restrict_paper: self.data.restrict_standard,
        };
        let panel = dataio::read_panel(path, &opts).map_err(|e| match e {
            yieldfield::Error::Io(io) => CliError::io(path, io),
            other => CliError::Core(other),
        })?;
        match &self.data.maturities {
            Some(keep) => Ok(panel.select_maturities(keep)?),
            None => Ok(panel),
        }
    }

    /// Rows `[first, last]` of the fit window.
    pub fn fit_window(&self, panel: &YieldPanel) -> Result<YieldPanel, CliError> {
        let dates = panel.dates();
        let first = self.fit.first.unwrap_or(dates[0]);
        let last = self.fit.last.unwrap_or(dates[dates.len() - 1]);
        Ok(panel.restrict_dates(first, last)?)
    }
}
