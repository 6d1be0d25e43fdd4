//! Proper scoring rules for Gaussian predictives, including threshold-weighted
//! variants estimated by Monte Carlo. Every score is a penalty: lower is better.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{YearMonth, YieldPanel};
use crate::error::{Error, Result};
use crate::forecast::{finish_csv, BacktestReport};
use crate::stats::{derive_seed, norm_cdf, norm_pdf, tag};

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// Tail threshold as a multiple of the yield at the forecast origin.
pub const THRESHOLD_RISE: f64 = 1.05;
pub const DEFAULT_DRAWS: usize = 4096;

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("predictive sd must be positive, got {sigma}")))
    }
}

/// E|X − y| for X ~ N(μ, σ²).
fn gaussian_abs_dev(mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z))
}

/// Closed-form CRPS of N(μ, σ²) at y.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(gaussian_abs_dev(mu, sigma, y) - sigma * FRAC_1_SQRT_PI)
}

/// Scaled CRPS, E|X−y|/E|X−X′| + ½ log E|X−X′|, with E|X−X′| = 2σ/√π.
pub fn scrps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let spread = 2.0 * sigma * FRAC_1_SQRT_PI;
    Ok(gaussian_abs_dev(mu, sigma, y) / spread + 0.5 * spread.ln())
}

/// Unbiased estimates of the threshold-weighted kernel expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMoments {
    /// E|max(X,c) − max(y,c)|.
    pub to_obs: f64,
    /// E|max(X,c) − max(X′,c)| over distinct pairs.
    pub pairwise: f64,
}

impl WeightedMoments {
    pub fn wcrps(&self) -> f64 {
        (self.to_obs - 0.5 * self.pairwise).max(0.0)
    }

    /// None when the pairwise spread vanishes (no mass above the threshold).
    pub fn swcrps(&self) -> Option<f64> {
        (self.pairwise > 0.0).then(|| self.to_obs / self.pairwise + 0.5 * self.pairwise.ln())
    }
}

/// U-statistic moments from a set of draws; O(n log n) via sorting.
pub fn weighted_moments(draws: &[f64], y: f64, c: f64) -> Result<WeightedMoments> {
    let n = draws.len();
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 draws, got {n}")));
    }
    if !c.is_finite() && c != f64::NEG_INFINITY {
        return Err(Error::Threshold(format!("threshold must be finite or -inf, got {c}")));
    }
    let yc = y.max(c);
    let mut z: Vec<f64> = draws.iter().map(|&x| x.max(c)).collect();
    let to_obs = z.iter().map(|v| (v - yc).abs()).sum::<f64>() / n as f64;
    z.sort_by(f64::total_cmp);
    // Σ_{i<j} (z_(j) − z_(i)) = Σ_k z_(k) (2k − n + 1)
    let s: f64 = z.iter().enumerate().map(|(k, v)| v * (2.0 * k as f64 - n as f64 + 1.0)).sum();
    let pairwise = (2.0 * s / (n as f64 * (n as f64 - 1.0))).max(0.0);
    Ok(WeightedMoments { to_obs, pairwise })
}

fn draw<F: FnMut(&mut ChaCha8Rng) -> f64>(mut sampler: F, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sampler(&mut rng)).collect()
}

/// Threshold-weighted CRPS with weight 1{t > c}, estimated from `n_draws` samples.
pub fn wcrps_mc<F: FnMut(&mut ChaCha8Rng) -> f64>(sampler: F, y: f64, c: f64, n_draws: usize, seed: u64) -> Result<f64> {
    Ok(weighted_moments(&draw(sampler, n_draws, seed), y, c)?.wcrps())
}

/// Scaled threshold-weighted CRPS; `Ok(None)` flags an undefined score.
pub fn swcrps_mc<F: FnMut(&mut ChaCha8Rng) -> f64>(
    sampler: F,
    y: f64,
    c: f64,
    n_draws: usize,
    seed: u64,
) -> Result<Option<f64>> {
    Ok(weighted_moments(&draw(sampler, n_draws, seed), y, c)?.swcrps())
}

/// Sampler for N(μ, σ²).
pub fn gaussian_sampler(mu: f64, sigma: f64) -> impl FnMut(&mut ChaCha8Rng) -> f64 {
    move |rng| {
        let z: f64 = StandardNormal.sample(rng);
        mu + sigma * z
    }
}

/// Scores of one forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model: String,
    pub origin: String,
    pub horizon: usize,
    pub maturity: f64,
    pub threshold: f64,
    pub crps: f64,
    pub scrps: f64,
    pub wcrps: f64,
    pub swcrps: Option<f64>,
}

/// Means over origins; undefined swCRPS values are excluded and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub model: String,
    pub horizon: usize,
    pub maturity: f64,
    pub crps: f64,
    pub scrps: f64,
    pub wcrps: f64,
    pub swcrps: Option<f64>,
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub records: Vec<ScoreRecord>,
    pub cells: Vec<ScoreCell>,
}

impl ScoreTable {
    /// Build cells from raw records (sums in record order, so results are reproducible).
    pub fn from_records(records: Vec<ScoreRecord>) -> Self {
        let mut groups: BTreeMap<(String, usize, u64), Vec<&ScoreRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry((r.model.clone(), r.horizon, r.maturity.to_bits())).or_default().push(r);
        }
        let mut cells: Vec<ScoreCell> = groups
            .into_values()
            .map(|rs| {
                let n = rs.len() as f64;
                let defined: Vec<f64> = rs.iter().filter_map(|r| r.swcrps).collect();
                ScoreCell {
                    model: rs[0].model.clone(),
                    horizon: rs[0].horizon,
                    maturity: rs[0].maturity,
                    crps: rs.iter().map(|r| r.crps).sum::<f64>() / n,
                    scrps: rs.iter().map(|r| r.scrps).sum::<f64>() / n,
                    wcrps: rs.iter().map(|r| r.wcrps).sum::<f64>() / n,
                    swcrps: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                    n_undefined: rs.len() - defined.len(),
                }
            })
            .collect();
        cells.sort_by(|a, b| {
            (a.horizon, a.maturity).partial_cmp(&(b.horizon, b.maturity)).unwrap().then_with(|| a.model.cmp(&b.model))
        });
        Self { records, cells }
    }

    pub fn cell(&self, model: &str, horizon: usize, maturity: f64) -> Option<&ScoreCell> {
        self.cells.iter().find(|c| c.model == model && c.horizon == horizon && c.maturity == maturity)
    }

    pub fn merge(tables: Vec<ScoreTable>) -> Self {
        Self::from_records(tables.into_iter().flat_map(|t| t.records).collect())
    }

    /// scores.csv: model,horizon,maturity,crps,scrps,wcrps,swcrps,n_undefined.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "horizon", "maturity", "crps", "scrps", "wcrps", "swcrps", "n_undefined"])?;
        for c in &self.cells {
            w.write_record([
                c.model.clone(),
                c.horizon.to_string(),
                c.maturity.to_string(),
                c.crps.to_string(),
                c.scrps.to_string(),
                c.wcrps.to_string(),
                c.swcrps.map(|v| v.to_string()).unwrap_or_default(),
                c.n_undefined.to_string(),
            ])?;
        }
        finish_csv(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub n_draws: usize,
    pub seed: u64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { n_draws: DEFAULT_DRAWS, seed: 0 }
    }
}

/// Tail threshold for a forecast issued at `origin`: 5 % above the yield observed then.
pub fn threshold(panel: &YieldPanel, origin: YearMonth, maturity: f64) -> Result<f64> {
    let t = panel
        .index_of(origin)
        .ok_or_else(|| Error::Threshold(format!("no yields observed at origin {origin}")))?;
    let j = panel
        .maturity_index(maturity)
        .ok_or_else(|| Error::Threshold(format!("maturity {maturity} not in panel")))?;
    Ok(THRESHOLD_RISE * panel.get(t, j))
}

/// Score every forecast of a backtest against its realized yield.
pub fn score_backtest(report: &BacktestReport, panel: &YieldPanel, opts: ScoreOptions) -> Result<ScoreTable> {
    let records = report
        .records
        .par_iter()
        .map(|r| {
            let origin = YearMonth::parse(&r.origin)
                .ok_or_else(|| Error::Threshold(format!("unreadable origin '{}'", r.origin)))?;
            let c = threshold(panel, origin, r.maturity)?;
            let seed = derive_seed(opts.seed, &[tag("scoring"), origin.ordinal() as u64, r.maturity.to_bits()]);
            let moments = if r.sd > 0.0 {
                weighted_moments(&draw(gaussian_sampler(r.mean, r.sd), opts.n_draws, seed), r.actual, c)?
            } else {
                // point forecast: both kernel expectations are available exactly
                WeightedMoments { to_obs: (r.mean.max(c) - r.actual.max(c)).abs(), pairwise: 0.0 }
            };
            let (crps, scrps) = if r.sd > 0.0 {
                (crps_gaussian(r.mean, r.sd, r.actual)?, scrps_gaussian(r.mean, r.sd, r.actual)?)
            } else {
                ((r.mean - r.actual).abs(), f64::NAN)
            };
            Ok(ScoreRecord {
                model: r.model.clone(),
                origin: r.origin.clone(),
                horizon: r.horizon,
                maturity: r.maturity,
                threshold: c,
                crps,
                scrps,
                wcrps: moments.wcrps(),
                swcrps: moments.swcrps(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable::from_records(records))
}
