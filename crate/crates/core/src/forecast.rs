//! h-step predictive distributions, the two-step baseline and the rolling backtest.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{target_aligned_origins, WindowScheme, YearMonth, YieldPanel};
use crate::error::{Error, Result};
use crate::inference::{fit_with, ArMethod, FieldGeometry, FitResult, ModelSpec, Trend};
use crate::nsbasis::{loading_row, observation_matrix};
use crate::stats::{ar1_ols, lagged_ols};

/// Maturities evaluated by default (3 months, 1, 3, 5 and 10 years).
pub const EVAL_MATURITIES: [f64; 5] = [3.0, 12.0, 36.0, 60.0, 120.0];
pub const EVAL_HORIZONS: [usize; 3] = [1, 6, 12];

/// Gaussian predictive distribution at one origin and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub origin: YearMonth,
    pub horizon: usize,
    pub maturities: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub trend_mean: Vec<f64>,
    pub field_mean: Vec<f64>,
    pub var_trend: Vec<f64>,
    pub var_field: Vec<f64>,
    /// Twice the posterior trend–field covariance.
    pub var_cross: Vec<f64>,
    pub var_noise: Vec<f64>,
}

impl PredictiveDistribution {
    pub fn variance(&self, j: usize) -> f64 {
        self.var_trend[j] + self.var_field[j] + self.var_cross[j] + self.var_noise[j]
    }

    /// `n` draws at maturity index `j`.
    pub fn sample(&self, j: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.mean[j] + self.sd[j] * z
            })
            .collect()
    }

    /// Mean and sd at maturity `m`, linear in maturity between grid points and flat
    /// beyond the ends of the grid.
    pub fn at_maturity(&self, m: f64) -> Result<(f64, f64)> {
        let ms = &self.maturities;
        if ms.is_empty() || !m.is_finite() {
            return Err(Error::Interpolation(format!("cannot evaluate maturity {m}")));
        }
        if m <= ms[0] {
            return Ok((self.mean[0], self.sd[0]));
        }
        let last = ms.len() - 1;
        if m >= ms[last] {
            return Ok((self.mean[last], self.sd[last]));
        }
        let k = ms.partition_point(|&x| x <= m) - 1;
        let w = (m - ms[k]) / (ms[k + 1] - ms[k]);
        Ok((
            (1.0 - w) * self.mean[k] + w * self.mean[k + 1],
            (1.0 - w) * self.sd[k] + w * self.sd[k + 1],
        ))
    }
}

/// Factor forecast at T+h: mean and variance per factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorForecast {
    pub mean: [f64; 3],
    pub var: [f64; 3],
}

fn check_h(h: usize) -> Result<()> {
    if h == 0 {
        Err(Error::Domain("forecast horizon must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// Accumulated innovation variance of an AR(1) after h steps.
fn ar_accumulated(var: f64, phi: f64, h: usize) -> f64 {
    let p2 = phi * phi;
    if (1.0 - p2).abs() < 1e-12 {
        var * h as f64
    } else {
        var * (1.0 - p2.powi(h as i32)) / (1.0 - p2)
    }
}

/// Linear functional of the latent vector giving the trend at (T+h, loadings `l`).
fn trend_functional(fit: &FitResult, l: &[f64; 3], h: usize) -> Vec<f64> {
    let lay = &fit.layout;
    let mut g = vec![0.0; lay.dim()];
    for i in 0..3 {
        g[lay.factor(i, lay.n_times - 1)] = l[i] * fit.hyper.factor_phi[i].powi(h as i32);
        g[lay.mu(i)] = l[i];
    }
    g
}

/// Per-factor predictive mean and variance at T+h.
pub fn forecast_factors(fit: &FitResult, h: usize) -> Result<FactorForecast> {
    check_h(h)?;
    let mut out = FactorForecast { mean: [0.0; 3], var: [0.0; 3] };
    for i in 0..3 {
        let mut l = [0.0; 3];
        l[i] = 1.0;
        let g = trend_functional(fit, &l, h);
        out.mean[i] = dot(&g, &fit.posterior.mean);
        out.var[i] =
            fit.posterior.variance_of(&g) + ar_accumulated(fit.hyper.innovation_var(i), fit.hyper.factor_phi[i], h);
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Field functional at (T+h, m) and the extra variance of future field innovations.
fn field_functional(fit: &FitResult, h: usize, m: f64) -> Result<Option<(Vec<f64>, f64)>> {
    let (field, ctx) = match (&fit.field, &fit.context.geometry) {
        (Some(f), Some(_)) => (f, &fit.context),
        _ => return Ok(None),
    };
    let lay = &fit.layout;
    let off = lay.field_offset();
    let mut g = vec![0.0; lay.dim()];
    let extra = match ctx.geometry.as_ref().unwrap() {
        FieldGeometry::Planar { mesh, .. } => {
            let p = ctx.scaling.point((lay.n_times + h) as f64, m);
            let row = mesh.projection_matrix(&[p])?.matmul(&field.eval)?;
            let (cols, vals) = row.row(0);
            for (&c, &v) in cols.iter().zip(vals) {
                g[off + c] = v;
            }
            0.0
        }
        FieldGeometry::Maturity { temporal, .. } => {
            let dynamics = field
                .dynamics
                .as_ref()
                .ok_or_else(|| Error::Validation("spatio-temporal field without dynamics".into()))?;
            let p = temporal.mesh.projection_matrix(&[[ctx.scaling.maturity(m), 0.0]])?;
            let nv = dynamics.n_space;
            let (ph, vh) = dynamics.propagate(h);
            let mut pv = vec![0.0; nv];
            let (cols, vals) = p.row(0);
            for (&c, &v) in cols.iter().zip(vals) {
                pv[c] = v;
            }
            let last = off + (lay.n_times - 1) * nv;
            for k in 0..nv {
                g[last + k] = (0..nv).map(|a| pv[a] * ph[(a, k)]).sum();
            }
            let mut extra = 0.0;
            for a in 0..nv {
                for b in 0..nv {
                    extra += pv[a] * vh[(a, b)] * pv[b];
                }
            }
            extra
        }
    };
    Ok(Some((g, extra)))
}

/// Mean and variance of the residual field at (T+h, m) for each maturity.
pub fn forecast_field(fit: &FitResult, h: usize, maturities: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_h(h)?;
    maturities
        .iter()
        .map(|&m| match field_functional(fit, h, m)? {
            None => Ok((0.0, 0.0)),
            Some((g, extra)) => Ok((dot(&g, &fit.posterior.mean), fit.posterior.variance_of(&g) + extra)),
        })
        .collect()
}

/// Predictive distribution of yields at T+h, including the posterior covariance
/// between trend and field latents.
pub fn predict_yield(fit: &FitResult, h: usize, maturities: &[f64]) -> Result<PredictiveDistribution> {
    check_h(h)?;
    let origin = *fit.context.dates.last().expect("nonempty window");
    let n = maturities.len();
    let mut pd = PredictiveDistribution {
        origin,
        horizon: h,
        maturities: maturities.to_vec(),
        mean: Vec::with_capacity(n),
        sd: Vec::with_capacity(n),
        trend_mean: Vec::with_capacity(n),
        field_mean: Vec::with_capacity(n),
        var_trend: Vec::with_capacity(n),
        var_field: Vec::with_capacity(n),
        var_cross: Vec::with_capacity(n),
        var_noise: Vec::with_capacity(n),
    };
    let noise = 1.0 / fit.hyper.noise_precision;
    for &m in maturities {
        let l = loading_row(fit.lambda, m)?;
        let gt = trend_functional(fit, &l, h);
        let innov: f64 = (0..3)
            .map(|i| l[i] * l[i] * ar_accumulated(fit.hyper.innovation_var(i), fit.hyper.factor_phi[i], h))
            .sum();
        let vt = fit.posterior.variance_of(&gt);
        let tm = dot(&gt, &fit.posterior.mean);
        let (fm, vf, cross) = match field_functional(fit, h, m)? {
            None => (0.0, 0.0, 0.0),
            Some((gf, extra)) => {
                let vf = fit.posterior.variance_of(&gf);
                let sum: Vec<f64> = gt.iter().zip(&gf).map(|(a, b)| a + b).collect();
                let cross = fit.posterior.variance_of(&sum) - vt - vf;
                (dot(&gf, &fit.posterior.mean), vf + extra, cross)
            }
        };
        pd.trend_mean.push(tm);
        pd.field_mean.push(fm);
        pd.mean.push(tm + fm);
        pd.var_trend.push(vt + innov);
        pd.var_field.push(vf);
        pd.var_cross.push(cross);
        pd.var_noise.push(noise);
        let j = pd.mean.len() - 1;
        pd.sd.push(pd.variance(j).max(noise).sqrt());
    }
    Ok(pd)
}

/// Classical two-step forecast: cross-sectional OLS factors, then per-factor AR(1)
/// regressions; sd combines factor forecast error and the OLS residual variance.
pub fn two_step_baseline(window: &YieldPanel, lambda: f64, h: usize, method: ArMethod) -> Result<PredictiveDistribution> {
    check_h(h)?;
    let t = window.n_dates();
    if t < crate::dataio::MIN_TRAIN_MONTHS {
        return Err(Error::Validation(format!(
            "two-step baseline needs at least {} months, got {t}",
            crate::dataio::MIN_TRAIN_MONTHS
        )));
    }
    let load = observation_matrix(lambda, window.maturities())?;
    let betas = load.ols_factors(window.yields())?;
    let m = window.n_maturities();
    let sse: f64 = betas
        .iter()
        .zip(window.yields().chunks(m))
        .map(|(b, row)| load.curve(b).iter().zip(row).map(|(f, y)| (y - f).powi(2)).sum::<f64>())
        .sum();
    let dof = (t * m).saturating_sub(3 * t).max(1);
    let resid_var = sse / dof as f64;
    let mut fmean = [0.0; 3];
    let mut fvar = [0.0; 3];
    for i in 0..3 {
        let x: Vec<f64> = betas.iter().map(|b| b[i]).collect();
        let last = x[t - 1];
        let fit = match method {
            ArMethod::Direct => lagged_ols(&x, h).map(|(c, g, v)| (c + g * last, v)),
            ArMethod::Iterated => ar1_ols(&x).map(|(c, phi, v)| {
                let ph = phi.powi(h as i32);
                let drift = if (1.0 - phi).abs() < 1e-12 { c * h as f64 } else { c * (1.0 - ph) / (1.0 - phi) };
                (drift + ph * last, ar_accumulated(v, phi, h))
            }),
        };
        // a constant factor series forecasts itself
        (fmean[i], fvar[i]) = fit.unwrap_or((last, 0.0));
    }
    let origin = *window.dates().last().unwrap();
    let mut pd = PredictiveDistribution {
        origin,
        horizon: h,
        maturities: window.maturities().to_vec(),
        mean: Vec::new(),
        sd: Vec::new(),
        trend_mean: Vec::new(),
        field_mean: vec![0.0; m],
        var_trend: Vec::new(),
        var_field: vec![0.0; m],
        var_cross: vec![0.0; m],
        var_noise: vec![resid_var; m],
    };
    for r in &load.matrix {
        let mu: f64 = (0..3).map(|i| r[i] * fmean[i]).sum();
        let v: f64 = (0..3).map(|i| r[i] * r[i] * fvar[i]).sum();
        pd.mean.push(mu);
        pd.trend_mean.push(mu);
        pd.var_trend.push(v);
        pd.sd.push((v + resid_var).sqrt());
    }
    Ok(pd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RefitPolicy {
    /// Re-estimate hyperparameters at every origin, warm-started.
    #[default]
    EveryOrigin,
    /// Estimate once at the earliest origin and keep θ fixed afterwards.
    FirstOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestPlan {
    pub first_target: YearMonth,
    pub last_target: YearMonth,
    pub horizons: Vec<usize>,
    pub maturities: Vec<f64>,
    pub scheme: WindowScheme,
    /// Keep every k-th origin of each horizon.
    pub origin_stride: usize,
    pub refit: RefitPolicy,
    /// Fixed number of warm-start chains; results do not depend on the thread count.
    pub chains: usize,
}

impl Default for BacktestPlan {
    fn default() -> Self {
        Self {
            first_target: YearMonth::new(1995, 1).unwrap(),
            last_target: YearMonth::new(2000, 12).unwrap(),
            horizons: EVAL_HORIZONS.to_vec(),
            maturities: EVAL_MATURITIES.to_vec(),
            scheme: WindowScheme::Expanding,
            origin_stride: 1,
            refit: RefitPolicy::EveryOrigin,
            chains: 8,
        }
    }
}

impl BacktestPlan {
    pub fn validate(&self, panel: &YieldPanel) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Validation("horizons must be nonempty and positive".into()));
        }
        if self.origin_stride == 0 || self.chains == 0 {
            return Err(Error::Validation("origin_stride and chains must be positive".into()));
        }
        for &m in &self.maturities {
            if panel.maturity_index(m).is_none() {
                return Err(Error::Validation(format!("evaluation maturity {m} not in panel")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub origin: String,
    pub horizon: usize,
    pub maturity: f64,
    pub mean: f64,
    pub sd: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseCell {
    pub model: String,
    pub horizon: usize,
    pub maturity: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginFailure {
    pub origin: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub model: String,
    /// Sorted by (horizon, maturity, origin).
    pub records: Vec<ForecastRecord>,
    pub rmse: Vec<RmseCell>,
    pub failures: Vec<OriginFailure>,
    pub n_fits: usize,
    pub runtime_secs: f64,
}

impl BacktestReport {
    /// Build a report from forecast records, sorting them and computing RMSE cells.
    pub fn from_records(model: &str, mut records: Vec<ForecastRecord>) -> Self {
        records.sort_by(|a, b| {
            (a.horizon, a.maturity, &a.origin)
                .partial_cmp(&(b.horizon, b.maturity, &b.origin))
                .unwrap()
        });
        let rmse = rmse_grid(model, &records);
        Self { model: model.to_string(), records, rmse, failures: Vec::new(), n_fits: 0, runtime_secs: 0.0 }
    }

    pub fn rmse_at(&self, horizon: usize, maturity: f64) -> Option<f64> {
        self.rmse.iter().find(|c| c.horizon == horizon && c.maturity == maturity).map(|c| c.rmse)
    }
}

/// √(mean squared error) per (horizon, maturity), in record order.
pub fn rmse_grid(model: &str, records: &[ForecastRecord]) -> Vec<RmseCell> {
    let mut acc: BTreeMap<(usize, u64), (f64, usize, f64)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.horizon, r.maturity.to_bits())).or_insert((0.0, 0, r.maturity));
        e.0 += (r.mean - r.actual).powi(2);
        e.1 += 1;
    }
    let mut cells: Vec<RmseCell> = acc
        .into_iter()
        .map(|((h, _), (s, n, m))| RmseCell { model: model.to_string(), horizon: h, maturity: m, rmse: (s / n as f64).sqrt() })
        .collect();
    cells.sort_by(|a, b| (a.horizon, a.maturity).partial_cmp(&(b.horizon, b.maturity)).unwrap());
    cells
}

/// A distinct estimation window shared by all horizons that use it.
#[derive(Debug, Clone)]
struct FitJob {
    train_start: usize,
    train_end: usize,
    horizons: Vec<usize>,
}

fn plan_jobs(panel: &YieldPanel, plan: &BacktestPlan) -> Result<Vec<FitJob>> {
    let mut jobs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for &h in &plan.horizons {
        let wins = target_aligned_origins(panel, plan.first_target, plan.last_target, h, plan.scheme)?;
        for w in wins.into_iter().step_by(plan.origin_stride) {
            jobs.entry((w.train_end, w.train_start)).or_default().push(h);
        }
    }
    Ok(jobs
        .into_iter()
        .map(|((end, start), horizons)| FitJob { train_start: start, train_end: end, horizons })
        .collect())
}

fn records_for(
    model: &str,
    panel: &YieldPanel,
    plan: &BacktestPlan,
    job: &FitJob,
    predict: &dyn Fn(usize) -> Result<PredictiveDistribution>,
) -> Result<Vec<ForecastRecord>> {
    let mut out = Vec::new();
    for &h in &job.horizons {
        let pd = predict(h)?;
        let target = job.train_end + h;
        for &m in &plan.maturities {
            let j = pd
                .maturities
                .iter()
                .position(|&x| x == m)
                .ok_or_else(|| Error::Validation(format!("maturity {m} missing from forecast")))?;
            let actual = panel.get(target, panel.maturity_index(m).unwrap());
            out.push(ForecastRecord {
                model: model.to_string(),
                origin: panel.dates()[job.train_end].compact(),
                horizon: h,
                maturity: m,
                mean: pd.mean[j],
                sd: pd.sd[j],
                actual,
            });
        }
    }
    Ok(out)
}

type JobOutcome = (usize, std::result::Result<Vec<ForecastRecord>, String>);

/// Rolling out-of-sample evaluation of one model. Origin failures are recorded and
/// skipped; the report is bitwise reproducible for a given plan.
pub fn run_backtest(spec: &ModelSpec, panel: &YieldPanel, plan: &BacktestPlan) -> Result<BacktestReport> {
    plan.validate(panel)?;
    spec.validate()?;
    let started = Instant::now();
    let model = spec.label();
    let jobs = plan_jobs(panel, plan)?;
    let all_maturities = panel.maturities().to_vec();
    let outcomes: Vec<JobOutcome> = if spec.trend == Trend::TwoStepBaseline {
        let lambda = spec.nominal_lambda();
        jobs.par_iter()
            .enumerate()
            .map(|(k, job)| {
                let r = panel.slice_rows(job.train_start, job.train_end).and_then(|win| {
                    records_for(&model, panel, plan, job, &|h| two_step_baseline(&win, lambda, h, spec.baseline_ar))
                });
                (k, r.map_err(|e| e.to_string()))
            })
            .collect()
    } else {
        let fixed_theta = match plan.refit {
            RefitPolicy::FirstOrigin if !jobs.is_empty() => {
                let j = &jobs[0];
                Some(fit_with(spec, &panel.slice_rows(j.train_start, j.train_end)?, None, true)?.theta)
            }
            _ => None,
        };
        let chunk = jobs.len().div_ceil(plan.chains).max(1);
        let chunks: Vec<(usize, &[FitJob])> = jobs.chunks(chunk).enumerate().map(|(c, js)| (c * chunk, js)).collect();
        chunks
            .par_iter()
            .flat_map_iter(|&(first, js)| {
                let mut warm: Option<Vec<f64>> = fixed_theta.clone();
                let mut out = Vec::with_capacity(js.len());
                for (k, job) in js.iter().enumerate() {
                    let r = panel.slice_rows(job.train_start, job.train_end).and_then(|win| {
                        let fit = fit_with(spec, &win, warm.as_deref(), fixed_theta.is_none())?;
                        let recs = records_for(&model, panel, plan, job, &|h| predict_yield(&fit, h, &all_maturities))?;
                        Ok((fit.theta.clone(), recs))
                    });
                    let r = match r {
                        Ok((theta, recs)) => {
                            if fixed_theta.is_none() {
                                warm = Some(theta);
                            }
                            Ok(recs)
                        }
                        Err(e) => Err(e.to_string()),
                    };
                    out.push((first + k, r));
                }
                out
            })
            .collect()
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in outcomes {
        match r {
            Ok(recs) => records.extend(recs),
            Err(message) => {
                let origin = panel.dates()[jobs[k].train_end].compact();
                log::warn!("{model}: origin {origin} skipped: {message}");
                failures.push(OriginFailure { origin, message });
            }
        }
    }
    let mut report = BacktestReport::from_records(&model, records);
    report.failures = failures;
    report.n_fits = jobs.len();
    report.runtime_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// forecasts.csv content for any number of reports.
pub fn forecasts_csv(reports: &[BacktestReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        for rec in &r.records {
            w.serialize(rec)?;
        }
    }
    if reports.iter().all(|r| r.records.is_empty()) {
        w.write_record(["model", "origin", "horizon", "maturity", "mean", "sd", "actual"])?;
    }
    finish_csv(w)
}

/// forecast.csv: one row per (model, horizon, maturity) with the variance decomposition.
pub fn predictive_csv(dists: &[(String, PredictiveDistribution)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "model", "origin", "horizon", "maturity", "mean", "sd", "trend_mean", "field_mean", "var_trend", "var_field",
        "var_cross", "var_noise",
    ])?;
    for (model, pd) in dists {
        for j in 0..pd.maturities.len() {
            let nums = [
                pd.maturities[j],
                pd.mean[j],
                pd.sd[j],
                pd.trend_mean[j],
                pd.field_mean[j],
                pd.var_trend[j],
                pd.var_field[j],
                pd.var_cross[j],
                pd.var_noise[j],
            ];
            let mut row = vec![model.clone(), pd.origin.compact(), pd.horizon.to_string()];
            row.extend(nums.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    finish_csv(w)
}

/// rmse.csv content.
pub fn rmse_csv(reports: &[BacktestReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        for c in &r.rmse {
            w.serialize(c)?;
        }
    }
    if reports.iter().all(|r| r.rmse.is_empty()) {
        w.write_record(["model", "horizon", "maturity", "rmse"])?;
    }
    finish_csv(w)
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

/// Parse forecasts.csv back into per-model reports (in first-appearance order).
pub fn parse_forecasts_csv(text: &str) -> Result<Vec<BacktestReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut by_model: Vec<(String, Vec<ForecastRecord>)> = Vec::new();
    for rec in rdr.deserialize() {
        let rec: ForecastRecord = rec?;
        match by_model.iter_mut().find(|(m, _)| *m == rec.model) {
            Some((_, v)) => v.push(rec),
            None => by_model.push((rec.model.clone(), vec![rec])),
        }
    }
    Ok(by_model.into_iter().map(|(m, recs)| BacktestReport::from_records(&m, recs)).collect())
}

#[cfg(test)]
mod tests;
