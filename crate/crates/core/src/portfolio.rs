//! Mean–variance bond allocation driven by yield forecasts, quadratic realized
//! utility, and the performance fee an investor would pay to switch models.
//!
//! Zero-coupon prices follow P(t, m) = exp(−y·m/1200) with y in percent and m in
//! months. The 10-year bond held for one month is treated as riskless.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{YearMonth, YieldPanel};
use crate::error::{Error, Result};
use crate::forecast::{finish_csv, ForecastRecord, PredictiveDistribution};

/// Maturity of the asset treated as risk-free over one rebalancing period.
pub const RISK_FREE_MATURITY: f64 = 120.0;
pub const RISKY_MATURITIES: [f64; 4] = [3.0, 12.0, 36.0, 60.0];
pub const ZETAS: [f64; 3] = [4.0, 2.0, 1.0];
/// Relative risk aversion in the realized utility.
pub const RRA: f64 = 1.0;

/// ln P(t, m) for a yield in percent and a maturity in months.
pub fn log_price(yield_pct: f64, maturity: f64) -> f64 {
    -yield_pct * maturity / 1200.0
}

/// Yield at maturity `m`, linear between grid points and flat beyond the ends.
pub fn interpolate_yield(maturities: &[f64], yields: &[f64], m: f64) -> Result<f64> {
    if maturities.is_empty() || maturities.len() != yields.len() || !m.is_finite() || m < 0.0 {
        return Err(Error::Interpolation(format!("cannot interpolate a yield at maturity {m}")));
    }
    if m <= maturities[0] {
        return Ok(yields[0]);
    }
    let last = maturities.len() - 1;
    if m >= maturities[last] {
        return Ok(yields[last]);
    }
    let k = maturities.partition_point(|&x| x <= m) - 1;
    let w = (m - maturities[k]) / (maturities[k + 1] - maturities[k]);
    Ok((1.0 - w) * yields[k] + w * yields[k + 1])
}

/// Inputs for one allocation decision at an origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BondReturns {
    /// Expected log return of the risky bond over the period.
    pub expected: f64,
    /// Variance of that log return.
    pub variance: f64,
    /// Known log return of the risk-free bond.
    pub risk_free: f64,
    /// Realized gross return of the risky bond.
    pub realized: f64,
}

/// Log-price returns from holding the `m`-month zero for `h` months.
pub fn bond_returns(panel: &YieldPanel, origin: YearMonth, m: f64, h: usize, forecast: &PredictiveDistribution) -> Result<BondReturns> {
    let hf = h as f64;
    if h == 0 || m < hf {
        return Err(Error::Interpolation(format!("cannot hold a {m}-month bond for {h} months")));
    }
    let t = panel
        .index_of(origin)
        .ok_or_else(|| Error::Range(format!("origin {origin} outside panel")))?;
    if t + h >= panel.n_dates() {
        return Err(Error::Range(format!("origin {origin} + {h} months outside panel")));
    }
    let mats = panel.maturities();
    let now = interpolate_yield(mats, panel.row(t), m)?;
    let later = interpolate_yield(mats, panel.row(t + h), m - hf)?;
    let rf_now = interpolate_yield(mats, panel.row(t), RISK_FREE_MATURITY)?;
    let (mean, sd) = if m == hf { (0.0, 0.0) } else { forecast.at_maturity(m - hf)? };
    let dur = (m - hf) / 1200.0;
    let risk_free = -log_price(rf_now, hf);
    Ok(BondReturns {
        expected: log_price(mean, m - hf) - log_price(now, m),
        variance: dur * dur * sd * sd,
        risk_free,
        realized: (log_price(later, m - hf) - log_price(now, m)).exp(),
    })
}

/// Minimizes wᵀΣw − wᵀμ/δ subject to Σw = 1 through the KKT system.
pub fn mean_variance_weights(mu: &[f64], sigma: &DMatrix<f64>, delta: f64) -> Result<Vec<f64>> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} covariance for {n} assets", sigma.nrows(), sigma.ncols())));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("risk aversion must be positive, got {delta}")));
    }
    let mut k = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = 2.0 * sigma[(i, j)];
        }
        k[(i, n)] = 1.0;
        k[(n, i)] = 1.0;
        rhs[i] = mu[i] / delta;
    }
    rhs[n] = 1.0;
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Regression("singular mean-variance system".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Regression("singular mean-variance system".into()));
    }
    Ok(sol.iter().take(n).copied().collect())
}

/// Two-asset case with a riskless asset: weight on the risky asset.
pub fn risky_weight(mu_risky: f64, risk_free: f64, variance: f64, delta: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::Regression(format!("risky variance must be positive, got {variance}")));
    }
    Ok((mu_risky - risk_free) / (2.0 * delta * variance))
}

/// Σ_t (R_t − δ̄/(2(1+δ̄)) R_t²) with unit initial wealth.
pub fn realized_utility(returns: &[f64], rra: f64) -> Result<f64> {
    if let Some(r) = returns.iter().find(|&&r| !(r > 0.0)) {
        return Err(Error::Domain(format!("gross returns must be positive, got {r}")));
    }
    let c = rra / (2.0 * (1.0 + rra));
    Ok(returns.iter().map(|r| r - c * r * r).sum())
}

/// Fee F equating the utility of the model path net of F with the benchmark's utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fee {
    /// Per-period fee in gross-return units.
    pub fee: f64,
    /// 100·F / mean benchmark gross return.
    pub fee_pct: f64,
}

pub fn performance_fee(model: &[f64], benchmark: &[f64]) -> Result<Fee> {
    if model.len() != benchmark.len() || model.is_empty() {
        return Err(Error::Dimension(format!("return paths of length {} and {}", model.len(), benchmark.len())));
    }
    let n = model.len() as f64;
    let gap = realized_utility(model, RRA)? - realized_utility(benchmark, RRA)?;
    let sum_r: f64 = model.iter().sum();
    // −(n/4)F² − (n − ΣR/2)F + gap = 0
    let (a, b, c) = (-n / 4.0, sum_r / 2.0 - n, gap);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::Domain("no fee equates the utilities under quadratic utility".into()));
    }
    let sq = disc.sqrt();
    // stable quadratic roots
    let q = -0.5 * (b + b.signum() * sq);
    let roots = [q / a, if q != 0.0 { c / q } else { q / a }];
    let floor = model.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 2.0;
    let fee = roots
        .into_iter()
        .filter(|&f| f > floor && f.is_finite())
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
        .ok_or_else(|| Error::Domain("both fee roots leave marginal utility negative".into()))?;
    let mean_b = benchmark.iter().sum::<f64>() / n;
    Ok(Fee { fee, fee_pct: 100.0 * fee / mean_b })
}

/// Rebuild per-origin predictives of one horizon from backtest records.
pub fn predictives_from_records(records: &[ForecastRecord], horizon: usize) -> Result<BTreeMap<YearMonth, PredictiveDistribution>> {
    let mut by_origin: BTreeMap<YearMonth, Vec<&ForecastRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.horizon == horizon) {
        let o = YearMonth::parse(&r.origin).ok_or_else(|| Error::Validation(format!("bad origin '{}'", r.origin)))?;
        by_origin.entry(o).or_default().push(r);
    }
    Ok(by_origin
        .into_iter()
        .map(|(o, mut rs)| {
            rs.sort_by(|a, b| a.maturity.total_cmp(&b.maturity));
            let n = rs.len();
            let pd = PredictiveDistribution {
                origin: o,
                horizon,
                maturities: rs.iter().map(|r| r.maturity).collect(),
                mean: rs.iter().map(|r| r.mean).collect(),
                sd: rs.iter().map(|r| r.sd).collect(),
                trend_mean: rs.iter().map(|r| r.mean).collect(),
                field_mean: vec![0.0; n],
                var_trend: vec![0.0; n],
                var_field: vec![0.0; n],
                var_cross: vec![0.0; n],
                var_noise: rs.iter().map(|r| r.sd * r.sd).collect(),
            };
            (o, pd)
        })
        .collect())
}

/// One rebalancing period of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyStep {
    pub origin: YearMonth,
    pub risky_weight: f64,
    pub gross_return: f64,
    pub utility: f64,
}

/// Returns are expressed in percent per period when sizing positions, so weights stay
/// in a range where gross portfolio returns remain positive.
const ALLOCATION_SCALE: f64 = 100.0;

/// Monthly-rebalanced two-asset strategy for one model.
pub fn strategy_path(
    panel: &YieldPanel,
    forecasts: &BTreeMap<YearMonth, PredictiveDistribution>,
    maturity: f64,
    horizon: usize,
    delta: f64,
) -> Result<Vec<StrategyStep>> {
    let c = RRA / (2.0 * (1.0 + RRA));
    forecasts
        .iter()
        .map(|(&origin, pd)| {
            let b = bond_returns(panel, origin, maturity, horizon, pd)?;
            let s = ALLOCATION_SCALE;
            let w = risky_weight(s * b.expected, s * b.risk_free, s * s * b.variance, delta)?;
            let gross = 1.0 + w * (b.realized - 1.0) + (1.0 - w) * (b.risk_free.exp() - 1.0);
            Ok(StrategyStep { origin, risky_weight: w, gross_return: gross, utility: gross - c * gross * gross })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeeRow {
    pub zeta: f64,
    pub maturity: f64,
    pub model: String,
    pub fee_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeeTable {
    pub rows: Vec<FeeRow>,
    /// (zeta, maturity, model, reason) for cells that could not be computed.
    pub failures: Vec<(f64, f64, String, String)>,
}

impl FeeTable {
    pub fn get(&self, zeta: f64, maturity: f64, model: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.zeta == zeta && r.maturity == maturity && r.model == model).map(|r| r.fee_pct)
    }

    /// fees.csv: zeta,maturity,model,fee_pct.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["zeta", "maturity", "model", "fee_pct"])?;
        }
        finish_csv(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioConfig {
    pub maturities: Vec<f64>,
    pub zetas: Vec<f64>,
    pub horizon: usize,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        Self { maturities: RISKY_MATURITIES.to_vec(), zetas: ZETAS.to_vec(), horizon: 1 }
    }
}

/// Fees of each model against the benchmark for every (ζ, maturity); weights use δ = ζ.
/// Only origins forecast by both the model and the benchmark enter a comparison.
pub fn run_portfolio_study(
    panel: &YieldPanel,
    benchmark: (&str, &[ForecastRecord]),
    models: &[(&str, &[ForecastRecord])],
    cfg: &PortfolioConfig,
) -> Result<FeeTable> {
    if cfg.zetas.iter().any(|z| !(*z > 0.0)) {
        return Err(Error::Validation("risk preferences must be positive".into()));
    }
    let bench = predictives_from_records(benchmark.1, cfg.horizon)?;
    let fitted: Vec<(String, BTreeMap<YearMonth, PredictiveDistribution>)> = models
        .iter()
        .map(|(name, recs)| Ok((name.to_string(), predictives_from_records(recs, cfg.horizon)?)))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for &zeta in &cfg.zetas {
        for &m in &cfg.maturities {
            for (k, _) in fitted.iter().enumerate() {
                cells.push((zeta, m, k));
            }
        }
    }
    let results: Vec<(f64, f64, String, Result<f64>)> = cells
        .par_iter()
        .map(|&(zeta, m, k)| {
            let (name, fc) = &fitted[k];
            let common: BTreeMap<YearMonth, PredictiveDistribution> =
                fc.iter().filter(|(o, _)| bench.contains_key(o)).map(|(o, p)| (*o, p.clone())).collect();
            let bench_common: BTreeMap<YearMonth, PredictiveDistribution> =
                bench.iter().filter(|(o, _)| common.contains_key(o)).map(|(o, p)| (*o, p.clone())).collect();
            let r = (|| {
                if common.is_empty() {
                    return Err(Error::Validation(format!("{name} shares no origins with {}", benchmark.0)));
                }
                let pm = strategy_path(panel, &common, m, cfg.horizon, zeta)?;
                let pb = strategy_path(panel, &bench_common, m, cfg.horizon, zeta)?;
                let rm: Vec<f64> = pm.iter().map(|s| s.gross_return).collect();
                let rb: Vec<f64> = pb.iter().map(|s| s.gross_return).collect();
                Ok(performance_fee(&rm, &rb)?.fee_pct)
            })();
            (zeta, m, name.clone(), r)
        })
        .collect();
    let mut table = FeeTable::default();
    for (zeta, maturity, model, r) in results {
        match r {
            Ok(fee_pct) => table.rows.push(FeeRow { zeta, maturity, model, fee_pct }),
            Err(e) => {
                log::warn!("fee for {model} at zeta {zeta}, maturity {maturity} unavailable: {e}");
                table.failures.push((zeta, maturity, model, e.to_string()));
            }
        }
    }
    Ok(table)
}
