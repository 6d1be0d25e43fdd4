//! Residual dependence diagnostics: correlation heatmaps, empirical variogram,
//! Moran's I, Geary's C and lag-1 autocorrelation.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{YearMonth, YieldPanel};
use crate::error::{Error, Result};
use crate::forecast::finish_csv;
use crate::inference::FitResult;
use crate::stats::{is_constant, pearson};

/// Pairs beyond this count are subsampled when building a variogram.
pub const MAX_VARIOGRAM_PAIRS: usize = 1_000_000;
pub const PERMUTATIONS: usize = 999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualKindTag {
    /// y minus the factor trend only.
    #[default]
    VsTrend,
    /// y minus trend and posterior field mean: the measurement-error residual.
    VsFullLatent,
}

impl ResidualKindTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ResidualKindTag::VsTrend => "vs-trend",
            ResidualKindTag::VsFullLatent => "vs-full-latent",
        }
    }
}

/// T×M residual grid, row-major by date.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub model: String,
    pub definition: ResidualKindTag,
    pub dates: Vec<YearMonth>,
    pub maturities: Vec<f64>,
    pub values: Vec<f64>,
}

impl ResidualField {
    pub fn new(model: &str, dates: Vec<YearMonth>, maturities: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.len() != dates.len() * maturities.len() {
            return Err(Error::Dimension(format!(
                "{} residuals for a {}x{} grid",
                values.len(),
                dates.len(),
                maturities.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("residuals must be finite".into()));
        }
        Ok(Self { model: model.into(), definition: ResidualKindTag::VsTrend, dates, maturities, values })
    }

    pub fn n_times(&self) -> usize {
        self.dates.len()
    }

    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.n_maturities();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.n_maturities()).copied().collect()
    }

    /// (time index starting at 1, log maturity) of grid cell (t, j).
    pub fn coordinate(&self, t: usize, j: usize) -> [f64; 2] {
        [(t + 1) as f64, self.maturities[j].ln()]
    }
}

/// Residuals of a fit on the window it was estimated from.
pub fn extract_residuals(fit: &FitResult, window: &YieldPanel, definition: ResidualKindTag) -> Result<ResidualField> {
    let ctx = &fit.context;
    if window.n_dates() != ctx.n_times || window.maturities() != ctx.maturities.as_slice() {
        return Err(Error::Dimension(format!(
            "window {}x{} does not match the fitted {}x{}",
            window.n_dates(),
            window.n_maturities(),
            ctx.n_times,
            ctx.maturities.len()
        )));
    }
    let load = fit.loadings()?;
    let paths: Vec<Vec<f64>> = (0..3).map(|i| fit.factor_path(i)).collect();
    let field = match definition {
        ResidualKindTag::VsTrend => None,
        ResidualKindTag::VsFullLatent => Some(fit.field_at_data()?),
    };
    let m = window.n_maturities();
    let mut values = Vec::with_capacity(window.yields().len());
    for t in 0..window.n_dates() {
        let trend = load.curve(&[paths[0][t], paths[1][t], paths[2][t]]);
        for j in 0..m {
            let u = field.as_ref().map_or(0.0, |f| f[t * m + j]);
            values.push(window.get(t, j) - trend[j] - u);
        }
    }
    let mut r = ResidualField::new(&fit.spec().label(), window.dates().to_vec(), window.maturities().to_vec(), values)?;
    r.definition = definition;
    Ok(r)
}

/// Correlation matrix; entries involving a constant series are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlations {
    pub matrix: DMatrix<f64>,
    pub n_undefined: usize,
}

impl Correlations {
    fn from_series(series: &[Vec<f64>]) -> Self {
        let n = series.len();
        let mut matrix = DMatrix::from_element(n, n, f64::NAN);
        let mut n_undefined = 0;
        for a in 0..n {
            for b in a..n {
                match pearson(&series[a], &series[b]) {
                    Some(r) => {
                        matrix[(a, b)] = if a == b { 1.0 } else { r };
                        matrix[(b, a)] = matrix[(a, b)];
                    }
                    None => n_undefined += if a == b { 1 } else { 2 },
                }
            }
        }
        Self { matrix, n_undefined }
    }

    /// Mean absolute off-diagonal correlation over defined entries.
    pub fn mean_abs_off_diagonal(&self) -> Option<f64> {
        let n = self.matrix.nrows();
        let vals: Vec<f64> = (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| self.matrix[(a, b)])
            .filter(|v| v.is_finite())
            .map(f64::abs)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self, labels: &[String]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(labels.iter().cloned());
        w.write_record(&header)?;
        for (a, label) in labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend((0..labels.len()).map(|b| {
                let v = self.matrix[(a, b)];
                if v.is_finite() { v.to_string() } else { String::new() }
            }));
            w.write_record(&row)?;
        }
        finish_csv(w)
    }
}

/// (maturity × maturity, time × time) Pearson correlations.
pub fn correlation_matrices(res: &ResidualField) -> Result<(Correlations, Correlations)> {
    if res.n_times() < 3 || res.n_maturities() < 3 {
        return Err(Error::Validation("correlations need at least 3 dates and 3 maturities".into()));
    }
    let cols: Vec<Vec<f64>> = (0..res.n_maturities()).map(|j| res.column(j)).collect();
    let rows: Vec<Vec<f64>> = (0..res.n_times()).map(|t| res.row(t).to_vec()).collect();
    Ok((Correlations::from_series(&cols), Correlations::from_series(&rows)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    pub distance: f64,
    pub gamma: f64,
    pub count: usize,
}

/// Binned semivariance over Euclidean distance in (time index, log maturity).
pub fn empirical_variogram(res: &ResidualField, n_bins: usize, max_dist: f64, seed: u64) -> Result<Vec<VariogramBin>> {
    if n_bins < 2 {
        return Err(Error::Domain(format!("variogram needs at least 2 bins, got {n_bins}")));
    }
    if !(max_dist > 0.0 && max_dist.is_finite()) {
        return Err(Error::Domain(format!("max distance must be positive, got {max_dist}")));
    }
    let m = res.n_maturities();
    let n = res.values.len();
    let coords: Vec<[f64; 2]> = (0..n).map(|k| res.coordinate(k / m, k % m)).collect();
    let width = max_dist / n_bins as f64;
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut add = |a: usize, b: usize| {
        let d = ((coords[a][0] - coords[b][0]).powi(2) + (coords[a][1] - coords[b][1]).powi(2)).sqrt();
        if d > 0.0 && d <= max_dist {
            let k = ((d / width) as usize).min(n_bins - 1);
            sums[k] += (res.values[a] - res.values[b]).powi(2);
            counts[k] += 1;
        }
    };
    let total = n * (n.saturating_sub(1)) / 2;
    if total <= MAX_VARIOGRAM_PAIRS {
        for a in 0..n {
            for b in a + 1..n {
                add(a, b);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_VARIOGRAM_PAIRS {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            add(a, b);
        }
    }
    Ok((0..n_bins)
        .map(|k| VariogramBin {
            distance: (k as f64 + 0.5) * width,
            gamma: if counts[k] > 0 { 0.5 * sums[k] / counts[k] as f64 } else { f64::NAN },
            count: counts[k],
        })
        .collect())
}

/// Row-standardized first-order adjacency on an ordered grid of `n` locations.
pub fn adjacency_weights(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let nb: Vec<usize> = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten().collect();
        for &j in &nb {
            w[(i, j)] = 1.0 / nb.len() as f64;
        }
    }
    w
}

fn check_weights(values: &[f64], w: &DMatrix<f64>) -> Result<()> {
    let n = values.len();
    if n < 3 {
        return Err(Error::Validation("spatial statistics need at least 3 locations".into()));
    }
    if w.nrows() != n || w.ncols() != n {
        return Err(Error::Dimension(format!("{}x{} weights for {n} values", w.nrows(), w.ncols())));
    }
    if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || (0..n).any(|i| w[(i, i)] != 0.0) {
        return Err(Error::Validation("weights must be nonnegative with a zero diagonal".into()));
    }
    if w.sum() <= 0.0 {
        return Err(Error::Validation("weights sum to zero".into()));
    }
    Ok(())
}

fn centered(values: &[f64]) -> (Vec<f64>, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let ss = z.iter().map(|v| v * v).sum();
    (z, ss)
}

/// Moran's I; `None` for a constant slice.
pub fn morans_i(values: &[f64], w: &DMatrix<f64>) -> Result<Option<f64>> {
    check_weights(values, w)?;
    let (z, ss) = centered(values);
    if ss <= 0.0 || is_constant(values) {
        return Ok(None);
    }
    let n = z.len();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[(i, j)] * z[i] * z[j];
        }
    }
    Ok(Some(n as f64 / w.sum() * num / ss))
}

/// Geary's C; `None` for a constant slice.
pub fn gearys_c(values: &[f64], w: &DMatrix<f64>) -> Result<Option<f64>> {
    check_weights(values, w)?;
    let (z, ss) = centered(values);
    if ss <= 0.0 || is_constant(values) {
        return Ok(None);
    }
    let n = z.len();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[(i, j)] * (z[i] - z[j]).powi(2);
        }
    }
    Ok(Some((n as f64 - 1.0) / (2.0 * w.sum()) * num / ss))
}

/// Permutation test of Moran's I.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub observed: f64,
    /// Two-sided p-value with the usual +1 correction.
    pub p_value: f64,
    pub permuted: Vec<f64>,
}

pub fn morans_i_permutation(values: &[f64], w: &DMatrix<f64>, n_perm: usize, seed: u64) -> Result<Option<PermutationTest>> {
    let Some(observed) = morans_i(values, w)? else {
        return Ok(None);
    };
    let expected = -1.0 / (values.len() as f64 - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = values.to_vec();
    let mut permuted = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        v.shuffle(&mut rng);
        permuted.push(morans_i(&v, w)?.expect("permutation keeps the variance"));
    }
    let extreme = permuted.iter().filter(|&&x| (x - expected).abs() >= (observed - expected).abs()).count();
    Ok(Some(PermutationTest { observed, p_value: (extreme + 1) as f64 / (n_perm + 1) as f64, permuted }))
}

/// Mean and sd over time slices, with the count of undefined slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceAverage {
    pub mean: f64,
    pub sd: f64,
    pub n_undefined: usize,
}

fn slice_average(vals: &[Option<f64>]) -> SliceAverage {
    let def: Vec<f64> = vals.iter().flatten().copied().collect();
    let n = def.len() as f64;
    let mean = if def.is_empty() { f64::NAN } else { def.iter().sum::<f64>() / n };
    let sd = if def.len() > 1 { (def.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { f64::NAN };
    SliceAverage { mean, sd, n_undefined: vals.len() - def.len() }
}

/// Moran's I per date across maturities, averaged over dates.
pub fn morans_i_over_time(res: &ResidualField, w: &DMatrix<f64>) -> Result<SliceAverage> {
    let vals = (0..res.n_times()).into_par_iter().map(|t| morans_i(res.row(t), w)).collect::<Result<Vec<_>>>()?;
    Ok(slice_average(&vals))
}

pub fn gearys_c_over_time(res: &ResidualField, w: &DMatrix<f64>) -> Result<SliceAverage> {
    let vals = (0..res.n_times()).into_par_iter().map(|t| gearys_c(res.row(t), w)).collect::<Result<Vec<_>>>()?;
    Ok(slice_average(&vals))
}

fn lag1(x: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if den <= 0.0 || is_constant(x) {
        return None;
    }
    let num: f64 = x.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum();
    Some(num / den)
}

/// Lag-1 sample autocorrelation per maturity, averaged across maturities.
pub fn acf1(res: &ResidualField) -> Result<SliceAverage> {
    if res.n_times() < 3 {
        return Err(Error::Validation("lag-1 autocorrelation needs at least 3 dates".into()));
    }
    let vals: Vec<Option<f64>> = (0..res.n_maturities()).map(|j| lag1(&res.column(j))).collect();
    Ok(slice_average(&vals))
}

/// One row of the dependence summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSummary {
    pub model: String,
    pub definition: String,
    /// Mean |off-diagonal| of the maturity correlation matrix.
    pub abs_corr: f64,
    pub morans_i: f64,
    pub gearys_c: f64,
    pub acf1: f64,
    pub morans_i_sd: f64,
    pub gearys_c_sd: f64,
    pub n_undefined: usize,
}

pub fn summarize(res: &ResidualField) -> Result<DiagnosticSummary> {
    let (mat, _) = correlation_matrices(res)?;
    let w = adjacency_weights(res.n_maturities());
    let i = morans_i_over_time(res, &w)?;
    let c = gearys_c_over_time(res, &w)?;
    let a = acf1(res)?;
    Ok(DiagnosticSummary {
        model: res.model.clone(),
        definition: res.definition.as_str().into(),
        abs_corr: mat.mean_abs_off_diagonal().unwrap_or(f64::NAN),
        morans_i: i.mean,
        gearys_c: c.mean,
        acf1: a.mean,
        morans_i_sd: i.sd,
        gearys_c_sd: c.sd,
        n_undefined: mat.n_undefined + i.n_undefined + c.n_undefined + a.n_undefined,
    })
}

/// Summary CSV: model,definition,abs_corr,morans_i,gearys_c,acf1,morans_i_sd,gearys_c_sd,n_undefined.
pub fn summary_csv(rows: &[DiagnosticSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["model", "definition", "abs_corr", "morans_i", "gearys_c", "acf1", "morans_i_sd", "gearys_c_sd", "n_undefined"])?;
    }
    finish_csv(w)
}

pub fn variogram_csv(bins: &[VariogramBin]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for b in bins {
        w.serialize(b)?;
    }
    finish_csv(w)
}
