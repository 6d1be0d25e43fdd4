//! Nelson–Siegel loadings, the observation matrix A(λ) and the latent-λ map.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_pdf, norm_quantile};

/// Decay used by the fixed-λ baseline (1/months).
pub const BASELINE_LAMBDA: f64 = 0.0609;

const SERIES_THRESHOLD: f64 = 1e-4;
const PROB_EPS: f64 = 1e-12;

fn check(lambda: f64, m: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::Domain(format!("maturity must be positive, got {m}")));
    }
    Ok(())
}

/// (1 - e^{-x}) / x.
fn slope_of(x: f64) -> f64 {
    if x < SERIES_THRESHOLD {
        1.0 - x / 2.0 + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// d/dx of (1 - e^{-x}) / x.
fn slope_prime(x: f64) -> f64 {
    if x < 0.5 {
        // sum_{k>=1} (-1)^k k x^{k-1} / (k+1)!
        let mut term = 1.0; // x^{k-1}/(k+1)! at k = 1 is 1/2, built incrementally
        let mut fact = 2.0;
        let mut acc = 0.0;
        for k in 1..30 {
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            acc += sign * k as f64 * term / fact;
            term *= x;
            fact *= (k + 2) as f64;
        }
        acc
    } else {
        ((-x).exp() * (x + 1.0) - 1.0) / (x * x)
    }
}

/// Level, slope and curvature loadings at maturity `m` (months).
pub fn loading_row(lambda: f64, m: f64) -> Result<[f64; 3]> {
    check(lambda, m)?;
    let x = lambda * m;
    let s = slope_of(x);
    // curvature = s - e^{-x}; for tiny x use its own series to avoid cancellation
    let c = if x < SERIES_THRESHOLD {
        x / 2.0 - x * x / 3.0
    } else {
        s - (-x).exp()
    };
    Ok([1.0, s, c])
}

/// Derivatives of the slope and curvature loadings with respect to λ.
pub fn loading_gradient(lambda: f64, m: f64) -> Result<(f64, f64)> {
    check(lambda, m)?;
    let x = lambda * m;
    let ds = slope_prime(x);
    Ok((m * ds, m * (ds + (-x).exp())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NsLoadings {
    pub lambda: f64,
    pub maturities: Vec<f64>,
    /// One `[level, slope, curvature]` row per maturity.
    pub matrix: Vec<[f64; 3]>,
}

impl NsLoadings {
    pub fn rows(&self) -> usize {
        self.matrix.len()
    }
}

pub fn observation_matrix(lambda: f64, maturities: &[f64]) -> Result<NsLoadings> {
    if maturities.is_empty() {
        return Err(Error::Domain("no maturities given".into()));
    }
    let matrix = maturities
        .iter()
        .map(|&m| loading_row(lambda, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(NsLoadings {
        lambda,
        maturities: maturities.to_vec(),
        matrix,
    })
}

impl NsLoadings {
    /// Cross-sectional least-squares factors, one `[level, slope, curvature]` per row of
    /// the row-major `yields` block.
    pub fn ols_factors(&self, yields: &[f64]) -> Result<Vec<[f64; 3]>> {
        let m = self.rows();
        if m < 3 {
            return Err(Error::Regression(format!("need at least 3 maturities, got {m}")));
        }
        if yields.len() % m != 0 {
            return Err(Error::Dimension(format!("{} values do not split into rows of {m}", yields.len())));
        }
        let mut xtx = nalgebra::Matrix3::<f64>::zeros();
        for r in &self.matrix {
            for a in 0..3 {
                for b in 0..3 {
                    xtx[(a, b)] += r[a] * r[b];
                }
            }
        }
        let chol = xtx
            .cholesky()
            .ok_or_else(|| Error::Regression("loading matrix is rank deficient".into()))?;
        Ok(yields
            .chunks(m)
            .map(|row| {
                let mut xty = nalgebra::Vector3::<f64>::zeros();
                for (r, y) in self.matrix.iter().zip(row) {
                    for a in 0..3 {
                        xty[a] += r[a] * y;
                    }
                }
                let b = chol.solve(&xty);
                [b[0], b[1], b[2]]
            })
            .collect())
    }

    /// Fitted curve for one factor vector.
    pub fn curve(&self, beta: &[f64; 3]) -> Vec<f64> {
        self.matrix.iter().map(|r| r[0] * beta[0] + r[1] * beta[1] + r[2] * beta[2]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaFamily {
    Lognormal,
    Gamma,
}

/// Prior on λ parameterized by its mean plus a cv (lognormal) or shape (gamma).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPrior {
    pub family: LambdaFamily,
    pub mean: f64,
    pub shape_or_cv: f64,
}

impl LambdaPrior {
    pub fn lognormal(mean: f64, cv: f64) -> Self {
        Self { family: LambdaFamily::Lognormal, mean, shape_or_cv: cv }
    }

    pub fn gamma(mean: f64, shape: f64) -> Self {
        Self { family: LambdaFamily::Gamma, mean, shape_or_cv: shape }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0 && self.mean.is_finite()) {
            return Err(Error::Validation(format!("lambda prior mean must be positive, got {}", self.mean)));
        }
        if !(self.shape_or_cv > 0.0 && self.shape_or_cv.is_finite()) {
            return Err(Error::Validation(format!(
                "lambda prior cv/shape must be positive, got {}",
                self.shape_or_cv
            )));
        }
        Ok(())
    }

    /// (mu_log, sigma_log) of the lognormal family.
    fn lognormal_params(&self) -> (f64, f64) {
        let s2 = (1.0 + self.shape_or_cv * self.shape_or_cv).ln();
        (self.mean.ln() - s2 / 2.0, s2.sqrt())
    }

    /// (shape, rate) of the gamma family.
    fn gamma_params(&self) -> (f64, f64) {
        (self.shape_or_cv, self.shape_or_cv / self.mean)
    }

    pub fn cdf(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        match self.family {
            LambdaFamily::Lognormal => {
                let (mu, s) = self.lognormal_params();
                norm_cdf((lambda.ln() - mu) / s)
            }
            LambdaFamily::Gamma => {
                let (a, b) = self.gamma_params();
                gamma_lr(a, b * lambda)
            }
        }
    }

    pub fn pdf(&self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        match self.family {
            LambdaFamily::Lognormal => {
                let (mu, s) = self.lognormal_params();
                norm_pdf((lambda.ln() - mu) / s) / (s * lambda)
            }
            LambdaFamily::Gamma => {
                let (a, b) = self.gamma_params();
                (a * b.ln() + (a - 1.0) * lambda.ln() - b * lambda - ln_gamma(a)).exp()
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        match self.family {
            LambdaFamily::Lognormal => {
                let (mu, s) = self.lognormal_params();
                (mu + s * norm_quantile(p)).exp()
            }
            LambdaFamily::Gamma => gamma_quantile(self.gamma_params(), p),
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

/// Newton iteration on the regularized lower incomplete gamma, safeguarded by bisection.
fn gamma_quantile((a, b): (f64, f64), p: f64) -> f64 {
    // work in the unit-rate variable z = b * λ
    let (mut lo, mut hi) = (0.0_f64, a.max(1.0));
    while gamma_lr(a, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    // Wilson–Hilferty start
    let zq = norm_quantile(p);
    let wh = a * (1.0 - 1.0 / (9.0 * a) + zq / (3.0 * a.sqrt())).powi(3);
    let mut z = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let f = gamma_lr(a, z) - p;
        if f > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let dens = ((a - 1.0) * z.ln() - z - ln_gamma(a)).exp();
        let mut next = if dens > 0.0 { z - f / dens } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * z.max(1e-300) {
            z = next;
            break;
        }
        z = next;
    }
    z / b
}

/// λ = g(Φ(λ̃)) and dλ/dλ̃, with g the prior quantile function.
pub fn lambda_from_latent(tilde: f64, prior: &LambdaPrior) -> (f64, f64) {
    let p = norm_cdf(tilde);
    let lambda = prior.quantile(p);
    let saturated = !(PROB_EPS..=1.0 - PROB_EPS).contains(&p);
    let deriv = if saturated {
        0.0
    } else {
        norm_pdf(tilde) / prior.pdf(lambda)
    };
    (lambda, deriv)
}

/// Inverse of [`lambda_from_latent`].
pub fn latent_from_lambda(lambda: f64, prior: &LambdaPrior) -> f64 {
    norm_quantile(prior.cdf(lambda).clamp(PROB_EPS, 1.0 - PROB_EPS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const M17: [f64; 17] = crate::dataio::PAPER_MATURITIES;

    #[test]
    fn curvature_peak_near_thirty_months() {
        let arg = (1..=120)
            .map(|m| (m, loading_row(BASELINE_LAMBDA, m as f64).unwrap()[2]))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert!((28..=32).contains(&arg), "peak at {arg}");
    }

    #[test]
    fn small_argument_limit() {
        let r = loading_row(1e-9, 1.0).unwrap();
        assert_eq!(r[0], 1.0);
        assert!((r[1] - 1.0).abs() < 1e-9);
        assert!(r[2].abs() < 1e-9);
    }

    #[test]
    fn slope_at_ten_years_matches_high_precision() {
        // (1 - e^{-7.308}) / 7.308 evaluated with 40-digit arithmetic
        let oracle = 0.136_744_642_032_744_631_645_694_879_633_915_052;
        let s = loading_row(0.0609, 120.0).unwrap()[1];
        assert!((s - oracle).abs() < 1e-15);
    }

    #[test]
    fn observation_matrix_shapes() {
        let a = observation_matrix(BASELINE_LAMBDA, &M17).unwrap();
        assert_eq!(a.rows(), 17);
        assert!(a.matrix.iter().all(|r| r[0] == 1.0));
        assert_eq!(observation_matrix(0.0609, &[3.0]).unwrap().rows(), 1);
        let b = observation_matrix(0.0609, &[3.0, 120.0]).unwrap();
        assert!(b.matrix[0][1] > b.matrix[1][1]);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(loading_row(0.0, 3.0), Err(Error::Domain(_))));
        assert!(matches!(loading_row(0.1, -1.0), Err(Error::Domain(_))));
        assert!(loading_gradient(-0.1, 3.0).is_err());
        assert!(observation_matrix(0.1, &[]).is_err());
    }

    fn central(lambda: f64, m: f64, col: usize) -> f64 {
        let h = 1e-6;
        (loading_row(lambda + h, m).unwrap()[col] - loading_row(lambda - h, m).unwrap()[col]) / (2.0 * h)
    }

    #[test]
    fn gradient_matches_finite_differences_on_grid() {
        for i in 0..20 {
            let lambda = 0.01 + 0.19 * i as f64 / 19.0;
            for j in 0..20 {
                let m = 1.0 + 119.0 * j as f64 / 19.0;
                let (ds, dc) = loading_gradient(lambda, m).unwrap();
                for (an, col) in [(ds, 1), (dc, 2)] {
                    let fd = central(lambda, m, col);
                    let rel = (an - fd).abs() / fd.abs().max(1e-8);
                    assert!(rel < 1e-5, "lambda={lambda} m={m} col={col} rel={rel}");
                }
            }
        }
        let (ds, _) = loading_gradient(0.0609, 24.0).unwrap();
        assert!((ds - central(0.0609, 24.0, 1)).abs() / ds.abs() < 1e-6);
        assert!(loading_gradient(0.0609, 120.0).unwrap().0 < 0.0);
    }

    #[test]
    fn lognormal_median_at_zero() {
        let p = LambdaPrior::lognormal(0.068, 0.19);
        let (l, d) = lambda_from_latent(0.0, &p);
        let expect = 0.068 / (1.0_f64 + 0.19 * 0.19).sqrt();
        assert!((l - expect).abs() < 1e-14);
        assert!(d > 0.0);
    }

    #[test]
    fn gamma_median_matches_bisection() {
        let p = LambdaPrior::gamma(0.068, 4.0);
        let (l, _) = lambda_from_latent(0.0, &p);
        // independent inversion: plain bisection on the regularized incomplete gamma
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if gamma_lr(4.0, mid * 4.0 / 0.068) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((l - 0.5 * (lo + hi)).abs() < 1e-12);
        assert!((l - 0.062_425_032_730_465_23).abs() < 1e-11);
    }

    #[test]
    fn latent_map_is_monotone_with_correct_derivative() {
        for prior in [LambdaPrior::lognormal(0.068, 0.19), LambdaPrior::gamma(0.068, 4.0)] {
            let l = |t| lambda_from_latent(t, &prior).0;
            assert!(l(-1.0) < l(0.0) && l(0.0) < l(1.0));
            for t in [-2.0, -0.3, 0.0, 0.8, 2.5] {
                let h = 1e-5;
                let fd = (l(t + h) - l(t - h)) / (2.0 * h);
                let an = lambda_from_latent(t, &prior).1;
                assert!((fd - an).abs() / an < 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn loading_shape_invariants(lambda in 0.01f64..0.2) {
            let rows: Vec<[f64; 3]> = (1..=120).map(|m| loading_row(lambda, m as f64).unwrap()).collect();
            let mut sign_changes = 0;
            let mut prev_sign = 0.0f64;
            for w in rows.windows(2) {
                prop_assert!(w[0][1] > 0.0 && w[0][1] <= 1.0);
                prop_assert!(w[1][1] < w[0][1]);
                prop_assert!(w[0][2] >= 0.0 && w[0][2] < 0.4);
                let d = (w[1][2] - w[0][2]).signum();
                if prev_sign != 0.0 && d != prev_sign {
                    sign_changes += 1;
                }
                prev_sign = d;
            }
            prop_assert!(sign_changes <= 1);
        }

        #[test]
        fn latent_round_trip(lambda in 0.02f64..0.15, gamma in any::<bool>()) {
            let prior = if gamma { LambdaPrior::gamma(0.068, 4.0) } else { LambdaPrior::lognormal(0.068, 0.19) };
            let t = latent_from_lambda(lambda, &prior);
            let back = lambda_from_latent(t, &prior).0;
            prop_assert!((back - lambda).abs() < 1e-10, "{} vs {}", back, lambda);
        }
    }

    #[test]
    fn ols_recovers_exact_factors() {
        let mats = [3.0, 6.0, 12.0, 24.0, 60.0, 120.0];
        let l = observation_matrix(BASELINE_LAMBDA, &mats).unwrap();
        let truth = [[5.0, -1.5, 0.7], [4.2, 0.3, -2.0]];
        let y: Vec<f64> = truth.iter().flat_map(|b| l.curve(b)).collect();
        let est = l.ols_factors(&y).unwrap();
        for (e, t) in est.iter().zip(&truth) {
            for k in 0..3 {
                assert!((e[k] - t[k]).abs() < 1e-10);
            }
        }
        let short = observation_matrix(BASELINE_LAMBDA, &mats[..2]).unwrap();
        assert!(matches!(short.ols_factors(&[1.0, 2.0]), Err(Error::Regression(_))));
    }
}
