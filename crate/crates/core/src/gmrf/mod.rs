//! Gaussian Markov random field machinery: sparse algebra, AR(1) precisions,
//! conjugate latent posteriors and the closed-form Gaussian marginal likelihood.

mod cholesky;
mod sparse;

pub use cholesky::{rcm_ordering, Cholesky};
pub use sparse::{gram, CsrMatrix, SparseSymmetric, SymTriplets};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::stats::{logistic, logit, LN_2PI};

/// Upper clamp for the AR(1) coefficient.
pub const PHI_MAX: f64 = 1.0 - 1e-12;

/// Tridiagonal precision of a stationary AR(1) with innovation precision `tau`.
pub fn ar1_precision(n: usize, tau: f64, phi: f64) -> Result<SparseSymmetric> {
    if n == 0 {
        return Err(Error::Domain("AR(1) length must be at least 1".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("AR(1) precision must be positive, got {tau}")));
    }
    if !(phi.abs() < 1.0) {
        return Err(Error::Domain(format!("AR(1) coefficient {phi} is not stationary")));
    }
    if n == 1 {
        return Ok(SparseSymmetric::diagonal_matrix(&[tau * (1.0 - phi * phi)]));
    }
    let mut t = SymTriplets::with_capacity(n, 2 * n);
    for i in 0..n {
        let d = if i == 0 || i == n - 1 { tau } else { tau * (1.0 + phi * phi) };
        t.push(i, i, d);
        if i + 1 < n && phi != 0.0 {
            t.push(i, i + 1, -tau * phi);
        }
    }
    t.finalize()
}

/// (θ₁, θ₂) ↦ (τ, φ) = (exp θ₁, logistic θ₂).
pub fn hyper_transform_ar1(theta1: f64, theta2: f64) -> (f64, f64) {
    (theta1.exp(), logistic(theta2).min(PHI_MAX))
}

pub fn inverse_transform_ar1(tau: f64, phi: f64) -> (f64, f64) {
    (tau.ln(), logit(phi))
}

/// Latent posterior of a conjugate Gaussian model.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub precision: SparseSymmetric,
    pub factor: Cholesky,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Var(gᵀx).
    pub fn variance_of(&self, g: &[f64]) -> f64 {
        self.factor.inv_quad(g)
    }

    /// Cov(x_i, x_j) for the requested index pairs, one solve per distinct column.
    pub fn covariance_columns(&self, cols: &[usize]) -> Vec<Vec<f64>> {
        cols.iter()
            .map(|&c| {
                let mut e = vec![0.0; self.dim()];
                e[c] = 1.0;
                self.factor.solve(&e)
            })
            .collect()
    }

    pub fn marginal_variance(&self, i: usize) -> f64 {
        let mut e = vec![0.0; self.dim()];
        e[i] = 1.0;
        self.factor.inv_quad(&e)
    }
}

fn check_dims(q: &SparseSymmetric, a: &CsrMatrix, qn: &SparseSymmetric, y: &[f64]) -> Result<()> {
    if a.ncols() != q.dim() || a.nrows() != y.len() || qn.dim() != y.len() {
        return Err(Error::Dimension(format!(
            "prior {}, projection {}x{}, noise {}, data {}",
            q.dim(),
            a.nrows(),
            a.ncols(),
            qn.dim(),
            y.len()
        )));
    }
    Ok(())
}

/// Q_post = AᵀQ_εA + Q and μ = Q_post⁻¹AᵀQ_εy.
pub fn gaussian_posterior(
    q: &SparseSymmetric,
    a: &CsrMatrix,
    qn: &SparseSymmetric,
    y: &[f64],
) -> Result<GaussianPosterior> {
    check_dims(q, a, qn, y)?;
    let precision = qn.congruence(a)?.add_scaled(1.0, q, 1.0)?;
    let factor = Cholesky::factor(&precision)?;
    let rhs = a.tmatvec(&qn.matvec(y));
    let mean = factor.solve(&rhs);
    Ok(GaussianPosterior { mean, precision, factor })
}

/// Log marginal likelihood log π(y) with the latent field integrated out.
pub fn log_marginal_likelihood(
    q: &SparseSymmetric,
    a: &CsrMatrix,
    qn: &SparseSymmetric,
    y: &[f64],
) -> Result<f64> {
    let post = gaussian_posterior(q, a, qn, y)?;
    let ld_q = Cholesky::factor(q)?.log_det();
    let ld_n = Cholesky::factor(qn)?.log_det();
    let resid: Vec<f64> = y.iter().zip(a.matvec(&post.mean)).map(|(y, f)| y - f).collect();
    Ok(assemble_lml(
        y.len(),
        ld_q,
        ld_n,
        post.factor.log_det(),
        q.quad_form(&post.mean),
        qn.quad_form(&resid),
    ))
}

fn assemble_lml(n: usize, ld_q: f64, ld_n: f64, ld_post: f64, prior_quad: f64, resid_quad: f64) -> f64 {
    -0.5 * n as f64 * LN_2PI + 0.5 * ld_q + 0.5 * ld_n - 0.5 * ld_post - 0.5 * prior_quad - 0.5 * resid_quad
}

/// Precomputed data summaries for the common case Q_ε = s·I.
#[derive(Debug, Clone)]
pub struct IsoNoiseData {
    pub ata: SparseSymmetric,
    pub aty: Vec<f64>,
    pub yty: f64,
    pub n: usize,
}

impl IsoNoiseData {
    pub fn new(a: &CsrMatrix, y: &[f64]) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::Dimension("projection rows differ from data length".into()));
        }
        Ok(Self {
            ata: gram(a)?,
            aty: a.tmatvec(y),
            yty: y.iter().map(|v| v * v).sum(),
            n: y.len(),
        })
    }

    /// Posterior and log marginal likelihood given the prior precision, its
    /// log-determinant and the noise precision `s`.
    pub fn evaluate(&self, q: &SparseSymmetric, ld_q: f64, s: f64) -> Result<(GaussianPosterior, f64)> {
        if q.dim() != self.ata.dim() {
            return Err(Error::Dimension(format!(
                "prior dimension {} vs projection columns {}",
                q.dim(),
                self.ata.dim()
            )));
        }
        let precision = q.add_scaled(1.0, &self.ata, s)?;
        let factor = Cholesky::factor(&precision)?;
        let rhs: Vec<f64> = self.aty.iter().map(|v| s * v).collect();
        let mean = factor.solve(&rhs);
        let ata_mu = self.ata.quad_form(&mean);
        let mu_aty: f64 = mean.iter().zip(&self.aty).map(|(a, b)| a * b).sum();
        let resid_quad = s * (self.yty - 2.0 * mu_aty + ata_mu).max(0.0);
        let lml = assemble_lml(
            self.n,
            ld_q,
            self.n as f64 * s.ln(),
            factor.log_det(),
            q.quad_form(&mean),
            resid_quad,
        );
        Ok((GaussianPosterior { mean, precision, factor }, lml))
    }
}

/// `count` draws from the posterior, one row per draw; deterministic in `seed`.
pub fn sample_posterior(post: &GaussianPosterior, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..post.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
            post.factor
                .sample_transform(&z)
                .iter()
                .zip(&post.mean)
                .map(|(d, m)| d + m)
                .collect()
        })
        .collect()
}
