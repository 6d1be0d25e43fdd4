//! Sparse precision representations of the residual Gaussian fields:
//! stationary, nonstationary and anisotropic spatial fields (fractional
//! smoothness through a rational approximation) and the nonseparable
//! spatio-temporal field driven by a backward-Euler discretization.
//!
//! Mass matrices are lumped (C̃) wherever they enter precision products.

pub mod rational;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fem::{assemble, AssembledOperators, Mesh, Tensor2};
use crate::gmrf::{CsrMatrix, SparseSymmetric, SymTriplets};
use rational::{best_rational, PartialFractions};

pub use rational::RationalApprox;

/// Default order of the rational approximation.
pub const RATIONAL_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldVariant {
    Stationary,
    Nonstationary,
    Anisotropic,
    Spatiotemporal,
}

impl FieldVariant {
    pub const ALL: [FieldVariant; 4] = [
        FieldVariant::Stationary,
        FieldVariant::Nonstationary,
        FieldVariant::Anisotropic,
        FieldVariant::Spatiotemporal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FieldVariant::Stationary => "stationary",
            FieldVariant::Nonstationary => "nonstationary",
            FieldVariant::Anisotropic => "anisotropic",
            FieldVariant::Spatiotemporal => "spatiotemporal",
        }
    }
}

/// Field hyperparameters on their natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldHyper {
    pub variant: FieldVariant,
    /// Matérn practical range √(8ν)/κ in scaled units.
    pub range: f64,
    /// Marginal sd (spatial variants) or noise amplitude (spatio-temporal).
    pub sigma: f64,
    pub alpha: f64,
    /// Nonstationary log-linear coefficients: log ρ = γ₀+γ₂t+γ₄m, log σ = γ₁+γ₃t+γ₅m.
    pub gammas: [f64; 6],
    /// Anisotropy stretch u and rotation θ: H = R(θ) diag(e^{2u}, e^{-2u}) R(θ)ᵀ.
    pub aniso_u: f64,
    pub aniso_theta: f64,
    /// Temporal evolution rate.
    pub gamma_t: f64,
}

impl FieldHyper {
    pub fn stationary(range: f64, sigma: f64, alpha: f64) -> Self {
        Self {
            variant: FieldVariant::Stationary,
            range,
            sigma,
            alpha,
            gammas: [range.ln(), sigma.ln(), 0.0, 0.0, 0.0, 0.0],
            aniso_u: 0.0,
            aniso_theta: 0.0,
            gamma_t: 1.0,
        }
    }

    pub fn with_variant(mut self, variant: FieldVariant) -> Self {
        self.variant = variant;
        self
    }

    /// Check the declared invariants for spatial dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self.variant {
            FieldVariant::Spatiotemporal => {
                pos(self.range, "range")?;
                pos(self.sigma, "sigma")?;
                pos(self.gamma_t, "gamma_t")?;
                if self.alpha != 1.0 && self.alpha != 2.0 {
                    return Err(Error::Domain(format!(
                        "spatio-temporal alpha must be 1 or 2, got {}",
                        self.alpha
                    )));
                }
            }
            FieldVariant::Nonstationary => {
                if self.gammas.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Domain("nonstationary coefficients must be finite".into()));
                }
            }
            _ => {
                pos(self.range, "range")?;
                pos(self.sigma, "sigma")?;
                if !(self.aniso_u.is_finite() && self.aniso_theta.is_finite()) {
                    return Err(Error::Domain("anisotropy parameters must be finite".into()));
                }
            }
        }
        if !(self.alpha > d as f64 / 2.0) || !self.alpha.is_finite() {
            return Err(Error::Domain(format!(
                "alpha {} must exceed d/2 = {} for finite variance",
                self.alpha,
                d as f64 / 2.0
            )));
        }
        Ok(())
    }
}

/// Smoothness ν = α − d/2.
pub fn smoothness(alpha: f64, d: usize) -> f64 {
    alpha - d as f64 / 2.0
}

pub fn kappa_from_range(range: f64, nu: f64) -> f64 {
    (8.0 * nu).sqrt() / range
}

pub fn range_from_kappa(kappa: f64, nu: f64) -> f64 {
    (8.0 * nu).sqrt() / kappa
}

/// τ such that the Matérn field has marginal sd σ.
pub fn tau_from_sigma(sigma: f64, kappa: f64, alpha: f64, d: usize) -> f64 {
    let nu = smoothness(alpha, d);
    let log_tau = 0.5 * (ln_gamma(nu) - ln_gamma(alpha) - d as f64 / 2.0 * (4.0 * std::f64::consts::PI).ln())
        - sigma.ln()
        - nu * kappa.ln();
    log_tau.exp()
}

/// Unit-determinant anisotropy tensor.
pub fn aniso_tensor(u: f64, theta: f64) -> Tensor2 {
    let (c, s) = (theta.cos(), theta.sin());
    let (e1, e2) = ((2.0 * u).exp(), (-2.0 * u).exp());
    Tensor2 {
        a: c * c * e1 + s * s * e2,
        b: c * s * (e1 - e2),
        d: s * s * e1 + c * c * e2,
    }
}

/// Latent Gaussian representation of a field on mesh vertices.
#[derive(Debug, Clone)]
pub struct FieldRepresentation {
    /// Prior precision of the latent vector.
    pub precision: SparseSymmetric,
    /// Maps the latent vector to field values (vertices, or vertices × times).
    pub eval: CsrMatrix,
    /// Number of rational terms (1 for integer smoothness).
    pub n_terms: usize,
    /// Sup-norm error of the rational approximation (0 for integer paths).
    pub approx_error: f64,
    /// Temporal structure of the spatio-temporal variant.
    pub dynamics: Option<Dynamics>,
}

impl FieldRepresentation {
    pub fn latent_dim(&self) -> usize {
        self.precision.dim()
    }

    pub fn n_values(&self) -> usize {
        self.eval.nrows()
    }
}

/// One-step propagator u_{t+1} = P u_t + P ξ with Cov(ξ) = W.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub n_space: usize,
    pub n_times: usize,
    pub propagator: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub stationary_cov: DMatrix<f64>,
}

impl Dynamics {
    /// Mean map and accumulated noise covariance after `h` steps.
    pub fn propagate(&self, h: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_space;
        let mut g = DMatrix::identity(n, n);
        let mut v = DMatrix::zeros(n, n);
        for _ in 0..h {
            g = &self.propagator * g;
            v = &self.propagator * (v + &self.noise_cov) * self.propagator.transpose();
        }
        (g, v)
    }
}

fn plus_diag(g: &SparseSymmetric, d: &[f64]) -> Result<SparseSymmetric> {
    g.add_scaled(1.0, &SparseSymmetric::diagonal_matrix(d), 1.0)
}

/// A · diag(w) · B for symmetric A, B (result symmetrized from its upper triangle).
fn sandwich(a: &SparseSymmetric, w: &[f64], b: &SparseSymmetric) -> Result<SparseSymmetric> {
    let ones = vec![1.0; w.len()];
    let left = a.csr().scale_rows_cols(&ones, w);
    SparseSymmetric::from_csr_upper(&left.matmul(b.csr())?)
}

/// P_j = C̃ (C̃⁻¹K)^j for j = 0..=max.
fn operator_powers(k: &SparseSymmetric, c: &[f64], max: usize) -> Result<Vec<SparseSymmetric>> {
    let cinv: Vec<f64> = c.iter().map(|v| 1.0 / v).collect();
    let mut out = vec![SparseSymmetric::diagonal_matrix(c)];
    if max >= 1 {
        out.push(k.clone());
    }
    for j in 2..=max {
        let next = sandwich(k, &cinv, &out[j - 1])?;
        out.push(next);
    }
    Ok(out)
}

/// Upper Gershgorin bound of the spectrum of C̃⁻¹K.
fn spectral_max(k: &SparseSymmetric, c: &[f64]) -> f64 {
    (0..k.dim())
        .map(|i| k.row(i).1.iter().map(|v| v.abs()).sum::<f64>() / c[i])
        .fold(0.0, f64::max)
}

/// Field with precision built from K = D + G (D the κ²-weighted lumped mass),
/// smoothness α (possibly fractional) and per-vertex scaling τ.
fn build_spatial(
    k: &SparseSymmetric,
    c: &[f64],
    lambda_min: f64,
    alpha: f64,
    tau: &[f64],
    order: usize,
) -> Result<FieldRepresentation> {
    let n = k.dim();
    let floor = alpha.floor();
    let frac = alpha - floor;
    let f = floor as usize;
    if frac.abs() < 1e-12 || (1.0 - frac).abs() < 1e-12 {
        let a = alpha.round() as usize;
        if a == 0 {
            return Err(Error::Domain("alpha must be at least 1 on the integer path".into()));
        }
        let powers = operator_powers(k, c, a)?;
        return Ok(FieldRepresentation {
            precision: powers[a].congruence_diag(tau),
            eval: CsrMatrix::identity(n),
            n_terms: 1,
            approx_error: 0.0,
            dynamics: None,
        });
    }
    let lambda_max = spectral_max(k, c).max(lambda_min);
    if !(lambda_min > 0.0 && lambda_max.is_finite()) {
        return Err(Error::Approximation(format!(
            "invalid spectral interval [{lambda_min}, {lambda_max}]"
        )));
    }
    let approx = best_rational(frac, lambda_min / lambda_max, order)?;
    let pf: PartialFractions = approx.partial_fractions(lambda_min)?;
    let powers = operator_powers(k, c, f + 1)?;
    let mut blocks = Vec::with_capacity(pf.poles.len() + 1);
    for (&p, &r) in pf.poles.iter().zip(&pf.residues) {
        // (K − pC̃)(C̃⁻¹K)^f / r
        let q = powers[f + 1].add_scaled(1.0 / r, &powers[f], -p / r)?;
        blocks.push(q.congruence_diag(tau));
    }
    blocks.push(powers[f].scale(1.0 / pf.k).congruence_diag(tau));
    let refs: Vec<&SparseSymmetric> = blocks.iter().collect();
    let precision = SparseSymmetric::block_diag(&refs)?;
    let terms = blocks.len();
    let trips: Vec<_> = (0..terms).flat_map(|b| (0..n).map(move |i| (i, b * n + i, 1.0))).collect();
    Ok(FieldRepresentation {
        precision,
        eval: CsrMatrix::from_triplets(n, n * terms, &trips)?,
        n_terms: terms,
        approx_error: approx.max_error,
        dynamics: None,
    })
}

fn check_pos(v: f64, name: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive, got {v}")))
    }
}

/// Stationary isotropic field, Q ∝ τ² C̃(C̃⁻¹K)^α with K = κ²C̃ + G.
/// Fractional α is routed to [`rational_precision`].
pub fn stationary_precision(ops: &AssembledOperators, kappa: f64, tau: f64, alpha: f64) -> Result<FieldRepresentation> {
    rational_precision(ops, kappa, tau, alpha, RATIONAL_ORDER)
}

/// Stationary field with fractional smoothness through an order-`order` rational approximation.
pub fn rational_precision(
    ops: &AssembledOperators,
    kappa: f64,
    tau: f64,
    alpha: f64,
    order: usize,
) -> Result<FieldRepresentation> {
    check_pos(kappa, "kappa")?;
    check_pos(tau, "tau")?;
    check_pos(alpha, "alpha")?;
    let c = &ops.c_lumped;
    let d: Vec<f64> = c.iter().map(|v| kappa * kappa * v).collect();
    let k = plus_diag(&ops.g, &d)?;
    let taus = vec![tau; c.len()];
    build_spatial(&k, c, kappa * kappa, alpha, &taus, order)
}

/// Nonstationary field: κ per element centroid, τ per vertex, both from log-linear
/// range/sd surfaces in the scaled mesh coordinates.
pub fn nonstationary_precision(
    mesh: &Mesh,
    ops: &AssembledOperators,
    gammas: &[f64; 6],
    alpha: f64,
    order: usize,
) -> Result<FieldRepresentation> {
    let d = mesh.dim;
    let nu = smoothness(alpha, d);
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("alpha {alpha} gives non-positive smoothness")));
    }
    let log_range = |p: [f64; 2]| gammas[0] + gammas[2] * p[0] + gammas[4] * p[1];
    let log_sigma = |p: [f64; 2]| gammas[1] + gammas[3] * p[0] + gammas[5] * p[1];
    let n = mesh.n_vertices();
    let share = if d == 1 { 2.0 } else { 3.0 };
    let mut mass = vec![0.0; n];
    let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
    for (e, el) in mesh.elements.iter().enumerate() {
        let rho = log_range(mesh.centroid(e)).exp();
        rmin = rmin.min(rho);
        rmax = rmax.max(rho);
        let k2 = 8.0 * nu / (rho * rho);
        let w = mesh.element_measure(e) / share;
        for &v in &el[..share as usize] {
            mass[v] += k2 * w;
        }
    }
    if mesh.elements.is_empty() {
        let rho = log_range(mesh.vertices[0]).exp();
        mass[0] = 8.0 * nu / (rho * rho) * ops.c_lumped[0];
    }
    if rmax / rmin > 1e3 {
        log::warn!("nonstationary range varies by {:.1e}x across the mesh; precision may be ill-conditioned", rmax / rmin);
    }
    let c = &ops.c_lumped;
    let lambda_min = mass.iter().zip(c).map(|(m, c)| m / c).fold(f64::INFINITY, f64::min);
    let tau: Vec<f64> = mesh
        .vertices
        .iter()
        .map(|&p| {
            let kappa = (8.0 * nu).sqrt() / log_range(p).exp();
            tau_from_sigma(log_sigma(p).exp(), kappa, alpha, d)
        })
        .collect();
    let k = plus_diag(&ops.g, &mass)?;
    build_spatial(&k, c, lambda_min, alpha, &tau, order)
}

/// Anisotropic stationary field: stiffness assembled with H = R(θ)diag(e^{2u},e^{-2u})R(θ)ᵀ.
pub fn anisotropic_precision(
    mesh: &Mesh,
    kappa: f64,
    tau: f64,
    alpha: f64,
    u: f64,
    theta: f64,
    order: usize,
) -> Result<(FieldRepresentation, AssembledOperators)> {
    let ops = assemble(mesh, &aniso_tensor(u, theta))?;
    let field = rational_precision(&ops, kappa, tau, alpha, order)?;
    Ok((field, ops))
}

/// Maturity-mesh operators plus the spectral decomposition of C̃^{-1/2}GC̃^{-1/2}.
#[derive(Debug, Clone)]
pub struct TemporalOperators {
    pub mesh: Mesh,
    pub ops: AssembledOperators,
    eig_vals: Vec<f64>,
    eig_vecs: DMatrix<f64>,
}

impl TemporalOperators {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let ops = assemble(&mesh, &Tensor2::IDENTITY)?;
        let n = mesh.n_vertices();
        let c = &ops.c_lumped;
        let mut g = ops.g.to_dense();
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] /= (c[i] * c[j]).sqrt();
            }
        }
        let eig = SymmetricEigen::new(g);
        Ok(Self {
            mesh,
            ops,
            eig_vals: eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            eig_vecs: eig.eigenvectors,
        })
    }

    pub fn n_space(&self) -> usize {
        self.mesh.n_vertices()
    }

    /// C̃^{-1/2} V diag(f(λ)) Vᵀ C̃^{±1/2} style products.
    fn spectral(&self, f: impl Fn(f64) -> f64, left: f64, right: f64) -> DMatrix<f64> {
        let n = self.n_space();
        let c = &self.ops.c_lumped;
        let v = &self.eig_vecs;
        let mut scaled = v.clone();
        for k in 0..n {
            let fk = f(self.eig_vals[k]);
            for i in 0..n {
                scaled[(i, k)] *= fk;
            }
        }
        let mut out = scaled * v.transpose();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] *= c[i].powf(left) * c[j].powf(right);
            }
        }
        out
    }
}

/// Block-tridiagonal precision of the backward-Euler discretization of
/// du/dt + γ(κ² − Δ)^α u = dW (β = 1, Δt = 1 month), time-major ordering.
pub fn spatiotemporal_precision(
    temporal: &TemporalOperators,
    n_times: usize,
    kappa: f64,
    gamma_t: f64,
    sigma: f64,
    alpha: f64,
) -> Result<FieldRepresentation> {
    check_pos(kappa, "kappa")?;
    check_pos(gamma_t, "gamma_t")?;
    check_pos(sigma, "sigma")?;
    if alpha != 1.0 && alpha != 2.0 {
        return Err(Error::Domain(format!("spatio-temporal alpha must be 1 or 2, got {alpha}")));
    }
    if n_times == 0 {
        return Err(Error::Domain("need at least one time point".into()));
    }
    const DT: f64 = 1.0;
    let nv = temporal.n_space();
    let c = &temporal.ops.c_lumped;
    let k2 = kappa * kappa;
    let k = plus_diag(&temporal.ops.g, &c.iter().map(|v| k2 * v).collect::<Vec<_>>())?;
    let powers = operator_powers(&k, c, alpha as usize)?;
    let k_alpha = &powers[alpha as usize];
    let m = SparseSymmetric::diagonal_matrix(c).add_scaled(1.0, k_alpha, DT * gamma_t)?;
    let cinv: Vec<f64> = c.iter().map(|v| 1.0 / v).collect();
    let b = m.csr().scale_rows_cols(&cinv, &vec![1.0; nv]);
    let qw = k.scale(1.0 / (sigma * sigma * DT));
    let btqb = qw.congruence(&b)?;
    let qwb = qw.csr().matmul(&b)?;

    // exact stationary law of the recursion, mode by mode
    let lam = |g: f64| k2 + g;
    let damp = |g: f64| 1.0 / (1.0 + DT * gamma_t * lam(g).powf(alpha));
    let stat_var = |g: f64| {
        let d = damp(g);
        d * d * (sigma * sigma * DT / lam(g)) / (1.0 - d * d)
    };
    let q_stat = temporal.spectral(|g| 1.0 / stat_var(g), 0.5, 0.5);

    let mut t = SymTriplets::with_capacity(nv * n_times, n_times * (btqb.nnz() + qw.nnz() + qwb.nnz()));
    for i in 0..nv {
        for j in i..nv {
            t.push(i, j, q_stat[(i, j)]);
        }
    }
    for step in 0..n_times.saturating_sub(1) {
        let (cur, next) = (step * nv, (step + 1) * nv);
        t.add_block(cur, &qw, 1.0);
        t.add_block(next, &btqb, 1.0);
        for (r, cidx, v) in qwb.triplets() {
            t.push(cur + r, next + cidx, -v);
        }
    }
    let precision = t.finalize()?;
    let dynamics = Dynamics {
        n_space: nv,
        n_times,
        propagator: temporal.spectral(damp, -0.5, 0.5),
        noise_cov: temporal.spectral(|g| sigma * sigma * DT / lam(g), -0.5, -0.5),
        stationary_cov: temporal.spectral(stat_var, -0.5, -0.5),
    };
    Ok(FieldRepresentation {
        precision,
        eval: CsrMatrix::identity(nv * n_times),
        n_terms: 1,
        approx_error: 0.0,
        dynamics: Some(dynamics),
    })
}
