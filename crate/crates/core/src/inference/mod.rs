//! Latent Gaussian model assembly and plug-in posterior-mode estimation of the
//! hyperparameters.
//!
//! Latent layout (in order): the three zero-mean AR(1) factor paths (T each),
//! three factor means, the residual-field coefficients, and, when λ is
//! estimated jointly, the Gaussian latent λ̃.

pub mod optim;
mod priors;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataio::{YearMonth, YieldPanel};
use crate::error::{Error, Result};
use crate::fem::{assemble, build_mesh_1d, build_rect_xy, AssembledOperators, CoordinateScaling, Mesh, Tensor2};
use crate::gmrf::{ar1_precision, Cholesky, CsrMatrix, GaussianPosterior, IsoNoiseData, SparseSymmetric, SymTriplets};
use crate::nsbasis::{lambda_from_latent, loading_gradient, observation_matrix, LambdaPrior, NsLoadings, BASELINE_LAMBDA};
use crate::spdefields::{
    anisotropic_precision, kappa_from_range, nonstationary_precision, rational_precision, smoothness,
    spatiotemporal_precision, tau_from_sigma, FieldHyper, FieldRepresentation, FieldVariant, TemporalOperators,
    RATIONAL_ORDER,
};
use crate::stats::{ar1_ols, logistic, logit};

pub use optim::{minimize, OptimOptions, OptimResult};
pub use priors::PriorSettings;

/// Extra time padding beyond the window so forecasts up to a year ahead stay on the mesh.
const FORECAST_PAD_MONTHS: f64 = 13.0;
const JOINT_MAX_ITER: usize = 50;
const JOINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    None,
    Stationary,
    Nonstationary,
    Anisotropic,
    Spatiotemporal,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 5] = [
        ResidualKind::None,
        ResidualKind::Stationary,
        ResidualKind::Nonstationary,
        ResidualKind::Anisotropic,
        ResidualKind::Spatiotemporal,
    ];

    pub fn field_variant(self) -> Option<FieldVariant> {
        match self {
            ResidualKind::None => None,
            ResidualKind::Stationary => Some(FieldVariant::Stationary),
            ResidualKind::Nonstationary => Some(FieldVariant::Nonstationary),
            ResidualKind::Anisotropic => Some(FieldVariant::Anisotropic),
            ResidualKind::Spatiotemporal => Some(FieldVariant::Spatiotemporal),
        }
    }

    /// Short model label used in output tables.
    pub fn label(self) -> &'static str {
        match self {
            ResidualKind::None => "BDNS",
            ResidualKind::Stationary => "BDNS-S",
            ResidualKind::Nonstationary => "BDNS-NS",
            ResidualKind::Anisotropic => "BDNS-A",
            ResidualKind::Spatiotemporal => "BDNS-ST",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let r = match s.trim().to_ascii_lowercase().as_str() {
            "none" | "bdns" => ResidualKind::None,
            "stationary" | "bdns-s" => ResidualKind::Stationary,
            "nonstationary" | "bdns-ns" => ResidualKind::Nonstationary,
            "anisotropic" | "bdns-a" => ResidualKind::Anisotropic,
            "spatiotemporal" | "bdns-st" => ResidualKind::Spatiotemporal,
            _ => return Err(Error::Validation(format!("unknown residual model '{s}'"))),
        };
        Ok(r)
    }
}

/// Factor-trend estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    /// Joint Bayesian state-space fit.
    #[default]
    Bdns,
    /// Cross-sectional OLS factors followed by per-factor AR(1) regressions.
    TwoStepBaseline,
}

/// How the two-step baseline produces h-step factor forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArMethod {
    /// Regress β_{t+h} on β_t directly.
    #[default]
    Direct,
    /// Iterate the fitted one-step AR(1).
    Iterated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum LambdaMode {
    Fixed { value: f64 },
    Joint { prior: LambdaPrior },
}

impl Default for LambdaMode {
    fn default() -> Self {
        LambdaMode::Fixed { value: BASELINE_LAMBDA }
    }
}

/// Mesh construction settings, in scaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSettings {
    pub time_resolution: f64,
    pub maturity_resolution: f64,
    /// Padding on every side as a fraction of the data extent.
    pub extension: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self { time_resolution: 0.025, maturity_resolution: 0.1, extension: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub trend: Trend,
    pub baseline_ar: ArMethod,
    pub residual: ResidualKind,
    pub lambda: LambdaMode,
    /// Fixed SPDE exponent; `None` estimates it on (1, 3) for the spatial variants.
    /// The spatio-temporal field accepts 1 or 2 and defaults to 1.
    pub alpha: Option<f64>,
    pub rational_order: usize,
    pub mesh: MeshSettings,
    pub priors: PriorSettings,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            trend: Trend::Bdns,
            baseline_ar: ArMethod::Direct,
            residual: ResidualKind::None,
            lambda: LambdaMode::default(),
            alpha: None,
            rational_order: RATIONAL_ORDER,
            mesh: MeshSettings::default(),
            priors: PriorSettings::default(),
        }
    }
}

impl ModelSpec {
    pub fn new(residual: ResidualKind) -> Self {
        Self { residual, ..Self::default() }
    }

    pub fn with_lambda(mut self, lambda: LambdaMode) -> Self {
        self.lambda = lambda;
        self
    }

    /// The classical two-step estimator at λ.
    pub fn baseline(lambda: f64) -> Self {
        Self { trend: Trend::TwoStepBaseline, lambda: LambdaMode::Fixed { value: lambda }, ..Self::default() }
    }

    /// Table label, e.g. `BDNS-ST` or `BDNS-ST-gamma` for a joint-λ fit.
    pub fn label(&self) -> String {
        if self.trend == Trend::TwoStepBaseline {
            return "Baseline".into();
        }
        match self.lambda {
            LambdaMode::Fixed { .. } => self.residual.label().to_string(),
            LambdaMode::Joint { prior } => {
                let fam = serde_json::to_value(prior.family).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
                format!("{}-{fam}", self.residual.label())
            }
        }
    }

    /// λ used for loadings when it is not estimated (prior median otherwise).
    pub fn nominal_lambda(&self) -> f64 {
        match self.lambda {
            LambdaMode::Fixed { value } => value,
            LambdaMode::Joint { prior } => prior.median(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trend == Trend::TwoStepBaseline {
            if self.residual != ResidualKind::None {
                return Err(Error::Validation("the two-step baseline requires residual = none".into()));
            }
            if matches!(self.lambda, LambdaMode::Joint { .. }) {
                return Err(Error::Validation("joint lambda requires the bdns trend".into()));
            }
        }
        match self.lambda {
            LambdaMode::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
                return Err(Error::Validation(format!("fixed lambda must be positive, got {value}")))
            }
            LambdaMode::Joint { prior } => prior.validate()?,
            _ => {}
        }
        if let Some(a) = self.alpha {
            let ok = if self.residual == ResidualKind::Spatiotemporal { a == 1.0 || a == 2.0 } else { a > 1.0 && a.is_finite() };
            if !ok {
                return Err(Error::Validation(format!("alpha {a} not admissible for {:?}", self.residual)));
            }
        }
        let m = &self.mesh;
        for (v, name) in [(m.time_resolution, "time_resolution"), (m.maturity_resolution, "maturity_resolution")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("mesh {name} must be positive, got {v}")));
            }
        }
        if !(m.extension >= 0.0 && m.extension.is_finite()) {
            return Err(Error::Validation(format!("mesh extension must be nonnegative, got {}", m.extension)));
        }
        if self.rational_order == 0 {
            return Err(Error::Validation("rational order must be at least 1".into()));
        }
        self.priors.validate()
    }

    fn estimates_alpha(&self) -> bool {
        self.alpha.is_none() && !matches!(self.residual, ResidualKind::None | ResidualKind::Spatiotemporal)
    }

    /// Names of the unconstrained hyperparameters, in optimizer order.
    pub fn theta_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in ["level", "slope", "curvature"] {
            names.push(format!("log_tau_{f}"));
            names.push(format!("logit_phi_{f}"));
        }
        names.push("log_noise_precision".into());
        let field: &[&str] = match self.residual {
            ResidualKind::None => &[],
            ResidualKind::Stationary => &["log_range", "log_sigma"],
            ResidualKind::Anisotropic => &["log_range", "log_sigma", "aniso_u", "aniso_theta"],
            ResidualKind::Nonstationary => &["gamma0", "gamma1", "gamma2", "gamma3", "gamma4", "gamma5"],
            ResidualKind::Spatiotemporal => &["log_range", "logit_phi_time", "log_sigma_marginal"],
        };
        names.extend(field.iter().map(|s| s.to_string()));
        if self.estimates_alpha() {
            names.push("alpha_raw".into());
        }
        names
    }
}

/// Hyperparameters on their natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaturalHyper {
    pub factor_tau: [f64; 3],
    pub factor_phi: [f64; 3],
    pub noise_precision: f64,
    pub field: Option<FieldHyper>,
}

impl NaturalHyper {
    pub fn noise_sd(&self) -> f64 {
        self.noise_precision.recip().sqrt()
    }

    /// Innovation variance of factor `i`.
    pub fn innovation_var(&self, i: usize) -> f64 {
        1.0 / self.factor_tau[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentLayout {
    pub n_times: usize,
    pub n_field: usize,
    pub joint_lambda: bool,
}

impl LatentLayout {
    pub fn factor(&self, i: usize, t: usize) -> usize {
        i * self.n_times + t
    }

    pub fn mu(&self, i: usize) -> usize {
        3 * self.n_times + i
    }

    pub fn field_offset(&self) -> usize {
        3 * self.n_times + 3
    }

    pub fn lambda_index(&self) -> Option<usize> {
        self.joint_lambda.then(|| self.field_offset() + self.n_field)
    }

    pub fn dim(&self) -> usize {
        self.field_offset() + self.n_field + usize::from(self.joint_lambda)
    }
}

/// Field geometry fixed for a window: mesh, operators and the data projection.
#[derive(Debug, Clone)]
pub enum FieldGeometry {
    /// Field over the (time, maturity) plane.
    Planar { mesh: Mesh, ops: AssembledOperators, proj: CsrMatrix },
    /// Spatio-temporal field on a maturity mesh, one block per month.
    Maturity { temporal: TemporalOperators, proj: CsrMatrix },
}

impl FieldGeometry {
    pub fn mesh(&self) -> &Mesh {
        match self {
            FieldGeometry::Planar { mesh, .. } => mesh,
            FieldGeometry::Maturity { temporal, .. } => &temporal.mesh,
        }
    }
}

/// Everything about a training window that does not depend on hyperparameters.
#[derive(Debug)]
pub struct ModelContext {
    pub spec: ModelSpec,
    pub n_times: usize,
    pub dates: Vec<YearMonth>,
    pub maturities: Vec<f64>,
    pub y: Vec<f64>,
    pub scaling: CoordinateScaling,
    pub geometry: Option<FieldGeometry>,
    /// Diameter of the data domain in scaled units (drives the range prior).
    pub diameter: f64,
    field_design: Mutex<HashMap<usize, Arc<CsrMatrix>>>,
}

impl ModelContext {
    pub fn new(spec: &ModelSpec, window: &YieldPanel) -> Result<Self> {
        spec.validate()?;
        if spec.trend == Trend::TwoStepBaseline {
            return Err(Error::Validation("the two-step baseline has no latent model".into()));
        }
        let t = window.n_dates();
        if t < 2 {
            return Err(Error::Validation(format!("need at least 2 dates in the window, got {t}")));
        }
        let maturities = window.maturities().to_vec();
        let scaling = CoordinateScaling::default();
        let tt = scaling.time(t as f64);
        let (mlo, mhi) = (scaling.maturity(maturities[0]), scaling.maturity(*maturities.last().unwrap()));
        let ext = spec.mesh.extension;
        let (geometry, diameter) = match spec.residual {
            ResidualKind::None => (None, (tt * tt + (mhi - mlo).powi(2)).sqrt()),
            ResidualKind::Spatiotemporal => {
                let mesh = build_mesh_1d((mlo, mhi), spec.mesh.maturity_resolution, ext)?;
                let pts: Vec<[f64; 2]> = maturities.iter().map(|&m| [scaling.maturity(m), 0.0]).collect();
                let proj = mesh.projection_matrix(&pts)?;
                let temporal = TemporalOperators::new(mesh)?;
                (Some(FieldGeometry::Maturity { temporal, proj }), (mhi - mlo).max(f64::EPSILON))
            }
            _ => {
                let pad_t = ext * tt;
                let pad_future = pad_t.max(FORECAST_PAD_MONTHS / scaling.months_per_unit);
                let pad_m = ext * (mhi - mlo);
                let mesh = build_rect_xy(
                    -pad_t,
                    tt + pad_future,
                    mlo - pad_m,
                    mhi + pad_m.max(f64::EPSILON),
                    [spec.mesh.time_resolution, spec.mesh.maturity_resolution],
                )?;
                let pts: Vec<[f64; 2]> = (0..t)
                    .flat_map(|r| maturities.iter().map(move |&m| (r, m)))
                    .map(|(r, m)| scaling.point(r as f64 + 1.0, m))
                    .collect();
                let proj = mesh.projection_matrix(&pts)?;
                let ops = assemble(&mesh, &Tensor2::IDENTITY)?;
                (Some(FieldGeometry::Planar { mesh, ops, proj }), (tt * tt + (mhi - mlo).powi(2)).sqrt())
            }
        };
        Ok(Self {
            spec: spec.clone(),
            n_times: t,
            dates: window.dates().to_vec(),
            maturities,
            y: window.yields().to_vec(),
            scaling,
            geometry,
            diameter,
            field_design: Mutex::new(HashMap::new()),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_maturities(&self) -> usize {
        self.maturities.len()
    }

    /// Spatial dimension of the residual field.
    pub fn field_dim(&self) -> usize {
        if self.spec.residual == ResidualKind::Spatiotemporal {
            1
        } else {
            2
        }
    }

    /// Build the residual field for natural hyperparameters.
    pub fn build_field(&self, fh: &FieldHyper) -> Result<FieldRepresentation> {
        let order = self.spec.rational_order;
        let d = self.field_dim();
        let geometry = self.geometry.as_ref().ok_or_else(|| Error::Validation("model has no residual field".into()))?;
        match (geometry, fh.variant) {
            (FieldGeometry::Planar { ops, .. }, FieldVariant::Stationary) => {
                let kappa = kappa_from_range(fh.range, smoothness(fh.alpha, d));
                rational_precision(ops, kappa, tau_from_sigma(fh.sigma, kappa, fh.alpha, d), fh.alpha, order)
            }
            (FieldGeometry::Planar { mesh, .. }, FieldVariant::Anisotropic) => {
                let kappa = kappa_from_range(fh.range, smoothness(fh.alpha, d));
                let tau = tau_from_sigma(fh.sigma, kappa, fh.alpha, d);
                Ok(anisotropic_precision(mesh, kappa, tau, fh.alpha, fh.aniso_u, fh.aniso_theta, order)?.0)
            }
            (FieldGeometry::Planar { mesh, ops, .. }, FieldVariant::Nonstationary) => {
                nonstationary_precision(mesh, ops, &fh.gammas, fh.alpha, order)
            }
            (FieldGeometry::Maturity { temporal, .. }, FieldVariant::Spatiotemporal) => {
                let kappa = kappa_from_range(fh.range, smoothness(fh.alpha, d));
                spatiotemporal_precision(temporal, self.n_times, kappa, fh.gamma_t, fh.sigma, fh.alpha)
            }
            (_, v) => Err(Error::Validation(format!("field variant {} does not match the geometry", v.name()))),
        }
    }

    /// Map from field latents to observation rows, cached per number of rational terms.
    pub fn field_design(&self, field: &FieldRepresentation) -> Result<Arc<CsrMatrix>> {
        let key = field.n_terms;
        if let Some(a) = self.field_design.lock().unwrap().get(&key) {
            return Ok(a.clone());
        }
        let a = match self.geometry.as_ref() {
            Some(FieldGeometry::Planar { proj, .. }) => proj.matmul(&field.eval)?,
            Some(FieldGeometry::Maturity { proj, .. }) => {
                let nv = proj.ncols();
                let m = self.n_maturities();
                let mut trips = Vec::with_capacity(self.n_obs() * 2);
                for t in 0..self.n_times {
                    for (j, c, v) in proj.triplets() {
                        trips.push((t * m + j, t * nv + c, v));
                    }
                }
                CsrMatrix::from_triplets(self.n_obs(), nv * self.n_times, &trips)?.matmul(&field.eval)?
            }
            None => return Err(Error::Validation("model has no residual field".into())),
        };
        let a = Arc::new(a);
        self.field_design.lock().unwrap().insert(key, a.clone());
        Ok(a)
    }

    /// Decode θ into natural hyperparameters and the log prior density of θ.
    pub fn decode(&self, theta: &[f64]) -> Result<(NaturalHyper, f64)> {
        let names = self.spec.theta_names();
        if theta.len() != names.len() {
            return Err(Error::Dimension(format!("expected {} hyperparameters, got {}", names.len(), theta.len())));
        }
        let p = &self.spec.priors;
        let mut lp = 0.0;
        let mut tau = [0.0; 3];
        let mut phi = [0.0; 3];
        for i in 0..3 {
            let (t, f) = crate::gmrf::hyper_transform_ar1(theta[2 * i], theta[2 * i + 1]);
            tau[i] = t;
            phi[i] = f;
            lp += p.log_tau(theta[2 * i]) + p.log_phi(theta[2 * i + 1]);
        }
        lp += p.log_noise(theta[6]);
        let rest = &theta[7..];
        let alpha_of = |raw: Option<&f64>| -> (f64, f64) {
            match raw {
                Some(&r) if self.spec.estimates_alpha() => (1.0 + 2.0 * logistic(r), priors::log_alpha_raw(r)),
                _ => (self.spec.alpha.unwrap_or(2.0), 0.0),
            }
        };
        let d = self.field_dim();
        let rho0 = p.range_median_fraction * self.diameter;
        let field = match self.spec.residual {
            ResidualKind::None => None,
            ResidualKind::Stationary | ResidualKind::Anisotropic => {
                let (alpha, la) = alpha_of(rest.last());
                lp += la + p.log_range(rest[0], rho0, d) + p.log_sigma(rest[1]);
                let mut fh = FieldHyper::stationary(rest[0].exp(), rest[1].exp(), alpha);
                if self.spec.residual == ResidualKind::Anisotropic {
                    fh = fh.with_variant(FieldVariant::Anisotropic);
                    fh.aniso_u = rest[2];
                    fh.aniso_theta = rest[3];
                    lp += p.log_aniso(rest[2]) + p.log_aniso(rest[3]);
                }
                Some(fh)
            }
            ResidualKind::Nonstationary => {
                let (alpha, la) = alpha_of(rest.get(6));
                lp += la + p.log_range(rest[0], rho0, d) + p.log_sigma(rest[1]);
                lp += rest[2..6].iter().map(|&g| p.log_slope(g)).sum::<f64>();
                let mut fh = FieldHyper::stationary(rest[0].exp(), rest[1].exp(), alpha)
                    .with_variant(FieldVariant::Nonstationary);
                fh.gammas.copy_from_slice(&rest[..6]);
                Some(fh)
            }
            ResidualKind::Spatiotemporal => {
                let alpha = self.spec.alpha.unwrap_or(1.0);
                lp += p.log_range(rest[0], rho0, d) + p.log_phi(rest[1]) + p.log_sigma(rest[2]);
                let range = rest[0].exp();
                let kappa = kappa_from_range(range, smoothness(alpha, d));
                let damp = logistic(rest[1]);
                let gamma_t = (1.0 / damp - 1.0) / kappa.powf(2.0 * alpha);
                // amplitude giving (approximately) the requested marginal sd
                let sigma = rest[2].exp() * (2.0 * kappa * (1.0 - damp * damp)).sqrt() / damp;
                let mut fh = FieldHyper::stationary(range, sigma, alpha).with_variant(FieldVariant::Spatiotemporal);
                fh.gamma_t = gamma_t;
                Some(fh)
            }
        };
        if let Some(fh) = &field {
            fh.validate(d)?;
        }
        let hyper = NaturalHyper { factor_tau: tau, factor_phi: phi, noise_precision: theta[6].exp(), field };
        Ok((hyper, lp))
    }

    /// Starting θ from a two-step least-squares fit at the given λ.
    pub fn initial_theta(&self, lambda: f64) -> Result<Vec<f64>> {
        let load = observation_matrix(lambda, &self.maturities)?;
        let betas = load.ols_factors(&self.y)?;
        let mut theta = Vec::new();
        for i in 0..3 {
            let series: Vec<f64> = betas.iter().map(|b| b[i]).collect();
            let (_, phi, v) = ar1_ols(&series).unwrap_or((0.0, 0.5, 1.0));
            let phi = if phi.is_finite() { phi.clamp(0.05, 0.99) } else { 0.5 };
            let v = if v.is_finite() && v > 1e-8 { v } else { 1e-2 };
            theta.push((1.0 / v).ln());
            theta.push(logit(phi));
        }
        let resid: Vec<f64> = betas
            .iter()
            .zip(self.y.chunks(self.n_maturities()))
            .flat_map(|(b, row)| load.curve(b).into_iter().zip(row).map(|(f, y)| y - f).collect::<Vec<_>>())
            .collect();
        let rv = (resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64).max(1e-6);
        let has_field = self.spec.residual != ResidualKind::None;
        let noise_var = if has_field { 0.5 * rv } else { rv };
        theta.push((1.0 / noise_var).ln());
        let sd = (0.5 * rv).sqrt();
        let rho0 = (self.spec.priors.range_median_fraction * self.diameter).ln();
        match self.spec.residual {
            ResidualKind::None => {}
            ResidualKind::Stationary => theta.extend([rho0, sd.ln()]),
            ResidualKind::Anisotropic => theta.extend([rho0, sd.ln(), 0.0, 0.0]),
            ResidualKind::Nonstationary => theta.extend([rho0, sd.ln(), 0.0, 0.0, 0.0, 0.0]),
            ResidualKind::Spatiotemporal => theta.extend([rho0, 0.0, sd.ln()]),
        }
        if self.spec.estimates_alpha() {
            theta.push(0.0);
        }
        Ok(theta)
    }

    /// Factor part of the observation matrix at λ (paths and means).
    pub fn factor_design(&self, loadings: &NsLoadings) -> Result<CsrMatrix> {
        let (t, m) = (self.n_times, self.n_maturities());
        let layout = LatentLayout { n_times: t, n_field: 0, joint_lambda: false };
        let mut trips = Vec::with_capacity(6 * t * m);
        for r in 0..t {
            for (j, row) in loadings.matrix.iter().enumerate() {
                for i in 0..3 {
                    trips.push((r * m + j, layout.factor(i, r), row[i]));
                    trips.push((r * m + j, layout.mu(i), row[i]));
                }
            }
        }
        CsrMatrix::from_triplets(t * m, 3 * t + 3, &trips)
    }
}

/// Prior precision of the full latent vector and its log-determinant.
pub fn prior_precision(
    ctx: &ModelContext,
    hyper: &NaturalHyper,
    field: Option<&FieldRepresentation>,
    joint_lambda: bool,
) -> Result<(SparseSymmetric, f64)> {
    let t = ctx.n_times;
    let mu_prec = ctx.spec.priors.mu_precision;
    let n_field = field.map_or(0, |f| f.latent_dim());
    let layout = LatentLayout { n_times: t, n_field, joint_lambda };
    let mut trips = SymTriplets::with_capacity(layout.dim(), 6 * t + field.map_or(0, |f| f.precision.nnz()));
    let mut ld = 0.0;
    for i in 0..3 {
        let (tau, phi) = (hyper.factor_tau[i], hyper.factor_phi[i]);
        trips.add_block(layout.factor(i, 0), &ar1_precision(t, tau, phi)?, 1.0);
        ld += t as f64 * tau.ln() + (1.0 - phi * phi).ln();
        trips.push(layout.mu(i), layout.mu(i), mu_prec);
        ld += mu_prec.ln();
    }
    if let Some(f) = field {
        trips.add_block(layout.field_offset(), &f.precision, 1.0);
        ld += Cholesky::factor(&f.precision)?.log_det();
    }
    if let Some(k) = layout.lambda_index() {
        trips.push(k, k, 1.0);
    }
    Ok((trips.finalize()?, ld))
}

/// Assembled latent Gaussian model at fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct LatentGaussianModel {
    pub q_prior: SparseSymmetric,
    pub log_det_prior: f64,
    pub a: CsrMatrix,
    pub noise_precision: f64,
    pub y: Vec<f64>,
    pub layout: LatentLayout,
    pub field: Option<FieldRepresentation>,
}

/// Assemble prior precision, observation matrix and noise precision for a window at
/// fixed λ and hyperparameters θ.
pub fn assemble_lgm(spec: &ModelSpec, window: &YieldPanel, lambda: f64, theta: &[f64]) -> Result<LatentGaussianModel> {
    let ctx = ModelContext::new(spec, window)?;
    let (hyper, _) = ctx.decode(theta)?;
    let field = hyper.field.as_ref().map(|fh| ctx.build_field(fh)).transpose()?;
    let (q, ld) = prior_precision(&ctx, &hyper, field.as_ref(), false)?;
    let lin = LinearSystem::fixed(&ctx, lambda)?;
    let a = lin.design(&ctx, field.as_ref())?;
    Ok(LatentGaussianModel {
        q_prior: q,
        log_det_prior: ld,
        a,
        noise_precision: hyper.noise_precision,
        y: ctx.y.clone(),
        layout: LatentLayout { n_times: ctx.n_times, n_field: field.as_ref().map_or(0, |f| f.latent_dim()), joint_lambda: false },
        field,
    })
}

/// Observation system y* = [F | A_u | b] x + ε, with data summaries cached per field size.
struct LinearSystem {
    factor: CsrMatrix,
    lambda_col: Option<Vec<f64>>,
    y: Vec<f64>,
    cache: Mutex<HashMap<usize, Arc<IsoNoiseData>>>,
}

impl LinearSystem {
    fn fixed(ctx: &ModelContext, lambda: f64) -> Result<Self> {
        let load = observation_matrix(lambda, &ctx.maturities)?;
        Ok(Self { factor: ctx.factor_design(&load)?, lambda_col: None, y: ctx.y.clone(), cache: Mutex::default() })
    }

    /// Linearization of the λ-nonlinear predictor around `x` (full latent incl. λ̃).
    fn linearized(ctx: &ModelContext, prior: &LambdaPrior, x: &[f64], layout: &LatentLayout, field_a: Option<&CsrMatrix>) -> Result<Self> {
        let k = layout.lambda_index().expect("joint layout");
        let (lambda, dl) = lambda_from_latent(x[k], prior);
        let load = observation_matrix(lambda, &ctx.maturities)?;
        let factor = ctx.factor_design(&load)?;
        let m = ctx.n_maturities();
        let grads: Vec<(f64, f64)> = ctx.maturities.iter().map(|&mm| loading_gradient(lambda, mm)).collect::<Result<_>>()?;
        let mut b = vec![0.0; ctx.n_obs()];
        for t in 0..ctx.n_times {
            let s = x[layout.factor(1, t)] + x[layout.mu(1)];
            let c = x[layout.factor(2, t)] + x[layout.mu(2)];
            for (j, &(ds, dc)) in grads.iter().enumerate() {
                b[t * m + j] = (ds * s + dc * c) * dl;
            }
        }
        // y* = y − η(x) + J x; η is linear in everything but λ̃, so this is y + b·λ̃.
        let eta = predictor(ctx, prior, x, layout, field_a)?;
        let mut jx = factor.matvec(&x[..layout.field_offset()]);
        if let Some(a) = field_a {
            let u = a.matvec(&x[layout.field_offset()..layout.field_offset() + layout.n_field]);
            jx.iter_mut().zip(u).for_each(|(v, w)| *v += w);
        }
        let y: Vec<f64> = (0..ctx.n_obs()).map(|r| ctx.y[r] - eta[r] + jx[r] + b[r] * x[k]).collect();
        Ok(Self { factor, lambda_col: Some(b), y, cache: Mutex::default() })
    }

    fn design(&self, ctx: &ModelContext, field: Option<&FieldRepresentation>) -> Result<CsrMatrix> {
        let mut blocks: Vec<CsrMatrix> = vec![self.factor.clone()];
        if let Some(f) = field {
            blocks.push((*ctx.field_design(f)?).clone());
        }
        if let Some(b) = &self.lambda_col {
            let trips: Vec<_> = b.iter().enumerate().map(|(r, &v)| (r, 0, v)).collect();
            blocks.push(CsrMatrix::from_triplets(b.len(), 1, &trips)?);
        }
        CsrMatrix::hstack(&blocks.iter().collect::<Vec<_>>())
    }

    fn data(&self, ctx: &ModelContext, field: Option<&FieldRepresentation>) -> Result<Arc<IsoNoiseData>> {
        let key = field.map_or(0, |f| f.n_terms);
        if let Some(d) = self.cache.lock().unwrap().get(&key) {
            return Ok(d.clone());
        }
        let d = Arc::new(IsoNoiseData::new(&self.design(ctx, field)?, &self.y)?);
        self.cache.lock().unwrap().insert(key, d.clone());
        Ok(d)
    }
}

/// Nonlinear predictor η(x) for a joint-λ latent vector.
fn predictor(ctx: &ModelContext, prior: &LambdaPrior, x: &[f64], layout: &LatentLayout, field_a: Option<&CsrMatrix>) -> Result<Vec<f64>> {
    let k = layout.lambda_index().expect("joint layout");
    let (lambda, _) = lambda_from_latent(x[k], prior);
    let load = observation_matrix(lambda, &ctx.maturities)?;
    let mut eta = ctx.factor_design(&load)?.matvec(&x[..layout.field_offset()]);
    if let Some(a) = field_a {
        let u = a.matvec(&x[layout.field_offset()..layout.field_offset() + layout.n_field]);
        eta.iter_mut().zip(u).for_each(|(v, w)| *v += w);
    }
    Ok(eta)
}

/// One full evaluation of the plug-in objective.
struct Evaluation {
    hyper: NaturalHyper,
    field: Option<FieldRepresentation>,
    posterior: GaussianPosterior,
    lml: f64,
    log_prior: f64,
}

fn evaluate(ctx: &ModelContext, lin: &LinearSystem, theta: &[f64]) -> Result<Evaluation> {
    let (hyper, log_prior) = ctx.decode(theta)?;
    let field = hyper.field.as_ref().map(|fh| ctx.build_field(fh)).transpose()?;
    let (q, ld) = prior_precision(ctx, &hyper, field.as_ref(), lin.lambda_col.is_some())?;
    let data = lin.data(ctx, field.as_ref())?;
    let (posterior, lml) = data.evaluate(&q, ld, hyper.noise_precision)?;
    Ok(Evaluation { hyper, field, posterior, lml, log_prior })
}

fn objective_value(ctx: &ModelContext, lin: &LinearSystem, theta: &[f64]) -> f64 {
    match evaluate(ctx, lin, theta) {
        Ok(e) if (e.lml + e.log_prior).is_finite() => -(e.lml + e.log_prior),
        Ok(_) => f64::INFINITY,
        Err(e) => {
            log::trace!("objective rejected θ: {e}");
            f64::INFINITY
        }
    }
}

/// Negative log posterior of θ (up to a constant) at fixed λ: −log π(y|θ) − log π(θ).
pub fn neg_log_posterior(theta: &[f64], spec: &ModelSpec, window: &YieldPanel) -> Result<f64> {
    let lambda = spec.nominal_lambda();
    let ctx = ModelContext::new(spec, window)?;
    let lin = LinearSystem::fixed(&ctx, lambda)?;
    let e = evaluate(&ctx, &lin, theta)?;
    Ok(-(e.lml + e.log_prior))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConvergenceInfo {
    pub evaluations: usize,
    pub iterations: usize,
    pub final_step: f64,
    pub restarts: usize,
    /// Best objective after each optimizer iteration.
    pub trace: Vec<f64>,
    /// Joint-λ outer iterations: max predictor change per iteration.
    pub joint_trajectory: Vec<f64>,
    pub lambda_trajectory: Vec<f64>,
}

/// Fitted model at the plug-in posterior mode.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub context: Arc<ModelContext>,
    pub theta: Vec<f64>,
    pub hyper: NaturalHyper,
    pub lambda: f64,
    pub lambda_sd: Option<f64>,
    pub neg_log_posterior: f64,
    pub log_marginal_likelihood: f64,
    pub log_prior: f64,
    pub posterior: GaussianPosterior,
    pub field: Option<FieldRepresentation>,
    pub layout: LatentLayout,
    pub convergence: ConvergenceInfo,
}

impl FitResult {
    pub fn spec(&self) -> &ModelSpec {
        &self.context.spec
    }

    /// Posterior mean path of factor `i` (including its mean).
    pub fn factor_path(&self, i: usize) -> Vec<f64> {
        let m = self.posterior.mean[self.layout.mu(i)];
        (0..self.layout.n_times).map(|t| self.posterior.mean[self.layout.factor(i, t)] + m).collect()
    }

    /// Posterior mean of the residual field at the observation points (row-major).
    pub fn field_at_data(&self) -> Result<Vec<f64>> {
        let n = self.context.n_obs();
        match &self.field {
            None => Ok(vec![0.0; n]),
            Some(f) => {
                let a = self.context.field_design(f)?;
                let off = self.layout.field_offset();
                Ok(a.matvec(&self.posterior.mean[off..off + self.layout.n_field]))
            }
        }
    }

    pub fn loadings(&self) -> Result<NsLoadings> {
        observation_matrix(self.lambda, &self.context.maturities)
    }

    pub fn summary(&self) -> FitSummary {
        let ctx = &self.context;
        FitSummary {
            model: ctx.spec.residual.label().to_string(),
            spec: ctx.spec.clone(),
            priors: ctx.spec.priors.describe(&ctx.spec, ctx.diameter),
            window_start: ctx.dates.first().map(|d| d.compact()).unwrap_or_default(),
            window_end: ctx.dates.last().map(|d| d.compact()).unwrap_or_default(),
            n_times: ctx.n_times,
            n_obs: ctx.n_obs(),
            latent_dim: self.layout.dim(),
            theta_names: ctx.spec.theta_names(),
            theta: self.theta.clone(),
            hyper: self.hyper,
            lambda: self.lambda,
            lambda_sd: self.lambda_sd,
            neg_log_posterior: self.neg_log_posterior,
            log_marginal_likelihood: self.log_marginal_likelihood,
            log_prior: self.log_prior,
            rational_error: self.field.as_ref().map(|f| f.approx_error),
            convergence: self.convergence.clone(),
        }
    }

    /// Posterior mean and sparse Cholesky factor as a little-endian binary blob:
    /// magic, dim, mean, permutation, then (row, col, value) factor triplets.
    pub fn posterior_bytes(&self) -> Vec<u8> {
        let f = &self.posterior.factor;
        let trips = f.factor_triplets();
        let mut out = Vec::with_capacity(32 + 8 * (self.posterior.mean.len() * 2 + trips.len() * 3));
        out.extend_from_slice(b"YFLP0001");
        out.extend_from_slice(&(self.posterior.mean.len() as u64).to_le_bytes());
        for v in &self.posterior.mean {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &p in f.permutation() {
            out.extend_from_slice(&(p as u64).to_le_bytes());
        }
        out.extend_from_slice(&(trips.len() as u64).to_le_bytes());
        for (r, c, v) in trips {
            out.extend_from_slice(&(r as u64).to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Serializable view of a fit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitSummary {
    pub model: String,
    pub spec: ModelSpec,
    pub priors: Vec<String>,
    pub window_start: String,
    pub window_end: String,
    pub n_times: usize,
    pub n_obs: usize,
    pub latent_dim: usize,
    pub theta_names: Vec<String>,
    pub theta: Vec<f64>,
    pub hyper: NaturalHyper,
    pub lambda: f64,
    pub lambda_sd: Option<f64>,
    pub neg_log_posterior: f64,
    pub log_marginal_likelihood: f64,
    pub log_prior: f64,
    pub rational_error: Option<f64>,
    pub convergence: ConvergenceInfo,
}

fn finish(ctx: Arc<ModelContext>, lin: &LinearSystem, theta: Vec<f64>, lambda: f64, conv: ConvergenceInfo) -> Result<FitResult> {
    let e = evaluate(&ctx, lin, &theta)?;
    let layout = LatentLayout {
        n_times: ctx.n_times,
        n_field: e.field.as_ref().map_or(0, |f| f.latent_dim()),
        joint_lambda: lin.lambda_col.is_some(),
    };
    Ok(FitResult {
        theta,
        hyper: e.hyper,
        lambda,
        lambda_sd: None,
        neg_log_posterior: -(e.lml + e.log_prior),
        log_marginal_likelihood: e.lml,
        log_prior: e.log_prior,
        posterior: e.posterior,
        field: e.field,
        layout,
        convergence: conv,
        context: ctx,
    })
}

fn optimize(ctx: &ModelContext, lin: &LinearSystem, start: &[f64], opts: &OptimOptions) -> Result<OptimResult> {
    let f = |th: &[f64]| objective_value(ctx, lin, th);
    minimize(&f, start, opts)
}

/// Plug-in posterior mode of θ. Joint-λ specs are delegated to [`fit_joint_lambda`].
/// `warm` seeds the optimizer (e.g. the previous origin's θ).
pub fn fit_map(spec: &ModelSpec, window: &YieldPanel, warm: Option<&[f64]>) -> Result<FitResult> {
    fit_with(spec, window, warm, true)
}

/// As [`fit_map`]; with `optimize = false` the latent posterior is computed at the
/// supplied θ without re-estimating it.
pub fn fit_with(spec: &ModelSpec, window: &YieldPanel, theta: Option<&[f64]>, optimize: bool) -> Result<FitResult> {
    if !optimize && theta.is_none() {
        return Err(Error::Validation("a fixed-hyperparameter fit needs theta".into()));
    }
    match spec.lambda {
        LambdaMode::Fixed { value } => fit_fixed(Arc::new(ModelContext::new(spec, window)?), value, theta, optimize),
        LambdaMode::Joint { .. } => joint_fit(spec, window, theta, optimize),
    }
}

fn start_theta(ctx: &ModelContext, lambda: f64, warm: Option<&[f64]>) -> Result<(Vec<f64>, OptimOptions)> {
    let mut opts = OptimOptions::default();
    let start = match warm {
        Some(w) if w.len() == ctx.spec.theta_names().len() => {
            opts.initial_step = 0.2;
            w.to_vec()
        }
        _ => ctx.initial_theta(lambda)?,
    };
    Ok((start, opts))
}

fn fit_fixed(ctx: Arc<ModelContext>, lambda: f64, warm: Option<&[f64]>, optimize_theta: bool) -> Result<FitResult> {
    let lin = LinearSystem::fixed(&ctx, lambda)?;
    let (start, opts) = start_theta(&ctx, lambda, warm)?;
    if !optimize_theta {
        let conv = ConvergenceInfo {
            evaluations: 1,
            iterations: 0,
            final_step: 0.0,
            restarts: 0,
            trace: Vec::new(),
            joint_trajectory: Vec::new(),
            lambda_trajectory: Vec::new(),
        };
        return finish(ctx, &lin, start, lambda, conv);
    }
    let res = optimize(&ctx, &lin, &start, &opts)?;
    log::debug!(
        "{} fit: {} evaluations, objective {:.6}",
        ctx.spec.residual.label(),
        res.evaluations,
        res.value
    );
    let conv = ConvergenceInfo {
        evaluations: res.evaluations,
        iterations: res.iterations,
        final_step: res.final_step,
        restarts: opts.restarts,
        trace: res.trace,
        joint_trajectory: Vec::new(),
        lambda_trajectory: Vec::new(),
    };
    finish(ctx, &lin, res.x, lambda, conv)
}

/// Joint estimation of λ through its Gaussian latent λ̃, by repeated linearization of
/// the predictor around the current mode with step-halving, alternating with θ updates.
pub fn fit_joint_lambda(spec: &ModelSpec, window: &YieldPanel, warm: Option<&[f64]>) -> Result<FitResult> {
    joint_fit(spec, window, warm, true)
}

fn joint_fit(spec: &ModelSpec, window: &YieldPanel, warm: Option<&[f64]>, optimize_theta: bool) -> Result<FitResult> {
    let prior = match spec.lambda {
        LambdaMode::Joint { prior } => prior,
        LambdaMode::Fixed { .. } => return Err(Error::Validation("joint fit requires a lambda prior".into())),
    };
    let ctx = Arc::new(ModelContext::new(spec, window)?);
    let lambda0 = prior.median();
    let base = fit_fixed(ctx.clone(), lambda0, warm, optimize_theta)?;
    let mut theta = base.theta.clone();
    let mut conv = base.convergence.clone();
    let layout = LatentLayout { joint_lambda: true, ..base.layout };
    let mut x = base.posterior.mean.clone();
    x.push(crate::nsbasis::latent_from_lambda(lambda0, &prior));
    let field_a = base.field.as_ref().map(|f| ctx.field_design(f)).transpose()?;
    let field_a = field_a.as_deref();

    // log π(y|x,θ) + log π(x|θ), up to θ-only constants
    let joint_logpost = |x: &[f64], theta: &[f64]| -> Result<f64> {
        let (hyper, _) = ctx.decode(theta)?;
        let field = hyper.field.as_ref().map(|fh| ctx.build_field(fh)).transpose()?;
        let (q, _) = prior_precision(&ctx, &hyper, field.as_ref(), true)?;
        let eta = predictor(&ctx, &prior, x, &layout, field_a)?;
        let rss: f64 = ctx.y.iter().zip(&eta).map(|(y, e)| (y - e).powi(2)).sum();
        Ok(-0.5 * hyper.noise_precision * rss - 0.5 * q.quad_form(x))
    };

    let inner_opts = OptimOptions { initial_step: 0.1, restarts: 0, ..OptimOptions::default() };
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    for iter in 1..=JOINT_MAX_ITER {
        let lin = LinearSystem::linearized(&ctx, &prior, &x, &layout, field_a)?;
        if optimize_theta {
            let current = objective_value(&ctx, &lin, &theta);
            let res = optimize(&ctx, &lin, &theta, &inner_opts)?;
            conv.evaluations += res.evaluations;
            if res.value < current - 1e-7 {
                theta = res.x;
            }
        }
        let e = evaluate(&ctx, &lin, &theta)?;
        let mut x_new = e.posterior.mean;
        let h0 = joint_logpost(&x, &theta)?;
        let mut halvings = 0;
        while joint_logpost(&x_new, &theta)? < h0 && halvings < 30 {
            x_new.iter_mut().zip(&x).for_each(|(n, o)| *n = 0.5 * (*n + o));
            halvings += 1;
        }
        let eta_old = predictor(&ctx, &prior, &x, &layout, field_a)?;
        let eta_new = predictor(&ctx, &prior, &x_new, &layout, field_a)?;
        last_change = eta_old.iter().zip(&eta_new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = eta_old.iter().map(|v| v.abs()).fold(0.0, f64::max);
        x = x_new;
        let k = layout.lambda_index().unwrap();
        conv.joint_trajectory.push(last_change);
        conv.lambda_trajectory.push(lambda_from_latent(x[k], &prior).0);
        log::debug!("joint λ iteration {iter}: change {last_change:.3e}, {halvings} halvings, λ = {:.5}", lambda_from_latent(x[k], &prior).0);
        if last_change < JOINT_TOL * (1.0 + scale) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            iterations: JOINT_MAX_ITER,
            last_change,
            trajectory: conv.joint_trajectory.clone(),
        });
    }
    let lin = LinearSystem::linearized(&ctx, &prior, &x, &layout, field_a)?;
    let k = layout.lambda_index().unwrap();
    let (lambda, dl) = lambda_from_latent(x[k], &prior);
    let mut fit = finish(ctx, &lin, theta, lambda, conv)?;
    let mut g = vec![0.0; fit.layout.dim()];
    g[k] = 1.0;
    fit.lambda_sd = Some(fit.posterior.variance_of(&g).sqrt() * dl);
    Ok(fit)
}
