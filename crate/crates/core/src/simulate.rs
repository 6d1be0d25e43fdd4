//! Synthetic yield panels drawn from the model itself, for tests and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{YearMonth, YieldPanel, PAPER_MATURITIES};
use crate::error::{Error, Result};
use crate::gmrf::Cholesky;
use crate::inference::{LambdaMode, ModelContext, ModelSpec, ResidualKind};
use crate::nsbasis::observation_matrix;
use crate::spdefields::FieldHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_times: usize,
    pub maturities: Vec<f64>,
    pub start: YearMonth,
    pub lambda: f64,
    pub mu: [f64; 3],
    pub phi: [f64; 3],
    pub innovation_sd: [f64; 3],
    pub noise_sd: f64,
    pub residual: ResidualKind,
    /// Field hyperparameters; ignored when `residual` is `None`.
    pub field: Option<FieldHyper>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_times: 120,
            maturities: PAPER_MATURITIES.to_vec(),
            start: YearMonth::new(1990, 1).unwrap(),
            lambda: 0.0609,
            mu: [6.0, -1.5, 0.5],
            phi: [0.97, 0.93, 0.85],
            innovation_sd: [0.25, 0.3, 0.5],
            noise_sd: 0.05,
            residual: ResidualKind::None,
            field: None,
            seed: 1,
        }
    }
}

/// Simulated panel together with the latent truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub panel: YieldPanel,
    pub factors: Vec<[f64; 3]>,
    /// Field values at the observation points (row-major), zero without a field.
    pub field: Vec<f64>,
}

/// Draw a panel; yields are shifted up by a constant if any fall below zero.
pub fn simulate_panel(cfg: &SimulationConfig) -> Result<Simulation> {
    let (t, m) = (cfg.n_times, cfg.maturities.len());
    if t < 2 || m == 0 {
        return Err(Error::Validation("simulation needs at least 2 dates and 1 maturity".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut factors = Vec::with_capacity(t);
    let mut dev = [0.0; 3];
    for i in 0..3 {
        dev[i] = z() * cfg.innovation_sd[i] / (1.0 - cfg.phi[i] * cfg.phi[i]).max(1e-6).sqrt();
    }
    for _ in 0..t {
        factors.push([cfg.mu[0] + dev[0], cfg.mu[1] + dev[1], cfg.mu[2] + dev[2]]);
        for i in 0..3 {
            dev[i] = cfg.phi[i] * dev[i] + cfg.innovation_sd[i] * z();
        }
    }
    let load = observation_matrix(cfg.lambda, &cfg.maturities)?;
    let dates: Vec<YearMonth> = (0..t).map(|k| cfg.start.add_months(k as i64)).collect();
    let field = match (cfg.residual, cfg.field) {
        (ResidualKind::None, _) => vec![0.0; t * m],
        (kind, Some(fh)) => {
            let spec = ModelSpec {
                residual: kind,
                lambda: LambdaMode::Fixed { value: cfg.lambda },
                alpha: Some(fh.alpha),
                ..ModelSpec::default()
            };
            let blank = YieldPanel::new(dates.clone(), cfg.maturities.clone(), vec![0.0; t * m])?;
            let ctx = ModelContext::new(&spec, &blank)?;
            let repr = ctx.build_field(&fh.with_variant(kind.field_variant().unwrap()))?;
            let chol = Cholesky::factor(&repr.precision)?;
            let w: Vec<f64> = (0..repr.latent_dim()).map(|_| z()).collect();
            let x = chol.sample_transform(&w);
            ctx.field_design(&repr)?.matvec(&x)
        }
        (_, None) => return Err(Error::Validation("field hyperparameters required for a residual field".into())),
    };
    let mut yields = Vec::with_capacity(t * m);
    for (r, b) in factors.iter().enumerate() {
        for (j, v) in load.curve(b).into_iter().enumerate() {
            yields.push(v + field[r * m + j] + cfg.noise_sd * z());
        }
    }
    let lowest = yields.iter().cloned().fold(f64::INFINITY, f64::min);
    if lowest < 0.0 {
        let shift = -lowest + 0.01;
        yields.iter_mut().for_each(|y| *y += shift);
        factors.iter_mut().for_each(|b| b[0] += shift);
    }
    Ok(Simulation { panel: YieldPanel::new(dates, cfg.maturities.clone(), yields)?, factors, field })
}
