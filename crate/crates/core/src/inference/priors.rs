//! Hyperprior densities, all expressed on the unconstrained (optimizer) scale,
//! Jacobians included.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::LN_2;

use super::{ModelSpec, ResidualKind};
use crate::error::{Error, Result};
use crate::stats::{logistic, normal_logpdf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    /// Gamma(shape, rate) on each factor innovation precision.
    pub tau_shape: f64,
    pub tau_rate: f64,
    /// Variance of the Gaussian prior on logit φ (factors and field damping).
    pub phi_logit_var: f64,
    /// Gamma(shape, rate) on the observation noise precision.
    pub noise_shape: f64,
    pub noise_rate: f64,
    /// Prior median of the field range as a fraction of the data-domain diameter.
    pub range_median_fraction: f64,
    /// Prior median of the field standard deviation.
    pub sigma_median: f64,
    /// Sd of the Gaussian prior on nonstationary slope coefficients.
    pub slope_sd: f64,
    /// Sd of the Gaussian prior on the anisotropy parameters.
    pub aniso_sd: f64,
    /// Precision of the Gaussian prior on the factor means.
    pub mu_precision: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            tau_shape: 1.0,
            tau_rate: 5e-5,
            phi_logit_var: 10.0,
            noise_shape: 1.0,
            noise_rate: 5e-5,
            range_median_fraction: 1.0 / 3.0,
            sigma_median: 0.3,
            slope_sd: 1.0,
            aniso_sd: 1.0,
            mu_precision: 1e-4,
        }
    }
}

/// log density of log X when X ~ Gamma(shape, rate).
fn log_gamma_on_log(theta: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + shape * theta - rate * theta.exp()
}

/// Uniform α on (1, 3) through α = 1 + 2·logistic(r).
pub(super) fn log_alpha_raw(r: f64) -> f64 {
    let l = logistic(r);
    l.ln() + (1.0 - l).ln()
}

impl PriorSettings {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("tau_shape", self.tau_shape),
            ("tau_rate", self.tau_rate),
            ("phi_logit_var", self.phi_logit_var),
            ("noise_shape", self.noise_shape),
            ("noise_rate", self.noise_rate),
            ("range_median_fraction", self.range_median_fraction),
            ("sigma_median", self.sigma_median),
            ("slope_sd", self.slope_sd),
            ("aniso_sd", self.aniso_sd),
            ("mu_precision", self.mu_precision),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("prior setting {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn log_tau(&self, theta: f64) -> f64 {
        log_gamma_on_log(theta, self.tau_shape, self.tau_rate)
    }

    pub fn log_phi(&self, theta: f64) -> f64 {
        normal_logpdf(theta, 0.0, self.phi_logit_var.sqrt())
    }

    pub fn log_noise(&self, theta: f64) -> f64 {
        log_gamma_on_log(theta, self.noise_shape, self.noise_rate)
    }

    /// Penalized-complexity range prior in dimension `d` with median `rho0`, on log ρ.
    pub fn log_range(&self, theta: f64, rho0: f64, d: usize) -> f64 {
        let h = d as f64 / 2.0;
        let lam = LN_2 * rho0.powf(h);
        (lam * h).ln() - h * theta - lam * (-h * theta).exp()
    }

    /// Exponential prior on σ with the configured median, on log σ.
    pub fn log_sigma(&self, theta: f64) -> f64 {
        let rate = LN_2 / self.sigma_median;
        rate.ln() - rate * theta.exp() + theta
    }

    pub fn log_slope(&self, g: f64) -> f64 {
        normal_logpdf(g, 0.0, self.slope_sd)
    }

    pub fn log_aniso(&self, v: f64) -> f64 {
        normal_logpdf(v, 0.0, self.aniso_sd)
    }

    /// Human-readable prior list for a model.
    pub fn describe(&self, spec: &ModelSpec, diameter: f64) -> Vec<String> {
        let mut out = vec![
            format!("factor innovation precision ~ Gamma({}, {})", self.tau_shape, self.tau_rate),
            format!("factor logit(phi) ~ N(0, {})", self.phi_logit_var),
            format!("factor means ~ N(0, {})", 1.0 / self.mu_precision),
            format!("noise precision ~ Gamma({}, {})", self.noise_shape, self.noise_rate),
        ];
        let rho0 = self.range_median_fraction * diameter;
        match spec.residual {
            ResidualKind::None => {}
            ResidualKind::Spatiotemporal => {
                out.push(format!("range ~ PC(median {rho0:.4}, d = 1)"));
                out.push(format!("marginal sd ~ Exp(median {})", self.sigma_median));
                out.push(format!("logit(temporal damping) ~ N(0, {})", self.phi_logit_var));
            }
            r => {
                out.push(format!("range ~ PC(median {rho0:.4}, d = 2)"));
                out.push(format!("sd ~ Exp(median {})", self.sigma_median));
                if r == ResidualKind::Nonstationary {
                    out.push(format!("range/sd slopes ~ N(0, {})", self.slope_sd.powi(2)));
                }
                if r == ResidualKind::Anisotropic {
                    out.push(format!("anisotropy u, theta ~ N(0, {})", self.aniso_sd.powi(2)));
                }
                match spec.alpha {
                    Some(a) => out.push(format!("alpha fixed at {a}")),
                    None => out.push("alpha ~ Uniform(1, 3)".into()),
                }
            }
        }
        if let super::LambdaMode::Joint { prior } = spec.lambda {
            out.push(format!("lambda ~ {:?}(mean {}, {})", prior.family, prior.mean, prior.shape_or_cv));
        }
        out
    }
}
