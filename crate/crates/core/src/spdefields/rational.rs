//! Best uniform rational approximation of y^s on [δ, 1] and its conversion to
//! a partial-fraction expansion of λ^{-s} on [λ_min, λ_max].
//!
//! The approximation is found by interpolating at 2m+1 nodes (barycentric
//! form, weights from the Loewner null vector) and moving the nodes until the
//! local error maxima on the 2m+2 sub-intervals equalize.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAX_ITER: usize = 400;
const EQUI_TOL: f64 = 1e-6;
const SAMPLES: usize = 48;

/// Rational r(y) = k0 + Σ ρᵢ/(y − qᵢ) approximating y^s on [δ, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RationalApprox {
    pub s: f64,
    pub delta: f64,
    pub order: usize,
    pub k0: f64,
    pub poles: Vec<f64>,
    pub residues: Vec<f64>,
    /// Sup-norm error on [δ, 1].
    pub max_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// λ^{-s} ≈ k + Σ rᵢ/(λ − pᵢ) on the operator spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialFractions {
    pub k: f64,
    pub poles: Vec<f64>,
    pub residues: Vec<f64>,
}

impl PartialFractions {
    pub fn eval(&self, lambda: f64) -> f64 {
        self.k + self.poles.iter().zip(&self.residues).map(|(p, r)| r / (lambda - p)).sum::<f64>()
    }
}

struct Barycentric {
    support: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    fn eval(&self, y: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for ((&s, &f), &w) in self.support.iter().zip(&self.values).zip(&self.weights) {
            if y == s {
                return f;
            }
            let c = w / (y - s);
            num += c * f;
            den += c;
        }
        num / den
    }
}

fn interpolant(nodes: &[f64], g: &dyn Fn(f64) -> f64) -> Option<Barycentric> {
    let support: Vec<f64> = nodes.iter().step_by(2).copied().collect();
    let tests: Vec<f64> = nodes.iter().skip(1).step_by(2).copied().collect();
    let values: Vec<f64> = support.iter().map(|&s| g(s)).collect();
    let k = support.len();
    // Loewner matrix padded to square so the SVD exposes the null vector
    let mut l = DMatrix::zeros(k, k);
    for (i, &x) in tests.iter().enumerate() {
        let gx = g(x);
        for j in 0..k {
            l[(i, j)] = (gx - values[j]) / (x - support[j]);
        }
    }
    let svd = l.svd(false, true);
    let vt = svd.v_t?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let weights: Vec<f64> = vt.row(idx).iter().copied().collect();
    weights.iter().all(|w| w.is_finite()).then_some(Barycentric { support, values, weights })
}

/// Local maxima of |r − g| on the sub-intervals delimited by the nodes; sampled in log space.
fn local_errors(r: &Barycentric, g: &dyn Fn(f64) -> f64, bounds: &[f64]) -> Vec<f64> {
    bounds
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].ln(), w[1].ln());
            (0..=SAMPLES)
                .map(|i| {
                    let y = (a + (b - a) * i as f64 / SAMPLES as f64).exp();
                    (r.eval(y) - g(y)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Coefficients (ascending) of Σⱼ cⱼ Π_{k≠j}(y − s_k).
fn lagrange_poly(support: &[f64], coef: &[f64]) -> Vec<f64> {
    let k = support.len();
    let mut out = vec![0.0; k];
    for j in 0..k {
        let mut p = vec![1.0];
        for (i, &s) in support.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut next = vec![0.0; p.len() + 1];
            for (d, &c) in p.iter().enumerate() {
                next[d + 1] += c;
                next[d] -= s * c;
            }
            p = next;
        }
        for (d, &c) in p.iter().enumerate() {
            out[d] += coef[j] * c;
        }
    }
    out
}

fn poly_eval(p: &[f64], y: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, &c| acc * y + c)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(d, &c)| d as f64 * c).collect()
}

fn real_roots(p: &[f64]) -> Result<Vec<f64>> {
    let deg = p.len() - 1;
    let lead = p[deg];
    if lead == 0.0 || !lead.is_finite() {
        return Err(Error::Approximation("denominator degree deficient".into()));
    }
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -p[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    let mut roots = Vec::with_capacity(deg);
    for z in eig.iter() {
        if z.im.abs() > 1e-8 * z.re.abs().max(1e-300) {
            return Err(Error::Approximation(format!("complex pole {z}")));
        }
        // one Newton polish step on the real part
        let dp = poly_deriv(p);
        let mut r = z.re;
        for _ in 0..3 {
            let d = poly_eval(&dp, r);
            if d != 0.0 {
                r -= poly_eval(p, r) / d;
            }
        }
        roots.push(r);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(roots)
}

/// Best rational approximation of type (m, m) to y^s on [δ, 1].
pub fn best_rational(s: f64, delta: f64, order: usize) -> Result<RationalApprox> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Approximation(format!("exponent {s} outside (0,1)")));
    }
    if order == 0 {
        return Err(Error::Approximation("order must be at least 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Approximation(format!("spectral ratio {delta} must be positive")));
    }
    if delta >= 1.0 - 1e-12 {
        // a single eigenvalue: the constant 1 is exact
        return Ok(RationalApprox {
            s,
            delta: 1.0,
            order,
            k0: 1.0,
            poles: vec![],
            residues: vec![],
            max_error: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let g = move |y: f64| y.powf(s);
    let n = 2 * order + 1;
    let (la, lb) = (delta.ln(), 0.0);
    // interval lengths in log space, initialized with a mild clustering toward δ
    let mut lens: Vec<f64> = (0..=n)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / (n + 1) as f64;
            let b = std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64;
            0.5 * (a.cos() - b.cos())
        })
        .collect();
    let total = lb - la;
    let mut best: Option<(f64, Vec<f64>, Barycentric)> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut stall = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let sum: f64 = lens.iter().sum();
        lens.iter_mut().for_each(|l| *l *= total / sum);
        let mut bounds = Vec::with_capacity(n + 2);
        bounds.push(delta);
        let mut acc = la;
        for l in &lens[..n] {
            acc += l;
            bounds.push(acc.exp());
        }
        bounds.push(1.0);
        let nodes = &bounds[1..=n];
        let Some(r) = interpolant(nodes, &g) else { break };
        let errs = local_errors(&r, &g, &bounds);
        let emax = errs.iter().cloned().fold(0.0, f64::max);
        let emin = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        if !emax.is_finite() {
            break;
        }
        let improved = best.as_ref().is_none_or(|(e, ..)| emax < *e);
        if improved {
            best = Some((emax, nodes.to_vec(), r));
            stall = 0;
        } else {
            stall += 1;
        }
        if (emax - emin) / emax < EQUI_TOL {
            converged = true;
            break;
        }
        if stall > 60 {
            break;
        }
        // shrink intervals with large error, grow those with small error
        let gmean = (errs.iter().map(|e| e.max(1e-300).ln()).sum::<f64>() / errs.len() as f64).exp();
        for (l, e) in lens.iter_mut().zip(&errs) {
            *l *= (gmean / e.max(1e-300)).powf(0.25 / order as f64);
        }
    }
    let (max_error, _, r) = best.ok_or_else(|| Error::Approximation("no valid interpolant".into()))?;
    if !converged {
        log::debug!("rational approximation stalled after {iterations} iterations; using best iterate (error {max_error:e})");
    }
    let coef: Vec<f64> = r.weights.iter().zip(&r.values).map(|(w, f)| w * f).collect();
    let num = lagrange_poly(&r.support, &coef);
    let den = lagrange_poly(&r.support, &r.weights);
    let poles = real_roots(&den)?;
    let dden = poly_deriv(&den);
    let residues: Vec<f64> = poles.iter().map(|&q| poly_eval(&num, q) / poly_eval(&dden, q)).collect();
    let k0 = num[order] / den[order];
    let approx = RationalApprox { s, delta, order, k0, poles, residues, max_error, iterations, converged };
    // the expansion must reproduce the barycentric form
    for i in 0..=16 {
        let y = (la + (lb - la) * i as f64 / 16.0).exp();
        let pf = approx.eval(y);
        if (pf - r.eval(y)).abs() > 1e-6 * y.powf(s) + 10.0 * max_error {
            return Err(Error::Approximation("partial-fraction expansion is inaccurate".into()));
        }
    }
    Ok(approx)
}

impl RationalApprox {
    pub fn eval(&self, y: f64) -> f64 {
        self.k0 + self.poles.iter().zip(&self.residues).map(|(q, r)| r / (y - q)).sum::<f64>()
    }

    /// Rewrite as λ^{-s} ≈ k + Σ rᵢ/(λ − pᵢ) using y = λ_min/λ.
    pub fn partial_fractions(&self, lambda_min: f64) -> Result<PartialFractions> {
        let scale = lambda_min.powf(-self.s);
        let mut k = self.k0;
        let mut poles = Vec::with_capacity(self.poles.len());
        let mut residues = Vec::with_capacity(self.poles.len());
        for (&q, &rho) in self.poles.iter().zip(&self.residues) {
            if !(q < 0.0) {
                return Err(Error::Approximation(format!("pole {q} is not negative")));
            }
            k -= rho / q;
            poles.push(lambda_min / q);
            residues.push(-lambda_min.powf(1.0 - self.s) * rho / (q * q));
        }
        k *= scale;
        if residues.iter().any(|&r| !(r > 0.0)) || !(k > 0.0) {
            return Err(Error::Approximation(format!(
                "non-positive partial-fraction weights (k={k:e}, r={residues:?})"
            )));
        }
        Ok(PartialFractions { k, poles, residues })
    }
}
