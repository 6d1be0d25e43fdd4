//! Derivative-free minimization: Nelder–Mead with one restart, then a compass polish.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_evals: usize,
    pub diameter_tol: f64,
    pub initial_step: f64,
    pub restarts: usize,
    /// Compass polish step sizes, largest first; empty disables polishing.
    pub polish_steps: Vec<f64>,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            diameter_tol: 1e-5,
            initial_step: 0.5,
            restarts: 1,
            polish_steps: vec![1e-2, 3e-3, 1e-3],
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub iterations: usize,
    /// Simplex diameter at termination of the last Nelder–Mead run.
    pub final_step: f64,
    /// Best value after each iteration.
    pub trace: Vec<f64>,
}

struct Counter<'a> {
    f: &'a dyn Fn(&[f64]) -> f64,
    evals: usize,
}

impl Counter<'_> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn nelder_mead_run(
    cnt: &mut Counter<'_>,
    x0: &[f64],
    step: f64,
    budget: usize,
    tol: f64,
    trace: &mut Vec<f64>,
) -> Result<(Vec<f64>, f64, usize, f64)> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = cnt.call(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let mut f = cnt.call(&x);
        if !f.is_finite() {
            x[i] = x0[i] - step;
            f = cnt.call(&x);
        }
        simplex.push((x, f));
    }
    if simplex.iter().all(|(_, f)| !f.is_finite()) {
        return Err(Error::Optimization(format!(
            "every initial simplex vertex was rejected (start {x0:?})"
        )));
    }
    let start_evals = cnt.evals;
    let mut iterations = 0;
    let mut diameter = f64::INFINITY;
    let cmp = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| a.1.partial_cmp(&b.1).unwrap();
    while cnt.evals - start_evals < budget {
        simplex.sort_by(cmp);
        trace.push(simplex[0].1);
        diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < tol {
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (worst.0[k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = cnt.call(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = cnt.call(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(-0.5);
                let fc = cnt.call(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = cnt.call(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = v.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let f = cnt.call(&x);
                    *v = (x, f);
                }
            }
        }
    }
    simplex.sort_by(cmp);
    let (x, f) = simplex.swap_remove(0);
    Ok((x, f, iterations, diameter))
}

/// Greedy coordinate search; accepts strict improvements only.
fn compass(cnt: &mut Counter<'_>, x: &mut [f64], fx: &mut f64, steps: &[f64], budget: usize, trace: &mut Vec<f64>) {
    let start = cnt.evals;
    for &h in steps {
        loop {
            let mut improved = false;
            for k in 0..x.len() {
                for dir in [1.0, -1.0] {
                    if cnt.evals - start >= budget {
                        return;
                    }
                    let old = x[k];
                    x[k] = old + dir * h;
                    let f = cnt.call(x);
                    if f < *fx {
                        *fx = f;
                        improved = true;
                        trace.push(f);
                        break;
                    }
                    x[k] = old;
                }
            }
            if !improved {
                break;
            }
        }
    }
}

/// Minimize `f` from `x0`.
pub fn minimize(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult> {
    let mut cnt = Counter { f, evals: 0 };
    let mut trace = Vec::new();
    if x0.is_empty() {
        let v = cnt.call(x0);
        return Ok(OptimResult { x: vec![], value: v, evaluations: 1, iterations: 0, final_step: 0.0, trace: vec![v] });
    }
    let (mut x, mut fx, mut iterations, mut diam) =
        nelder_mead_run(&mut cnt, x0, opts.initial_step, opts.max_evals, opts.diameter_tol, &mut trace)?;
    for _ in 0..opts.restarts {
        let step = (opts.initial_step * 0.2).max(10.0 * opts.diameter_tol);
        let (x2, f2, it2, d2) = nelder_mead_run(&mut cnt, &x, step, opts.max_evals, opts.diameter_tol, &mut trace)?;
        iterations += it2;
        diam = d2;
        if f2 <= fx {
            x = x2;
            fx = f2;
        }
    }
    if !fx.is_finite() {
        return Err(Error::Optimization("no finite objective value found".into()));
    }
    let budget = 50 * x.len() * opts.polish_steps.len().max(1);
    compass(&mut cnt, &mut x, &mut fx, &opts.polish_steps, budget, &mut trace);
    Ok(OptimResult { x, value: fx, evaluations: cnt.evals, iterations, final_step: diam, trace })
}
