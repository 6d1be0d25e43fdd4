//! Scalar probability helpers used across modules.

use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}

/// Logistic function with saturation kept strictly inside (0, 1).
pub fn logistic(x: f64) -> f64 {
    const EPS: f64 = 1e-12;
    let v = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    v.clamp(EPS, 1.0 - EPS)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Log density of N(mean, sd^2) at x.
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Exactly constant (or empty); rounding in a computed mean would otherwise
/// leave a spurious nonzero variance.
pub fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if is_constant(a) || is_constant(b) {
        return None;
    }
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Stable 64-bit mixing of a root seed with a list of tags (splitmix64 steps).
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = root ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        state = splitmix(state ^ t.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a short string tag into a seed component.
pub fn tag(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}


/// Modified Bessel function of the second kind, K_ν(x) for x > 0, from
/// K_ν(x) = ∫₀^∞ exp(−x cosh t) cosh(νt) dt (trapezoid rule; the integrand
/// decays doubly exponentially so the rule converges geometrically).
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k needs x > 0");
    let h = 0.01;
    let mut sum = 0.5 * (-x).exp();
    let mut t: f64 = h;
    loop {
        let v = (-x * t.cosh() + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
        sum += v;
        if v < 1e-18 * sum || t > 50.0 {
            break;
        }
        t += h;
    }
    sum * h
}

/// Matérn correlation with smoothness ν and inverse range κ at distance d.
pub fn matern_correlation(nu: f64, kappa: f64, d: f64) -> f64 {
    if d == 0.0 {
        return 1.0;
    }
    let x = kappa * d;
    let ln_norm = (1.0 - nu) * std::f64::consts::LN_2 - statrs::function::gamma::ln_gamma(nu);
    (ln_norm + nu * x.ln()).exp() * bessel_k(nu, x)
}

/// Least-squares AR(1) fit x_t = c + φx_{t-1} + e_t: returns (c, φ, innovation variance).
pub fn ar1_ols(x: &[f64]) -> Option<(f64, f64, f64)> {
    lagged_ols(x, 1)
}

/// Least-squares regression x_{t+h} = c + g·x_t + e_t: returns (c, g, residual variance).
/// `None` with fewer than three pairs or a constant regressor.
pub fn lagged_ols(x: &[f64], h: usize) -> Option<(f64, f64, f64)> {
    if h == 0 || x.len() < h + 3 {
        return None;
    }
    let (lag, cur) = (&x[..x.len() - h], &x[h..]);
    let (ml, mc) = (mean(lag), mean(cur));
    let sll: f64 = lag.iter().map(|v| (v - ml).powi(2)).sum();
    if sll <= 0.0 {
        return None;
    }
    let slc: f64 = lag.iter().zip(cur).map(|(a, b)| (a - ml) * (b - mc)).sum();
    let g = slc / sll;
    let c = mc - g * ml;
    let sse: f64 = lag.iter().zip(cur).map(|(a, b)| (b - c - g * a).powi(2)).sum();
    Some((c, g, sse / (cur.len() - 2) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_tails_and_center() {
        assert_eq!(norm_cdf(0.0), 0.5);
        let d = norm_cdf(1.959_963_984_540_054) - 0.975;
        assert!(d.abs() < 1e-11, "{d}");
        assert!(norm_cdf(-40.0) >= 0.0);
        assert!((norm_quantile(norm_cdf(1.3)) - 1.3).abs() < 1e-10);
    }

    #[test]
    fn matern_special_cases() {
        // ν = 1/2 is the exponential correlation
        for d in [0.1, 0.7, 2.0] {
            assert!((matern_correlation(0.5, 1.3, d) - (-1.3 * d).exp()).abs() < 1e-10);
        }
        // K_1(1) = 0.6019072301972346
        assert!((bessel_k(1.0, 1.0) - 0.601_907_230_197_234_6).abs() < 1e-12);
        // correlation at the practical range sqrt(8ν)/κ is about 0.13
        let r = matern_correlation(1.0, 2.0, 8f64.sqrt() / 2.0);
        assert!((r - 0.1399).abs() < 2e-3);
    }

    #[test]
    fn logistic_saturates() {
        assert_eq!(logistic(0.0), 0.5);
        assert_eq!(logistic(1e6), 1.0 - 1e-12);
        assert!((logit(logistic(0.7)) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
    }

    #[test]
    fn ar1_ols_exact_on_noiseless_series() {
        let mut x = vec![2.0];
        for _ in 0..20 {
            let last = *x.last().unwrap();
            x.push(0.5 + 0.8 * last);
        }
        let (c, phi, v) = ar1_ols(&x).unwrap();
        assert!((c - 0.5).abs() < 1e-9 && (phi - 0.8).abs() < 1e-9 && v < 1e-18);
        assert!(ar1_ols(&[1.0, 1.0, 1.0]).is_none());
    }
}
