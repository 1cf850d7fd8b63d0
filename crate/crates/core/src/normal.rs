//! Standard Gaussian density, distribution and tail functions.
//!
//! Tails are computed through `erfc` so that `norm_sf(z)` keeps full
//! relative precision for large positive `z` instead of losing it to
//! `1 - norm_cdf(z)`.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1 / sqrt(2π)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Density of N(0, var) at `x`.
pub fn gauss_pdf(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
}

/// Standard normal CDF Φ(z).
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail Q(z) = 1 − Φ(z).
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// log Φ(z), accurate far into the lower tail.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z > -37.0 {
        let p = norm_cdf(z);
        if z > 0.0 {
            // ln(1 - q) with q small
            (-norm_sf(z)).ln_1p()
        } else {
            p.ln()
        }
    } else {
        // Asymptotic expansion of the Mills ratio.
        let z2 = z * z;
        let inv = 1.0 / z2;
        let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv * inv * inv + 105.0 * inv.powi(4);
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}
