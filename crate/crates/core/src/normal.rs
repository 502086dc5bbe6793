//! Standard normal helpers built on erfc and its inverse.
//!
//! The distribution function is evaluated through `erfc` so that the lower
//! tail keeps full relative precision; the quantile goes through `erfc_inv`
//! for the same reason. `erfc` comes from libm (the statrs version loses
//! about ten bits in the far tail).

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use statrs::function::erf::erfc_inv;

/// Density of N(0, 1).
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Density of N(0, sigma²).
pub fn pdf_sigma(x: f64, sigma: f64) -> f64 {
    pdf(x / sigma) / sigma
}

/// Distribution function Φ of N(0, 1).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Distribution function of N(0, sigma²). `sigma == 0` degenerates to the
/// unit step (right-continuous).
pub fn cdf_sigma(x: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        if x >= 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        cdf(x / sigma)
    }
}

/// Quantile Φ⁻¹ of N(0, 1) for `p` in (0, 1).
pub fn quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}
