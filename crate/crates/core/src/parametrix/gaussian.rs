//! The Euclidean Gaussian `q = (4 pi tau)^{-n/2} exp(-r^2 / 4 tau)` and its
//! closed-form derivatives on a model manifold.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub fn gaussian_q(r2: f64, tau: f64, n: usize) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("Gaussian time must be positive, got {tau}")));
    }
    if !(r2 >= 0.0) {
        return Err(Error::Domain(format!("squared distance must be >= 0, got {r2}")));
    }
    Ok((4.0 * PI * tau).powf(-0.5 * n as f64) * (-r2 / (4.0 * tau)).exp())
}

/// `grad_x q = -q/(4 tau) grad_x(r^2)`, with `grad_x(r^2) = -2 exp_x^{-1}(y)`
/// given in normal coordinates at `x`.
pub fn gaussian_grad(q: f64, tau: f64, log_x_y: &[f64]) -> Vec<f64> {
    log_x_y.iter().map(|c| q / (4.0 * tau) * 2.0 * c).collect()
}

/// `Delta_x q = -q (r^2/(4 tau^2) + Delta_x(r^2)/(4 tau))` with the
/// nonnegative Laplacian and `Delta_x(r^2) = 4 G(r) - 2n`.
pub fn gaussian_laplacian(q: f64, r: f64, tau: f64, g: f64, n: usize) -> f64 {
    let lap_r2 = 4.0 * g - 2.0 * n as f64;
    -q * (r * r / (4.0 * tau * tau) + lap_r2 / (4.0 * tau))
}

/// `dq/dtau = q (r^2/(4 tau^2) - n/(2 tau))`.
pub fn gaussian_time_derivative(q: f64, r: f64, tau: f64, n: usize) -> f64 {
    q * (r * r / (4.0 * tau * tau) - n as f64 / (2.0 * tau))
}

/// The smooth step `chi`: 1 on `[0, eta/2]`, 0 on `[eta, inf)`.
pub fn cutoff_chi(r: f64, eta: f64) -> f64 {
    fn g(x: f64) -> f64 {
        if x > 0.0 {
            (-1.0 / x).exp()
        } else {
            0.0
        }
    }
    let x = ((2.0 * r - eta) / eta).clamp(0.0, 1.0);
    let (a, b) = (g(1.0 - x), g(x));
    a / (a + b)
}
