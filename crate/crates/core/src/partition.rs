//! Quantum and classical partition functions, heat-trace coefficient fits and
//! the explicit Golden-Thompson type upper bounds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{field_min_eigen, sym_exp};
use crate::geometry::{ball_volume_model, ManifoldKind, ModelManifold, Point};
use crate::operator::SemiclassicalOperator;
use crate::quadrature::gauss_legendre;
use crate::regression::{log_log_slope, polynomial_fit, SlopeFit};
use crate::spectral::SpectralDecomposition;

/// Constants of the explicit bound, derived from `(alpha, delta, kappa, w0, K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub alpha: f64,
    pub delta: f64,
    /// `Ric >= -kappa`.
    pub kappa: f64,
    /// `W >= w0`.
    pub w0: f64,
    /// Upper bound on sectional curvature.
    #[serde(rename = "K")]
    pub curvature_bound: f64,
    pub dim: usize,
    pub c1: f64,
    pub c_tilde: f64,
    pub c2: f64,
    pub c3: f64,
}

impl BoundConstants {
    pub fn new(alpha: f64, delta: f64, kappa: f64, w0: f64, curvature_bound: f64, dim: usize) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must exceed 1, got {alpha}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Domain(format!("delta must be positive, got {delta}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::Domain(format!("kappa must be >= 0, got {kappa}")));
        }
        if !w0.is_finite() || !curvature_bound.is_finite() || dim == 0 {
            return Err(Error::Domain("w0 and K must be finite, dim positive".into()));
        }
        let n = dim as f64;
        let c1 = (1.0 + delta).powf(n * alpha) * ((1.0 + alpha) / delta).exp();
        let c_tilde = alpha * n / (alpha - 1.0) * kappa * delta;
        let c2 = c_tilde - w0;
        let c3 = c1 * (2.0 * PI.sqrt()).powi(dim as i32) / ball_volume_model(0.0, dim, 1.0)?;
        Ok(BoundConstants {
            alpha,
            delta,
            kappa,
            w0,
            curvature_bound,
            dim,
            c1,
            c_tilde,
            c2,
            c3,
        })
    }

    /// Constants for `op` with the natural geometric inputs: `kappa` from the
    /// Ricci lower bound, `K` the sectional curvature, `w0` the declared
    /// lower bound of `W` (or its grid minimum).
    pub fn for_operator(op: &SemiclassicalOperator, alpha: f64, delta: f64) -> Result<Self> {
        let m = op.manifold();
        let ricci_min = (m.dim() as f64 - 1.0) * m.curvature();
        let w = op.endomorphism();
        let w0 = w.lower_bound().unwrap_or_else(|| field_min_eigen(w, m, 64));
        Self::new(alpha, delta, (-ricci_min).max(0.0), w0, m.curvature(), m.dim())
    }
}

/// `(alpha, delta, c1, c2, c3)` for a grid of parameter choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsGridRow {
    pub alpha: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

pub fn constants_grid(base: &BoundConstants, alphas: &[f64], deltas: &[f64]) -> Result<Vec<ConstantsGridRow>> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &delta in deltas {
            let c = BoundConstants::new(alpha, delta, base.kappa, base.w0, base.curvature_bound, base.dim)?;
            rows.push(ConstantsGridRow {
                alpha,
                delta,
                c1: c.c1,
                c2: c.c2,
                c3: c.c3,
            });
        }
    }
    Ok(rows)
}

/// `Z_Q = Tr e^{-t H}`.
pub fn z_quantum(sd: &SpectralDecomposition, t: f64) -> Result<f64> {
    sd.trace(t)
}

/// `(2 sqrt(pi t) hbar)^{-n}`, the phase-space factor.
pub fn phase_space_factor(t: f64, hbar: f64, n: usize) -> f64 {
    (2.0 * (PI * t).sqrt() * hbar).powi(-(n as i32))
}

/// `a_0(t) = int_M tr e^{-t V(x)} dx`.
pub fn classical_integral(op: &SemiclassicalOperator, t: f64) -> Result<f64> {
    let m = op.manifold();
    let v = op.potential();
    if let Some(v0) = v.constant_value() {
        return Ok(m.volume() * sym_exp(&v0, -t).trace());
    }
    let integrand = |p: &Point| sym_exp(&v.eval(p), -t).trace();
    match m.kind() {
        ManifoldKind::RoundSphere => {
            let (pole, _) = v
                .zonal_profile()
                .ok_or_else(|| Error::Unsupported("sphere fields must be zonal".into()))?;
            let radius = m.scale()[0];
            // orthonormal frame around the pole: points at height z along it
            let frame = m.frame(&Point::Sphere(pole));
            let e1 = frame[0];
            let f = |z: f64| {
                let s = (1.0 - z * z).max(0.0).sqrt();
                integrand(&Point::Sphere(pole * z + e1 * s))
            };
            converge_by_doubling(16, 4096, |n| {
                let (x, w) = gauss_legendre(n);
                x.iter().zip(&w).map(|(z, w)| w * f(*z)).sum::<f64>() * 2.0 * PI * radius * radius
            })
        }
        _ => {
            let dim = m.dim();
            let vol = m.volume();
            let start = (4 * v.max_frequency() + 8).next_power_of_two();
            let cap = if dim == 1 { 1 << 16 } else { 1 << 10 };
            converge_by_doubling(start, cap, |n| {
                let total = n.pow(dim as u32);
                let mut sum = 0.0;
                let mut c = 0.0;
                for mut idx in 0..total {
                    let mut a = Vec::with_capacity(dim);
                    for _ in 0..dim {
                        a.push(2.0 * PI * (idx % n) as f64 / n as f64);
                        idx /= n;
                    }
                    // compensated: the periodic trapezoid sums many equal-size terms
                    let y = integrand(&Point::Angles(a)) - c;
                    let s = sum + y;
                    c = (s - sum) - y;
                    sum = s;
                }
                sum * vol / total as f64
            })
        }
    }
}

/// Evaluates `rule(n)` for doubling `n` until two successive values agree
/// to `1e-14` relative.
fn converge_by_doubling<F: FnMut(usize) -> f64>(start: usize, cap: usize, mut rule: F) -> Result<f64> {
    let mut n = start;
    let mut prev = rule(n);
    while n < cap {
        n *= 2;
        let next = rule(n);
        if (next - prev).abs() <= 1e-14 * next.abs() {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureFailure {
        estimate: f64::NAN,
        tolerance: 1e-14,
    })
}

/// `Z_C = (2 sqrt(pi t) hbar)^{-n} a_0(t)`.
pub fn z_classical(op: &SemiclassicalOperator, t: f64, hbar: f64) -> Result<f64> {
    if !(t > 0.0 && hbar > 0.0) {
        return Err(Error::Domain(format!("need t, hbar > 0, got {t}, {hbar}")));
    }
    Ok(phase_space_factor(t, hbar, op.dim()) * classical_integral(op, t)?)
}

/// Fitted heat-trace coefficients `a_j(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatFit {
    pub a: Vec<f64>,
    pub stderr: Vec<f64>,
    pub residual_norm: f64,
    pub condition: f64,
    pub samples: usize,
}

/// Fits `Z_Q (2 sqrt(pi t) hbar)^n = sum_j a_j (t hbar^2)^j` by least squares.
pub fn fit_heat_coefficients(samples: &[(f64, f64)], t: f64, n: usize, order: usize) -> Result<HeatFit> {
    if samples.len() < order + 2 {
        return Err(Error::Domain(format!(
            "fit of order {order} needs at least {} samples, got {}",
            order + 2,
            samples.len()
        )));
    }
    let x: Vec<f64> = samples.iter().map(|(h, _)| t * h * h).collect();
    let y: Vec<f64> = samples
        .iter()
        .map(|(h, z)| z / phase_space_factor(t, *h, n))
        .collect();
    let fit = polynomial_fit(&x, &y, order)?;
    Ok(HeatFit {
        a: fit.coefficients,
        stderr: fit.stderr,
        residual_norm: fit.residual_norm,
        condition: fit.condition,
        samples: samples.len(),
    })
}

/// Largest admissible `sqrt(t hbar^2)`: the injectivity radius, and
/// `pi / sqrt(K)` for positive `K`.
fn radius_window(m: &ModelManifold, curvature_bound: f64) -> f64 {
    let conj = if curvature_bound > 0.0 {
        PI / curvature_bound.sqrt()
    } else {
        f64::INFINITY
    };
    m.injectivity_radius().min(conj)
}

/// `c1 e^{c2 t hbar^2} a_0(t) / omega(sqrt(t hbar^2))` with the exact ball
/// volume `omega` of the model manifold.
pub fn gt_upper_bound(m: &ModelManifold, a0: f64, bc: &BoundConstants, t: f64, hbar: f64) -> Result<f64> {
    let tau = t * hbar * hbar;
    let r = tau.sqrt();
    let window = radius_window(m, bc.curvature_bound);
    if !(r > 0.0 && r < window) {
        return Err(Error::Domain(format!(
            "sqrt(t hbar^2) = {r} outside the radius window (0, {window})"
        )));
    }
    Ok(bc.c1 * (bc.c2 * tau).exp() * a0 / m.ball_volume(r)?)
}

/// Right-hand side `c3 e^{c2 tau} v_{0,n}(sqrt tau) / v_{K,n}(sqrt tau)`.
pub fn corollary_rhs(m: &ModelManifold, bc: &BoundConstants, t: f64, hbar: f64) -> Result<(f64, f64)> {
    let tau = t * hbar * hbar;
    let r = tau.sqrt();
    let window = radius_window(m, bc.curvature_bound);
    if !(r > 0.0 && r < window) {
        return Err(Error::Domain(format!(
            "sqrt(t hbar^2) = {r} outside the radius window (0, {window})"
        )));
    }
    let quotient = ball_volume_model(0.0, bc.dim, r)? / ball_volume_model(bc.curvature_bound, bc.dim, r)?;
    Ok((bc.c3 * (bc.c2 * tau).exp() * quotient, quotient))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorollaryRow {
    pub hbar: f64,
    pub ratio: f64,
    pub rhs: Option<f64>,
    pub holds: Option<bool>,
    /// Smallest constant replacing `c3` that makes this row hold.
    pub needed_constant: Option<f64>,
    pub status: String,
}

/// Evaluates `Z_Q/Z_C <= c3 e^{c2 tau} v_0/v_K` for one `hbar` given the
/// ratio `Z_Q/Z_C`. Rows outside the radius window are reported, not fatal.
pub fn corollary_row(m: &ModelManifold, bc: &BoundConstants, t: f64, hbar: f64, ratio: f64) -> CorollaryRow {
    match corollary_rhs(m, bc, t, hbar) {
        Ok((rhs, quotient)) => CorollaryRow {
            hbar,
            ratio,
            rhs: Some(rhs),
            holds: Some(ratio <= rhs * (1.0 + 1e-9)),
            needed_constant: Some(ratio / ((bc.c2 * t * hbar * hbar).exp() * quotient)),
            status: "ok".into(),
        },
        Err(e) => CorollaryRow {
            hbar,
            ratio,
            rhs: None,
            holds: None,
            needed_constant: None,
            status: e.to_string(),
        },
    }
}

/// The comparison across a grid of `hbar`, with `Z_Q` from `oracle(hbar)`.
pub fn check_corollary_47<F>(
    op: &SemiclassicalOperator,
    bc: &BoundConstants,
    t: f64,
    hbar_grid: &[f64],
    mut oracle: F,
) -> Result<Vec<CorollaryRow>>
where
    F: FnMut(f64) -> Result<SpectralDecomposition>,
{
    let a0 = classical_integral(op, t)?;
    hbar_grid
        .iter()
        .map(|&h| {
            let zq = z_quantum(&oracle(h)?, t)?;
            let zc = phase_space_factor(t, h, op.dim()) * a0;
            Ok(corollary_row(op.manifold(), bc, t, h, zq / zc))
        })
        .collect()
}

/// Empirical replacement for `c3`: the largest needed constant on the grid.
pub fn empirical_constant(rows: &[CorollaryRow]) -> Option<f64> {
    rows.iter()
        .filter_map(|r| r.needed_constant)
        .fold(None, |acc: Option<f64>, c| Some(acc.map_or(c, |a| a.max(c))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub hbar: f64,
    pub zq: f64,
    pub zc: f64,
    pub ratio: f64,
    pub bound: Option<f64>,
}

/// One row of the partition sweep.
pub fn partition_row(
    op: &SemiclassicalOperator,
    sd: &SpectralDecomposition,
    bc: &BoundConstants,
    t: f64,
    hbar: f64,
    a0: f64,
) -> Result<PartitionRow> {
    let zq = z_quantum(sd, t)?;
    let zc = phase_space_factor(t, hbar, op.dim()) * a0;
    Ok(PartitionRow {
        hbar,
        zq,
        zc,
        ratio: zq / zc,
        bound: gt_upper_bound(op.manifold(), a0, bc, t, hbar).ok(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub t: f64,
    pub rows: Vec<PartitionRow>,
    pub fit: HeatFit,
    /// `t hbar^2` range of the rows used in the fit.
    pub fit_window: [f64; 2],
    pub constants: BoundConstants,
    /// Slope of `log |ratio - 1|` against `log hbar` over rows with
    /// `t hbar^2 < 0.01`.
    pub ratio_slope: Option<SlopeFit>,
    /// Whether `|ratio - 1|` decreases along decreasing `hbar` in that range.
    pub ratio_monotone: bool,
}

impl PartitionReport {
    /// Assembles the report from rows (any order; sorted by decreasing `hbar`).
    pub fn from_rows(
        t: f64,
        dim: usize,
        mut rows: Vec<PartitionRow>,
        constants: BoundConstants,
        fit_order: usize,
        fit_window: [f64; 2],
    ) -> Result<Self> {
        rows.sort_by(|a, b| b.hbar.total_cmp(&a.hbar));
        let samples: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| {
                let tau = t * r.hbar * r.hbar;
                tau >= fit_window[0] * (1.0 - 1e-12) && tau <= fit_window[1] * (1.0 + 1e-12)
            })
            .map(|r| (r.hbar, r.zq))
            .collect();
        let fit = fit_heat_coefficients(&samples, t, dim, fit_order)?;
        let small: Vec<&PartitionRow> = rows.iter().filter(|r| t * r.hbar * r.hbar < 0.01).collect();
        let dev: Vec<f64> = small.iter().map(|r| (r.ratio - 1.0).abs()).collect();
        let ratio_monotone = dev.windows(2).all(|w| w[1] < w[0]);
        let ratio_slope = log_log_slope(&small.iter().map(|r| r.hbar).collect::<Vec<_>>(), &dev).ok();
        Ok(PartitionReport {
            t,
            rows,
            fit,
            fit_window,
            constants,
            ratio_slope,
            ratio_monotone,
        })
    }
}
