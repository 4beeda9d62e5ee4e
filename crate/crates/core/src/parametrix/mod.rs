//! The cutoff parametrix
//!
//! ```text
//! khat^(N)(x, y, t, hbar) = chi(d(x, y)) q(x, y, t hbar^2) sum_{j <= N} (t hbar^2)^j phi_j(x, y, t)
//! ```
//!
//! with the coefficients `phi_j` obtained from the recursive transport
//! equations along the geodesic from `y` to `x`:
//!
//! ```text
//! phi_0 = e^{I(r)} A(1)^{-1}
//! phi_j = -e^{I(r)} A(1)^{-1} int_0^1 u^{j-1} e^{-I(ur)} A(u) (L phi_{j-1})(xy(u), y, u t) du
//! ```
//!
//! where `I(r) = int_0^r G(rho)/rho drho`, `A` is the transport propagator
//! and `L = Delta + W`. `L` acts on the previous coefficient by fourth-order
//! central differences in normal coordinates; the step grows tenfold with
//! each level of nesting so that the rounding noise of the inner level is
//! not amplified past the quadrature tolerance.

pub mod gaussian;
pub mod transport;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::sym_exp;
use crate::geometry::Point;
use crate::operator::SemiclassicalOperator;
use crate::quadrature::integrate_unit_fixed;

pub use gaussian::{cutoff_chi, gaussian_q};
pub use transport::{transport_propagator, Ray, TransportState};

/// Highest supported truncation order.
pub const MAX_ORDER: usize = 2;

/// Relative rounding noise assumed for `phi_0`.
const PHI0_NOISE: f64 = 1e-15;

/// Margin between the modelled noise and the quadrature acceptance level.
const NOISE_SAFETY: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParametrixConfig {
    /// Truncation order `N`.
    #[serde(rename = "N", alias = "order")]
    pub order: usize,
    /// Cutoff radius; `None` means `0.9 * injectivity radius`.
    pub eta: Option<f64>,
    /// Magnus steps per unit of the ray parameter.
    pub ode_steps: usize,
    pub quad_tol: f64,
    /// Finite-difference step for `L phi_0`; deeper levels use 10x per level.
    pub fd_step: f64,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        ParametrixConfig {
            order: 1,
            eta: None,
            ode_steps: 256,
            quad_tol: 1e-10,
            fd_step: 2e-3,
        }
    }
}

impl ParametrixConfig {
    pub fn with_order(order: usize) -> Self {
        ParametrixConfig {
            order,
            ..Default::default()
        }
    }
}

/// Everything assembled at one `(x, y, t, hbar)`.
#[derive(Clone, Debug)]
pub struct ParametrixEvaluation {
    pub distance: f64,
    pub chi: f64,
    pub q_value: f64,
    /// `phi_0 .. phi_N`; empty when `d(x, y) >= eta`.
    pub phi: Vec<DMatrix<f64>>,
    pub khat: DMatrix<f64>,
    pub residual: Option<DMatrix<f64>>,
}

/// The `hbar`-independent part of the parametrix at `(x, y, t)`.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub distance: f64,
    pub t: f64,
    pub dim: usize,
    pub rank: usize,
    pub chi: f64,
    pub phi: Vec<DMatrix<f64>>,
}

impl Coefficients {
    /// Assembles `khat` at `hbar`. Coefficients are reused across `hbar`.
    pub fn evaluate(&self, hbar: f64) -> Result<ParametrixEvaluation> {
        if !(hbar > 0.0) {
            return Err(Error::Domain(format!("hbar must be positive, got {hbar}")));
        }
        let tau = self.t * hbar * hbar;
        let q = gaussian_q(self.distance * self.distance, tau, self.dim)?;
        let mut khat = DMatrix::zeros(self.rank, self.rank);
        for (j, p) in self.phi.iter().enumerate() {
            khat += p * tau.powi(j as i32);
        }
        khat *= self.chi * q;
        Ok(ParametrixEvaluation {
            distance: self.distance,
            chi: self.chi,
            q_value: q,
            phi: self.phi.clone(),
            khat,
            residual: None,
        })
    }
}

/// Parametrix of a validated operator.
pub struct Parametrix<'a> {
    op: &'a SemiclassicalOperator,
    cfg: ParametrixConfig,
    eta: f64,
}

/// Fourth-order central second difference `f''(0)` from `f(-2h..2h)`.
fn second_difference(fm2: &DMatrix<f64>, fm1: &DMatrix<f64>, f0: &DMatrix<f64>, f1: &DMatrix<f64>, f2: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    (fm1 * 16.0 + f1 * 16.0 - fm2 - f2 - f0 * 30.0) / (12.0 * h * h)
}

/// Fourth-order central first difference.
fn first_difference(fm2: &DMatrix<f64>, fm1: &DMatrix<f64>, f1: &DMatrix<f64>, f2: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    (fm2 - f2 + (f1 - fm1) * 8.0) / (12.0 * h)
}

impl<'a> Parametrix<'a> {
    pub fn new(op: &'a SemiclassicalOperator, cfg: ParametrixConfig) -> Result<Self> {
        let iota = op.manifold().injectivity_radius();
        let eta = cfg.eta.unwrap_or(0.9 * iota);
        if !(eta > 0.0 && eta < iota) {
            return Err(Error::Domain(format!("cutoff radius must lie in (0, {iota}), got {eta}")));
        }
        if cfg.order > MAX_ORDER {
            return Err(Error::Unsupported(format!(
                "truncation order {} (at most {MAX_ORDER})",
                cfg.order
            )));
        }
        if !(cfg.quad_tol > 0.0) || !(cfg.fd_step > 0.0) || cfg.ode_steps == 0 {
            return Err(Error::Domain(
                "quad_tol and fd_step must be positive and ode_steps nonzero".into(),
            ));
        }
        Ok(Parametrix { op, cfg, eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn config(&self) -> &ParametrixConfig {
        &self.cfg
    }

    pub fn operator(&self) -> &SemiclassicalOperator {
        self.op
    }

    /// Finite-difference step used for `L phi_{j-1}` inside `phi_j`.
    fn fd_step(&self, j: usize) -> f64 {
        self.cfg.fd_step * 10f64.powi(j as i32 - 1)
    }

    /// Relative noise level of `phi_j` implied by the nested differencing:
    /// each level sums `n` stencils with absolute weights `64/12 h^-2`.
    fn noise(&self, j: usize) -> f64 {
        let n = self.op.manifold().dim() as f64;
        let mut eps = PHI0_NOISE;
        for level in 1..=j {
            let h = self.fd_step(level);
            eps = eps * n * (64.0 / 12.0) / (h * h) + h.powi(4);
        }
        eps
    }

    /// `I(r) = int_0^1 G(u r)/u du`.
    pub fn log_prefactor(&self, r: f64) -> Result<f64> {
        let m = self.op.manifold();
        if m.curvature() == 0.0 || r == 0.0 {
            return Ok(0.0);
        }
        integrate_unit_fixed(
            |u: &[f64]| Ok(u.iter().map(|u| r * m.g_over_r(u * r)).collect()),
            0.01 * self.cfg.quad_tol,
            1e-15,
        )
        .map(|q| q.value)
    }

    fn check_distance(&self, x: &Point, y: &Point, limit: f64) -> Result<f64> {
        let r = self.op.manifold().distance(x, y);
        if r >= limit {
            return Err(Error::CutLocus { distance: r, limit });
        }
        Ok(r)
    }

    /// `phi_0(x, y, t)` for `d(x, y) < eta`.
    pub fn phi0(&self, x: &Point, y: &Point, t: f64) -> Result<DMatrix<f64>> {
        self.check_distance(x, y, self.eta)?;
        self.phi_inner(0, x, y, t)
    }

    /// `phi_j(x, y, t)` for `d(x, y) < eta` and `j <= 2`.
    pub fn phi(&self, j: usize, x: &Point, y: &Point, t: f64) -> Result<DMatrix<f64>> {
        if j > MAX_ORDER {
            return Err(Error::Unsupported(format!("coefficient index {j}")));
        }
        self.check_distance(x, y, self.eta)?;
        self.phi_inner(j, x, y, t)
    }

    fn check_time(t: f64) -> Result<()> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("time must be >= 0, got {t}")));
        }
        Ok(())
    }

    /// `phi_j` without the cutoff-radius check (only the cut locus).
    fn phi_inner(&self, j: usize, x: &Point, y: &Point, t: f64) -> Result<DMatrix<f64>> {
        Self::check_time(t)?;
        let m = self.op.manifold();
        let r = self.check_distance(x, y, m.injectivity_radius())?;
        let v = m.log_normal(y, x);
        let potential = self.op.potential();
        let rank = self.op.rank();
        let log_pre = self.log_prefactor(r)?;

        if j == 0 {
            if let Some(v0) = potential.constant_value() {
                return Ok(sym_exp(&v0, -t).into_inner() * log_pre.exp());
            }
            if r == 0.0 {
                return Ok(sym_exp(&potential.eval(y), -t).into_inner());
            }
            let ray = Ray {
                manifold: m,
                potential,
                base: y,
                v: &v,
                t,
            };
            let a = ray.propagate_to(&[1.0], self.cfg.ode_steps)?.remove(0).0;
            let inv = a
                .try_inverse()
                .ok_or_else(|| Error::StepFailure("singular transport propagator".into()))?;
            return Ok(inv * log_pre.exp());
        }

        // Flat manifold with constant potential and endomorphism: phi_0 does not
        // depend on x, so L phi_0 = W phi_0 is constant along the ray and the
        // recursion has a closed form.
        if m.curvature() == 0.0 {
            if let (Some(v0), Some(w0)) = (potential.constant_value(), self.op.endomorphism().constant_value()) {
                if w0.matrix().iter().all(|c| *c == 0.0) {
                    return Ok(DMatrix::zeros(rank, rank));
                }
                if j == 1 && (v0.matrix() * w0.matrix() - w0.matrix() * v0.matrix()).amax() == 0.0 {
                    // commuting: phi_1 = -W phi_0
                    return Ok(-(w0.matrix() * sym_exp(&v0, -t).matrix()));
                }
            }
        }

        let h = self.fd_step(j);
        // consecutive ladder rules each carry the differencing noise
        let tol = self.cfg.quad_tol.max(NOISE_SAFETY * self.noise(j));
        let ray = Ray {
            manifold: m,
            potential,
            base: y,
            v: &v,
            t,
        };
        let a_end = ray.propagate_to(&[1.0], self.cfg.ode_steps)?.remove(0).0;
        let integral = integrate_unit_fixed(
            |nodes: &[f64]| {
                let props = ray.propagate_to(nodes, self.cfg.ode_steps)?;
                nodes
                    .iter()
                    .zip(props)
                    .map(|(&u, (a_u, _))| {
                        let w: Vec<f64> = v.iter().map(|c| u * c).collect();
                        let z = m.exp_normal(y, &w);
                        let lphi = self.apply_l(j - 1, &z, y, u * t, h)?;
                        let weight = u.powi(j as i32 - 1) * (-self.log_prefactor(u * r)?).exp();
                        Ok(a_u * lphi * weight)
                    })
                    .collect()
            },
            tol,
            tol,
        )?
        .value;
        let a_inv = a_end
            .try_inverse()
            .ok_or_else(|| Error::StepFailure("singular transport propagator".into()))?;
        Ok(a_inv * integral * (-log_pre.exp()))
    }

    /// Applies `f -> -sum_i d^2/dv_i^2 f(exp_z(v))|_{v=0}` (the nonnegative
    /// Laplacian at `z`) to a matrix-valued function by fourth-order central
    /// differences with step `h`.
    fn laplacian_at<F>(&self, z: &Point, h: f64, mut f: F) -> Result<DMatrix<f64>>
    where
        F: FnMut(&Point) -> Result<DMatrix<f64>>,
    {
        let m = self.op.manifold();
        let n = m.dim();
        let f0 = f(z)?;
        let mut lap = DMatrix::zeros(f0.nrows(), f0.ncols());
        let mut v = vec![0.0; n];
        for i in 0..n {
            let mut at = |s: f64| {
                v.iter_mut().for_each(|c| *c = 0.0);
                v[i] = s;
                f(&m.exp_normal(z, &v))
            };
            let (fm2, fm1, f1, f2) = (at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?);
            lap -= second_difference(&fm2, &fm1, &f0, &f1, &f2, h);
        }
        Ok(lap)
    }

    /// `(L phi_j)(z, y, t)` with `L = Delta + W`, differencing step `h`.
    fn apply_l(&self, j: usize, z: &Point, y: &Point, t: f64, h: f64) -> Result<DMatrix<f64>> {
        let lap = self.laplacian_at(z, h, |p| self.phi_inner(j, p, y, t))?;
        let w = self.op.endomorphism();
        if w.is_zero() {
            return Ok(lap);
        }
        Ok(lap + w.eval_matrix(z) * self.phi_inner(j, z, y, t)?)
    }

    /// `phi_0 .. phi_N` at `(x, y, t)`, or an empty list beyond the cutoff.
    pub fn coefficients(&self, x: &Point, y: &Point, t: f64) -> Result<Coefficients> {
        Self::check_time(t)?;
        let m = self.op.manifold();
        let r = m.distance(x, y);
        let chi = cutoff_chi(r, self.eta);
        let phi = if r < self.eta {
            (0..=self.cfg.order)
                .map(|j| self.phi_inner(j, x, y, t))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Coefficients {
            distance: r,
            t,
            dim: m.dim(),
            rank: self.op.rank(),
            chi,
            phi,
        })
    }

    /// `khat^(N)(x, y, t, hbar)`.
    pub fn kernel(&self, x: &Point, y: &Point, t: f64, hbar: f64) -> Result<ParametrixEvaluation> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        self.coefficients(x, y, t)?.evaluate(hbar)
    }

    /// `chi(d(p, y)) (phi_0, .., phi_N)(p, y, t)`.
    fn cut_coefficients(&self, p: &Point, y: &Point, t: f64) -> Result<Vec<DMatrix<f64>>> {
        let r = self.op.manifold().distance(p, y);
        let chi = cutoff_chi(r, self.eta);
        let rank = self.op.rank();
        if chi == 0.0 {
            return Ok(vec![DMatrix::zeros(rank, rank); self.cfg.order + 1]);
        }
        Ok((0..=self.cfg.order)
            .map(|j| self.phi_inner(j, p, y, t))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .map(|m| m * chi)
            .collect())
    }

    /// The `hbar`-independent ingredients of the heat-equation residual
    /// `(d/dt + H_x) khat^(N)` at `(x, y, t)`.
    pub fn residual_parts(&self, x: &Point, y: &Point, t: f64) -> Result<ResidualParts> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        let m = self.op.manifold();
        let r = self.check_distance(x, y, self.eta)?;
        let order = self.cfg.order;
        let h = self.fd_step(order + 1);
        let center = self.cut_coefficients(x, y, t)?;

        let dt = 1e-3 * t;
        let at_t = |s: f64| self.cut_coefficients(x, y, t + s * dt);
        let (tm2, tm1, tp1, tp2) = (at_t(-2.0)?, at_t(-1.0)?, at_t(1.0)?, at_t(2.0)?);
        let time_derivative: Vec<_> = (0..=order)
            .map(|j| first_difference(&tm2[j], &tm1[j], &tp1[j], &tp2[j], dt))
            .collect();

        let rank = self.op.rank();
        let radial_derivative: Vec<_> = if r > 0.0 {
            let v = m.log_normal(y, x);
            let at_r = |s: f64| {
                let w: Vec<f64> = v.iter().map(|c| c * (r + s * h) / r).collect();
                self.cut_coefficients(&m.exp_normal(y, &w), y, t)
            };
            let (rm2, rm1, rp1, rp2) = (at_r(-2.0)?, at_r(-1.0)?, at_r(1.0)?, at_r(2.0)?);
            (0..=order)
                .map(|j| first_difference(&rm2[j], &rm1[j], &rp1[j], &rp2[j], h))
                .collect()
        } else {
            vec![DMatrix::zeros(rank, rank); order + 1]
        };

        let laplacian: Vec<_> = (0..=order)
            .map(|j| {
                self.laplacian_at(x, h, |p| {
                    let chi = cutoff_chi(m.distance(p, y), self.eta);
                    Ok(self.phi_inner(j, p, y, t)? * chi)
                })
            })
            .collect::<Result<_>>()?;

        let chi = cutoff_chi(r, self.eta);
        let l_phi_top = if chi > 0.0 {
            self.apply_l(order, x, y, t, h)?
        } else {
            DMatrix::zeros(rank, rank)
        };

        Ok(ResidualParts {
            distance: r,
            t,
            dim: m.dim(),
            order,
            chi,
            g: m.g_function(r)?,
            potential: self.op.potential().eval_matrix(x),
            endomorphism: self.op.endomorphism().eval_matrix(x),
            cut_phi: center,
            time_derivative,
            radial_derivative,
            laplacian,
            l_phi_top,
        })
    }

    /// `r_N = (d/dt + H_x) khat^(N)` at `(x, y, t, hbar)`.
    pub fn residual(&self, x: &Point, y: &Point, t: f64, hbar: f64) -> Result<DMatrix<f64>> {
        self.residual_parts(x, y, t)?.residual(hbar)
    }

    /// Left-hand side of the `j`-th transport equation,
    /// `t d_t phi_j + r d_r phi_j + (j - G + t V) phi_j + L phi_{j-1}`,
    /// which vanishes for the exact coefficients.
    pub fn transport_residual(&self, j: usize, x: &Point, y: &Point, t: f64) -> Result<DMatrix<f64>> {
        if j > MAX_ORDER {
            return Err(Error::Unsupported(format!("coefficient index {j}")));
        }
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        let m = self.op.manifold();
        let r = self.check_distance(x, y, self.eta)?;
        let h = self.fd_step(j + 1);
        let phi = self.phi_inner(j, x, y, t)?;

        let dt = 1e-3 * t;
        let at_t = |s: f64| self.phi_inner(j, x, y, t + s * dt);
        let d_t = first_difference(&at_t(-2.0)?, &at_t(-1.0)?, &at_t(1.0)?, &at_t(2.0)?, dt);

        let mut lhs = d_t * t;
        if r > 0.0 {
            let v = m.log_normal(y, x);
            let at_r = |s: f64| {
                let w: Vec<f64> = v.iter().map(|c| c * (r + s * h) / r).collect();
                self.phi_inner(j, &m.exp_normal(y, &w), y, t)
            };
            let d_r = first_difference(&at_r(-2.0)?, &at_r(-1.0)?, &at_r(1.0)?, &at_r(2.0)?, h);
            lhs += d_r * r;
        }
        let g = m.g_function(r)?;
        lhs += &phi * (j as f64 - g) + self.op.potential().eval_matrix(x) * &phi * t;
        if j > 0 {
            lhs += self.apply_l(j - 1, x, y, t, self.fd_step(j))?;
        }
        Ok(lhs)
    }
}

/// Ingredients of `r_N`; the Gaussian factor is differentiated in closed form
/// and only the smooth factor `chi sum tau^j phi_j` by finite differences.
#[derive(Clone, Debug)]
pub struct ResidualParts {
    pub distance: f64,
    pub t: f64,
    pub dim: usize,
    pub order: usize,
    pub chi: f64,
    pub g: f64,
    pub potential: DMatrix<f64>,
    pub endomorphism: DMatrix<f64>,
    /// `chi phi_j(x)`.
    pub cut_phi: Vec<DMatrix<f64>>,
    /// `d/dt (chi phi_j)`.
    pub time_derivative: Vec<DMatrix<f64>>,
    /// Derivative of `chi phi_j` along the geodesic from `y` through `x`.
    pub radial_derivative: Vec<DMatrix<f64>>,
    /// `Delta_x (chi phi_j)`.
    pub laplacian: Vec<DMatrix<f64>>,
    /// `(L phi_N)(x)`.
    pub l_phi_top: DMatrix<f64>,
}

impl ResidualParts {
    /// `q [dF/dt - (G/t) F + (r/t) dF/dr + hbar^2 (Delta F + W F) + V F]`
    /// with `F = chi sum_j (t hbar^2)^j phi_j`.
    pub fn residual(&self, hbar: f64) -> Result<DMatrix<f64>> {
        let t = self.t;
        let tau = t * hbar * hbar;
        let q = gaussian_q(self.distance * self.distance, tau, self.dim)?;
        let rank = self.potential.nrows();
        let mut f = DMatrix::zeros(rank, rank);
        let mut f_t = DMatrix::zeros(rank, rank);
        let mut f_r = DMatrix::zeros(rank, rank);
        let mut f_lap = DMatrix::zeros(rank, rank);
        for j in 0..=self.order {
            let p = tau.powi(j as i32);
            f += &self.cut_phi[j] * p;
            f_t += &self.cut_phi[j] * (j as f64 * p / t) + &self.time_derivative[j] * p;
            f_r += &self.radial_derivative[j] * p;
            f_lap += &self.laplacian[j] * p;
        }
        let bracket = f_t - &f * (self.g / t)
            + f_r * (self.distance / t)
            + (f_lap + &self.endomorphism * &f) * (hbar * hbar)
            + &self.potential * &f;
        Ok(bracket * q)
    }

    /// `chi q t^N hbar^{2N+2} L phi_N`, the exact residual where `chi = 1`.
    pub fn expected(&self, hbar: f64) -> Result<DMatrix<f64>> {
        let tau = self.t * hbar * hbar;
        let q = gaussian_q(self.distance * self.distance, tau, self.dim)?;
        let n = self.order as i32;
        Ok(&self.l_phi_top * (self.chi * q * self.t.powi(n) * hbar.powi(2 * n + 2)))
    }
}

/// Convenience form of [`Parametrix::kernel`].
pub fn approximate_kernel(
    op: &SemiclassicalOperator,
    x: &Point,
    y: &Point,
    t: f64,
    hbar: f64,
    cfg: &ParametrixConfig,
) -> Result<ParametrixEvaluation> {
    Parametrix::new(op, cfg.clone())?.kernel(x, y, t, hbar)
}

/// Convenience form of [`Parametrix::residual`].
pub fn residual(
    op: &SemiclassicalOperator,
    x: &Point,
    y: &Point,
    t: f64,
    hbar: f64,
    cfg: &ParametrixConfig,
) -> Result<DMatrix<f64>> {
    Parametrix::new(op, cfg.clone())?.residual(x, y, t, hbar)
}
