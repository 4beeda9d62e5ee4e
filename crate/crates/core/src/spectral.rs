//! Spectral ground truth for `H = hbar^2 (Delta + W) + V`.
//!
//! * Constant fields on any model manifold: the closed-form Laplace spectrum
//!   (Fourier modes on circles, spherical harmonics on `S^2`) shifted by the
//!   constant matrix `hbar^2 W_0 + V_0`. Torus kernels factor over circles.
//! * Fourier fields on circles and tori: dense Galerkin matrices in the real
//!   orthonormal Fourier basis, fully diagonalized. Rank-one fields that are
//!   sums of one-variable functions on a torus split into a product of
//!   one-dimensional problems.
//!
//! Spectral sums stop once the next level's contribution is below `1e-14`
//! of the partial sum; if the available spectrum runs out first the sum
//! reports [`Error::NotConverged`].

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cache::DecompositionCache;
use crate::error::{Error, Result};
use crate::fields::{sym_exp, FourierTerm, SymMatrix};
use crate::geometry::{ManifoldKind, ModelManifold, Point};
use crate::operator::SemiclassicalOperator;

/// Relative size of the neglected tail in every spectral sum.
pub const TAIL_TOLERANCE: f64 = 1e-14;

/// Default ceiling on the mode index of closed-form sums.
const EXACT_INDEX_LIMIT: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMode {
    Exact,
    Galerkin,
    /// Tensor product of one-dimensional decompositions.
    Product,
}

#[derive(Clone, Debug)]
enum ExactFactor {
    Circle { radius: f64 },
    Sphere { radius: f64 },
}

/// Real orthonormal Fourier basis function: `1/sqrt(vol)`, or
/// `sqrt(2/vol) cos(k.theta)` / `sqrt(2/vol) sin(k.theta)`.
#[derive(Clone, Debug, PartialEq)]
struct BasisFn {
    k: Vec<i64>,
    sine: bool,
}

#[derive(Clone, Debug)]
enum Kind {
    Exact {
        factors: Vec<ExactFactor>,
        shift: SymMatrix,
        index_limit: usize,
    },
    Galerkin {
        lengths: Vec<f64>,
        basis: Vec<BasisFn>,
        vectors: DMatrix<f64>,
        cutoff: usize,
    },
    Product {
        factors: Vec<SpectralDecomposition>,
    },
}

/// Eigen-data of `H` (or of `Delta` for [`exact_spectrum`]) able to produce
/// heat kernels and traces.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    hbar: f64,
    rank: usize,
    /// Galerkin eigenvalues (ascending). Closed-form kinds generate their
    /// levels on demand and keep only an optional listing here.
    eigenvalues: Vec<f64>,
    kind: Kind,
}

/// Compensated running sum.
#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

fn not_converged(what: &str, limit: usize, t: f64) -> Error {
    Error::NotConverged(format!(
        "{what} still above tolerance at mode index {limit} for t = {t:e}; increase the cutoff"
    ))
}

/// `sum_k e^{-tau k^2 / R^2} cos(k delta)` over all integers `k`.
fn circle_theta_sum(radius: f64, tau: f64, delta: f64, limit: usize) -> Result<f64> {
    let mut acc = Kahan::default();
    acc.add(1.0);
    let mut diag = 1.0;
    for k in 1..=limit {
        let kf = k as f64;
        let w = 2.0 * (-tau * kf * kf / (radius * radius)).exp();
        acc.add(w * (kf * delta).cos());
        diag += w;
        if w <= TAIL_TOLERANCE * diag {
            return Ok(acc.sum);
        }
    }
    Err(not_converged("circle theta sum", limit, tau))
}

/// `sum_l (2l+1) e^{-tau l(l+1)/R^2} P_l(c)`.
fn sphere_legendre_sum(radius: f64, tau: f64, c: f64, limit: usize) -> Result<f64> {
    let mut acc = Kahan::default();
    let mut diag = 0.0;
    let (mut p_prev, mut p) = (0.0, 1.0);
    let mut prev_w = 0.0;
    for l in 0..=limit {
        if l == 1 {
            p_prev = 1.0;
            p = c;
        } else if l > 1 {
            let lf = l as f64;
            let next = ((2.0 * lf - 1.0) * c * p - (lf - 1.0) * p_prev) / lf;
            p_prev = p;
            p = next;
        }
        let lf = l as f64;
        let w = (2.0 * lf + 1.0) * (-tau * lf * (lf + 1.0) / (radius * radius)).exp();
        acc.add(w * p);
        diag += w;
        // weights rise before they fall; stop only on the falling side
        if l > 0 && w < prev_w && w <= TAIL_TOLERANCE * diag {
            return Ok(acc.sum);
        }
        prev_w = w;
    }
    Err(not_converged("spherical harmonic sum", limit, tau))
}

impl ExactFactor {
    fn volume(&self) -> f64 {
        match self {
            ExactFactor::Circle { radius } => 2.0 * PI * radius,
            ExactFactor::Sphere { radius } => 4.0 * PI * radius * radius,
        }
    }

    fn kernel(&self, x: &Point, y: &Point, tau: f64, limit: usize) -> Result<f64> {
        match (self, x, y) {
            (ExactFactor::Circle { radius }, Point::Angles(a), Point::Angles(b)) => {
                Ok(circle_theta_sum(*radius, tau, a[0] - b[0], limit)? / self.volume())
            }
            (ExactFactor::Sphere { radius }, Point::Sphere(a), Point::Sphere(b)) => {
                let c = a.dot(b).clamp(-1.0, 1.0);
                Ok(sphere_legendre_sum(*radius, tau, c, limit)? / self.volume())
            }
            _ => Err(Error::InvalidDescriptor("point does not match the decomposition".into())),
        }
    }

    fn trace(&self, tau: f64, limit: usize) -> Result<f64> {
        match self {
            ExactFactor::Circle { radius } => circle_theta_sum(*radius, tau, 0.0, limit),
            ExactFactor::Sphere { radius } => sphere_legendre_sum(*radius, tau, 1.0, limit),
        }
    }

    /// First `count` Laplace eigenvalues with multiplicity.
    fn levels(&self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        match self {
            ExactFactor::Circle { radius } => {
                out.push(0.0);
                let mut k = 1.0;
                while out.len() < count {
                    out.push(k * k / (radius * radius));
                    out.push(k * k / (radius * radius));
                    k += 1.0;
                }
            }
            ExactFactor::Sphere { radius } => {
                let mut l = 0usize;
                while out.len() < count {
                    let lf = l as f64;
                    for _ in 0..(2 * l + 1) {
                        out.push(lf * (lf + 1.0) / (radius * radius));
                    }
                    l += 1;
                }
            }
        }
        out.truncate(count);
        out
    }
}

/// Sorted sums `a_i + b_j`, keeping the smallest `count`.
fn smallest_sums(a: &[f64], b: &[f64], count: usize) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| x + y)).collect();
    all.sort_by(f64::total_cmp);
    all.truncate(count);
    all
}

fn split_point(p: &Point, i: usize) -> Point {
    match p {
        Point::Angles(a) => Point::Angles(vec![a[i]]),
        Point::Sphere(_) => p.clone(),
    }
}

impl SpectralDecomposition {
    pub fn mode(&self) -> SpectralMode {
        match self.kind {
            Kind::Exact { .. } => SpectralMode::Exact,
            Kind::Galerkin { .. } => SpectralMode::Galerkin,
            Kind::Product { .. } => SpectralMode::Product,
        }
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Number of basis functions per fiber direction (Galerkin kinds).
    pub fn basis_size(&self) -> Option<usize> {
        match &self.kind {
            Kind::Galerkin { basis, .. } => Some(basis.len()),
            Kind::Product { factors } => factors
                .iter()
                .map(|f| f.basis_size())
                .try_fold(1usize, |acc, b| b.map(|b| acc * b)),
            Kind::Exact { .. } => None,
        }
    }

    /// Fourier cutoff of Galerkin kinds (per factor for products).
    pub fn cutoff(&self) -> Option<usize> {
        match &self.kind {
            Kind::Galerkin { cutoff, .. } => Some(*cutoff),
            Kind::Product { factors } => factors.iter().filter_map(|f| f.cutoff()).max(),
            Kind::Exact { .. } => None,
        }
    }

    /// Galerkin eigenvector matrix (columns), if any.
    pub fn eigenvectors(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            Kind::Galerkin { vectors, .. } => Some(vectors),
            _ => None,
        }
    }

    /// The smallest `count` eigenvalues, ascending, with multiplicity.
    pub fn eigenvalues(&self, count: usize) -> Vec<f64> {
        match &self.kind {
            Kind::Galerkin { .. } => self.eigenvalues.iter().take(count).copied().collect(),
            Kind::Exact { factors, shift, .. } => {
                let h2 = self.hbar * self.hbar;
                let mut base = vec![0.0];
                for f in factors {
                    base = smallest_sums(&base, &f.levels(count), count);
                }
                let base: Vec<f64> = base.iter().map(|l| h2 * l).collect();
                smallest_sums(&base, &shift.eigenvalues(), count)
            }
            Kind::Product { factors } => {
                let mut acc = vec![0.0];
                for f in factors {
                    acc = smallest_sums(&acc, &f.eigenvalues(count), count);
                }
                acc
            }
        }
    }

    /// `k(x, y, t) = sum_i e^{-t lambda_i} psi_i(x) psi_i(y)^T`.
    pub fn heat_kernel(&self, x: &Point, y: &Point, t: f64) -> Result<DMatrix<f64>> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        match &self.kind {
            Kind::Exact {
                factors,
                shift,
                index_limit,
            } => {
                let tau = t * self.hbar * self.hbar;
                let mut scalar = 1.0;
                for (i, f) in factors.iter().enumerate() {
                    scalar *= f.kernel(&split_point(x, i), &split_point(y, i), tau, *index_limit)?;
                }
                Ok(sym_exp(shift, -t).into_inner() * scalar)
            }
            Kind::Product { factors } => {
                let mut scalar = 1.0;
                for (i, f) in factors.iter().enumerate() {
                    scalar *= f.heat_kernel(&split_point(x, i), &split_point(y, i), t)?[(0, 0)];
                }
                Ok(DMatrix::from_element(1, 1, scalar))
            }
            Kind::Galerkin {
                lengths,
                basis,
                vectors,
                ..
            } => {
                self.check_galerkin_tail(t)?;
                let m = self.rank;
                let gx = galerkin_modes(lengths, basis, vectors, m, x)?;
                let gy = galerkin_modes(lengths, basis, vectors, m, y)?;
                let mut k = DMatrix::zeros(m, m);
                for (i, lambda) in self.eigenvalues.iter().enumerate() {
                    let w = (-t * lambda).exp();
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..m {
                        for b in 0..m {
                            k[(a, b)] += w * gx[(i, a)] * gy[(i, b)];
                        }
                    }
                }
                Ok(k)
            }
        }
    }

    /// `Tr e^{-t H}`.
    pub fn trace(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        match &self.kind {
            Kind::Exact {
                factors,
                shift,
                index_limit,
            } => {
                let tau = t * self.hbar * self.hbar;
                let mut tr = sym_exp(shift, -t).trace();
                for f in factors {
                    tr *= f.trace(tau, *index_limit)?;
                }
                Ok(tr)
            }
            Kind::Product { factors } => {
                factors.iter().try_fold(1.0, |acc, f| Ok(acc * f.trace(t)?))
            }
            Kind::Galerkin { .. } => {
                self.check_galerkin_tail(t)?;
                let mut acc = Kahan::default();
                // add small terms first
                for lambda in self.eigenvalues.iter().rev() {
                    acc.add((-t * lambda).exp());
                }
                Ok(acc.sum)
            }
        }
    }

    /// The top of a truncated spectrum must carry negligible weight at `t`.
    fn check_galerkin_tail(&self, t: f64) -> Result<()> {
        let (Some(first), Some(last)) = (self.eigenvalues.first(), self.eigenvalues.last()) else {
            return Err(Error::NotConverged("empty Galerkin spectrum".into()));
        };
        let count = self.eigenvalues.len() as f64;
        let top = (-t * (last - first)).exp() * count;
        if top > TAIL_TOLERANCE {
            return Err(Error::NotConverged(format!(
                "Galerkin cutoff {:?} too small at t = {t:e}: top weight {top:e}",
                self.cutoff()
            )));
        }
        Ok(())
    }
}

/// `g[i, a] = sum_b V[(b, a), i] f_b(x)`: fiber component `a` of the `i`-th
/// eigenvector evaluated at `x`.
fn galerkin_modes(
    lengths: &[f64],
    basis: &[BasisFn],
    vectors: &DMatrix<f64>,
    m: usize,
    x: &Point,
) -> Result<DMatrix<f64>> {
    let Point::Angles(theta) = x else {
        return Err(Error::InvalidDescriptor("Galerkin oracle needs angle points".into()));
    };
    if theta.len() != lengths.len() {
        return Err(Error::DimensionMismatch {
            expected: lengths.len(),
            found: theta.len(),
        });
    }
    let vol: f64 = lengths.iter().product();
    let values: Vec<f64> = basis
        .iter()
        .map(|b| {
            if b.k.iter().all(|k| *k == 0) {
                return 1.0 / vol.sqrt();
            }
            let phase: f64 = b.k.iter().zip(theta).map(|(k, a)| *k as f64 * a).sum();
            let s = (2.0 / vol).sqrt();
            if b.sine {
                s * phase.sin()
            } else {
                s * phase.cos()
            }
        })
        .collect();
    let dim = vectors.ncols();
    let mut g = DMatrix::zeros(dim, m);
    for i in 0..dim {
        for (bi, f) in values.iter().enumerate() {
            for a in 0..m {
                g[(i, a)] += vectors[(bi * m + a, i)] * f;
            }
        }
    }
    Ok(g)
}

/// Complex Fourier coefficients `F(k)` (real and imaginary matrices) of a
/// real Fourier field.
fn complex_coefficients(terms: &[FourierTerm], rank: usize) -> HashMap<Vec<i64>, (DMatrix<f64>, DMatrix<f64>)> {
    let mut map: HashMap<Vec<i64>, (DMatrix<f64>, DMatrix<f64>)> = HashMap::new();
    let zero = || (DMatrix::zeros(rank, rank), DMatrix::zeros(rank, rank));
    for t in terms {
        if t.k.iter().all(|k| *k == 0) {
            map.entry(t.k.clone()).or_insert_with(zero).0 += &t.cos;
            continue;
        }
        let neg: Vec<i64> = t.k.iter().map(|k| -k).collect();
        {
            let e = map.entry(t.k.clone()).or_insert_with(zero);
            e.0 += &t.cos * 0.5;
            e.1 -= &t.sin * 0.5;
        }
        let e = map.entry(neg).or_insert_with(zero);
        e.0 += &t.cos * 0.5;
        e.1 += &t.sin * 0.5;
    }
    map
}

/// Wave vectors `k` in the box `|k_i| <= cutoff` whose first nonzero entry
/// is positive, in lexicographic order.
fn half_lattice(dim: usize, cutoff: i64) -> Vec<Vec<i64>> {
    let side = 2 * cutoff + 1;
    let total = (side as usize).pow(dim as u32);
    let mut out = Vec::new();
    for mut idx in 0..total {
        let mut k = vec![0i64; dim];
        for c in k.iter_mut().rev() {
            *c = (idx % side as usize) as i64 - cutoff;
            idx /= side as usize;
        }
        if let Some(first) = k.iter().find(|c| **c != 0) {
            if *first > 0 {
                out.push(k);
            }
        }
    }
    out
}

/// Complex components `(k, u)` of a real basis function in terms of
/// `e_k = e^{i k.theta}/sqrt(vol)`.
fn complex_components(b: &BasisFn) -> Vec<(Vec<i64>, (f64, f64))> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if b.k.iter().all(|k| *k == 0) {
        return vec![(b.k.clone(), (1.0, 0.0))];
    }
    let neg: Vec<i64> = b.k.iter().map(|k| -k).collect();
    if b.sine {
        vec![(b.k.clone(), (0.0, -s)), (neg, (0.0, s))]
    } else {
        vec![(b.k.clone(), (s, 0.0)), (neg, (s, 0.0))]
    }
}

/// Dense Galerkin decomposition of `hbar^2 Delta + F` on the flat torus with
/// the given edge lengths, `F = sum` of the real Fourier `terms`.
fn galerkin_flat(
    lengths: &[f64],
    rank: usize,
    terms: &[FourierTerm],
    hbar: f64,
    cutoff: usize,
) -> Result<SpectralDecomposition> {
    let dim = lengths.len();
    let max_freq = terms
        .iter()
        .filter(|t| t.cos.iter().chain(t.sin.iter()).any(|v| *v != 0.0))
        .flat_map(|t| t.k.iter().map(|k| k.unsigned_abs() as usize))
        .max()
        .unwrap_or(0);
    if 4 * max_freq > cutoff {
        return Err(Error::CutoffTooSmall {
            cutoff,
            frequency: max_freq,
        });
    }
    let coeffs = complex_coefficients(terms, rank);
    let mut basis = vec![BasisFn {
        k: vec![0; dim],
        sine: false,
    }];
    for k in half_lattice(dim, cutoff as i64) {
        basis.push(BasisFn {
            k: k.clone(),
            sine: false,
        });
        basis.push(BasisFn { k, sine: true });
    }
    let nb = basis.len();
    let size = nb * rank;
    let comps: Vec<_> = basis.iter().map(complex_components).collect();
    let h2 = hbar * hbar;
    let mut h = DMatrix::zeros(size, size);
    for (p, bp) in basis.iter().enumerate() {
        let xi2: f64 = bp
            .k
            .iter()
            .zip(lengths)
            .map(|(k, l)| (2.0 * PI * *k as f64 / l).powi(2))
            .sum();
        for a in 0..rank {
            h[(p * rank + a, p * rank + a)] += h2 * xi2;
        }
        for q in 0..nb {
            // <f_p, F f_q> = sum conj(u_p) u_q F(k_p - k_q)
            for (kp, up) in &comps[p] {
                for (kq, uq) in &comps[q] {
                    let diff: Vec<i64> = kp.iter().zip(kq).map(|(a, b)| a - b).collect();
                    let Some((re, im)) = coeffs.get(&diff) else {
                        continue;
                    };
                    // conj(up) * uq
                    let wr = up.0 * uq.0 + up.1 * uq.1;
                    let wi = up.0 * uq.1 - up.1 * uq.0;
                    for a in 0..rank {
                        for b in 0..rank {
                            h[(p * rank + a, q * rank + b)] += wr * re[(a, b)] - wi * im[(a, b)];
                        }
                    }
                }
            }
        }
    }
    let asym = (&h - h.transpose()).amax();
    if asym > 1e-12 * (1.0 + h.amax()) {
        return Err(Error::NotConverged(format!("Galerkin matrix asymmetry {asym:e}")));
    }
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(size, size, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpectralDecomposition {
        hbar,
        rank,
        eigenvalues,
        kind: Kind::Galerkin {
            lengths: lengths.to_vec(),
            basis,
            vectors,
            cutoff,
        },
    })
}

/// Closed-form Laplace spectrum of a model manifold (`hbar = 1`, no fields).
/// The returned decomposition lists its first `max_count` eigenvalues through
/// [`SpectralDecomposition::eigenvalues`] and evaluates kernels by the full
/// closed-form sums.
pub fn exact_spectrum(m: &ModelManifold, max_count: usize) -> SpectralDecomposition {
    let mut sd = exact_shifted(m, 1, 1.0, SymMatrix::zeros(1), EXACT_INDEX_LIMIT);
    sd.eigenvalues = sd.eigenvalues(max_count);
    sd
}

fn exact_shifted(m: &ModelManifold, rank: usize, hbar: f64, shift: SymMatrix, index_limit: usize) -> SpectralDecomposition {
    let factors = match m.kind() {
        ManifoldKind::Circle => vec![ExactFactor::Circle {
            radius: m.scale()[0],
        }],
        ManifoldKind::FlatTorus => m
            .scale()
            .iter()
            .map(|l| ExactFactor::Circle {
                radius: l / (2.0 * PI),
            })
            .collect(),
        ManifoldKind::RoundSphere => vec![ExactFactor::Sphere {
            radius: m.scale()[0],
        }],
    };
    SpectralDecomposition {
        hbar,
        rank,
        eigenvalues: Vec::new(),
        kind: Kind::Exact {
            factors,
            shift,
            index_limit,
        },
    }
}

/// Combined Fourier terms of `hbar^2 W + V`.
fn combined_terms(op: &SemiclassicalOperator, hbar: f64) -> Result<Vec<FourierTerm>> {
    let dim = op.dim();
    let v = op
        .potential()
        .fourier_terms(dim)
        .ok_or_else(|| Error::Unsupported("Galerkin oracle needs Fourier or constant fields".into()))?;
    let w = op
        .endomorphism()
        .fourier_terms(dim)
        .ok_or_else(|| Error::Unsupported("Galerkin oracle needs Fourier or constant fields".into()))?;
    let h2 = hbar * hbar;
    Ok(v.into_iter()
        .chain(w.into_iter().map(|t| FourierTerm {
            k: t.k,
            cos: t.cos * h2,
            sin: t.sin * h2,
        }))
        .collect())
}

/// Full Galerkin decomposition of `H` on a circle or torus.
pub fn galerkin_spectrum(op: &SemiclassicalOperator, hbar: f64, cutoff: usize) -> Result<SpectralDecomposition> {
    let m = op.manifold();
    if !m.is_flat() {
        return Err(Error::Unsupported("Galerkin oracle is available on circles and tori".into()));
    }
    if !(hbar > 0.0) {
        return Err(Error::Domain(format!("hbar must be positive, got {hbar}")));
    }
    galerkin_flat(&m.axis_lengths(), op.rank(), &combined_terms(op, hbar)?, hbar, cutoff)
}

/// Fourier cutoff making `e^{-t hbar^2 xi_max^2}` negligible, and at least
/// four times the highest field frequency.
pub fn auto_cutoff(length: f64, hbar: f64, t: f64, max_frequency: usize) -> usize {
    let kinetic = (2.0 * PI / length).powi(2) * hbar * hbar * t;
    let k = (48.0 / kinetic).sqrt().ceil() as usize;
    k.max(4 * max_frequency).max(8)
}

/// Splits rank-one Fourier terms into per-axis terms if every term depends
/// on at most one angle; constant terms go to the first axis.
fn separate_terms(terms: &[FourierTerm], dim: usize) -> Option<Vec<Vec<FourierTerm>>> {
    let mut out = vec![Vec::new(); dim];
    for t in terms {
        let active: Vec<usize> = (0..dim).filter(|&i| t.k[i] != 0).collect();
        let axis = match active.as_slice() {
            [] => 0,
            [i] => *i,
            _ => return None,
        };
        out[axis].push(FourierTerm {
            k: vec![t.k[axis]],
            cos: t.cos.clone(),
            sin: t.sin.clone(),
        });
    }
    Some(out)
}

/// Content key for the decomposition cache.
pub fn cache_key(op: &SemiclassicalOperator, hbar: f64, cutoff: usize) -> String {
    let doc = serde_json::json!({
        "manifold": op.manifold(),
        "potential": op.potential().descriptor(),
        "endomorphism": op.endomorphism().descriptor(),
        "hbar_bits": format!("{:016x}", hbar.to_bits()),
        "cutoff": cutoff,
    });
    crate::cache::content_hash(&doc)
}

/// Picks the cheapest exact oracle for `H` at `hbar`, sized so that spectral
/// sums converge down to time `t`. `cutoff` overrides the automatic Fourier
/// cutoff (Galerkin kinds) or the mode-index ceiling (closed-form kinds).
pub fn build_oracle(
    op: &SemiclassicalOperator,
    hbar: f64,
    t: f64,
    cutoff: Option<usize>,
) -> Result<SpectralDecomposition> {
    build_oracle_cached(op, hbar, t, cutoff, None)
}

pub fn build_oracle_cached(
    op: &SemiclassicalOperator,
    hbar: f64,
    t: f64,
    cutoff: Option<usize>,
    cache: Option<&DecompositionCache>,
) -> Result<SpectralDecomposition> {
    if !(hbar > 0.0 && t > 0.0) {
        return Err(Error::Domain(format!("need hbar > 0 and t > 0, got {hbar}, {t}")));
    }
    let m = op.manifold();
    let rank = op.rank();
    if let (Some(v0), Some(w0)) = (op.potential().constant_value(), op.endomorphism().constant_value()) {
        let shift = w0.scale(hbar * hbar).add(&v0);
        return Ok(exact_shifted(m, rank, hbar, shift, cutoff.unwrap_or(EXACT_INDEX_LIMIT)));
    }
    if !m.is_flat() {
        return Err(Error::Unsupported(
            "spectral oracle on the sphere needs constant fields".into(),
        ));
    }
    let terms = combined_terms(op, hbar)?;
    let lengths = m.axis_lengths();
    let max_freq = op.potential().max_frequency().max(op.endomorphism().max_frequency());
    let auto = |len: f64| auto_cutoff(len, hbar, t, max_freq);

    if m.dim() > 1 && rank == 1 {
        if let Some(per_axis) = separate_terms(&terms, m.dim()) {
            let factors = per_axis
                .iter()
                .zip(&lengths)
                .map(|(axis_terms, len)| {
                    let c = cutoff.unwrap_or_else(|| auto(*len));
                    galerkin_flat(&[*len], 1, axis_terms, hbar, c)
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(SpectralDecomposition {
                hbar,
                rank,
                eigenvalues: Vec::new(),
                kind: Kind::Product { factors },
            });
        }
    }

    let c = cutoff.unwrap_or_else(|| lengths.iter().map(|l| auto(*l)).max().unwrap_or(8));
    let key = cache_key(op, hbar, c);
    if let Some(cache) = cache {
        if let Some((values, vectors)) = cache.load(&key)? {
            let mut sd = galerkin_skeleton(&lengths, rank, hbar, c);
            if vectors.nrows() == sd.basis_size().unwrap_or(0) * rank {
                sd.eigenvalues = values;
                if let Kind::Galerkin { vectors: v, .. } = &mut sd.kind {
                    *v = vectors;
                }
                return Ok(sd);
            }
        }
    }
    let sd = galerkin_flat(&lengths, rank, &terms, hbar, c)?;
    if let (Some(cache), Some(vectors)) = (cache, sd.eigenvectors()) {
        cache.store(&key, &sd.eigenvalues, vectors)?;
    }
    Ok(sd)
}

/// Galerkin decomposition with the basis laid out but no eigen-data.
fn galerkin_skeleton(lengths: &[f64], rank: usize, hbar: f64, cutoff: usize) -> SpectralDecomposition {
    let dim = lengths.len();
    let mut basis = vec![BasisFn {
        k: vec![0; dim],
        sine: false,
    }];
    for k in half_lattice(dim, cutoff as i64) {
        basis.push(BasisFn {
            k: k.clone(),
            sine: false,
        });
        basis.push(BasisFn { k, sine: true });
    }
    SpectralDecomposition {
        hbar,
        rank,
        eigenvalues: Vec::new(),
        kind: Kind::Galerkin {
            lengths: lengths.to_vec(),
            basis,
            vectors: DMatrix::zeros(0, 0),
            cutoff,
        },
    }
}

/// `k(x, y, t, hbar)` from a decomposition.
pub fn oracle_heat_kernel(sd: &SpectralDecomposition, x: &Point, y: &Point, t: f64) -> Result<DMatrix<f64>> {
    sd.heat_kernel(x, y, t)
}

/// `Tr e^{-t H}` from a decomposition.
pub fn oracle_trace(sd: &SpectralDecomposition, t: f64) -> Result<f64> {
    sd.trace(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{EndomorphismField, FieldDescriptor};

    fn fourier_op(m: ModelManifold, json: &str) -> SemiclassicalOperator {
        let d: FieldDescriptor = serde_json::from_str(json).unwrap();
        SemiclassicalOperator::new(m, EndomorphismField::from_descriptor(&d).unwrap(), None).unwrap()
    }

    #[test]
    fn exact_listings() {
        let c = exact_spectrum(&ModelManifold::circle(1.0).unwrap(), 7);
        assert_eq!(c.eigenvalues(7), vec![0.0, 1.0, 1.0, 4.0, 4.0, 9.0, 9.0]);
        let s = exact_spectrum(&ModelManifold::round_sphere(1.0).unwrap(), 9);
        let ev = s.eigenvalues(9);
        assert_eq!(ev[..4], [0.0, 2.0, 2.0, 2.0]);
        assert!(ev[4..9].iter().all(|v| *v == 6.0));
        let t = exact_spectrum(&ModelManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap(), 9);
        let ev = t.eigenvalues(9);
        let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0];
        assert!(ev.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn circle_trace_theta_value() {
        let c = exact_spectrum(&ModelManifold::circle(1.0).unwrap(), 1);
        let tr = c.trace(1.0).unwrap();
        assert!((tr - 1.772_637_2).abs() < 1e-7);
        // Poisson summation: sqrt(pi) (1 + 2 e^{-pi^2} + ...)
        let poisson = PI.sqrt() * (1.0 + 2.0 * (-PI * PI).exp() + 2.0 * (-4.0 * PI * PI).exp());
        assert!((tr - poisson).abs() < 1e-12);
        let x = Point::angles(&[0.3]);
        assert!((c.heat_kernel(&x, &x, 1.0).unwrap()[(0, 0)] - tr / (2.0 * PI)).abs() < 1e-15);
        let far = c.heat_kernel(&x, &Point::angles(&[2.0]), 60.0).unwrap()[(0, 0)];
        assert!((far - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn sphere_trace_small_time() {
        let s = exact_spectrum(&ModelManifold::round_sphere(1.0).unwrap(), 1);
        let tr = s.trace(0.001).unwrap();
        assert!((tr - 1000.333).abs() < 1e-3, "{tr}");
    }

    #[test]
    fn tiny_time_reports_not_converged() {
        let op = SemiclassicalOperator::free(ModelManifold::circle(1.0).unwrap(), 1);
        let sd = build_oracle(&op, 1.0, 1.0, Some(100)).unwrap();
        assert!(matches!(sd.trace(1e-6), Err(Error::NotConverged(_))));
        let op = fourier_op(
            ModelManifold::circle(1.0).unwrap(),
            r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[1],"cos":1}]}}"#,
        );
        let sd = galerkin_spectrum(&op, 1.0, 16).unwrap();
        assert!(matches!(sd.trace(1e-3), Err(Error::NotConverged(_))));
    }

    #[test]
    fn galerkin_constant_shift() {
        let op = fourier_op(
            ModelManifold::circle(1.0).unwrap(),
            r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[0],"cos":0.7}]}}"#,
        );
        let sd = galerkin_spectrum(&op, 0.5, 8).unwrap();
        let ev = sd.eigenvalues(5);
        let expected = [0.7, 0.95, 0.95, 1.7, 1.7];
        assert!(ev.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-13), "{ev:?}");
    }

    #[test]
    fn galerkin_matches_exact_without_fields() {
        let m = ModelManifold::flat_torus(&[2.0 * PI, 3.0]).unwrap();
        let op = fourier_op(m.clone(), r#"{"rank":2,"kind":"fourier","data":{"terms":[{"k":[0,0],"cos":0}]}}"#);
        let g = galerkin_spectrum(&op, 1.0, 6).unwrap();
        let e = exact_shifted(&m, 2, 1.0, SymMatrix::zeros(2), 1000);
        let a = g.eigenvalues(60);
        let b = e.eigenvalues(60);
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn rank_two_splits_into_scalar_problems() {
        let (a, b) = (0.5, 0.8);
        let m = ModelManifold::circle(1.0).unwrap();
        let op2 = fourier_op(
            m.clone(),
            &format!(
                r#"{{"rank":2,"kind":"fourier","data":{{"terms":[{{"k":[0],"cos":{a}}},{{"k":[1],"cos":[[0,{b}],[{b},0]]}}]}}}}"#
            ),
        );
        let plus = fourier_op(
            m.clone(),
            &format!(r#"{{"rank":1,"kind":"fourier","data":{{"terms":[{{"k":[0],"cos":{a}}},{{"k":[1],"cos":{b}}}]}}}}"#),
        );
        let minus = fourier_op(
            m,
            &format!(r#"{{"rank":1,"kind":"fourier","data":{{"terms":[{{"k":[0],"cos":{a}}},{{"k":[1],"cos":{}}}]}}}}"#, -b),
        );
        let c = 24;
        let e2 = galerkin_spectrum(&op2, 1.0, c).unwrap().eigenvalues(20);
        let mut union: Vec<f64> = galerkin_spectrum(&plus, 1.0, c)
            .unwrap()
            .eigenvalues(20)
            .into_iter()
            .chain(galerkin_spectrum(&minus, 1.0, c).unwrap().eigenvalues(20))
            .collect();
        union.sort_by(f64::total_cmp);
        let err = e2.iter().zip(&union).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-11, "{err}");
    }

    #[test]
    fn mathieu_self_convergence() {
        let op = fourier_op(
            ModelManifold::circle(1.0).unwrap(),
            r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[1],"cos":2}]}}"#,
        );
        let a = galerkin_spectrum(&op, 1.0, 16).unwrap().eigenvalues(8);
        let b = galerkin_spectrum(&op, 1.0, 32).unwrap().eigenvalues(8);
        assert!((a[0] - b[0]).abs() < 1e-10);
        // -u'' + 2 cos(x) u = lambda u is Mathieu's equation in z = x/2 with
        // q = 4, so lambda_0 = a_0(4)/4
        assert!((b[0] + 1.070_129_704_575_630_6).abs() < 1e-12, "{}", b[0]);
    }

    #[test]
    fn cutoff_too_small_rejected() {
        let op = fourier_op(
            ModelManifold::circle(1.0).unwrap(),
            r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[3],"cos":1}]}}"#,
        );
        assert!(matches!(galerkin_spectrum(&op, 1.0, 11), Err(Error::CutoffTooSmall { .. })));
    }

    #[test]
    fn separable_torus_product_matches_full_galerkin() {
        let m = ModelManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
        let op = fourier_op(
            m,
            r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[0,0],"cos":1},{"k":[1,0],"cos":0.5},{"k":[0,1],"sin":0.5}]}}"#,
        );
        let (hbar, t) = (0.6, 1.0);
        let prod = build_oracle(&op, hbar, t, None).unwrap();
        assert_eq!(prod.mode(), SpectralMode::Product);
        let full = galerkin_spectrum(&op, hbar, 24).unwrap();
        let (x, y) = (Point::angles(&[0.3, 1.2]), Point::angles(&[0.5, 0.9]));
        let kp = prod.heat_kernel(&x, &y, t).unwrap()[(0, 0)];
        let kf = full.heat_kernel(&x, &y, t).unwrap()[(0, 0)];
        assert!((kp - kf).abs() < 1e-12 * kf.abs().max(1.0), "{kp} {kf}");
        assert!((prod.trace(t).unwrap() - full.trace(t).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn sphere_with_field_unsupported() {
        let op = fourier_op(
            ModelManifold::round_sphere(1.0).unwrap(),
            r#"{"rank":1,"kind":"zonal","data":{"pole":[0,0,1],"profile":[1,1]}}"#,
        );
        assert!(matches!(build_oracle(&op, 0.5, 1.0, None), Err(Error::Unsupported(_))));
    }
}
