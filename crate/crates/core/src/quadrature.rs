//! Adaptive Gauss-Kronrod quadrature for scalar and matrix integrands, and
//! Gauss-Legendre rules.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Values that can be integrated: closed under scaled addition, with a norm.
pub trait QuadValue: Clone {
    fn scaled(&self, a: f64) -> Self;
    fn add_scaled(&mut self, a: f64, x: &Self);
    fn norm_inf(&self) -> f64;
}

impl QuadValue for f64 {
    fn scaled(&self, a: f64) -> Self {
        a * self
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
    fn norm_inf(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for DMatrix<f64> {
    fn scaled(&self, a: f64) -> Self {
        self * a
    }
    fn add_scaled(&mut self, a: f64, x: &Self) {
        self.zip_apply(x, |s, v| *s += a * v);
    }
    fn norm_inf(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss 7-point weights on XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: f64,
    pub intervals: usize,
}

fn kronrod15<T, F>(f: &mut F, a: f64, b: f64) -> Result<(T, f64)>
where
    T: QuadValue,
    F: FnMut(f64) -> Result<T>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center)?;
    let mut kron = fc.scaled(WGK[7]);
    let mut gauss = fc.scaled(WG[3]);
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx)?;
        let f2 = f(center + dx)?;
        kron.add_scaled(WGK[j], &f1);
        kron.add_scaled(WGK[j], &f2);
        if j % 2 == 1 {
            gauss.add_scaled(WG[j / 2], &f1);
            gauss.add_scaled(WG[j / 2], &f2);
        }
    }
    let kron = kron.scaled(half);
    let mut diff = gauss.scaled(half);
    diff.add_scaled(-1.0, &kron);
    Ok((kron, diff.norm_inf()))
}

/// Integrates `f` over `[a, b]` until the estimated error is below
/// `max(abs_tol, rel_tol * |I|)`, bisecting the worst interval each round.
pub fn integrate<T, F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult<T>>
where
    T: QuadValue,
    F: FnMut(f64) -> Result<T>,
{
    const MAX_INTERVALS: usize = 400;
    let (v, e) = kronrod15(&mut f, a, b)?;
    let mut pieces: Vec<(f64, f64, T, f64)> = vec![(a, b, v, e)];
    loop {
        let mut total = pieces[0].2.clone();
        for p in &pieces[1..] {
            total.add_scaled(1.0, &p.2);
        }
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        let target = abs_tol.max(rel_tol * total.norm_inf());
        if !err.is_finite() || !total.norm_inf().is_finite() {
            return Err(Error::QuadratureFailure {
                estimate: err,
                tolerance: target,
            });
        }
        if err <= target {
            return Ok(QuadResult {
                value: total,
                error: err,
                intervals: pieces.len(),
            });
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureFailure {
                estimate: err,
                tolerance: target,
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod15(&mut f, lo, mid)?;
        let (v2, e2) = kronrod15(&mut f, mid, hi)?;
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
        // keep summation order independent of the swap_remove shuffle
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut f = f;
    integrate(|x| Ok(f(x)), a, b, abs_tol, 0.0).map(|r| r.value)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

const MAX_CACHED_RULE: usize = 128;

static UNIT_RULES: [OnceLock<Vec<(f64, f64)>>; MAX_CACHED_RULE + 1] =
    [const { OnceLock::new() }; MAX_CACHED_RULE + 1];

/// Gauss-Legendre `(node, weight)` pairs on `[0, 1]`, cached for `n <= 128`.
pub fn gauss_legendre_unit(n: usize) -> &'static [(f64, f64)] {
    assert!(
        (1..=MAX_CACHED_RULE).contains(&n),
        "cached Gauss-Legendre rules cover 1..={MAX_CACHED_RULE} nodes"
    );
    UNIT_RULES[n].get_or_init(|| {
        let (x, w) = gauss_legendre(n);
        x.iter().zip(&w).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect()
    })
}

/// Node counts of the fixed Gauss-Legendre pairs tried in turn by
/// [`integrate_unit_fixed`].
pub const GAUSS_LADDER: [usize; 5] = [12, 20, 32, 48, 64];

/// Integrates over `[0, 1]` with fixed Gauss-Legendre rules of increasing
/// size, taking the difference of consecutive rules as the error estimate.
///
/// Unlike [`integrate`], the node set does not depend on the integrand
/// beyond the accept/refine decision, so the result varies smoothly with
/// parameters of `f`. `f` receives all nodes of a rule at once (ascending)
/// and returns the values in the same order.
pub fn integrate_unit_fixed<T, F>(mut f: F, abs_tol: f64, rel_tol: f64) -> Result<QuadResult<T>>
where
    T: QuadValue,
    F: FnMut(&[f64]) -> Result<Vec<T>>,
{
    let mut apply = |n: usize| -> Result<T> {
        let rule = gauss_legendre_unit(n);
        let nodes: Vec<f64> = rule.iter().map(|p| p.0).collect();
        let values = f(&nodes)?;
        let mut acc = values[0].scaled(rule[0].1);
        for (v, p) in values.iter().zip(rule).skip(1) {
            acc.add_scaled(p.1, v);
        }
        Ok(acc)
    };
    let mut prev = apply(GAUSS_LADDER[0])?;
    let mut last = (f64::INFINITY, abs_tol);
    for &n in &GAUSS_LADDER[1..] {
        let next = apply(n)?;
        let mut diff = next.clone();
        diff.add_scaled(-1.0, &prev);
        let err = diff.norm_inf();
        let target = abs_tol.max(rel_tol * next.norm_inf());
        if !err.is_finite() {
            break;
        }
        if err <= target {
            return Ok(QuadResult {
                value: next,
                error: err,
                intervals: n,
            });
        }
        last = (err, target);
        prev = next;
    }
    Err(Error::QuadratureFailure {
        estimate: last.0,
        tolerance: last.1,
    })
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
