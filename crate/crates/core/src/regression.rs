//! Ordinary least squares through the SVD, and log-log slope fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition number above which a design matrix is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub stderr: Vec<f64>,
    pub residual_norm: f64,
    pub condition: f64,
}

/// Solves `min |X b - y|` and reports standard errors from
/// `s^2 (X^T X)^{-1}` with `s^2 = |r|^2 / (rows - cols)`.
pub fn least_squares(design: &DMatrix<f64>, y: &[f64]) -> Result<LeastSquares> {
    let (rows, cols) = design.shape();
    if rows != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: y.len(),
        });
    }
    if rows < cols || cols == 0 {
        return Err(Error::Domain(format!(
            "least squares needs at least {cols} rows, got {rows}"
        )));
    }
    let svd = design.clone().svd(true, true);
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let yv = DVector::from_column_slice(y);
    let uty = u.transpose() * &yv;
    let scaled = DVector::from_fn(cols, |i, _| uty[i] / s[i]);
    let b = vt.transpose() * scaled;
    let resid = design * &b - &yv;
    let rss = resid.norm_squared();
    let dof = rows as f64 - cols as f64;
    let stderr = if dof > 0.0 {
        let s2 = rss / dof;
        // (X^T X)^{-1} = V diag(1/s^2) V^T
        (0..cols)
            .map(|k| {
                let var: f64 = (0..cols).map(|i| (vt[(i, k)] / s[i]).powi(2)).sum();
                (s2 * var).sqrt()
            })
            .collect()
    } else {
        vec![0.0; cols]
    };
    Ok(LeastSquares {
        coefficients: b.iter().copied().collect(),
        stderr,
        residual_norm: rss.sqrt(),
        condition,
    })
}

/// Fits `y = a_0 + a_1 x + ... + a_d x^d`.
pub fn polynomial_fit(x: &[f64], y: &[f64], degree: usize) -> Result<LeastSquares> {
    let design = DMatrix::from_fn(x.len(), degree + 1, |i, j| x[i].powi(j as i32));
    least_squares(&design, y)
}

/// Straight-line fit of `log y` against `log x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: usize,
}

/// Least-squares slope of `log y` vs `log x`; pairs with nonpositive or
/// non-finite values are dropped.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    if lx.len() < 2 {
        return Err(Error::Domain("slope fit needs two positive points".into()));
    }
    let fit = polynomial_fit(&lx, &ly, 1)?;
    Ok(SlopeFit {
        slope: fit.coefficients[1],
        intercept: fit.coefficients[0],
        stderr: fit.stderr[1],
        points: lx.len(),
    })
}
