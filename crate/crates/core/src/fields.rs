//! Dense symmetric matrices and the closed-form endomorphism fields used for
//! the potential `V` and the curvature term `W`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ManifoldKind, ModelManifold, Point};

/// Real symmetric matrix. Construction rejects inputs whose asymmetry
/// exceeds `1e-12` and stores the symmetrized average.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::Domain(format!("matrix asymmetry {asym:e} exceeds 1e-12")));
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetric part `(m + m^T)/2`, without any asymmetry check.
    pub fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Domain("empty matrix".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    pub fn scalar(n: usize, c: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * c)
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn scale(&self, a: f64) -> SymMatrix {
        SymMatrix(&self.0 * a)
    }

    pub fn exp(&self, scale: f64) -> SymMatrix {
        sym_exp(self, scale)
    }
}

/// `exp(scale * A)` through the symmetric eigendecomposition.
pub fn sym_exp(a: &SymMatrix, scale: f64) -> SymMatrix {
    let eig = SymmetricEigen::new(a.0.clone());
    let q = &eig.eigenvectors;
    let d = eig.eigenvalues.map(|l| (scale * l).exp());
    let m = q * DMatrix::from_diagonal(&d) * q.transpose();
    SymMatrix::symmetrized(m)
}

/// Matrix exponential of a general square matrix by scaling and squaring of
/// a degree-16 Taylor polynomial.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0i32;
    if norm1 > 0.25 {
        squarings = (norm1 / 0.25).log2().ceil() as i32;
    }
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=16 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Largest singular value.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |m, s| m.max(*s))
}

/// Both sides of a scalar inequality `lhs <= rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `|tr(A1 A2)| <= |A1| tr(A2)` for nonnegative `A2`.
pub fn trace_product_bound_check(a1: &DMatrix<f64>, a2: &SymMatrix) -> Result<InequalityCheck> {
    if a1.nrows() != a2.order() || a1.ncols() != a2.order() {
        return Err(Error::DimensionMismatch {
            expected: a2.order(),
            found: a1.nrows(),
        });
    }
    let min = a2.min_eigenvalue();
    if min < -1e-12 {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let lhs = (a1 * a2.matrix()).trace().abs();
    let rhs = operator_norm(a1) * a2.trace();
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12 * (1.0 + rhs),
    })
}

/// `tr exp(-(B+C)) <= tr(exp(-B) exp(-C))`.
pub fn golden_thompson_check(b: &SymMatrix, c: &SymMatrix) -> Result<InequalityCheck> {
    if b.order() != c.order() {
        return Err(Error::DimensionMismatch {
            expected: b.order(),
            found: c.order(),
        });
    }
    let lhs = sym_exp(&b.add(c), -1.0).trace();
    let rhs = (sym_exp(b, -1.0).matrix() * sym_exp(c, -1.0).matrix()).trace();
    Ok(InequalityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12),
    })
}

/// A matrix in a descriptor: either a scalar `c` (meaning `c * id`) or rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn to_sym(&self, rank: usize) -> Result<SymMatrix> {
        match self {
            MatrixSpec::Scalar(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidDescriptor("non-finite scalar entry".into()));
                }
                Ok(SymMatrix::scalar(rank, *c))
            }
            MatrixSpec::Rows(rows) => {
                if rows.len() != rank {
                    return Err(Error::InvalidDescriptor(format!(
                        "matrix has {} rows, field rank is {rank}",
                        rows.len()
                    )));
                }
                SymMatrix::from_rows(rows).map_err(|e| Error::InvalidDescriptor(e.to_string()))
            }
        }
    }

    fn from_sym(m: &SymMatrix) -> Self {
        let n = m.order();
        MatrixSpec::Rows((0..n).map(|i| (0..n).map(|j| m.matrix()[(i, j)]).collect()).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTermSpec {
    pub k: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin: Option<MatrixSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum FieldBody {
    /// `V(x) = M`.
    Constant { matrix: MatrixSpec },
    /// `V(theta) = sum_k cos_k cos(k.theta) + sin_k sin(k.theta)` in the
    /// angle coordinates of a circle or torus.
    Fourier { terms: Vec<FourierTermSpec> },
    /// `V(x) = sum_d C_d (cos rho)^d` with `rho` the angle from `pole` (sphere).
    Zonal { pole: [f64; 3], profile: Vec<MatrixSpec> },
}

/// JSON descriptor of an endomorphism field:
/// `{"rank": m, "kind": "constant"|"fourier"|"zonal", "data": {...}, "lower_bound": w0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldDescriptor {
    pub rank: usize,
    #[serde(flatten)]
    pub body: FieldBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
}

impl FieldDescriptor {
    pub fn constant(m: &SymMatrix) -> Self {
        FieldDescriptor {
            rank: m.order(),
            body: FieldBody::Constant {
                matrix: MatrixSpec::from_sym(m),
            },
            lower_bound: None,
        }
    }

    pub fn zero(rank: usize) -> Self {
        FieldDescriptor {
            rank,
            body: FieldBody::Constant {
                matrix: MatrixSpec::Scalar(0.0),
            },
            lower_bound: None,
        }
    }
}

/// One real Fourier term `cos * cos(k.theta) + sin * sin(k.theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierTerm {
    pub k: Vec<i64>,
    pub cos: DMatrix<f64>,
    pub sin: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum FieldRepr {
    Constant(SymMatrix),
    Fourier(Vec<FourierTerm>),
    Zonal {
        pole: Vector3<f64>,
        profile: Vec<DMatrix<f64>>,
    },
}

/// Smooth symmetric-matrix-valued field on a model manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct EndomorphismField {
    rank: usize,
    repr: FieldRepr,
    lower_bound: Option<f64>,
    descriptor: FieldDescriptor,
}

impl EndomorphismField {
    /// Parses and checks a descriptor (without reference to a manifold).
    pub fn from_descriptor(d: &FieldDescriptor) -> Result<Self> {
        let rank = d.rank;
        if rank == 0 {
            return Err(Error::InvalidDescriptor("field rank must be positive".into()));
        }
        let repr = match &d.body {
            FieldBody::Constant { matrix } => FieldRepr::Constant(matrix.to_sym(rank)?),
            FieldBody::Fourier { terms } => {
                let mut out = Vec::with_capacity(terms.len());
                for t in terms {
                    if t.k.is_empty() {
                        return Err(Error::InvalidDescriptor("Fourier term with empty k".into()));
                    }
                    let take = |m: &Option<MatrixSpec>| -> Result<DMatrix<f64>> {
                        match m {
                            Some(m) => Ok(m.to_sym(rank)?.into_inner()),
                            None => Ok(DMatrix::zeros(rank, rank)),
                        }
                    };
                    out.push(FourierTerm {
                        k: t.k.clone(),
                        cos: take(&t.cos)?,
                        sin: take(&t.sin)?,
                    });
                }
                if let Some(t) = out.iter().find(|t| t.k.len() != out[0].k.len()) {
                    return Err(Error::InvalidDescriptor(format!(
                        "Fourier wave vectors of mixed length ({} and {})",
                        out[0].k.len(),
                        t.k.len()
                    )));
                }
                FieldRepr::Fourier(out)
            }
            FieldBody::Zonal { pole, profile } => {
                let p = Vector3::from_column_slice(pole);
                let norm = p.norm();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(Error::InvalidDescriptor("zonal pole must be nonzero".into()));
                }
                if profile.is_empty() {
                    return Err(Error::InvalidDescriptor("zonal profile is empty".into()));
                }
                let profile = profile
                    .iter()
                    .map(|m| m.to_sym(rank).map(SymMatrix::into_inner))
                    .collect::<Result<Vec<_>>>()?;
                FieldRepr::Zonal {
                    pole: p / norm,
                    profile,
                }
            }
        };
        if let Some(w0) = d.lower_bound {
            if !w0.is_finite() {
                return Err(Error::InvalidDescriptor("lower_bound must be finite".into()));
            }
        }
        Ok(EndomorphismField {
            rank,
            repr,
            lower_bound: d.lower_bound,
            descriptor: d.clone(),
        })
    }

    pub fn constant(m: SymMatrix) -> Self {
        let descriptor = FieldDescriptor::constant(&m);
        EndomorphismField {
            rank: m.order(),
            repr: FieldRepr::Constant(m),
            lower_bound: None,
            descriptor,
        }
    }

    pub fn zero(rank: usize) -> Self {
        Self::constant(SymMatrix::zeros(rank))
    }

    /// Checks that the descriptor kind fits the manifold.
    pub fn check_manifold(&self, m: &ModelManifold) -> Result<()> {
        match &self.repr {
            FieldRepr::Constant(_) => Ok(()),
            FieldRepr::Fourier(terms) => {
                if !m.is_flat() {
                    return Err(Error::InvalidDescriptor(
                        "Fourier fields need a circle or torus".into(),
                    ));
                }
                match terms.first() {
                    Some(t) if t.k.len() != m.dim() => Err(Error::DimensionMismatch {
                        expected: m.dim(),
                        found: t.k.len(),
                    }),
                    _ => Ok(()),
                }
            }
            FieldRepr::Zonal { .. } => {
                if m.kind() != ManifoldKind::RoundSphere {
                    return Err(Error::InvalidDescriptor("zonal fields need a sphere".into()));
                }
                Ok(())
            }
        }
    }

    /// Checks the manifold and certifies the declared lower bound on a grid.
    pub fn validate(&self, m: &ModelManifold) -> Result<()> {
        self.check_manifold(m)?;
        if let Some(w0) = self.lower_bound {
            let min = field_min_eigen(self, m, 64);
            if min < w0 - 1e-9 {
                return Err(Error::InvalidDescriptor(format!(
                    "declared lower_bound {w0} exceeds grid minimum eigenvalue {min}"
                )));
            }
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn lower_bound(&self) -> Option<f64> {
        self.lower_bound
    }

    pub fn descriptor(&self) -> &FieldDescriptor {
        &self.descriptor
    }

    /// The value if the field does not depend on the point.
    pub fn constant_value(&self) -> Option<SymMatrix> {
        match &self.repr {
            FieldRepr::Constant(c) => Some(c.clone()),
            FieldRepr::Fourier(terms) => {
                if terms.iter().all(|t| t.k.iter().all(|k| *k == 0)) {
                    let mut acc = DMatrix::zeros(self.rank, self.rank);
                    for t in terms {
                        acc += &t.cos;
                    }
                    Some(SymMatrix::symmetrized(acc))
                } else {
                    None
                }
            }
            FieldRepr::Zonal { profile, .. } => {
                if profile[1..].iter().all(|c| c.iter().all(|v| *v == 0.0)) {
                    Some(SymMatrix::symmetrized(profile[0].clone()))
                } else {
                    None
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.constant_value()
            .is_some_and(|c| c.matrix().iter().all(|v| *v == 0.0))
    }

    /// Real Fourier terms (empty for non-Fourier fields; a constant field
    /// is reported as a single `k = 0` term of the given length).
    pub fn fourier_terms(&self, dim: usize) -> Option<Vec<FourierTerm>> {
        match &self.repr {
            FieldRepr::Fourier(t) => Some(t.clone()),
            FieldRepr::Constant(c) => Some(vec![FourierTerm {
                k: vec![0; dim],
                cos: c.matrix().clone(),
                sin: DMatrix::zeros(self.rank, self.rank),
            }]),
            FieldRepr::Zonal { .. } => None,
        }
    }

    /// Largest `|k_i|` over all Fourier terms with nonzero coefficients.
    pub fn max_frequency(&self) -> usize {
        match &self.repr {
            FieldRepr::Fourier(terms) => terms
                .iter()
                .filter(|t| t.cos.iter().chain(t.sin.iter()).any(|v| *v != 0.0))
                .flat_map(|t| t.k.iter().map(|k| k.unsigned_abs() as usize))
                .max()
                .unwrap_or(0),
            _ => 0,
        }
    }

    /// Zonal pole and profile coefficients `C_d`.
    pub fn zonal_profile(&self) -> Option<(Vector3<f64>, &[DMatrix<f64>])> {
        match &self.repr {
            FieldRepr::Zonal { pole, profile } => Some((*pole, profile)),
            _ => None,
        }
    }

    /// Evaluates the field matrix at `p`.
    pub fn eval_matrix(&self, p: &Point) -> DMatrix<f64> {
        match (&self.repr, p) {
            (FieldRepr::Constant(c), _) => c.matrix().clone(),
            (FieldRepr::Fourier(terms), Point::Angles(theta)) => {
                let mut acc = DMatrix::zeros(self.rank, self.rank);
                for t in terms {
                    let phase: f64 = t.k.iter().zip(theta).map(|(k, a)| *k as f64 * a).sum();
                    let (s, c) = phase.sin_cos();
                    acc.zip_zip_apply(&t.cos, &t.sin, |v, a, b| *v += a * c + b * s);
                }
                acc
            }
            (FieldRepr::Zonal { pole, profile }, Point::Sphere(x)) => {
                let z = pole.dot(x);
                // Horner in z
                let mut acc = profile[profile.len() - 1].clone();
                for c in profile[..profile.len() - 1].iter().rev() {
                    acc = acc * z + c;
                }
                acc
            }
            _ => panic!("field kind does not match the point type"),
        }
    }

    pub fn eval(&self, p: &Point) -> SymMatrix {
        SymMatrix::symmetrized(self.eval_matrix(p))
    }
}

/// Sample points of a `grid`-resolution mesh: `grid` points per circle
/// factor, or `grid x 2 grid` latitude-longitude nodes on the sphere
/// (poles included).
pub fn sample_grid(m: &ModelManifold, grid: usize) -> Vec<Point> {
    let grid = grid.max(1);
    match m.kind() {
        ManifoldKind::RoundSphere => {
            let mut pts = Vec::with_capacity(2 * grid * grid);
            for i in 0..grid {
                let lat = if grid == 1 {
                    0.0
                } else {
                    PI * i as f64 / (grid - 1) as f64
                };
                for j in 0..2 * grid {
                    let lon = PI * j as f64 / grid as f64;
                    pts.push(Point::Sphere(Vector3::new(
                        lat.sin() * lon.cos(),
                        lat.sin() * lon.sin(),
                        lat.cos(),
                    )));
                }
            }
            pts
        }
        _ => {
            let n = m.dim();
            let total = grid.pow(n as u32);
            (0..total)
                .map(|mut idx| {
                    let mut a = Vec::with_capacity(n);
                    for _ in 0..n {
                        a.push(2.0 * PI * (idx % grid) as f64 / grid as f64);
                        idx /= grid;
                    }
                    Point::Angles(a)
                })
                .collect()
        }
    }
}

/// Minimum eigenvalue of the field over [`sample_grid`].
pub fn field_min_eigen(f: &EndomorphismField, m: &ModelManifold, grid: usize) -> f64 {
    if let Some(c) = f.constant_value() {
        return c.min_eigenvalue();
    }
    sample_grid(m, grid)
        .iter()
        .map(|p| f.eval(p).min_eigenvalue())
        .fold(f64::INFINITY, f64::min)
}
