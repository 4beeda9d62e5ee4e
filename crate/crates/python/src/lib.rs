//! Python bindings: manifolds, operators, the parametrix, spectral oracles and
//! partition-function tools. Field descriptors and manifolds are passed as
//! JSON strings in the same format as the experiment configs; points are
//! coordinate lists (angles on circles and tori, ambient `(x, y, z)` on
//! spheres); matrices are returned as nested lists.

use heatsc::fields::{golden_thompson_check, trace_product_bound_check, EndomorphismField, FieldDescriptor, SymMatrix};
use heatsc::parametrix::{Parametrix, ParametrixConfig};
use heatsc::partition;
use heatsc::spectral::{build_oracle, SpectralDecomposition};
use heatsc::{ModelManifold, Point, SemiclassicalOperator};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: heatsc::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn sym_from_rows(r: Vec<Vec<f64>>) -> PyResult<SymMatrix> {
    SymMatrix::from_rows(&r).map_err(py_err)
}

#[pyclass(name = "Manifold", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyManifold {
    inner: ModelManifold,
}

impl PyManifold {
    fn point(&self, coords: &[f64]) -> PyResult<Point> {
        self.inner.point(coords).map_err(py_err)
    }
}

#[pymethods]
impl PyManifold {
    #[staticmethod]
    fn circle(radius: f64) -> PyResult<Self> {
        Ok(PyManifold {
            inner: ModelManifold::circle(radius).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn flat_torus(lengths: Vec<f64>) -> PyResult<Self> {
        Ok(PyManifold {
            inner: ModelManifold::flat_torus(&lengths).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn round_sphere(radius: f64) -> PyResult<Self> {
        Ok(PyManifold {
            inner: ModelManifold::round_sphere(radius).map_err(py_err)?,
        })
    }

    /// From `{"kind": ..., "dim": ..., "scale": [...]}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyManifold {
            inner: serde_json::from_str(text).map_err(json_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn volume(&self) -> f64 {
        self.inner.volume()
    }

    #[getter]
    fn curvature(&self) -> f64 {
        self.inner.curvature()
    }

    #[getter]
    fn injectivity_radius(&self) -> f64 {
        self.inner.injectivity_radius()
    }

    fn distance(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.distance(&self.point(&x)?, &self.point(&y)?))
    }

    /// `G(r)`, the volume-distortion function.
    fn g_function(&self, r: f64) -> PyResult<f64> {
        self.inner.g_function(r).map_err(py_err)
    }

    fn ball_volume(&self, r: f64) -> PyResult<f64> {
        self.inner.ball_volume(r).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Manifold({:?}, dim={}, scale={:?})", self.inner.kind(), self.inner.dim(), self.inner.scale())
    }
}

#[pyclass(name = "Operator", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOperator {
    inner: SemiclassicalOperator,
}

fn field(json: &str) -> PyResult<EndomorphismField> {
    let d: FieldDescriptor = serde_json::from_str(json).map_err(json_err)?;
    EndomorphismField::from_descriptor(&d).map_err(py_err)
}

#[pymethods]
impl PyOperator {
    /// `H = hbar^2 (Delta + W) + V` with `V`, `W` given as JSON field descriptors.
    #[new]
    #[pyo3(signature = (manifold, potential, endomorphism = None))]
    fn new(manifold: &PyManifold, potential: &str, endomorphism: Option<&str>) -> PyResult<Self> {
        let w = endomorphism.map(field).transpose()?;
        Ok(PyOperator {
            inner: SemiclassicalOperator::new(manifold.inner.clone(), field(potential)?, w).map_err(py_err)?,
        })
    }

    #[getter]
    fn manifold(&self) -> PyManifold {
        PyManifold {
            inner: self.inner.manifold().clone(),
        }
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn potential_at(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let p = self.inner.manifold().point(&x).map_err(py_err)?;
        Ok(rows(&self.inner.potential().eval_matrix(&p)))
    }

    /// Coefficient `phi_j(x, y, t)`.
    #[pyo3(signature = (j, x, y, t, order = 2))]
    fn phi(&self, j: usize, x: Vec<f64>, y: Vec<f64>, t: f64, order: usize) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.manifold();
        let p = Parametrix::new(&self.inner, ParametrixConfig::with_order(order)).map_err(py_err)?;
        let (x, y) = (m.point(&x).map_err(py_err)?, m.point(&y).map_err(py_err)?);
        Ok(rows(&p.phi(j, &x, &y, t).map_err(py_err)?))
    }

    /// The cutoff parametrix `khat^(N)(x, y, t, hbar)`.
    #[pyo3(signature = (x, y, t, hbar, order = 1))]
    fn parametrix(&self, x: Vec<f64>, y: Vec<f64>, t: f64, hbar: f64, order: usize) -> PyResult<Vec<Vec<f64>>> {
        let m = self.inner.manifold();
        let p = Parametrix::new(&self.inner, ParametrixConfig::with_order(order)).map_err(py_err)?;
        let (x, y) = (m.point(&x).map_err(py_err)?, m.point(&y).map_err(py_err)?);
        Ok(rows(&p.kernel(&x, &y, t, hbar).map_err(py_err)?.khat))
    }

    /// Spectral oracle at `hbar`, sized for sums down to time `t`.
    #[pyo3(signature = (hbar, t, cutoff = None))]
    fn oracle(&self, hbar: f64, t: f64, cutoff: Option<usize>) -> PyResult<PyOracle> {
        Ok(PyOracle {
            inner: build_oracle(&self.inner, hbar, t, cutoff).map_err(py_err)?,
            manifold: self.inner.manifold().clone(),
        })
    }

    /// `Z_C = (2 sqrt(pi t) hbar)^{-n} int_M tr e^{-t V}`.
    fn z_classical(&self, t: f64, hbar: f64) -> PyResult<f64> {
        partition::z_classical(&self.inner, t, hbar).map_err(py_err)
    }
}

#[pyclass(name = "Oracle", frozen)]
struct PyOracle {
    inner: SpectralDecomposition,
    manifold: ModelManifold,
}

#[pymethods]
impl PyOracle {
    #[getter]
    fn mode(&self) -> String {
        format!("{:?}", self.inner.mode()).to_lowercase()
    }

    fn eigenvalues(&self, count: usize) -> Vec<f64> {
        self.inner.eigenvalues(count)
    }

    fn trace(&self, t: f64) -> PyResult<f64> {
        self.inner.trace(t).map_err(py_err)
    }

    fn heat_kernel(&self, x: Vec<f64>, y: Vec<f64>, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let (x, y) = (
            self.manifold.point(&x).map_err(py_err)?,
            self.manifold.point(&y).map_err(py_err)?,
        );
        Ok(rows(&self.inner.heat_kernel(&x, &y, t).map_err(py_err)?))
    }
}

/// Derived constants of the explicit bound as a dict-like JSON string.
#[pyfunction]
#[pyo3(signature = (alpha, delta, kappa, w0, curvature_bound, dim))]
fn bound_constants(alpha: f64, delta: f64, kappa: f64, w0: f64, curvature_bound: f64, dim: usize) -> PyResult<String> {
    let c = partition::BoundConstants::new(alpha, delta, kappa, w0, curvature_bound, dim).map_err(py_err)?;
    serde_json::to_string(&c).map_err(json_err)
}

/// Least-squares heat-trace coefficients from `(hbar, Z_Q)` samples;
/// returns `(a, stderr)`.
#[pyfunction]
fn fit_heat_coefficients(samples: Vec<(f64, f64)>, t: f64, dim: usize, order: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let fit = partition::fit_heat_coefficients(&samples, t, dim, order).map_err(py_err)?;
    Ok((fit.a, fit.stderr))
}

/// `(lhs, rhs, holds)` for `tr e^{-(B+C)} <= tr(e^{-B} e^{-C})`.
#[pyfunction]
fn golden_thompson(b: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<(f64, f64, bool)> {
    let r = golden_thompson_check(&sym_from_rows(b)?, &sym_from_rows(c)?).map_err(py_err)?;
    Ok((r.lhs, r.rhs, r.holds))
}

/// `(lhs, rhs, holds)` for `|tr(A1 A2)| <= |A1| tr(A2)` with `A2 >= 0`.
#[pyfunction]
fn trace_product_bound(a1: Vec<Vec<f64>>, a2: Vec<Vec<f64>>) -> PyResult<(f64, f64, bool)> {
    let n = a1.len();
    if a1.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("a1 must be square"));
    }
    let a1 = DMatrix::from_fn(n, n, |i, j| a1[i][j]);
    let r = trace_product_bound_check(&a1, &sym_from_rows(a2)?).map_err(py_err)?;
    Ok((r.lhs, r.rhs, r.holds))
}

#[pymodule]
#[pyo3(name = "heatsc")]
fn heatsc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifold>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyOracle>()?;
    m.add_function(wrap_pyfunction!(bound_constants, m)?)?;
    m.add_function(wrap_pyfunction!(fit_heat_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(golden_thompson, m)?)?;
    m.add_function(wrap_pyfunction!(trace_product_bound, m)?)?;
    Ok(())
}
