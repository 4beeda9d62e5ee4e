//! Closed-form Riemannian geometry of the constant-curvature model manifolds:
//! circle, rectangular flat torus and round 2-sphere.
//!
//! Tangent vectors are given in normal coordinates at their base point with
//! respect to a fixed orthonormal frame ([`ModelManifold::frame`]). On flat
//! factors the frame is the coordinate frame in arc-length units.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const TAU: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    #[serde(alias = "torus")]
    FlatTorus,
    #[serde(alias = "sphere")]
    RoundSphere,
}

/// JSON form: `{"kind": "...", "dim": n, "scale": [...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifoldSpec {
    kind: ManifoldKind,
    dim: usize,
    scale: Vec<f64>,
}

/// A closed constant-curvature model manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifoldSpec", into = "ManifoldSpec")]
pub struct ModelManifold {
    kind: ManifoldKind,
    dim: usize,
    scale: Vec<f64>,
}

impl TryFrom<ManifoldSpec> for ModelManifold {
    type Error = Error;
    fn try_from(s: ManifoldSpec) -> Result<Self> {
        ModelManifold::new(s.kind, s.dim, s.scale)
    }
}

impl From<ModelManifold> for ManifoldSpec {
    fn from(m: ModelManifold) -> Self {
        ManifoldSpec {
            kind: m.kind,
            dim: m.dim,
            scale: m.scale,
        }
    }
}

/// A point of a model manifold.
#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    /// One angle in `[0, 2pi)` per circle factor.
    Angles(Vec<f64>),
    /// Unit vector in R^3 (direction on the sphere of radius R).
    Sphere(Vector3<f64>),
}

impl Point {
    pub fn angles(values: &[f64]) -> Point {
        Point::Angles(values.iter().map(|a| a.rem_euclid(TAU)).collect())
    }

    /// Normalizes `(x, y, z)` onto the unit sphere.
    pub fn on_sphere(x: f64, y: f64, z: f64) -> Result<Point> {
        let v = Vector3::new(x, y, z);
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-300 {
            return Err(Error::Domain(format!(
                "cannot normalize ({x}, {y}, {z}) onto the sphere"
            )));
        }
        Ok(Point::Sphere(v / norm))
    }

    /// Raw coordinates: angles, or the unit 3-vector.
    pub fn coords(&self) -> Vec<f64> {
        match self {
            Point::Angles(a) => a.clone(),
            Point::Sphere(v) => vec![v.x, v.y, v.z],
        }
    }

    fn unwrap_angles(&self) -> &[f64] {
        match self {
            Point::Angles(a) => a,
            Point::Sphere(_) => panic!("expected an angle point, found a sphere point"),
        }
    }

    fn unwrap_sphere(&self) -> &Vector3<f64> {
        match self {
            Point::Sphere(v) => v,
            Point::Angles(_) => panic!("expected a sphere point, found an angle point"),
        }
    }
}

/// Wraps a displacement into `(-len/2, len/2]`.
fn wrap_symmetric(d: f64, len: f64) -> f64 {
    let w = (d + 0.5 * len).rem_euclid(len) - 0.5 * len;
    if w <= -0.5 * len {
        w + len
    } else {
        w
    }
}

impl ModelManifold {
    pub fn new(kind: ManifoldKind, dim: usize, scale: Vec<f64>) -> Result<Self> {
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidDescriptor(
                "manifold scale entries must be finite and positive".into(),
            ));
        }
        match kind {
            ManifoldKind::Circle => {
                if dim != 1 || scale.len() != 1 {
                    return Err(Error::InvalidDescriptor(
                        "circle needs dim = 1 and scale = [R]".into(),
                    ));
                }
            }
            ManifoldKind::RoundSphere => {
                if dim != 2 {
                    return Err(Error::Unsupported(format!(
                        "round sphere of dimension {dim} (only S^2 is available)"
                    )));
                }
                if scale.len() != 1 {
                    return Err(Error::InvalidDescriptor(
                        "sphere needs scale = [R]".into(),
                    ));
                }
            }
            ManifoldKind::FlatTorus => {
                if dim == 0 || scale.len() != dim {
                    return Err(Error::InvalidDescriptor(format!(
                        "flat torus of dim {dim} needs {dim} edge lengths, got {}",
                        scale.len()
                    )));
                }
            }
        }
        Ok(ModelManifold { kind, dim, scale })
    }

    pub fn circle(radius: f64) -> Result<Self> {
        Self::new(ManifoldKind::Circle, 1, vec![radius])
    }

    pub fn flat_torus(lengths: &[f64]) -> Result<Self> {
        Self::new(ManifoldKind::FlatTorus, lengths.len(), lengths.to_vec())
    }

    pub fn round_sphere(radius: f64) -> Result<Self> {
        Self::new(ManifoldKind::RoundSphere, 2, vec![radius])
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn is_flat(&self) -> bool {
        self.kind != ManifoldKind::RoundSphere
    }

    /// Sectional curvature `K`.
    pub fn curvature(&self) -> f64 {
        match self.kind {
            ManifoldKind::RoundSphere => 1.0 / (self.scale[0] * self.scale[0]),
            _ => 0.0,
        }
    }

    pub fn injectivity_radius(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle | ManifoldKind::RoundSphere => PI * self.scale[0],
            ManifoldKind::FlatTorus => self.scale.iter().fold(f64::INFINITY, |m, l| m.min(*l)) / 2.0,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle | ManifoldKind::RoundSphere => PI * self.scale[0],
            ManifoldKind::FlatTorus => self.scale.iter().map(|l| 0.25 * l * l).sum::<f64>().sqrt(),
        }
    }

    pub fn volume(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle => TAU * self.scale[0],
            ManifoldKind::FlatTorus => self.scale.iter().product(),
            ManifoldKind::RoundSphere => {
                sphere_area(self.dim) * self.scale[0].powi(self.dim as i32)
            }
        }
    }

    /// Periods of the angle coordinates in arc length (flat manifolds only).
    pub fn axis_lengths(&self) -> Vec<f64> {
        match self.kind {
            ManifoldKind::Circle => vec![TAU * self.scale[0]],
            ManifoldKind::FlatTorus => self.scale.clone(),
            ManifoldKind::RoundSphere => Vec::new(),
        }
    }

    /// Largest radius below which distance balls are embedded and `G` is
    /// smooth: `min(iota, pi/sqrt(K))`.
    pub fn regular_radius(&self) -> f64 {
        let k = self.curvature();
        let conj = if k > 0.0 { PI / k.sqrt() } else { f64::INFINITY };
        self.injectivity_radius().min(conj)
    }

    /// Builds a point from raw coordinates (angles, or an ambient 3-vector).
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        match self.kind {
            ManifoldKind::RoundSphere => {
                if coords.len() != 3 {
                    return Err(Error::DimensionMismatch {
                        expected: 3,
                        found: coords.len(),
                    });
                }
                Point::on_sphere(coords[0], coords[1], coords[2])
            }
            _ => {
                if coords.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        found: coords.len(),
                    });
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Domain("non-finite angle".into()));
                }
                Ok(Point::angles(coords))
            }
        }
    }

    pub fn check_point(&self, p: &Point) -> Result<()> {
        match (self.kind, p) {
            (ManifoldKind::RoundSphere, Point::Sphere(v)) => {
                if (v.norm() - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain("sphere point is not unit length".into()));
                }
                Ok(())
            }
            (ManifoldKind::RoundSphere, Point::Angles(_)) => Err(Error::InvalidDescriptor(
                "angle point given for a sphere".into(),
            )),
            (_, Point::Angles(a)) if a.len() == self.dim => Ok(()),
            (_, Point::Angles(a)) => Err(Error::DimensionMismatch {
                expected: self.dim,
                found: a.len(),
            }),
            (_, Point::Sphere(_)) => Err(Error::InvalidDescriptor(
                "sphere point given for a flat manifold".into(),
            )),
        }
    }

    /// Geodesic distance `d(x, y)`.
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        match self.kind {
            ManifoldKind::RoundSphere => {
                let (a, b) = (x.unwrap_sphere(), y.unwrap_sphere());
                self.scale[0] * a.cross(b).norm().atan2(a.dot(b))
            }
            _ => {
                let (a, b) = (x.unwrap_angles(), y.unwrap_angles());
                self.axis_lengths()
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(len, (ai, bi))| {
                        let d = wrap_symmetric((ai - bi) * len / TAU, *len);
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Orthonormal frame of `T_p` as ambient vectors (sphere only); flat
    /// manifolds use the coordinate frame and return an empty list.
    pub fn frame(&self, p: &Point) -> Vec<Vector3<f64>> {
        match p {
            Point::Angles(_) => Vec::new(),
            Point::Sphere(v) => {
                let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
                    Vector3::x()
                } else if v.y.abs() <= v.z.abs() {
                    Vector3::y()
                } else {
                    Vector3::z()
                };
                let e1 = (axis - v * axis.dot(v)).normalize();
                let e2 = v.cross(&e1);
                vec![e1, e2]
            }
        }
    }

    /// Exponential map `exp_p(v)` with `v` in normal coordinates at `p`.
    pub fn exp_normal(&self, p: &Point, v: &[f64]) -> Point {
        match p {
            Point::Angles(a) => {
                let lens = self.axis_lengths();
                Point::Angles(
                    a.iter()
                        .zip(v)
                        .zip(&lens)
                        .map(|((ai, vi), len)| (ai + vi * TAU / len).rem_euclid(TAU))
                        .collect(),
                )
            }
            Point::Sphere(c) => {
                let radius = self.scale[0];
                let frame = self.frame(p);
                let t = frame[0] * v[0] + frame[1] * v[1];
                let rho = t.norm();
                if rho == 0.0 {
                    return p.clone();
                }
                let angle = rho / radius;
                let z = c * angle.cos() + t * (angle.sin() / rho);
                Point::Sphere(z / z.norm())
            }
        }
    }

    /// Normal coordinates of `x` at `p`, i.e. `exp_p^{-1}(x)`. Meaningful
    /// when `x` is not in the cut locus of `p`.
    pub fn log_normal(&self, p: &Point, x: &Point) -> Vec<f64> {
        match (p, x) {
            (Point::Angles(a), Point::Angles(b)) => self
                .axis_lengths()
                .iter()
                .zip(a.iter().zip(b))
                .map(|(len, (ai, bi))| wrap_symmetric((bi - ai) * len / TAU, *len))
                .collect(),
            (Point::Sphere(c), Point::Sphere(z)) => {
                let w = z - c * c.dot(z);
                let s = w.norm();
                if s == 0.0 {
                    return vec![0.0; 2];
                }
                let angle = s.atan2(c.dot(z));
                let t = w * (self.scale[0] * angle / s);
                let frame = self.frame(p);
                vec![t.dot(&frame[0]), t.dot(&frame[1])]
            }
            _ => panic!("points of different kinds"),
        }
    }

    /// `\overline{xy}(u) = exp_y(u exp_y^{-1}(x))`: the minimizing geodesic
    /// from `y` (u = 0) to `x` (u = 1).
    pub fn geodesic_point(&self, y: &Point, x: &Point, u: f64) -> Result<Point> {
        let d = self.distance(x, y);
        let iota = self.injectivity_radius();
        if d >= iota {
            return Err(Error::CutLocus {
                distance: d,
                limit: iota,
            });
        }
        let v: Vec<f64> = self.log_normal(y, x).into_iter().map(|c| u * c).collect();
        Ok(self.exp_normal(y, &v))
    }

    /// `G(r) = (2n + Delta(r^2))/4`, which on a model space depends only on `r`.
    pub fn g_function(&self, r: f64) -> Result<f64> {
        let limit = self.regular_radius();
        if !(r >= 0.0 && r < limit) {
            return Err(Error::Domain(format!(
                "G needs 0 <= r < {limit}, got {r}"
            )));
        }
        Ok(g_closed_form(self.curvature(), self.dim, r))
    }

    /// `G(r)/r`, continuous at `r = 0` where it vanishes.
    pub fn g_over_r(&self, r: f64) -> f64 {
        let k = self.curvature();
        if k == 0.0 || self.dim == 1 {
            return 0.0;
        }
        let sk = k.sqrt();
        let z = sk * r;
        let half = 0.5 * (self.dim as f64 - 1.0);
        if z < 0.1 {
            half * sk * one_minus_z_cot_z_over_z(z)
        } else {
            half * (1.0 - z / z.tan()) / r
        }
    }

    /// Exact volume of the geodesic ball of radius `r < iota` in this manifold.
    pub fn ball_volume(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r < self.injectivity_radius()) {
            return Err(Error::Domain(format!(
                "ball radius {r} outside (0, {})",
                self.injectivity_radius()
            )));
        }
        ball_volume_model(self.curvature(), self.dim, r)
    }
}

/// Series of `(1 - z cot z)/z` for small `z`.
fn one_minus_z_cot_z_over_z(z: f64) -> f64 {
    let z2 = z * z;
    z * (1.0 / 3.0
        + z2 * (1.0 / 45.0 + z2 * (2.0 / 945.0 + z2 * (1.0 / 4725.0 + z2 * 2.0 / 93555.0))))
}

fn g_closed_form(k: f64, n: usize, r: f64) -> f64 {
    if k == 0.0 || n == 1 {
        return 0.0;
    }
    let half = 0.5 * (n as f64 - 1.0);
    let z = k.sqrt() * r;
    if z < 0.1 {
        half * z * one_minus_z_cot_z_over_z(z)
    } else {
        half * (1.0 - z / z.tan())
    }
}

/// Area of the unit sphere `S^k` in R^{k+1}.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => TAU,
        _ => TAU / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// Volume `v_{K,n}(r)` of the geodesic ball of radius `r` in the
/// n-dimensional simply connected space of constant curvature `K`.
pub fn ball_volume_model(k: f64, n: usize, r: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("ball radius must be positive, got {r}")));
    }
    if k > 0.0 && r >= PI / k.sqrt() {
        return Err(Error::Domain(format!(
            "radius {r} reaches the conjugate radius pi/sqrt(K) = {}",
            PI / k.sqrt()
        )));
    }
    let v = match n {
        1 => 2.0 * r,
        2 => {
            if k > 0.0 {
                let h = 0.5 * k.sqrt() * r;
                4.0 * PI * h.sin().powi(2) / k
            } else if k < 0.0 {
                let h = 0.5 * (-k).sqrt() * r;
                4.0 * PI * h.sinh().powi(2) / (-k)
            } else {
                PI * r * r
            }
        }
        _ => {
            if k == 0.0 {
                sphere_area(n - 1) * r.powi(n as i32) / n as f64
            } else {
                let p = (n - 1) as i32;
                // integrate sn_K(rho)^{n-1} / rho^{n-1} * rho^{n-1} on [0, r]
                let integral = quadrature::integrate_scalar(
                    |rho| sn_k(k, rho).powi(p),
                    0.0,
                    r,
                    1e-15 * r.powi(n as i32),
                )?;
                sphere_area(n - 1) * integral
            }
        }
    };
    Ok(v)
}

/// `sn_K(rho)`: `sin(sqrt(K) rho)/sqrt(K)`, `rho`, or `sinh(sqrt(-K) rho)/sqrt(-K)`.
pub fn sn_k(k: f64, rho: f64) -> f64 {
    if k > 0.0 {
        let s = k.sqrt();
        (s * rho).sin() / s
    } else if k < 0.0 {
        let s = (-k).sqrt();
        (s * rho).sinh() / s
    } else {
        rho
    }
}
