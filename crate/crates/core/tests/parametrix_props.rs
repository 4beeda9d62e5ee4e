//! Coefficient and kernel checks for the parametrix against closed forms and
//! independent quadratures.

use heatsc::fields::{sym_exp, EndomorphismField, FieldDescriptor, SymMatrix};
use heatsc::parametrix::{transport_propagator, Parametrix, ParametrixConfig};
use heatsc::quadrature::gauss_legendre;
use heatsc::spectral::build_oracle;
use heatsc::{ModelManifold, Point, SemiclassicalOperator};
use proptest::prelude::*;
use std::f64::consts::PI;

fn field(json: &str) -> EndomorphismField {
    let d: FieldDescriptor = serde_json::from_str(json).unwrap();
    EndomorphismField::from_descriptor(&d).unwrap()
}

fn circle_rank2() -> SemiclassicalOperator {
    let v = field(
        r#"{"rank":2,"kind":"fourier","data":{"terms":[
            {"k":[0],"cos":[[1,0.2],[0.2,0.5]]},
            {"k":[1],"cos":[[0.4,0.3],[0.3,-0.2]],"sin":[[0,0.5],[0.5,0.1]]}]}}"#,
    );
    SemiclassicalOperator::new(ModelManifold::circle(1.0).unwrap(), v, None).unwrap()
}

fn sphere_rank2() -> SemiclassicalOperator {
    let v = field(
        r#"{"rank":2,"kind":"zonal","data":{"pole":[0,0,1],
            "profile":[[[1,0.3],[0.3,2]],[[0.5,-0.4],[-0.4,0.2]]]}}"#,
    );
    SemiclassicalOperator::new(ModelManifold::round_sphere(1.0).unwrap(), v, None).unwrap()
}

fn scalar_cosine() -> SemiclassicalOperator {
    let v = field(r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[0],"cos":1},{"k":[1],"cos":1}]}}"#);
    SemiclassicalOperator::new(ModelManifold::circle(1.0).unwrap(), v, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phi0_on_the_diagonal_is_exp_minus_tv(a in 0.0f64..2.0 * PI, z in -0.99f64..0.99, t in 0.0f64..2.0) {
        let op = circle_rank2();
        let p = Parametrix::new(&op, ParametrixConfig::default()).unwrap();
        let y = Point::angles(&[a]);
        let expected = sym_exp(&op.potential().eval(&y), -t).into_inner();
        prop_assert!((p.phi0(&y, &y, t).unwrap() - expected).amax() < 1e-12);

        let op = sphere_rank2();
        let p = Parametrix::new(&op, ParametrixConfig::default()).unwrap();
        let s = (1.0 - z * z).sqrt();
        let y = Point::on_sphere(s * a.cos(), s * a.sin(), z).unwrap();
        let expected = sym_exp(&op.potential().eval(&y), -t).into_inner();
        prop_assert!((p.phi0(&y, &y, t).unwrap() - expected).amax() < 1e-12);
    }

    /// Scalar `V` commutes with itself, so `phi_0 = exp(-t int_0^1 V(gamma(u)) du)`.
    #[test]
    fn scalar_phi0_is_averaged_potential(y in 0.0f64..2.0 * PI, dx in -2.5f64..2.5, t in 0.0f64..2.0) {
        let op = scalar_cosine();
        let p = Parametrix::new(&op, ParametrixConfig::default()).unwrap();
        let (xp, yp) = (Point::angles(&[y + dx]), Point::angles(&[y]));
        let (nodes, weights) = gauss_legendre(40);
        let mean: f64 = nodes.iter().zip(&weights)
            .map(|(s, w)| 0.5 * w * (1.0 + (y + 0.5 * (s + 1.0) * dx).cos()))
            .sum();
        prop_assert!((p.phi0(&xp, &yp, t).unwrap()[(0, 0)] - (-t * mean).exp()).abs() < 1e-12);
    }

    /// `det A(s) = exp(cos(theta) int_0^s tr V(gamma(sin(theta) s')) ds')`.
    #[test]
    fn transport_determinant_is_abel(a in 0.0f64..2.0 * PI, theta in 0.0f64..1.5, s in 0.0f64..2.0) {
        let op = circle_rank2();
        let m = op.manifold();
        prop_assume!(theta.sin() * s < m.injectivity_radius());
        let y = Point::angles(&[a]);
        let st = transport_propagator(m, op.potential(), &y, &[1.0], theta, s, 128).unwrap();
        let (nodes, weights) = gauss_legendre(40);
        let integral: f64 = nodes.iter().zip(&weights).map(|(x, w)| {
            let sp = 0.5 * (x + 1.0) * s;
            0.5 * s * w * op.potential().eval(&Point::angles(&[a + theta.sin() * sp])).trace()
        }).sum();
        let det = st.a.clone().determinant();
        prop_assert!((det / (theta.cos() * integral).exp() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn sphere_van_vleck_prefactor() {
    let op = SemiclassicalOperator::free(ModelManifold::round_sphere(1.0).unwrap(), 1);
    let p = Parametrix::new(&op, ParametrixConfig::default()).unwrap();
    let y = Point::on_sphere(0.0, 0.0, 1.0).unwrap();
    for r in [0.05f64, 0.4, 1.2, 2.5] {
        let x = Point::on_sphere(r.sin(), 0.0, r.cos()).unwrap();
        let expected = (r / r.sin()).sqrt();
        let got = p.phi0(&x, &y, 0.5).unwrap()[(0, 0)];
        assert!((got - expected).abs() < 1e-12, "r = {r}: {got} vs {expected}");
    }
}

#[test]
fn sphere_first_coefficient_is_a_sixth_of_scalar_curvature() {
    for radius in [1.0, 2.0] {
        let op = SemiclassicalOperator::free(ModelManifold::round_sphere(radius).unwrap(), 1);
        let p = Parametrix::new(&op, ParametrixConfig::with_order(1)).unwrap();
        let y = Point::on_sphere(0.3, 0.2, (1.0f64 - 0.13).sqrt()).unwrap();
        let phi1 = p.phi(1, &y, &y, 1.0).unwrap()[(0, 0)];
        let expected = 1.0 / (3.0 * radius * radius);
        assert!((phi1 - expected).abs() < 1e-6, "R = {radius}: {phi1}");
    }
}

#[test]
fn transport_equations_hold() {
    let op = circle_rank2();
    let p = Parametrix::new(&op, ParametrixConfig::with_order(1)).unwrap();
    let (x, y) = (Point::angles(&[0.9]), Point::angles(&[0.2]));
    for j in 0..=1 {
        let r = p.transport_residual(j, &x, &y, 0.7).unwrap();
        assert!(r.amax() < 1e-6, "j = {j}: {}", r.amax());
    }
}

#[test]
fn residual_has_the_predicted_leading_term() {
    let op = scalar_cosine();
    let p = Parametrix::new(&op, ParametrixConfig::with_order(1)).unwrap();
    let (x, y) = (Point::angles(&[0.5]), Point::angles(&[0.2]));
    let parts = p.residual_parts(&x, &y, 1.0).unwrap();
    for hbar in [0.3, 0.1] {
        let r = parts.residual(hbar).unwrap();
        let e = parts.expected(hbar).unwrap();
        assert!((&r - &e).amax() < 1e-3 * e.amax(), "hbar {hbar}: {r} vs {e}");
    }
}

#[test]
fn flat_constant_parametrix_matches_oracle() {
    let m = ModelManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
    let op = SemiclassicalOperator::with_constant_potential(m, SymMatrix::scalar(1, 0.7));
    let p = Parametrix::new(&op, ParametrixConfig::with_order(1)).unwrap();
    let y = Point::angles(&[1.0, 2.0]);
    for hbar in [0.2, 0.1, 0.05] {
        let k = p.kernel(&y, &y, 1.0, hbar).unwrap().khat;
        let oracle = build_oracle(&op, hbar, 1.0, None).unwrap().heat_kernel(&y, &y, 1.0).unwrap();
        assert!((k - oracle).amax() < 1e-10);
    }
}

#[test]
fn kernel_outside_cutoff_vanishes() {
    let op = scalar_cosine();
    let cfg = ParametrixConfig { eta: Some(1.0), ..ParametrixConfig::default() };
    let p = Parametrix::new(&op, cfg).unwrap();
    let e = p.kernel(&Point::angles(&[0.0]), &Point::angles(&[1.5]), 1.0, 0.3).unwrap();
    assert_eq!(e.khat[(0, 0)], 0.0);
    assert!(e.phi.is_empty());
}
