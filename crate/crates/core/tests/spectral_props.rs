//! Oracle self-consistency: semigroup law, positivity, cutoff convergence.

use heatsc::fields::{EndomorphismField, FieldDescriptor, SymMatrix};
use heatsc::spectral::{build_oracle, exact_spectrum, galerkin_spectrum};
use heatsc::{ModelManifold, Point, SemiclassicalOperator};
use std::f64::consts::PI;

fn cosine_op() -> SemiclassicalOperator {
    let d: FieldDescriptor = serde_json::from_str(
        r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[0],"cos":1},{"k":[1],"cos":1,"sin":0.3}]}}"#,
    )
    .unwrap();
    SemiclassicalOperator::new(
        ModelManifold::circle(1.0).unwrap(),
        EndomorphismField::from_descriptor(&d).unwrap(),
        None,
    )
    .unwrap()
}

#[test]
fn chapman_kolmogorov_on_the_circle() {
    let op = cosine_op();
    let hbar = 0.3;
    let sd = build_oracle(&op, hbar, 0.2, None).unwrap();
    let (x, y) = (Point::angles(&[0.4]), Point::angles(&[1.9]));
    let (s, t) = (0.3, 0.5);
    // periodic trapezoid is spectrally accurate for the smooth integrand
    let n = 256;
    let mut sum = 0.0;
    for i in 0..n {
        let z = Point::angles(&[2.0 * PI * i as f64 / n as f64]);
        sum += sd.heat_kernel(&x, &z, s).unwrap()[(0, 0)] * sd.heat_kernel(&z, &y, t).unwrap()[(0, 0)];
    }
    sum *= 2.0 * PI / n as f64;
    let direct = sd.heat_kernel(&x, &y, s + t).unwrap()[(0, 0)];
    assert!((sum - direct).abs() < 1e-10 * direct, "{sum} vs {direct}");
}

#[test]
fn scalar_kernels_are_positive_and_symmetric() {
    let op = cosine_op();
    let sd = build_oracle(&op, 0.25, 0.5, None).unwrap();
    // near the antipode the true kernel is ~1e-34, below eigenvector rounding
    let floor = 1e-13 * sd.heat_kernel(&Point::angles(&[0.0]), &Point::angles(&[0.0]), 0.5).unwrap()[(0, 0)];
    for i in 0..12 {
        for j in 0..12 {
            let x = Point::angles(&[0.5 * i as f64]);
            let y = Point::angles(&[0.5 * j as f64]);
            let kxy = sd.heat_kernel(&x, &y, 0.5).unwrap()[(0, 0)];
            let kyx = sd.heat_kernel(&y, &x, 0.5).unwrap()[(0, 0)];
            assert!(kxy > -floor, "{kxy}");
            assert!((kxy - kyx).abs() < 1e-12 * kxy.max(1.0));
        }
    }
}

#[test]
fn trace_decreases_in_time() {
    let op = cosine_op();
    let sd = build_oracle(&op, 0.2, 0.1, None).unwrap();
    let traces: Vec<f64> = [0.1, 0.2, 0.5, 1.0, 2.0].iter().map(|t| sd.trace(*t).unwrap()).collect();
    assert!(traces.windows(2).all(|w| w[1] < w[0]), "{traces:?}");
    let sphere = exact_spectrum(&ModelManifold::round_sphere(1.0).unwrap(), 64);
    assert!(sphere.trace(0.1).unwrap() > sphere.trace(0.2).unwrap());
}

#[test]
fn galerkin_eigenvalues_converge_under_cutoff_doubling() {
    let op = cosine_op();
    let a = galerkin_spectrum(&op, 0.2, 24).unwrap().eigenvalues(10);
    let b = galerkin_spectrum(&op, 0.2, 48).unwrap().eigenvalues(10);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn rank_two_constant_potential_splits() {
    let m = ModelManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
    let v = SymMatrix::diagonal(&[0.0, 0.8]);
    let op = SemiclassicalOperator::with_constant_potential(m.clone(), v);
    let sd = build_oracle(&op, 0.5, 1.0, None).unwrap();
    let free = build_oracle(&SemiclassicalOperator::free(m, 1), 0.5, 1.0, None).unwrap();
    let expected = free.trace(1.0).unwrap() * (1.0 + (-0.8f64).exp());
    assert!((sd.trace(1.0).unwrap() - expected).abs() < 1e-12 * expected);
}
