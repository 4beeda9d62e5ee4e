//! Partition functions and bounds against independent computations.

use heatsc::fields::{EndomorphismField, FieldDescriptor};
use heatsc::partition::{
    check_corollary_47, empirical_constant, gt_upper_bound, z_classical, z_quantum, BoundConstants,
};
use heatsc::quadrature::gauss_legendre;
use heatsc::spectral::{build_oracle, exact_spectrum};
use heatsc::{ModelManifold, SemiclassicalOperator};
use proptest::prelude::*;
use std::f64::consts::PI;

fn cosine_op() -> SemiclassicalOperator {
    let d: FieldDescriptor = serde_json::from_str(
        r#"{"rank":1,"kind":"fourier","data":{"terms":[{"k":[0],"cos":1},{"k":[1],"cos":1}]}}"#,
    )
    .unwrap();
    SemiclassicalOperator::new(
        ModelManifold::circle(1.0).unwrap(),
        EndomorphismField::from_descriptor(&d).unwrap(),
        None,
    )
    .unwrap()
}

/// `(2 pi hbar)^{-1} int int e^{-t (p^2 + V(x))} dp dx` with Gauss-Legendre in
/// `p` over a truncated range and the trapezoid rule in `x`.
#[test]
fn classical_partition_is_the_phase_space_integral() {
    let op = cosine_op();
    let (t, hbar): (f64, f64) = (0.8, 0.2);
    let p_max = (40.0 / t).sqrt();
    let (nodes, weights) = gauss_legendre(96);
    let p_int: f64 = nodes.iter().zip(&weights).map(|(s, w)| w * p_max * (-t * (s * p_max).powi(2)).exp()).sum();
    let n = 128;
    let x_int: f64 = (0..n)
        .map(|i| {
            let x = 2.0 * PI * i as f64 / n as f64;
            (-t * (1.0 + x.cos())).exp()
        })
        .sum::<f64>()
        * 2.0
        * PI
        / n as f64;
    let literal = p_int * x_int / (2.0 * PI * hbar);
    let zc = z_classical(&op, t, hbar).unwrap();
    assert!((zc / literal - 1.0).abs() < 1e-8, "{zc} vs {literal}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constants_are_recomputed(alpha in 1.01f64..5.0, delta in 0.05f64..4.0, kappa in 0.0f64..3.0, w0 in -2.0f64..2.0, n in 1usize..4) {
        let c = BoundConstants::new(alpha, delta, kappa, w0, 1.0, n).unwrap();
        let nf = n as f64;
        let c1 = (1.0 + delta).powf(nf * alpha) * ((1.0 + alpha) / delta).exp();
        let ct = alpha * nf / (alpha - 1.0) * kappa * delta;
        let unit_ball = PI.powf(nf / 2.0) / libm_gamma(nf / 2.0 + 1.0);
        prop_assert!((c.c1 / c1 - 1.0).abs() < 1e-12);
        prop_assert!(c.c1 > 1.0);
        prop_assert!((c.c2 - (ct - w0)).abs() < 1e-12 * (1.0 + ct.abs()));
        prop_assert!((c.c3 / (c1 * (2.0 * PI.sqrt()).powf(nf) / unit_ball) - 1.0).abs() < 1e-12);
        prop_assert_eq!(c.clone(), BoundConstants::new(alpha, delta, kappa, w0, 1.0, n).unwrap());
    }
}

/// Gamma at integers and half-integers.
fn libm_gamma(x: f64) -> f64 {
    if x == 1.0 {
        1.0
    } else if x == 0.5 {
        PI.sqrt()
    } else {
        (x - 1.0) * libm_gamma(x - 1.0)
    }
}

#[test]
fn upper_bound_dominates_the_trace_on_the_sphere() {
    let m = ModelManifold::round_sphere(1.0).unwrap();
    let sd = exact_spectrum(&m, 0);
    let bc = BoundConstants::new(2.0, 1.0, 0.0, 0.0, 1.0, 2).unwrap();
    for i in 1..=20 {
        let tau = 0.5 * i as f64 / 20.0;
        let zq = z_quantum(&sd, tau).unwrap();
        let b = gt_upper_bound(&m, 4.0 * PI, &bc, tau, 1.0).unwrap();
        assert!(b >= zq, "tau {tau}: {b} < {zq}");
    }
}

#[test]
fn sphere_ratio_at_hbar_tenth() {
    let op = SemiclassicalOperator::free(ModelManifold::round_sphere(1.0).unwrap(), 1);
    let bc = BoundConstants::for_operator(&op, 2.0, 1.0).unwrap();
    let rows = check_corollary_47(&op, &bc, 1.0, &[0.1, 0.05], |h| build_oracle(&op, h, 1.0, None)).unwrap();
    let direct: f64 = 0.01 * (0..2000).map(|l| (2 * l + 1) as f64 * (-0.01 * (l * (l + 1)) as f64).exp()).sum::<f64>();
    assert!((rows[0].ratio - direct).abs() < 1e-12);
    // 1 + tau/3 + tau^2/15 + O(tau^3)
    assert!((rows[0].ratio - (1.0 + 0.01 / 3.0 + 1e-4 / 15.0)).abs() < 1e-7);
    assert!(rows.iter().all(|r| r.holds == Some(true)));
    let c = empirical_constant(&rows).unwrap();
    assert!(c > 1.0 && c < bc.c3);
}

#[test]
fn flat_bound_ratio_tends_to_c3() {
    let m = ModelManifold::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
    let op = SemiclassicalOperator::free(m.clone(), 1);
    let bc = BoundConstants::new(2.0, 1.0, 0.0, 0.0, 0.0, 2).unwrap();
    let hbar = 0.02;
    let zq = build_oracle(&op, hbar, 1.0, None).unwrap().trace(1.0).unwrap();
    let b = gt_upper_bound(&m, m.volume(), &bc, 1.0, hbar).unwrap();
    assert!((b / zq / bc.c3 - 1.0).abs() < 1e-9);
}
