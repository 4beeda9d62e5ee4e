//! Randomized checks of the matrix exponential and the trace inequalities.

use heatsc::fields::{expm, golden_thompson_check, sym_exp, trace_product_bound_check, SymMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sym(n: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-2.0f64..2.0, n * n)
        .prop_map(move |v| SymMatrix::symmetrized(DMatrix::from_vec(n, n, v)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sym_exp_semigroup(a in sym(3), s in -1.0f64..1.0, t in -1.0f64..1.0) {
        let lhs = sym_exp(&a, s + t);
        let rhs = sym_exp(&a, s).matrix() * sym_exp(&a, t).matrix();
        prop_assert!((lhs.matrix() - rhs).amax() < 1e-11 * lhs.matrix().amax().max(1.0));
    }

    #[test]
    fn determinant_is_exp_trace(a in sym(4), s in -1.0f64..1.0) {
        let det = sym_exp(&a, s).into_inner().determinant();
        prop_assert!((det / (s * a.trace()).exp() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn sym_exp_agrees_with_general_expm(a in sym(3)) {
        let diff = sym_exp(&a, 0.7).into_inner() - expm(&(a.matrix() * 0.7));
        prop_assert!(diff.amax() < 1e-12 * sym_exp(&a, 0.7).matrix().amax());
    }

    #[test]
    fn golden_thompson(b in sym(3), c in sym(3)) {
        let r = golden_thompson_check(&b, &c).unwrap();
        prop_assert!(r.holds, "{r:?}");
    }

    #[test]
    fn trace_product_bound(a in prop::collection::vec(-2.0f64..2.0, 9), b in sym(3)) {
        let a1 = DMatrix::from_vec(3, 3, a);
        let r = trace_product_bound_check(&a1, &sym_exp(&b, 1.0)).unwrap();
        prop_assert!(r.holds, "{r:?}");
    }
}

#[test]
fn golden_thompson_is_equality_for_commuting_pairs() {
    let b = SymMatrix::diagonal(&[0.3, -1.0]);
    let c = SymMatrix::diagonal(&[2.0, 0.5]);
    let r = golden_thompson_check(&b, &c).unwrap();
    assert!((r.lhs - r.rhs).abs() < 1e-14 * r.rhs);
}

#[test]
fn indefinite_weight_rejected() {
    let a = DMatrix::identity(2, 2);
    assert!(trace_product_bound_check(&a, &SymMatrix::diagonal(&[1.0, -1.0])).is_err());
}
