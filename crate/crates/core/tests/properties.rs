mod common;

use common::*;
use proptest::prelude::*;
use quasimiura::diffop::{DiffOp, MatOp};
use quasimiura::expr::Expr;
use quasimiura::jet::{is_variational, variational_gradient};
use quasimiura::miura::{MiuraError, MiuraTransform};
use quasimiura::pencil::{EpsBivector, PencilError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ONE: &[&str] = &["w"];
const TWO: &[&str] = &["w1", "w2"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_axioms_one_component(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b, c) = (any_expr(&mut r, ONE), any_expr(&mut r, ONE), any_expr(&mut r, ONE));
        prop_assert!(ring_laws(&a, &b, &c).is_ok(), "{:?}", ring_laws(&a, &b, &c));
    }

    #[test]
    fn ring_axioms_two_components(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b, c) = (any_expr(&mut r, TWO), any_expr(&mut r, TWO), any_expr(&mut r, TWO));
        prop_assert!(ring_laws(&a, &b, &c).is_ok(), "{:?}", ring_laws(&a, &b, &c));
    }

    #[test]
    fn variational_derivative_kills_total_derivatives(seed in any::<u64>(), two in any::<bool>()) {
        let mut r = rng(seed);
        let vars = if two { TWO } else { ONE };
        let f = any_expr(&mut r, vars);
        prop_assert!(total_derivatives_are_null(&f, vars), "{}", f);
    }

    #[test]
    fn helmholtz_round_trip_holds(seed in any::<u64>(), two in any::<bool>()) {
        let mut r = rng(seed);
        let vars = if two { TWO } else { ONE };
        let h = density(&mut r, vars);
        prop_assert!(helmholtz_round_trip(&h, vars).is_ok(), "{:?}", helmholtz_round_trip(&h, vars));
    }

    #[test]
    fn schouten_pf_is_antisymmetric_in_the_functionals(seed in any::<u64>(), two in any::<bool>()) {
        let mut r = rng(seed);
        let vars = if two { TWO } else { ONE };
        let p = random_skew(&mut r, vars);
        let (g, h) = (density(&mut r, vars), density(&mut r, vars));
        prop_assert!(schouten_pf_adjoint(&p, &g, &h));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transform_group_laws(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_transform(&mut r, &["w"], &["v"], 3);
        let b = random_transform(&mut r, &["v"], &["z"], 3);
        let c = random_transform(&mut r, &["z"], &["y"], 3);
        prop_assert!(group_laws(&a, &b, &c, 3).is_ok(), "{:?}", group_laws(&a, &b, &c, 3));
    }

    #[test]
    fn transform_group_laws_two_components(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_transform(&mut r, &["w1", "w2"], &["v1", "v2"], 2);
        let b = random_transform(&mut r, &["v1", "v2"], &["z1", "z2"], 2);
        let c = random_transform(&mut r, &["z1", "z2"], &["y1", "y2"], 2);
        prop_assert!(group_laws(&a, &b, &c, 2).is_ok(), "{:?}", group_laws(&a, &b, &c, 2));
    }

    #[test]
    fn misgraded_transform_terms_are_rejected(seed in any::<u64>(), k in 1usize..4, up in any::<bool>()) {
        let mut r = rng(seed);
        let wrong = if up { k + 1 } else { k - 1 } as u32;
        let mut orders = vec![vec![Expr::jet("v", 0)]];
        for j in 1..=k {
            let deg = if j == k { wrong } else { j as u32 };
            orders.push(vec![graded_poly(&mut r, &["v"], deg, 2, false)]);
        }
        let res = MiuraTransform::new(sv(&["w"]), sv(&["v"]), vec![], orders);
        prop_assert!(matches!(res, Err(MiuraError::Grading { .. })), "{:?}", res);
    }

    #[test]
    fn misgraded_bracket_terms_are_rejected(seed in any::<u64>(), m in 0usize..3, l in 0usize..4) {
        let mut r = rng(seed);
        // the coefficient of d^l at eps^m has degree m + 1 - l; offset it by one or two
        let right = (m as i64) + 1 - (l as i64);
        let off = if right <= 0 { right + 1 + (seed % 2) as i64 } else { right + 1 };
        prop_assume!(off >= 0 && off != right);
        let mut c = vec![Expr::zero(); l + 1];
        c[l] = graded_poly(&mut r, ONE, off as u32, 2, false);
        let mut orders = vec![MatOp::zero(1, 1); m + 1];
        *orders[m].get_mut(0, 0) = DiffOp::new(c);
        let res = EpsBivector::new(sv(ONE), orders);
        prop_assert!(matches!(res, Err(PencilError::Grading { .. })), "{:?}", res.map(|_| ()));
    }
}

#[test]
fn non_variational_expression_fails_helmholtz() {
    let psi = vec![quasimiura::expr::parse("w*w#1", &["w"], &[]).unwrap()];
    assert!(!is_variational(&psi, &sv(ONE)));
    let grad = variational_gradient(&quasimiura::expr::parse("w*w#1^2", &["w"], &[]).unwrap(), &sv(ONE));
    assert!(is_variational(&grad, &sv(ONE)));
}

#[test]
fn adjointness_check_rejects_symmetric_operators() {
    use quasimiura::localgeom::LocalBivector;
    let p = |s: &str| quasimiura::expr::parse(s, &["w"], &[]).unwrap();
    let sym = LocalBivector::new(sv(ONE), MatOp::identity(1));
    assert!(!schouten_pf_adjoint(&sym, &p("w^2"), &p("w^3")));
    let mut op = MatOp::zero(1, 1);
    *op.get_mut(0, 0) = DiffOp::d(1);
    let skew = LocalBivector::new(sv(ONE), op);
    assert!(schouten_pf_adjoint(&skew, &p("w^2"), &p("w^3")));
}
