use quasimiura::catalog::kdv;
use quasimiura::hodograph::KdvStudy;

fn study(top: usize) -> quasimiura::hodograph::StudyReport {
    let t = kdv(None).unwrap().transform.unwrap();
    KdvStudy::default().run(&t, top).unwrap()
}

#[test]
fn hopf_level_error_is_second_order() {
    let r = study(0);
    assert!((r.p - 2.0).abs() < 1e-3, "{}", r.to_text());
    // exact value of the leading correction: c max|v_xx-terms| at the sample points
    assert!((r.rows[0].error - 1.2e-4).abs() < 1e-8, "{}", r.to_text());
}

#[test]
fn truncations_gain_two_orders_each() {
    let r2 = study(2);
    let r4 = study(4);
    assert!((r2.p - 4.0044).abs() < 1e-3, "{}", r2.to_text());
    assert!((r4.p - 5.9977).abs() < 1e-3, "{}", r4.to_text());
    let frozen2 = [9.660642e-7, 6.008673e-8, 3.750761e-9];
    let frozen4 = [8.494563e-8, 1.330939e-9, 2.080425e-11];
    for (row, e) in r2.rows.iter().zip(frozen2) {
        assert!((row.error / e - 1.0).abs() < 1e-3, "{}", r2.to_text());
    }
    for (row, e) in r4.rows.iter().zip(frozen4) {
        assert!((row.error / e - 1.0).abs() < 1e-3, "{}", r4.to_text());
        assert!(row.reference_self_convergence < 1e-8);
    }
}

#[test]
fn single_eps_is_refused() {
    let t = kdv(None).unwrap().transform.unwrap();
    let s = KdvStudy { eps: vec![0.1], ..KdvStudy::default() };
    assert!(s.run(&t, 2).is_err());
    let s = KdvStudy { amplitude: 1.5, ..KdvStudy::default() };
    assert!(s.run(&t, 2).is_err());
}
