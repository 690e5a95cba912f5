//! Random differential polynomials, operators and transformations for the
//! property and acceptance suites.
#![allow(dead_code)]

use quasimiura::diffop::{DiffOp, MatOp};
use quasimiura::expr::{Expr, Q};
use quasimiura::jet::{homotopy_density, is_variational, same_functional, total_x_derivative, variational_gradient};
use quasimiura::localgeom::{schouten_pf, LocalBivector, LocalFunctional};
use quasimiura::miura::{compose, invert, MiuraTransform};
use rand::Rng;

pub fn sv(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn small_q(rng: &mut impl Rng) -> Q {
    Q::new(rng.gen_range(-6..=6), rng.gen_range(1..=4))
}

pub fn nonzero_q(rng: &mut impl Rng) -> Q {
    loop {
        let q = small_q(rng);
        if !q.is_zero() {
            return q;
        }
    }
}

/// Monomial carrying exactly `degree` x-derivatives, times powers `0..=2` of the
/// undifferentiated variables and, when `laurent`, sometimes one inverse power.
pub fn graded_monomial(rng: &mut impl Rng, vars: &[&str], degree: u32, laurent: bool) -> Expr {
    let mut e = Expr::one();
    let mut left = degree;
    while left > 0 {
        let o = rng.gen_range(1..=left.min(3));
        let v = vars[rng.gen_range(0..vars.len())];
        e = e.mul_ref(&Expr::jet(v, o));
        left -= o;
    }
    for v in vars {
        e = e.mul_ref(&Expr::jet(v, 0).pow(rng.gen_range(0..=2)));
    }
    if laurent && rng.gen_bool(0.3) {
        let v = vars[rng.gen_range(0..vars.len())];
        e = e.mul_ref(&Expr::jet(v, 0).inverse().unwrap());
    }
    e
}

pub fn graded_poly(rng: &mut impl Rng, vars: &[&str], degree: u32, terms: usize, laurent: bool) -> Expr {
    (0..terms).fold(Expr::zero(), |acc, _| acc.add_ref(&graded_monomial(rng, vars, degree, laurent).scale(&nonzero_q(rng))))
}

/// Mixed-degree expression, used for the ring laws.
pub fn any_expr(rng: &mut impl Rng, vars: &[&str]) -> Expr {
    let terms = rng.gen_range(1..=4);
    (0..terms).fold(Expr::zero(), |acc, _| {
        let d = rng.gen_range(0..=3);
        acc.add_ref(&graded_monomial(rng, vars, d, true).scale(&nonzero_q(rng)))
    })
}

/// Polynomial density without constant term.
pub fn density(rng: &mut impl Rng, vars: &[&str]) -> Expr {
    let mut h = Expr::zero();
    for _ in 0..rng.gen_range(1..=3) {
        let d = rng.gen_range(0..=3);
        let mut m = graded_monomial(rng, vars, d, false);
        if d == 0 {
            m = m.mul_ref(&Expr::jet(vars[rng.gen_range(0..vars.len())], 0));
        }
        h = h.add_ref(&m.scale(&nonzero_q(rng)));
    }
    h
}

/// `Phi_0 = identity` plus random graded corrections through `eps^top`.
pub fn random_transform(rng: &mut impl Rng, old: &[&str], new: &[&str], top: usize) -> MiuraTransform {
    let mut orders = vec![new.iter().map(|v| Expr::jet(v, 0)).collect::<Vec<_>>()];
    for k in 1..=top {
        orders.push(new.iter().map(|_| graded_poly(rng, new, k as u32, 2, false)).collect());
    }
    MiuraTransform::new(sv(old), sv(new), vec![], orders)
        .unwrap()
        .with_inverse(old.iter().map(|v| Expr::jet(v, 0)).collect())
}

/// `(R - R^+)/2` for a random first- and third-order operator matrix `R`.
pub fn random_skew(rng: &mut impl Rng, vars: &[&str]) -> LocalBivector {
    let n = vars.len();
    let mut r = MatOp::zero(n, n);
    for i in 0..n {
        for j in 0..n {
            let c = vec![
                graded_poly(rng, vars, 1, 1, false),
                graded_poly(rng, vars, 0, 2, false),
                Expr::zero(),
                Expr::constant(small_q(rng)),
            ];
            *r.get_mut(i, j) = DiffOp::new(c);
        }
    }
    let half = Q::new(1, 2);
    LocalBivector::new(sv(vars), r.sub(&r.adjoint()).scale(&half).canonical())
}

// ------------------------------------------------------------------ properties

fn eq(a: &Expr, b: &Expr) -> bool {
    a.add_ref(&-b).is_zero()
}

pub fn ring_laws(a: &Expr, b: &Expr, c: &Expr) -> Result<(), String> {
    let one = Expr::one();
    let checks = [
        ("additive associativity", eq(&a.add_ref(b).add_ref(c), &a.add_ref(&b.add_ref(c)))),
        ("additive commutativity", eq(&a.add_ref(b), &b.add_ref(a))),
        ("multiplicative associativity", eq(&a.mul_ref(b).mul_ref(c), &a.mul_ref(&b.mul_ref(c)))),
        ("multiplicative commutativity", eq(&a.mul_ref(b), &b.mul_ref(a))),
        ("distributivity", eq(&a.mul_ref(&b.add_ref(c)), &a.mul_ref(b).add_ref(&a.mul_ref(c)))),
        ("unit", eq(&a.mul_ref(&one), a)),
        ("additive inverse", a.add_ref(&-a).is_zero()),
        ("Leibniz rule", eq(&a.mul_ref(b).total_dx(), &a.total_dx().mul_ref(b).add_ref(&a.mul_ref(&b.total_dx())))),
    ];
    match checks.iter().find(|(_, ok)| !ok) {
        Some((name, _)) => Err(format!("{name} fails for a = {a}, b = {b}, c = {c}")),
        None => Ok(()),
    }
}

/// `delta (d_x f) = 0`.
pub fn total_derivatives_are_null(f: &Expr, vars: &[&str]) -> bool {
    variational_gradient(&total_x_derivative(f), &sv(vars)).iter().all(|e| e.is_zero())
}

/// `delta h` passes the Helmholtz test and integrates back to `h` modulo total derivatives.
pub fn helmholtz_round_trip(h: &Expr, vars: &[&str]) -> Result<(), String> {
    let vs = sv(vars);
    let psi = variational_gradient(h, &vs);
    if !is_variational(&psi, &vs) {
        return Err(format!("gradient of {h} fails the Helmholtz test"));
    }
    let back = homotopy_density(&psi, &vs).map_err(|e| e.to_string())?;
    if !same_functional(h, &back, &vs) {
        return Err(format!("{h} came back as {back}"));
    }
    Ok(())
}

/// `t o t^-1` is the identity and composition is associative through `top`.
pub fn group_laws(a: &MiuraTransform, b: &MiuraTransform, c: &MiuraTransform, top: usize) -> Result<(), String> {
    let e = |x| format!("{x}");
    let ai = invert(a, top).map_err(e)?;
    if !compose(a, &ai, top).map_err(e)?.is_identity() || !compose(&ai, a, top).map_err(e)?.is_identity() {
        return Err("t o t^-1 is not the identity".into());
    }
    let left = compose(&compose(a, b, top).map_err(e)?, c, top).map_err(e)?;
    let right = compose(a, &compose(b, c, top).map_err(e)?, top).map_err(e)?;
    for k in 0..=top {
        for (x, y) in left.order(k).iter().zip(right.order(k).iter()) {
            if !eq(x, y) {
                return Err(format!("associativity fails at eps^{k}: {x} vs {y}"));
            }
        }
    }
    Ok(())
}

/// `int dG . X_H = - int dH . X_G` for the Hamiltonian fields of a skew operator.
pub fn schouten_pf_adjoint(p: &LocalBivector, g: &Expr, h: &Expr) -> bool {
    let dot = |a: &Expr, b: &Expr| {
        let grad = variational_gradient(a, &p.vars);
        let x = schouten_pf(p, &LocalFunctional::new(b.clone()));
        grad.iter().zip(&x.comps).fold(Expr::zero(), |acc, (u, v)| acc.add_ref(&u.mul_ref(v)))
    };
    same_functional(&dot(g, h), &-&dot(h, g), &p.vars)
}
