//! Local functionals, evolutionary vector fields and local bivectors.
//!
//! A bivector `{u^i(x), u^j(y)} = sum_l A^{ij}_l(x) delta^(l)(x-y)` is stored as the
//! matrix of differential operators `P^{ij} = sum_l A^{ij}_l d^l`. Antisymmetry is
//! `P = -P^+`. Jacobi and compatibility residuals are computed with the
//! lambda-bracket master formula; the coefficient of `lambda^p mu^q` corresponds to
//! the trivector component along `delta^(p)(x-y) delta^(q)(x-z)`.

use crate::diffop::{DiffOp, MatOp};
use crate::expr::{Atom, Expr, Q};
use crate::jet::{frechet, max_order, variational_gradient};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// A local functional `int h dx`, defined modulo total derivatives.
#[derive(Clone, Debug)]
pub struct LocalFunctional {
    pub density: Expr,
}

impl LocalFunctional {
    pub fn new(density: Expr) -> Self {
        LocalFunctional { density }
    }

    pub fn gradient(&self, vars: &[String]) -> Vec<Expr> {
        variational_gradient(&self.density, vars)
    }

    /// Equality of functionals: zero variational derivative of the difference.
    pub fn equals(&self, o: &LocalFunctional, vars: &[String]) -> bool {
        crate::jet::same_functional(&self.density, &o.density, vars)
    }
}

/// Evolutionary vector field `u^i_t = xi^i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionaryVF {
    pub comps: Vec<Expr>,
}

impl EvolutionaryVF {
    pub fn new(comps: Vec<Expr>) -> Self {
        EvolutionaryVF { comps }
    }

    pub fn zero(n: usize) -> Self {
        EvolutionaryVF { comps: vec![Expr::zero(); n] }
    }

    /// `D_xi(f) = sum_{i,s} d^s(xi^i) df/du^{i,s}`.
    pub fn apply(&self, f: &Expr, vars: &[String]) -> Expr {
        let mut out = Expr::zero();
        for (i, v) in vars.iter().enumerate() {
            let Some(top) = max_order(f, v) else { continue };
            let mut d = self.comps[i].clone();
            for s in 0..=top {
                if s > 0 {
                    d = d.total_dx();
                }
                let p = f.diff(Atom::jet(v, s));
                if !p.is_trivially_zero() {
                    out = out.add_ref(&p.mul_ref(&d));
                }
            }
        }
        out
    }

    /// Commutator `[xi, eta]^i = D_xi(eta^i) - D_eta(xi^i)`.
    pub fn commutator(&self, o: &EvolutionaryVF, vars: &[String]) -> EvolutionaryVF {
        EvolutionaryVF {
            comps: (0..self.comps.len())
                .map(|i| self.apply(&o.comps[i], vars).add_ref(&-o.apply(&self.comps[i], vars)))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|e| e.is_zero())
    }

    pub fn sub(&self, o: &EvolutionaryVF) -> EvolutionaryVF {
        EvolutionaryVF { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.add_ref(&-b)).collect() }
    }
}

/// Evolutionary vector field expanded in the deformation parameter; `orders[m][i]`
/// is the `eps^m` part of component `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsVectorField {
    pub vars: Vec<String>,
    pub orders: Vec<Vec<Expr>>,
}

impl EpsVectorField {
    pub fn new(vars: Vec<String>, orders: Vec<Vec<Expr>>) -> Self {
        EpsVectorField { vars, orders }
    }

    pub fn top(&self) -> usize {
        self.orders.len().saturating_sub(1)
    }

    pub fn order(&self, m: usize) -> Vec<Expr> {
        self.orders.get(m).cloned().unwrap_or_else(|| vec![Expr::zero(); self.vars.len()])
    }
}

/// Density of a local functional expanded in the deformation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsFunctional {
    pub orders: Vec<Expr>,
}

impl EpsFunctional {
    pub fn new(orders: Vec<Expr>) -> Self {
        EpsFunctional { orders }
    }

    pub fn order(&self, m: usize) -> Expr {
        self.orders.get(m).cloned().unwrap_or_else(Expr::zero)
    }
}

/// Converts `sum_k f_k(y) delta^(k)(x-y)` to x-coefficients:
/// `f(y) delta^(k)(x-y) = sum_m C(k,m) f^(m)(x) delta^(k-m)(x-y)`.
pub fn normalize_row(row_y: &[Expr]) -> DiffOp {
    let mut out = vec![Expr::zero(); row_y.len()];
    for (k, f) in row_y.iter().enumerate() {
        let mut d = f.clone();
        for m in 0..=k {
            if m > 0 {
                d = d.total_dx();
            }
            out[k - m].add_scaled(&d, &Q::binomial(k as u32, m as u32));
        }
    }
    DiffOp::new(out)
}

/// Local bivector on `vars`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalBivector {
    pub vars: Vec<String>,
    pub op: MatOp,
}

impl LocalBivector {
    pub fn new(vars: Vec<String>, op: MatOp) -> Self {
        assert_eq!(op.rows, vars.len());
        assert_eq!(op.cols, vars.len());
        LocalBivector { vars, op }
    }

    pub fn zero(vars: Vec<String>) -> Self {
        let n = vars.len();
        LocalBivector { vars, op: MatOp::zero(n, n) }
    }

    pub fn n(&self) -> usize {
        self.vars.len()
    }

    /// Coefficient of `delta^(l)` in entry `(i, j)`.
    pub fn coeff(&self, i: usize, j: usize, l: usize) -> Expr {
        self.op.get(i, j).coeff(l)
    }

    pub fn add(&self, o: &LocalBivector) -> LocalBivector {
        LocalBivector { vars: self.vars.clone(), op: self.op.add(&o.op) }
    }

    pub fn scale(&self, q: &Q) -> LocalBivector {
        LocalBivector { vars: self.vars.clone(), op: self.op.scale(q) }
    }

    pub fn is_zero(&self) -> bool {
        self.op.is_zero()
    }

    pub fn canonical(&self) -> LocalBivector {
        LocalBivector { vars: self.vars.clone(), op: self.op.canonical() }
    }
}

/// Antisymmetry test; the residual `P + P^+` is returned.
pub fn is_antisymmetric(p: &LocalBivector) -> (bool, MatOp) {
    let r = p.op.add(&p.op.adjoint());
    (r.is_zero(), r)
}

/// Hamiltonian vector field `xi^i = sum_j P^{ij} delta I / delta u^j`.
pub fn schouten_pf(p: &LocalBivector, i: &LocalFunctional) -> EvolutionaryVF {
    let g = i.gradient(&p.vars);
    EvolutionaryVF::new(p.op.apply(&g))
}

/// Lie derivative of `P` along `xi`: `D_xi P - xi' P - P xi'^+`.
pub fn schouten_pv(p: &LocalBivector, xi: &EvolutionaryVF) -> LocalBivector {
    let lin = frechet(&xi.comps, &p.vars);
    let dp = p.op.map(|a| xi.apply(a, &p.vars));
    let r = dp.sub(&lin.compose(&p.op)).sub(&p.op.compose(&lin.adjoint()));
    LocalBivector { vars: p.vars.clone(), op: r }
}

/// Polynomial in one formal variable with expression coefficients.
type Poly = Vec<Expr>;

fn poly_add(a: &mut Poly, k: usize, e: &Expr) {
    if e.is_trivially_zero() {
        return;
    }
    if a.len() <= k {
        a.resize(k + 1, Expr::zero());
    }
    a[k] = a[k].add_ref(e);
}

/// `(lambda + d)^n` applied to a polynomial in lambda (d acts on coefficients).
fn shift_pow(p: &Poly, n: usize) -> Poly {
    let mut cur = p.clone();
    for _ in 0..n {
        let mut next: Poly = Vec::new();
        for (k, c) in cur.iter().enumerate() {
            poly_add(&mut next, k + 1, c);
            poly_add(&mut next, k, &c.total_dx());
        }
        cur = next;
    }
    cur
}

/// Coefficients of operator entry `H_{ab}` as a polynomial in lambda.
fn symbol(h: &MatOp, a: usize, b: usize) -> Poly {
    h.get(a, b).c.clone()
}

/// `{u_i lambda g} = sum_{j,n} dg/du_j^(n) (lambda + d)^n H_{ji}(lambda)`.
fn bracket_gen_left(h: &MatOp, vars: &[String], i: usize, g: &Expr) -> Poly {
    let mut out: Poly = Vec::new();
    for (j, v) in vars.iter().enumerate() {
        let Some(top) = max_order(g, v) else { continue };
        let hji = symbol(h, j, i);
        if hji.iter().all(|e| e.is_trivially_zero()) {
            continue;
        }
        let mut shifted = hji.clone();
        for n in 0..=top {
            if n > 0 {
                shifted = shift_pow(&shifted, 1);
            }
            let dg = g.diff(Atom::jet(v, n));
            if dg.is_trivially_zero() {
                continue;
            }
            for (k, c) in shifted.iter().enumerate() {
                if !c.is_trivially_zero() {
                    poly_add(&mut out, k, &dg.mul_ref(c));
                }
            }
        }
    }
    out
}

/// `{f nu u_k} = sum_{i,m} H_{ki}(nu + d) (-nu - d)^m df/du_i^(m)`.
fn bracket_gen_right(h: &MatOp, vars: &[String], f: &Expr, k: usize) -> Poly {
    let mut out: Poly = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        let Some(top) = max_order(f, v) else { continue };
        let hki = h.get(k, i);
        if hki.is_trivially_zero() {
            continue;
        }
        for m in 0..=top {
            let df = f.diff(Atom::jet(v, m));
            if df.is_trivially_zero() {
                continue;
            }
            // (-nu - d)^m df
            let mut x: Poly = vec![df];
            x = shift_pow(&x, m as usize);
            if m % 2 == 1 {
                x = x.iter().map(|e| -e).collect();
            }
            // sum_l A_l (nu + d)^l x
            let mut sh = x;
            for (l, a) in hki.c.iter().enumerate() {
                if l > 0 {
                    sh = shift_pow(&sh, 1);
                }
                if a.is_trivially_zero() {
                    continue;
                }
                for (kk, c) in sh.iter().enumerate() {
                    if !c.is_trivially_zero() {
                        poly_add(&mut out, kk, &a.mul_ref(c));
                    }
                }
            }
        }
    }
    out
}

/// Nonzero trivector coefficients keyed by `(i, j, k, p, q)`.
#[derive(Clone, Debug, Default)]
pub struct TrivectorResidual {
    pub entries: Vec<((usize, usize, usize), (usize, usize), Expr)>,
}

impl TrivectorResidual {
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(&mut self, o: TrivectorResidual) {
        self.entries.extend(o.entries);
    }

    pub fn summary(&self, max: usize) -> String {
        let mut s = String::new();
        for (ijk, pq, e) in self.entries.iter().take(max) {
            s.push_str(&format!(
                "  (i,j,k)=({},{},{}) lambda^{} mu^{}: {}\n",
                ijk.0 + 1,
                ijk.1 + 1,
                ijk.2 + 1,
                pq.0,
                pq.1,
                e
            ));
        }
        if self.entries.len() > max {
            s.push_str(&format!("  ... {} more\n", self.entries.len() - max));
        }
        s
    }
}

/// Raw (uncancelled) Jacobiator coefficients with `inner` used for the inner
/// bracket and `outer` for the outer one.
fn jacobi_raw(inner: &MatOp, outer: &MatOp, vars: &[String], i: usize, j: usize, k: usize) -> BTreeMap<(usize, usize), Expr> {
    let mut acc: BTreeMap<(usize, usize), Vec<Expr>> = BTreeMap::new();
    let mut push = |a: usize, b: usize, e: Expr| {
        if !e.is_trivially_zero() {
            acc.entry((a, b)).or_default().push(e);
        }
    };
    // {u_i lambda {u_j mu u_k}}
    for (q, hq) in symbol(inner, k, j).iter().enumerate() {
        if hq.is_trivially_zero() {
            continue;
        }
        for (p, c) in bracket_gen_left(outer, vars, i, hq).into_iter().enumerate() {
            push(p, q, c);
        }
    }
    // - {u_j mu {u_i lambda u_k}}
    for (q, hq) in symbol(inner, k, i).iter().enumerate() {
        if hq.is_trivially_zero() {
            continue;
        }
        for (p, c) in bracket_gen_left(outer, vars, j, hq).into_iter().enumerate() {
            push(q, p, -c);
        }
    }
    // - {{u_i lambda u_j}_{lambda+mu} u_k}
    for (p, bp) in symbol(inner, j, i).iter().enumerate() {
        if bp.is_trivially_zero() {
            continue;
        }
        for (s, c) in bracket_gen_right(outer, vars, bp, k).into_iter().enumerate() {
            if c.is_trivially_zero() {
                continue;
            }
            for a in 0..=s {
                let bin = Q::binomial(s as u32, a as u32);
                push(p + a, s - a, -c.scale(&bin));
            }
        }
    }
    acc.into_iter()
        .map(|(key, v)| {
            let mut all = Vec::new();
            for e in v {
                all.extend(e.into_terms());
            }
            (key, Expr::from_terms(all))
        })
        .collect()
}

/// Sum of Jacobiator contributions over (inner, outer) pairs, zero-tested exactly.
pub fn jacobi_pairs(pairs: &[(&MatOp, &MatOp)], vars: &[String]) -> TrivectorResidual {
    let n = vars.len();
    let triples: Vec<(usize, usize, usize)> =
        (0..n).flat_map(|i| (0..n).flat_map(move |j| (0..n).map(move |k| (i, j, k)))).collect();
    let parts: Vec<Vec<((usize, usize, usize), (usize, usize), Expr)>> = triples
        .par_iter()
        .map(|&(i, j, k)| {
            let mut tot: BTreeMap<(usize, usize), Expr> = BTreeMap::new();
            for (inner, outer) in pairs {
                for (key, e) in jacobi_raw(inner, outer, vars, i, j, k) {
                    let z = tot.entry(key).or_insert_with(Expr::zero);
                    *z = z.add_ref(&e);
                }
            }
            tot.into_iter()
                .filter(|(_, e)| !e.is_zero())
                .map(|(key, e)| ((i, j, k), key, e.canonical()))
                .collect()
        })
        .collect();
    TrivectorResidual { entries: parts.into_iter().flatten().collect() }
}

/// Jacobi residual of a single bivector.
pub fn jacobi(p: &LocalBivector) -> TrivectorResidual {
    jacobi_pairs(&[(&p.op, &p.op)], &p.vars)
}

/// Mixed residual `[P1, P2]`: zero iff `P1 + t P2` is Poisson for all t, given both are.
pub fn compatibility(p1: &LocalBivector, p2: &LocalBivector) -> TrivectorResidual {
    jacobi_pairs(&[(&p1.op, &p2.op), (&p2.op, &p1.op)], &p1.vars)
}

/// Checks `xi = -P1 delta H1 = -P2 delta H2` (flow convention `u_t = {H, u}` with
/// the bracket of a functional against a coordinate).
pub fn hamiltonian_pair_check(
    system: &EvolutionaryVF,
    p1: &LocalBivector,
    p2: &LocalBivector,
    h1: &LocalFunctional,
    h2: &LocalFunctional,
) -> bool {
    let x1 = schouten_pf(p1, h1);
    let x2 = schouten_pf(p2, h2);
    let neg = |x: EvolutionaryVF| EvolutionaryVF::new(x.comps.into_iter().map(|e| -e).collect());
    system.sub(&neg(x1)).is_zero() && system.sub(&neg(x2)).is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn v1() -> Vec<String> {
        vec!["u".into()]
    }

    fn biv(vars: &[&str], entries: &[&[&str]]) -> LocalBivector {
        let n = vars.len();
        let mut op = MatOp::zero(n, n);
        for (idx, row) in entries.iter().enumerate() {
            let c: Vec<Expr> = row.iter().map(|s| parse(s, vars, &["c"]).unwrap()).collect();
            op.m[idx] = DiffOp::new(c);
        }
        LocalBivector::new(vars.iter().map(|s| s.to_string()).collect(), op)
    }

    #[test]
    fn normalize_row_examples() {
        let u = parse("u", &["u"], &[]).unwrap();
        let r = normalize_row(&[Expr::zero(), Expr::zero(), u]);
        assert_eq!(r.c, vec![parse("u#2", &["u"], &[]).unwrap(), parse("2*u#1", &["u"], &[]).unwrap(), parse("u", &["u"], &[]).unwrap()]);
    }

    #[test]
    fn antisymmetry() {
        assert!(is_antisymmetric(&biv(&["u"], &[&["0", "1"]])).0);
        assert!(!is_antisymmetric(&biv(&["u"], &[&["0", "u"]])).0);
        assert!(is_antisymmetric(&biv(&["u"], &[&["1/2*u#1", "u", "0", "3*c"]])).0);
    }

    #[test]
    fn kdv_brackets_poisson_and_compatible() {
        let p1 = biv(&["u"], &[&["0", "1"]]);
        let p2 = biv(&["u"], &[&["1/2*u#1", "u", "0", "3*c"]]);
        assert!(jacobi(&p1).is_zero());
        assert!(jacobi(&p2).is_zero());
        assert!(compatibility(&p1, &p2).is_zero());
    }

    #[test]
    fn non_flat_hydrodynamic_fails() {
        // g = diag(1, 1) with a non-compatible Q
        let p = biv(&["u", "v"], &[&["0", "1"], &["u#1", "0"], &["-u#1", "0"], &["0", "1"]]);
        assert!(is_antisymmetric(&p).0);
        assert!(!jacobi(&p).is_zero());
        // flat metric u in one dimension is Poisson
        let q = biv(&["u"], &[&["1/2*u#1", "u"]]);
        assert!(jacobi(&q).is_zero());
    }

    #[test]
    fn hamiltonian_field_and_lie_derivative() {
        let p = biv(&["u"], &[&["0", "1"]]);
        let i = LocalFunctional::new(parse("u^2/2", &["u"], &[]).unwrap());
        assert_eq!(schouten_pf(&p, &i).comps[0], parse("u#1", &["u"], &[]).unwrap());
        let p2 = biv(&["u"], &[&["1/2*u#1", "u", "0", "3*c"]]);
        let xi = schouten_pf(&p2, &LocalFunctional::new(parse("u^3", &["u"], &[]).unwrap()));
        assert!(schouten_pv(&p2, &xi).is_zero());
        let xi2 = EvolutionaryVF::new(vec![parse("u^2", &["u"], &[]).unwrap()]);
        assert!(!schouten_pv(&p, &xi2).is_zero());
        let _ = v1();
    }
}
