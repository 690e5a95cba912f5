//! Miura-type and quasi-Miura transformations `w^i = sum_k eps^k F^i_k(v; v_x, ...)`.
//!
//! A transform expresses the old coordinates `w` through the new ones `v`. Pulling a
//! bivector back is `P_v = L^{-1} P_w(Phi(v)) L^{-+}` with `L` the Fréchet
//! derivative of `Phi`; composition with `Phi` is carried out as a Taylor expansion
//! around `Phi_0`, so that logarithms and non-monomial denominators in the old
//! coordinates are only ever evaluated on `Phi_0(v)`.

use crate::diffop::{DiffOp, MatOp};
use crate::expr::expr::monomial_grade_of;
use crate::expr::{Atom, AtomKind, Exponent, Expr, ExprError, Monomial, Q};
use crate::jet::{frechet, max_order, substitute_jets};
use crate::linsolve::{Solution, SparseRow, SparseSystem};
use crate::localgeom::{schouten_pv, EpsFunctional, EpsVectorField, EvolutionaryVF, LocalBivector};
use crate::pencil::{inverse, is_jet_free, point_map, BasePoint, EpsBivector, Matrix, PencilError, PoissonPencil};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MiuraError {
    #[error("F[{i}] at eps^{k} is not homogeneous of degree {k}: {found}")]
    Grading { k: usize, i: usize, found: String },
    #[error("F[{i}] at eps^{k} has jet order {order}, above the bound {bound}")]
    JetOrder { k: usize, i: usize, order: u32, bound: u32 },
    #[error("zeroth-order map is not invertible: {0}")]
    NotInvertible(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ansatz too small at eps^{k}: {residual}")]
    AnsatzTooSmall { k: usize, residual: String },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("denominator vanishes at grid point {index} (x = {x})")]
    Catastrophe { index: usize, x: f64 },
    #[error(transparent)]
    Pencil(#[from] PencilError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiuraTransform {
    /// Coordinates being replaced.
    pub old_vars: Vec<String>,
    /// Coordinates the old ones are expressed in.
    pub new_vars: Vec<String>,
    pub params: Vec<String>,
    /// `orders[k][i] = F^i_k`, functions of the new variables.
    pub orders: Vec<Vec<Expr>>,
    /// `Phi_0^{-1}`: new coordinates as functions of the old ones, if known.
    pub phi0_inverse: Option<Vec<Expr>>,
}

fn jet_var(a: Atom) -> Option<(String, u32)> {
    a.as_jet().map(|(v, m)| (v.to_string(), m))
}

fn rename(e: &Expr, from: &[String], to: &[String]) -> Result<Expr, ExprError> {
    if from == to {
        return Ok(e.clone());
    }
    let imgs: Vec<Expr> = to.iter().map(|v| Expr::jet(v, 0)).collect();
    substitute_jets(e, from, &imgs)
}

/// Upper bound on the jet order of the `eps^k` term.
pub fn jet_bound(k: usize) -> u32 {
    (3 * k / 2) as u32
}

impl MiuraTransform {
    pub fn new(
        old_vars: Vec<String>,
        new_vars: Vec<String>,
        params: Vec<String>,
        orders: Vec<Vec<Expr>>,
    ) -> Result<Self, MiuraError> {
        let n = old_vars.len();
        if new_vars.len() != n {
            return Err(MiuraError::Dimension(format!("{n} old and {} new variables", new_vars.len())));
        }
        if orders.is_empty() {
            return Err(MiuraError::Dimension("no zeroth-order map".into()));
        }
        for (k, f) in orders.iter().enumerate() {
            if f.len() != n {
                return Err(MiuraError::Dimension(format!("order {k} has {} components", f.len())));
            }
            for (i, e) in f.iter().enumerate() {
                for a in e.base_atoms() {
                    if let Some((v, _)) = jet_var(a) {
                        if !new_vars.contains(&v) {
                            return Err(MiuraError::Dimension(format!("F[{i}] at eps^{k} uses `{v}`")));
                        }
                    }
                }
                for (mono, _) in e.terms() {
                    if monomial_grade_of(mono) != Some(Q::from_int(k as i64)) {
                        return Err(MiuraError::Grading { k, i, found: e.to_string() });
                    }
                }
                let bound = jet_bound(k);
                for v in &new_vars {
                    if let Some(m) = max_order(e, v) {
                        if m > bound {
                            return Err(MiuraError::JetOrder { k, i, order: m, bound });
                        }
                    }
                }
            }
        }
        let mut t = MiuraTransform { old_vars, new_vars, params, orders, phi0_inverse: None };
        t.trim();
        Ok(t)
    }

    pub fn with_inverse(mut self, inv: Vec<Expr>) -> Self {
        self.phi0_inverse = Some(inv);
        self
    }

    /// `w = v` under the given names.
    pub fn identity(old_vars: Vec<String>, new_vars: Vec<String>) -> Self {
        let f0: Vec<Expr> = new_vars.iter().map(|v| Expr::jet(v, 0)).collect();
        let inv: Vec<Expr> = old_vars.iter().map(|v| Expr::jet(v, 0)).collect();
        MiuraTransform { old_vars, new_vars, params: Vec::new(), orders: vec![f0], phi0_inverse: Some(inv) }
    }

    fn trim(&mut self) {
        while self.orders.len() > 1 && self.orders.last().unwrap().iter().all(|e| e.is_trivially_zero()) {
            self.orders.pop();
        }
    }

    pub fn n(&self) -> usize {
        self.old_vars.len()
    }

    pub fn top(&self) -> usize {
        self.orders.len() - 1
    }

    pub fn order(&self, k: usize) -> Vec<Expr> {
        self.orders.get(k).cloned().unwrap_or_else(|| vec![Expr::zero(); self.n()])
    }

    pub fn truncate(&self, top: usize) -> MiuraTransform {
        let mut t = self.clone();
        t.orders.truncate(top + 1);
        t.trim();
        t
    }

    /// Highest jet order in the `eps^k` term.
    pub fn jet_order(&self, k: usize) -> u32 {
        self.order(k)
            .iter()
            .flat_map(|e| self.new_vars.iter().filter_map(move |v| max_order(e, v)))
            .max()
            .unwrap_or(0)
    }

    /// Polynomial in the derivatives (Miura type) rather than quasi-Miura.
    pub fn is_polynomial(&self) -> bool {
        self.orders.iter().flatten().all(|e| {
            e.terms().iter().all(|(m, _)| {
                m.factors().iter().all(|&(a, ex)| match a.kind() {
                    AtomKind::Jet { order, .. } => order == 0 || ex.as_int().map(|n| n >= 0).unwrap_or(false),
                    AtomKind::Param { .. } => true,
                    _ => is_jet_free(&Expr::atom(a)),
                })
            })
        })
    }

    pub fn is_identity(&self) -> bool {
        if self.orders.len() != 1 {
            return false;
        }
        self.orders[0].iter().zip(&self.new_vars).all(|(e, v)| e.equals(&Expr::jet(v, 0)))
            && self.old_vars == self.new_vars
    }

    /// `series[i][k] = F^i_k` padded to `top`.
    fn series(&self, top: usize) -> Vec<Vec<Expr>> {
        (0..self.n()).map(|i| (0..=top).map(|k| self.order(k)[i].clone()).collect()).collect()
    }

    /// `Phi_0^{-1}`, from the stored inverse or by solving an affine `Phi_0`.
    pub fn zeroth_inverse(&self) -> Result<Vec<Expr>, MiuraError> {
        if let Some(inv) = &self.phi0_inverse {
            return Ok(inv.clone());
        }
        let n = self.n();
        let mut a: Matrix = vec![vec![Expr::zero(); n]; n];
        let mut b: Vec<Expr> = Vec::with_capacity(n);
        for i in 0..n {
            let f = &self.orders[0][i];
            let mut rest = f.clone();
            for j in 0..n {
                let d = f.diff(Atom::jet(&self.new_vars[j], 0));
                if d.as_constant().is_none() && !d.is_trivially_zero() {
                    return Err(MiuraError::NotInvertible(format!(
                        "component {i} is not affine; give the inverse explicitly"
                    )));
                }
                rest = rest.add_ref(&-d.mul_ref(&Expr::jet(&self.new_vars[j], 0)));
                a[i][j] = d;
            }
            if !is_constant_in(&rest, &self.new_vars) {
                return Err(MiuraError::NotInvertible(format!("component {i} is not affine")));
            }
            b.push(rest);
        }
        let ai = inverse(&a).map_err(|e| MiuraError::NotInvertible(e.to_string()))?;
        let inv = (0..n)
            .map(|i| {
                let mut e = Expr::zero();
                for j in 0..n {
                    let wj = Expr::jet(&self.old_vars[j], 0).add_ref(&-&b[j]);
                    e = e.add_ref(&ai[i][j].mul_ref(&wj));
                }
                e.canonical()
            })
            .collect();
        Ok(inv)
    }

    /// Base point in the new coordinates, mapped from one in the old coordinates.
    pub fn map_base_point(&self, bp: &BasePoint) -> Result<BasePoint, MiuraError> {
        let inv = self.zeroth_inverse()?;
        let pm = point_map(bp);
        let mut out = BasePoint::new();
        for (k, v) in bp {
            if !self.old_vars.contains(k) {
                out.insert(k.clone(), *v);
            }
        }
        for (i, v) in self.new_vars.iter().enumerate() {
            out.insert(v.clone(), inv[i].eval(&pm)?);
        }
        Ok(out)
    }
}

fn is_constant_in(e: &Expr, vars: &[String]) -> bool {
    !e.base_atoms().iter().any(|a| jet_var(*a).map(|(v, _)| vars.contains(&v)).unwrap_or(false))
}

/// Taylor expansion of `a(w)` along `w^i = sum_k eps^k series[i][k]`, through `eps^top`.
///
/// Each jet `w^{i,(m)}` is shifted by `sum_{k>0} eps^k d^m series[i][k]`; the
/// derivatives of `a` are evaluated at the zeroth-order image.
pub fn compose_series(a: &Expr, vars: &[String], series: &[Vec<Expr>], top: usize) -> Result<Vec<Expr>, ExprError> {
    let mut out = vec![Expr::zero(); top + 1];
    if a.is_trivially_zero() {
        return Ok(out);
    }
    // jets of `vars` the expression depends on
    let mut atoms: Vec<(Atom, usize, u32)> = Vec::new();
    for b in a.base_atoms() {
        if let Some((v, m)) = jet_var(b) {
            if let Some(i) = vars.iter().position(|x| *x == v) {
                atoms.push((b, i, m));
            }
        }
    }
    let mut img0 = crate::expr::Bindings::default();
    // shifts[t] = [(k, d^m series_k)]
    let mut shifts: Vec<Vec<(usize, Expr)>> = Vec::new();
    let mut dcache: FxHashMap<(usize, usize, u32), Expr> = FxHashMap::default();
    let mut dn = |i: usize, k: usize, m: u32| -> Expr {
        if let Some(e) = dcache.get(&(i, k, m)) {
            return e.clone();
        }
        let e = series[i].get(k).cloned().unwrap_or_else(Expr::zero).total_dx_n(m);
        dcache.insert((i, k, m), e.clone());
        e
    };
    for &(b, i, m) in &atoms {
        img0.insert(b, dn(i, 0, m));
        let mut s = Vec::new();
        for k in 1..=top {
            let d = dn(i, k, m);
            if !d.is_trivially_zero() {
                s.push((k, d));
            }
        }
        shifts.push(s);
    }
    out[0] = a.substitute(&img0)?;
    // flatten (atom, k) pairs, ordered by atom
    let pairs: Vec<(usize, usize, &Expr)> = shifts
        .iter()
        .enumerate()
        .flat_map(|(t, s)| s.iter().map(move |(k, d)| (t, *k, d)))
        .collect();
    if pairs.is_empty() {
        return Ok(out);
    }
    let mut ctx = Taylor { a, atoms: &atoms, img0: &img0, pairs: &pairs, deriv: FxHashMap::default(), top };
    let mut acc: Vec<Vec<Expr>> = vec![Vec::new(); top + 1];
    ctx.rec(0, 0, &mut Vec::new(), &Expr::one(), &Q::one(), &mut acc)?;
    for (k, parts) in acc.into_iter().enumerate().skip(1) {
        let mut all = Vec::new();
        for p in parts {
            all.extend(p.into_terms());
        }
        out[k] = Expr::from_terms(all);
    }
    Ok(out)
}

struct Taylor<'a> {
    a: &'a Expr,
    atoms: &'a [(Atom, usize, u32)],
    img0: &'a crate::expr::Bindings,
    pairs: &'a [(usize, usize, &'a Expr)],
    /// multiset of atom indices -> (raw derivative, derivative at the zeroth image)
    deriv: FxHashMap<Vec<usize>, (Expr, Option<Expr>)>,
    top: usize,
}

impl<'a> Taylor<'a> {
    fn raw(&mut self, key: &[usize]) -> Expr {
        if key.is_empty() {
            return self.a.clone();
        }
        if let Some((e, _)) = self.deriv.get(key) {
            return e.clone();
        }
        let parent = self.raw(&key[..key.len() - 1]);
        let e = parent.diff(self.atoms[*key.last().unwrap()].0);
        self.deriv.insert(key.to_vec(), (e.clone(), None));
        e
    }

    fn at_image(&mut self, key: &[usize]) -> Result<Expr, ExprError> {
        let raw = self.raw(key);
        if let Some((_, Some(s))) = self.deriv.get(key) {
            return Ok(s.clone());
        }
        let s = raw.substitute(self.img0)?;
        self.deriv.insert(key.to_vec(), (raw, Some(s.clone())));
        Ok(s)
    }

    fn rec(
        &mut self,
        p: usize,
        total: usize,
        key: &mut Vec<usize>,
        prod: &Expr,
        coef: &Q,
        acc: &mut [Vec<Expr>],
    ) -> Result<(), ExprError> {
        if p == self.pairs.len() {
            if total > 0 {
                let d = self.at_image(key)?;
                if !d.is_trivially_zero() {
                    acc[total].push(d.mul_ref(prod).scale(coef));
                }
            }
            return Ok(());
        }
        let (t, k, delta) = self.pairs[p];
        // r = 0
        self.rec(p + 1, total, key, prod, coef, acc)?;
        let mut r = 1usize;
        let mut prod_r = prod.clone();
        let base_len = key.len();
        while total + r * k <= self.top {
            key.push(t);
            if self.raw(key).is_trivially_zero() {
                break;
            }
            prod_r = prod_r.mul_ref(delta);
            let c = coef * &Q::factorial(r as u32).recip();
            self.rec(p + 1, total + r * k, key, &prod_r, &c, acc)?;
            r += 1;
        }
        key.truncate(base_len);
        Ok(())
    }
}

/// Pulls an operator-valued object back along the transform: the Neumann series of
/// `L^{-1}` where `L = sum_k eps^k L_k`.
struct PullBack {
    x: Vec<MatOp>,
}

impl PullBack {
    fn new(t: &MiuraTransform, top: usize) -> Result<Self, MiuraError> {
        let n = t.n();
        let l: Vec<MatOp> = (0..=top).map(|k| frechet(&t.order(k), &t.new_vars)).collect();
        let mut l0: Matrix = vec![vec![Expr::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let op = l[0].get(i, j);
                if op.order().unwrap_or(0) > 0 {
                    return Err(MiuraError::NotInvertible("zeroth-order map depends on derivatives".into()));
                }
                l0[i][j] = op.coeff(0);
            }
        }
        let m = inverse(&l0).map_err(|e| MiuraError::NotInvertible(e.to_string()))?;
        let flat: Vec<Expr> = m.into_iter().flatten().collect();
        let m = MatOp::from_functions(n, n, &flat);
        let mut x = vec![m.clone()];
        for kk in 1..=top {
            let mut s = MatOp::zero(n, n);
            for k in 1..=kk {
                if l[k].is_trivially_zero() || x[kk - k].is_trivially_zero() {
                    continue;
                }
                s = s.add(&l[k].compose(&x[kk - k]));
            }
            x.push(m.compose(&s).neg().canonical());
        }
        Ok(PullBack { x })
    }
}

fn compose_matop(op: &MatOp, vars: &[String], series: &[Vec<Expr>], top: usize) -> Result<Vec<MatOp>, ExprError> {
    let n = op.rows;
    let mut out = vec![MatOp::zero(n, op.cols); top + 1];
    for i in 0..n {
        for j in 0..op.cols {
            let c = &op.get(i, j).c;
            for (l, e) in c.iter().enumerate() {
                if e.is_trivially_zero() {
                    continue;
                }
                let s = compose_series(e, vars, series, top)?;
                for (k, ek) in s.into_iter().enumerate() {
                    if ek.is_trivially_zero() {
                        continue;
                    }
                    let d = out[k].get_mut(i, j);
                    let mut cc = d.c.clone();
                    if cc.len() <= l {
                        cc.resize(l + 1, Expr::zero());
                    }
                    cc[l] = cc[l].add_ref(&ek);
                    *d = DiffOp::new(cc);
                }
            }
        }
    }
    Ok(out)
}

/// Pull-back of a graded bivector in the old coordinates, through `eps^top`.
/// Orders of `t` beyond its last stored term count as zero.
pub fn transform_bivector(t: &MiuraTransform, p: &EpsBivector, top: usize) -> Result<EpsBivector, MiuraError> {
    if p.vars != t.old_vars {
        return Err(MiuraError::Dimension(format!("bivector in {:?}, transform replaces {:?}", p.vars, t.old_vars)));
    }
    let n = t.n();
    let series = t.series(top);
    let mut pt = vec![MatOp::zero(n, n); top + 1];
    for a in 0..=p.top().min(top) {
        let parts = compose_matop(&p.order(a), &t.old_vars, &series, top - a)?;
        for (s, op) in parts.into_iter().enumerate() {
            pt[a + s] = pt[a + s].add(&op);
        }
    }
    let pb = PullBack::new(t, top)?;
    let y: Vec<MatOp> = pb.x.iter().map(|x| x.adjoint()).collect();
    let orders: Vec<MatOp> = (0..=top)
        .into_par_iter()
        .map(|kk| {
            let mut r = MatOp::zero(n, n);
            for a in 0..=kk {
                if pb.x[a].is_trivially_zero() {
                    continue;
                }
                let mut z = MatOp::zero(n, n);
                for b in 0..=kk - a {
                    let c = kk - a - b;
                    if pt[b].is_trivially_zero() || y[c].is_trivially_zero() {
                        continue;
                    }
                    z = z.add(&pt[b].compose(&y[c]));
                }
                if !z.is_trivially_zero() {
                    r = r.add(&pb.x[a].compose(&z));
                }
            }
            r.canonical()
        })
        .collect();
    Ok(EpsBivector::new_unchecked(t.new_vars.clone(), orders))
}

/// Pull-back of an evolutionary system `w_t = xi(w)`: `v_t = L^{-1} xi(Phi(v))`.
pub fn transform_vector_field(t: &MiuraTransform, xi: &EpsVectorField, top: usize) -> Result<EpsVectorField, MiuraError> {
    if xi.vars != t.old_vars {
        return Err(MiuraError::Dimension("system and transform use different variables".into()));
    }
    let n = t.n();
    let series = t.series(top);
    let mut xs = vec![vec![Expr::zero(); n]; top + 1];
    for a in 0..=xi.top().min(top) {
        for (i, e) in xi.order(a).iter().enumerate() {
            let s = compose_series(e, &t.old_vars, &series, top - a)?;
            for (k, ek) in s.into_iter().enumerate() {
                xs[a + k][i] = xs[a + k][i].add_ref(&ek);
            }
        }
    }
    let pb = PullBack::new(t, top)?;
    let mut orders = vec![vec![Expr::zero(); n]; top + 1];
    for (kk, ord) in orders.iter_mut().enumerate() {
        for a in 0..=kk {
            let v = pb.x[a].apply(&xs[kk - a]);
            for i in 0..n {
                ord[i] = ord[i].add_ref(&v[i]);
            }
        }
        for e in ord.iter_mut() {
            *e = e.canonical();
        }
    }
    Ok(EpsVectorField::new(t.new_vars.clone(), orders))
}

/// Density of a functional rewritten in the new coordinates.
pub fn transform_density(t: &MiuraTransform, h: &EpsFunctional, top: usize) -> Result<EpsFunctional, MiuraError> {
    let series = t.series(top);
    let mut out = vec![Expr::zero(); top + 1];
    for a in 0..h.orders.len().min(top + 1) {
        let s = compose_series(&h.orders[a], &t.old_vars, &series, top - a)?;
        for (k, ek) in s.into_iter().enumerate() {
            out[a + k] = out[a + k].add_ref(&ek);
        }
    }
    Ok(EpsFunctional::new(out))
}

/// The pencil in the new coordinates, truncated at `eps^top`.
pub fn apply_to_pencil(t: &MiuraTransform, p: &PoissonPencil, top: usize) -> Result<PoissonPencil, MiuraError> {
    let p1 = transform_bivector(t, &p.p1, top)?;
    let p2 = transform_bivector(t, &p.p2, top)?;
    let bp = t.map_base_point(&p.base_point)?;
    let mut params = p.params.clone();
    for q in &t.params {
        if !params.contains(q) {
            params.push(q.clone());
        }
    }
    Ok(PoissonPencil::new(p1, p2, params, bp)?)
}

/// Difference between a transformed pencil and the dispersionless part of the
/// original one renamed to the new coordinates.
#[derive(Clone, Debug)]
pub struct PencilResidual {
    pub residual: [EpsBivector; 2],
    /// First order at which either bracket differs, within the truncation.
    pub first_nonzero: Option<usize>,
    pub top: usize,
}

pub fn pencil_residual(t: &MiuraTransform, p: &PoissonPencil, top: usize) -> Result<PencilResidual, MiuraError> {
    let mut res = Vec::new();
    let mut first: Option<usize> = None;
    for a in [1usize, 2] {
        let b = p.bracket(a);
        let tb = transform_bivector(t, b, top)?;
        let lead = rename_op(&b.order(0), &t.old_vars, &t.new_vars)?;
        let r = tb.sub(&EpsBivector::new_unchecked(t.new_vars.clone(), vec![lead])).canonical();
        if let Some(f) = r.first_nonzero(top) {
            first = Some(first.map_or(f, |g: usize| g.min(f)));
        }
        res.push(r);
    }
    let r2 = res.pop().unwrap();
    let r1 = res.pop().unwrap();
    Ok(PencilResidual { residual: [r1, r2], first_nonzero: first, top })
}

fn rename_op(op: &MatOp, from: &[String], to: &[String]) -> Result<MatOp, ExprError> {
    let mut out = op.clone();
    for d in out.m.iter_mut() {
        let c: Result<Vec<Expr>, ExprError> = d.c.iter().map(|e| rename(e, from, to)).collect();
        *d = DiffOp::new(c?);
    }
    Ok(out)
}

/// `w = t1(v)` followed by `v = t2(z)`, giving `w` as a function of `z`.
pub fn compose(t1: &MiuraTransform, t2: &MiuraTransform, top: usize) -> Result<MiuraTransform, MiuraError> {
    if t1.new_vars != t2.old_vars {
        return Err(MiuraError::Dimension(format!(
            "cannot compose: {:?} expected, found {:?}",
            t1.new_vars, t2.old_vars
        )));
    }
    let n = t1.n();
    let series = t2.series(top);
    let mut orders = vec![vec![Expr::zero(); n]; top + 1];
    for j in 0..=t1.top().min(top) {
        for (i, f) in t1.order(j).iter().enumerate() {
            let s = compose_series(f, &t1.new_vars, &series, top - j)?;
            for (k, ek) in s.into_iter().enumerate() {
                orders[j + k][i] = orders[j + k][i].add_ref(&ek);
            }
        }
    }
    for o in orders.iter_mut() {
        for e in o.iter_mut() {
            *e = e.canonical();
        }
    }
    let mut params = t1.params.clone();
    for p in &t2.params {
        if !params.contains(p) {
            params.push(p.clone());
        }
    }
    let inv = match (&t1.phi0_inverse, &t2.phi0_inverse) {
        (Some(a), Some(b)) => {
            let c: Result<Vec<Expr>, ExprError> =
                b.iter().map(|e| substitute_jets(e, &t2.old_vars, a).map(|x| x.canonical())).collect();
            Some(c?)
        }
        _ => None,
    };
    let mut t = MiuraTransform { old_vars: t1.old_vars.clone(), new_vars: t2.new_vars.clone(), params, orders, phi0_inverse: inv };
    t.trim();
    Ok(t)
}

/// The inverse series `v = Psi(w)` through `eps^top`.
pub fn invert(t: &MiuraTransform, top: usize) -> Result<MiuraTransform, MiuraError> {
    let n = t.n();
    let psi0 = t.zeroth_inverse()?;
    // Jacobian of Phi_0 at v = Psi_0(w), inverted
    let mut j0: Matrix = vec![vec![Expr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let d = t.orders[0][i].diff(Atom::jet(&t.new_vars[j], 0));
            j0[i][j] = substitute_jets(&d, &t.new_vars, &psi0)?.canonical();
        }
    }
    let j0i = inverse(&j0).map_err(|e| MiuraError::NotInvertible(e.to_string()))?;
    let f0: Vec<Expr> = t.old_vars.iter().map(|v| Expr::jet(v, 0)).collect();
    let mut s = MiuraTransform {
        old_vars: t.new_vars.clone(),
        new_vars: t.old_vars.clone(),
        params: t.params.clone(),
        orders: vec![psi0],
        phi0_inverse: Some(t.orders[0].clone()),
    };
    for k in 1..=top {
        s.orders.push(vec![Expr::zero(); n]);
        let c = compose(t, &s, k)?;
        let ck = c.order(k);
        let mut psik = vec![Expr::zero(); n];
        for i in 0..n {
            for j in 0..n {
                psik[i] = psik[i].add_ref(&-j0i[i][j].mul_ref(&ck[j]));
            }
            psik[i] = psik[i].canonical();
        }
        s.orders[k] = psik;
    }
    let _ = f0;
    s.trim();
    Ok(s)
}

/// `sum_l (-1)^l / l! eps^{kl} ad_xi^l P` with `ad_xi = schouten_pv(., xi)`, through `eps^top`.
pub fn exp_vector_field(xi: &EvolutionaryVF, p: &EpsBivector, k: usize, top: usize) -> EpsBivector {
    let n = p.n();
    let mut orders = vec![MatOp::zero(n, n); top + 1];
    for m in 0..=p.top().min(top) {
        let mut q = p.bivector(m);
        let mut l = 0usize;
        loop {
            let c = if l.is_multiple_of(2) { Q::one() } else { -Q::one() };
            let c = &c * &Q::factorial(l as u32).recip();
            orders[m + k * l] = orders[m + k * l].add(&q.op.scale(&c));
            l += 1;
            if k == 0 || m + k * l > top {
                break;
            }
            q = schouten_pv(&q, xi).canonical();
            if q.op.is_trivially_zero() {
                break;
            }
        }
    }
    let orders = orders.into_iter().map(|o| o.canonical()).collect();
    EpsBivector::new_unchecked(p.vars.clone(), orders)
}

/// Both brackets of a pencil moved along `exp(eps^k ad_xi)`.
pub fn exp_vector_field_pencil(xi: &EvolutionaryVF, p: &PoissonPencil, k: usize, top: usize) -> Result<PoissonPencil, MiuraError> {
    let p1 = exp_vector_field(xi, &p.p1, k, top);
    let p2 = exp_vector_field(xi, &p.p2, k, top);
    Ok(PoissonPencil::new(p1, p2, p.params.clone(), p.base_point.clone())?)
}

/// The substitution `w = exp(eps^k D_xi) v = sum_l eps^{kl}/l! D_xi^l v`, through `eps^top`.
pub fn lie_series(xi: &EvolutionaryVF, vars: &[String], k: usize, top: usize) -> MiuraTransform {
    let n = vars.len();
    let mut orders = vec![vec![Expr::zero(); n]; top + 1];
    for i in 0..n {
        let mut f = Expr::jet(&vars[i], 0);
        let mut l = 0usize;
        loop {
            orders[k * l][i] = orders[k * l][i].add_ref(&f.scale(&Q::factorial(l as u32).recip()));
            l += 1;
            if k == 0 || k * l > top {
                break;
            }
            f = xi.apply(&f, vars).canonical();
        }
    }
    let mut t = MiuraTransform {
        old_vars: vars.to_vec(),
        new_vars: vars.to_vec(),
        params: Vec::new(),
        orders,
        phi0_inverse: Some(vars.iter().map(|v| Expr::jet(v, 0)).collect()),
    };
    t.trim();
    t
}

/// Residual of a transformed system against its dispersionless part.
#[derive(Clone, Debug)]
pub struct SystemResidual {
    pub transformed: EpsVectorField,
    pub first_nonzero: Option<usize>,
    pub top: usize,
}

/// Substitutes the transform into `w_t = xi(w)` and compares with the leading
/// (hyperbolic) part written in the new coordinates.
pub fn reduce_system(xi: &EpsVectorField, t: &MiuraTransform, top: usize) -> Result<SystemResidual, MiuraError> {
    let tr = transform_vector_field(t, xi, top)?;
    let lead: Vec<Expr> = transform_vector_field(&t.truncate(0), &EpsVectorField::new(xi.vars.clone(), vec![xi.order(0)]), 0)?
        .order(0);
    let mut first = None;
    for k in 0..=top {
        let mut o = tr.order(k);
        if k == 0 {
            o = o.iter().zip(&lead).map(|(a, b)| a.add_ref(&-b)).collect();
        }
        if o.iter().any(|e| !e.is_zero()) {
            first = Some(k);
            break;
        }
    }
    Ok(SystemResidual { transformed: tr, first_nonzero: first, top })
}

/// First order `k >= 1` at which the transformed Hamiltonian still depends on jets
/// through its variational derivative, if any.
pub fn hamiltonian_jet_dependence(t: &MiuraTransform, h: &EpsFunctional, top: usize) -> Result<Option<usize>, MiuraError> {
    let d = transform_density(t, h, top)?;
    for k in 1..=top {
        let g = crate::jet::variational_gradient(&d.order(k), &t.new_vars);
        if g.iter().any(|e| !e.is_zero()) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Knobs of the undetermined-coefficient ansatz in `reduce_pencil`.
#[derive(Clone, Debug)]
pub struct AnsatzConfig {
    /// Jet order bound; default `floor(3k/2)`.
    pub jet_bound: Option<u32>,
    /// Largest total negative power of the first derivatives; default `3k`.
    pub den_bound: Option<u32>,
    pub logs: bool,
    /// Degree of the polynomial prefactor in the undifferentiated coordinates.
    pub coord_degree: u32,
    /// Names of the new coordinates; default renames `w...` to `v...`.
    pub new_vars: Option<Vec<String>>,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        AnsatzConfig { jet_bound: None, den_bound: None, logs: true, coord_degree: 2, new_vars: None }
    }
}

/// One linear solve of the reduction.
#[derive(Clone, Debug)]
pub struct OrderSolve {
    pub k: usize,
    /// `(component, monomial)` of each unknown.
    pub basis: Vec<(usize, Monomial)>,
    pub equations: usize,
    pub solution: Solution,
    /// Whether the particular solution uses a logarithm.
    pub log_used: bool,
    /// Whether `F_k = 0` is admissible.
    pub zero_admissible: bool,
}

impl OrderSolve {
    pub fn unknowns(&self) -> usize {
        self.basis.len()
    }

    pub fn kernel_dim(&self) -> usize {
        self.solution.kernel.len()
    }

    /// Whether `f` (one expression per component) solves this order's equations.
    /// Terms outside the ansatz make the answer `false`.
    pub fn contains(&self, f: &[Expr]) -> bool {
        match coordinates_in_basis(f, &self.basis) {
            Some(x) => self.solution.contains(&x),
            None => false,
        }
    }
}

fn strip_params(m: &Monomial) -> (Monomial, Monomial) {
    m.split(|a| !a.is_param())
}

fn coordinates_in_basis(f: &[Expr], basis: &[(usize, Monomial)]) -> Option<Vec<Expr>> {
    let index: FxHashMap<(usize, Monomial), usize> = basis.iter().cloned().enumerate().map(|(k, b)| (b, k)).collect();
    let mut x = vec![Expr::zero(); basis.len()];
    for (i, e) in f.iter().enumerate() {
        for (m, q) in e.canonical().terms() {
            let (core, par) = strip_params(m);
            let col = *index.get(&(i, core))?;
            x[col] = x[col].add_ref(&Expr::term(par, q.clone()));
        }
    }
    Some(x)
}

#[derive(Clone, Debug)]
pub struct ReductionReport {
    pub achieved: usize,
    pub transform: MiuraTransform,
    /// Residual of each bracket at `eps^k` before solving order `k`.
    pub residuals: Vec<[MatOp; 2]>,
    pub solves: Vec<OrderSolve>,
}

fn default_new_names(old: &[String]) -> Vec<String> {
    let cand: Vec<String> = old
        .iter()
        .map(|s| match s.strip_prefix('w') {
            Some(rest) => format!("v{rest}"),
            None => s.clone(),
        })
        .collect();
    let clash = cand.iter().enumerate().any(|(i, c)| old.iter().enumerate().any(|(j, o)| i != j && o == c));
    if clash {
        old.to_vec()
    } else {
        cand
    }
}

/// Monomials of differential degree `k` in the jets of `vars`.
fn ansatz_basis(vars: &[String], k: usize, cfg: &AnsatzConfig) -> Vec<Monomial> {
    let jb = cfg.jet_bound.unwrap_or_else(|| jet_bound(k)).max(1);
    let nb = cfg.den_bound.unwrap_or(3 * k as u32) as i64;
    let n = vars.len();
    // exponents of the jets of order >= 2
    let higher: Vec<(usize, u32)> = (0..n).flat_map(|i| (2..=jb).map(move |m| (i, m))).collect();
    let mut parts: Vec<Vec<(usize, u32, i64)>> = Vec::new();
    fn rec(h: &[(usize, u32)], idx: usize, left: i64, cur: &mut Vec<(usize, u32, i64)>, out: &mut Vec<Vec<(usize, u32, i64)>>) {
        if idx == h.len() {
            out.push(cur.clone());
            return;
        }
        let (i, m) = h[idx];
        let mut e = 0i64;
        while e * (m as i64) <= left {
            if e > 0 {
                cur.push((i, m, e));
            }
            rec(h, idx + 1, left - e * m as i64, cur, out);
            if e > 0 {
                cur.pop();
            }
            e += 1;
        }
    }
    rec(&higher, 0, k as i64 + nb, &mut Vec::new(), &mut parts);
    let mut out = Vec::new();
    for p in parts {
        let used: i64 = p.iter().map(|(_, m, e)| *m as i64 * e).sum();
        let rest = k as i64 - used;
        // split `rest` among the first derivatives, total negative part <= nb
        let mut firsts: Vec<Vec<i64>> = Vec::new();
        split_firsts(n, rest, nb, &mut Vec::new(), &mut firsts);
        for f in firsts {
            let mut fs: Vec<(Atom, Exponent)> = Vec::new();
            for (i, &e) in f.iter().enumerate() {
                if e != 0 {
                    fs.push((Atom::jet(&vars[i], 1), Exponent::int(e)));
                }
            }
            for &(i, m, e) in &p {
                fs.push((Atom::jet(&vars[i], m), Exponent::int(e)));
            }
            // a nonzero degree needs at least one derivative
            if fs.is_empty() && k > 0 {
                continue;
            }
            out.push(Monomial::from_factors(fs));
        }
    }
    // polynomial prefactors in the coordinates
    let coords = coordinate_monomials(vars, cfg.coord_degree);
    let mut full = Vec::new();
    for m in &out {
        for c in &coords {
            full.push(m.mul(c));
        }
    }
    if cfg.logs {
        let mut with_logs = Vec::new();
        for m in &full {
            for v in vars {
                with_logs.push(m.mul(&Monomial::atom(Atom::log(Atom::jet(v, 1)))));
            }
        }
        full.extend(with_logs);
    }
    // simplest monomials first, independent of interning order; the pivoting
    // then prefers them in the particular solution
    let mut keyed: Vec<((bool, i64, i64, String), Monomial)> = full.into_iter().map(|m| (basis_key(&m), m)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.into_iter().map(|(_, m)| m).collect()
}

fn basis_key(m: &Monomial) -> (bool, i64, i64, String) {
    let mut log = false;
    let mut coord = 0i64;
    let mut neg = 0i64;
    for &(a, e) in m.factors() {
        match a.kind() {
            AtomKind::Log { .. } => log = true,
            AtomKind::Jet { order: 0, .. } => coord += e.as_int().unwrap_or(0),
            _ => neg += (-e.as_int().unwrap_or(0)).max(0),
        }
    }
    (log, coord, neg, m.to_string())
}

fn split_firsts(n: usize, rest: i64, nb: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
    let neg: i64 = cur.iter().filter(|e| **e < 0).map(|e| -e).sum();
    if cur.len() + 1 == n {
        let last = rest - cur.iter().sum::<i64>();
        if neg + (-last).max(0) <= nb {
            let mut v = cur.clone();
            v.push(last);
            out.push(v);
        }
        return;
    }
    let remaining = rest - cur.iter().sum::<i64>();
    let lo = -(nb - neg);
    let hi = remaining + (nb - neg);
    for e in lo..=hi {
        cur.push(e);
        split_firsts(n, rest, nb, cur, out);
        cur.pop();
    }
}

fn coordinate_monomials(vars: &[String], deg: u32) -> Vec<Monomial> {
    let mut out = vec![Monomial::one()];
    for _ in 0..deg {
        let mut next = Vec::new();
        for m in &out {
            for v in vars {
                next.push(m.mul(&Monomial::atom(Atom::jet(v, 0))));
            }
        }
        out.extend(next);
    }
    out.sort();
    out.dedup();
    out
}

/// Collects `coefficient(monomial)` equations from a residual operator.
fn op_equations(op: &MatOp, tag: usize, into: &mut BTreeMap<(usize, usize, usize, usize, Monomial), Expr>) -> Result<(), MiuraError> {
    for i in 0..op.rows {
        for j in 0..op.cols {
            for (l, e) in op.get(i, j).c.iter().enumerate() {
                for (m, q) in e.canonical().terms() {
                    let (core, par) = strip_params(m);
                    let slot = into.entry((tag, i, j, l, core)).or_insert_with(Expr::zero);
                    *slot = slot.add_ref(&Expr::term(par, q.clone()));
                }
            }
        }
    }
    Ok(())
}

/// Order-by-order construction of a reducing transformation by undetermined
/// coefficients; order `k` solves `R_k + ad_{F_k} P_0 = 0` for both brackets.
pub fn reduce_pencil(p: &PoissonPencil, top: usize, cfg: &AnsatzConfig) -> Result<ReductionReport, MiuraError> {
    let ss = p.semisimple_check()?;
    if !ss.semisimple {
        return Err(MiuraError::Pencil(PencilError::NotSemisimple(format!("roots {:?}", ss.roots))));
    }
    let old = p.vars().to_vec();
    let new = cfg.new_vars.clone().unwrap_or_else(|| default_new_names(&old));
    if new.len() != old.len() {
        return Err(MiuraError::Dimension("wrong number of new variable names".into()));
    }
    let n = old.len();
    let lead: Vec<LocalBivector> = [1usize, 2]
        .iter()
        .map(|&a| rename_op(&p.bracket(a).order(0), &old, &new).map(|op| LocalBivector::new(new.clone(), op)))
        .collect::<Result<_, _>>()?;
    for b in &lead {
        if b.op.m.iter().any(|d| d.c.iter().any(|e| e.atoms().iter().any(|a| a.is_param()))) {
            return Err(MiuraError::Unsupported("the dispersionless pencil must have parameter-free coefficients".into()));
        }
    }
    let mut t = MiuraTransform {
        old_vars: old.clone(),
        new_vars: new.clone(),
        params: p.params.clone(),
        orders: vec![new.iter().map(|v| Expr::jet(v, 0)).collect()],
        phi0_inverse: Some(old.iter().map(|v| Expr::jet(v, 0)).collect()),
    };
    let mut residuals = Vec::new();
    let mut solves = Vec::new();
    for k in 1..=top {
        let r = pencil_residual(&t, p, k)?;
        let rk = [r.residual[0].order(k), r.residual[1].order(k)];
        let basis_m = ansatz_basis(&new, k, cfg);
        let basis: Vec<(usize, Monomial)> = (0..n).flat_map(|i| basis_m.iter().map(move |m| (i, m.clone()))).collect();
        // linearized action of each unknown
        let lin: Vec<[MatOp; 2]> = basis
            .par_iter()
            .map(|(i, m)| {
                let mut comps = vec![Expr::zero(); n];
                comps[*i] = Expr::term(m.clone(), Q::one());
                let xi = EvolutionaryVF::new(comps);
                [schouten_pv(&lead[0], &xi).canonical().op, schouten_pv(&lead[1], &xi).canonical().op]
            })
            .collect();
        let mut rows: BTreeMap<(usize, usize, usize, usize, Monomial), SparseRow> = BTreeMap::new();
        for (col, ops) in lin.iter().enumerate() {
            for (tag, op) in ops.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        for (l, e) in op.get(i, j).c.iter().enumerate() {
                            for (mono, q) in e.terms() {
                                let (core, par) = strip_params(mono);
                                if !par.is_one() {
                                    return Err(MiuraError::Unsupported("parameters in the linearized equations".into()));
                                }
                                let row = rows.entry((tag, i, j, l, core)).or_default();
                                let e = row.entry(col).or_insert_with(Q::zero);
                                *e = &*e + q;
                            }
                        }
                    }
                }
            }
        }
        let mut rhs: BTreeMap<(usize, usize, usize, usize, Monomial), Expr> = BTreeMap::new();
        for (tag, op) in rk.iter().enumerate() {
            op_equations(op, tag, &mut rhs)?;
        }
        let mut sys = SparseSystem::new(basis.len());
        let mut keys: Vec<_> = rows.keys().cloned().collect();
        for key in rhs.keys() {
            if !rows.contains_key(key) {
                keys.push(key.clone());
            }
        }
        for key in keys {
            let row = rows.remove(&key).unwrap_or_default();
            let b = rhs.get(&key).map(|e| -e).unwrap_or_else(Expr::zero);
            sys.push(row, b);
        }
        let equations = sys.len();
        let sol = sys.solve().map_err(|e| MiuraError::AnsatzTooSmall { k, residual: e.residual.to_string() })?;
        let mut fk = vec![Expr::zero(); n];
        let mut log_used = false;
        for (col, (i, m)) in basis.iter().enumerate() {
            let a = &sol.particular[col];
            if a.is_trivially_zero() {
                continue;
            }
            if m.factors().iter().any(|(x, _)| matches!(x.kind(), AtomKind::Log { .. })) {
                log_used = true;
            }
            fk[*i] = fk[*i].add_ref(&a.mul_monomial(m, &Q::one()));
        }
        let zero_admissible = sol.contains(&vec![Expr::zero(); basis.len()]);
        for (i, f) in fk.iter().enumerate() {
            for v in &new {
                if let Some(m) = max_order(f, v) {
                    if m > jet_bound(k) {
                        return Err(MiuraError::JetOrder { k, i, order: m, bound: jet_bound(k) });
                    }
                }
            }
        }
        t.orders.push(fk.into_iter().map(|e| e.canonical()).collect());
        residuals.push(rk);
        solves.push(OrderSolve { k, basis, equations, solution: sol, log_used, zero_admissible });
    }
    let check = pencil_residual(&t, p, top)?;
    if let Some(f) = check.first_nonzero {
        return Err(MiuraError::AnsatzTooSmall { k: f, residual: "residual survives after solving".into() });
    }
    t.trim();
    Ok(ReductionReport { achieved: top, transform: t, residuals, solves })
}

/// Evaluates `sum_k eps^k F^i_k` pointwise from sampled jets.
/// `jets[var][order][point]`; `params` supplies parameter values.
pub fn evaluate_on_jets(
    t: &MiuraTransform,
    jets: &[Vec<Vec<f64>>],
    params: &BasePoint,
    eps: f64,
    xs: &[f64],
) -> Result<Vec<Vec<f64>>, MiuraError> {
    let n = t.n();
    let npts = xs.len();
    let mut out = vec![vec![0.0; npts]; n];
    let mut point: FxHashMap<Atom, f64> = FxHashMap::default();
    for (k, v) in params {
        point.insert(Atom::param(k), *v);
    }
    for p in 0..npts {
        for (i, v) in t.new_vars.iter().enumerate() {
            for (m, col) in jets[i].iter().enumerate() {
                point.insert(Atom::jet(v, m as u32), col[p]);
            }
        }
        for i in 0..n {
            let mut acc = 0.0;
            let mut ek = 1.0;
            for k in 0..=t.top() {
                let e = &t.orders[k][i];
                if !e.is_trivially_zero() {
                    let val = e.eval(&point).map_err(|err| match err {
                        ExprError::DivisionByZero | ExprError::Domain(_) => MiuraError::Catastrophe { index: p, x: xs[p] },
                        other => MiuraError::Expr(other),
                    })?;
                    if !val.is_finite() {
                        return Err(MiuraError::Catastrophe { index: p, x: xs[p] });
                    }
                    acc += ek * val;
                }
                ek *= eps;
            }
            out[i][p] = acc;
        }
    }
    Ok(out)
}

/// Finite-difference weights for derivatives `0..=m` at `x0` on nodes `xs` (Fornberg).
pub fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let nn = xs.len();
    let mut c = vec![vec![0.0; nn]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..nn {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

/// Jets `0..=m` of a sampled function by finite differences on `width` nodes,
/// centered where possible.
pub fn fd_jets(f: &[f64], xs: &[f64], m: usize, width: usize) -> Vec<Vec<f64>> {
    let npts = f.len();
    let width = width.min(npts);
    let mut out = vec![vec![0.0; npts]; m + 1];
    for p in 0..npts {
        let start = (p as i64 - (width as i64) / 2).clamp(0, (npts - width) as i64) as usize;
        let nodes = &xs[start..start + width];
        let w = fd_weights(xs[p], nodes, m);
        for (d, wd) in w.iter().enumerate() {
            out[d][p] = wd.iter().zip(&f[start..start + width]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Applies the transform to sampled fields by finite-difference jets
/// (stencils of `jet order + 8` nodes).
pub fn apply_to_solution(
    t: &MiuraTransform,
    fields: &[Vec<f64>],
    xs: &[f64],
    params: &BasePoint,
    eps: f64,
) -> Result<Vec<Vec<f64>>, MiuraError> {
    let m = (0..=t.top()).map(|k| t.jet_order(k)).max().unwrap_or(0) as usize;
    let jets: Vec<Vec<Vec<f64>>> = fields.iter().map(|f| fd_jets(f, xs, m, m + 9)).collect();
    evaluate_on_jets(t, &jets, params, eps, xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn kdv_pencil() -> PoissonPencil {
        let w = s(&["w"]);
        let p = |t: &str| parse(t, &["w"], &["c"]).unwrap();
        let p1 = EpsBivector::new(w.clone(), vec![op1(vec![Expr::zero(), Expr::one()])]).unwrap();
        let p2 = EpsBivector::new(
            w.clone(),
            vec![op1(vec![p("1/2*w#1"), p("w")]), MatOp::zero(1, 1), op1(vec![Expr::zero(), Expr::zero(), Expr::zero(), p("3*c")])],
        )
        .unwrap();
        let bp: BasePoint = [("w".to_string(), 1.0), ("c".to_string(), 1.0)].into_iter().collect();
        PoissonPencil::new(p1, p2, s(&["c"]), bp).unwrap()
    }

    fn op1(c: Vec<Expr>) -> MatOp {
        let mut m = MatOp::zero(1, 1);
        *m.get_mut(0, 0) = DiffOp::new(c);
        m
    }

    fn kdv_transform() -> MiuraTransform {
        let v = |t: &str| parse(t, &["v"], &["c"]).unwrap();
        let f2 = v("c*(v#3/v#1 - v#2^2/v#1^2)");
        let g = v("c^2/10*(5*v#4/v#1^2 - 21*v#2*v#3/v#1^3 + 16*v#2^3/v#1^4)").total_dx_n(2);
        MiuraTransform::new(s(&["w"]), s(&["v"]), s(&["c"]), vec![vec![v("v")], vec![Expr::zero()], vec![f2], vec![Expr::zero()], vec![g]])
            .unwrap()
    }

    #[test]
    fn identity_leaves_pencil() {
        let p = kdv_pencil();
        let id = MiuraTransform::identity(s(&["w"]), s(&["w"]));
        let q = apply_to_pencil(&id, &p, 2).unwrap();
        assert!(q.p2.sub(&p.p2).is_zero_through(2));
        assert!(q.p1.sub(&p.p1).is_zero_through(2));
    }

    #[test]
    fn linear_rescaling() {
        let b = EpsBivector::new(s(&["w"]), vec![op1(vec![Expr::zero(), Expr::one()])]).unwrap();
        let t = MiuraTransform::new(s(&["w"]), s(&["v"]), vec![], vec![vec![parse("2*v", &["v"], &[]).unwrap()]]).unwrap();
        let r = transform_bivector(&t, &b, 0).unwrap();
        assert_eq!(r.order(0).get(0, 0).coeff(1), Expr::rational(1, 4));
        // pushing forward by the inverse multiplies by 4
        let ti = invert(&t, 0).unwrap();
        let b2 = EpsBivector::new(s(&["v"]), vec![op1(vec![Expr::zero(), Expr::one()])]).unwrap();
        let r2 = transform_bivector(&ti, &b2, 0).unwrap();
        assert_eq!(r2.order(0).get(0, 0).coeff(1), Expr::int(4));
    }

    #[test]
    fn kdv_transform_reduces_through_eps4() {
        let r = pencil_residual(&kdv_transform(), &kdv_pencil(), 6).unwrap();
        assert_eq!(r.first_nonzero, Some(6));
    }

    #[test]
    fn taylor_composition_matches_direct_substitution() {
        // polynomial: direct substitution is exact
        let a = parse("w^2*w#2 + w#1^3", &["w"], &[]).unwrap();
        let series = vec![vec![parse("v", &["v"], &[]).unwrap(), parse("v#1^2", &["v"], &[]).unwrap(), parse("v#2*v", &["v"], &[]).unwrap()]];
        let got = compose_series(&a, &s(&["w"]), &series, 6).unwrap();
        // direct: truncate by grading (each eps^k shifts degree by k)
        let total = substitute_jets(&a, &s(&["w"]), &[series[0][0].add_ref(&series[0][1]).add_ref(&series[0][2])]).unwrap();
        let sum = got.iter().fold(Expr::zero(), |acc, e| acc.add_ref(e));
        // every term of the exact composition has degree 2 + k, so the series must be complete at top 6
        assert!(sum.add_ref(&-total).is_zero());
    }

    #[test]
    fn invert_and_compose() {
        let t = kdv_transform();
        let ti = invert(&t, 4).unwrap();
        assert_eq!(ti.old_vars, s(&["v"]));
        let c = compose(&t, &ti, 4).unwrap();
        assert!(c.is_identity(), "{:?}", c.orders);
        let c2 = compose(&ti, &t, 4).unwrap();
        assert!(c2.is_identity());
        // order-2 term of the inverse is -F2
        let f2 = t.order(2)[0].clone();
        let g2 = rename(&ti.order(2)[0], &s(&["w"]), &s(&["v"])).unwrap();
        assert!(g2.add_ref(&f2).is_zero());
    }

    #[test]
    fn exp_vector_field_matches_lie_series() {
        // deformation generated by an order-one field
        let xi = EvolutionaryVF::new(vec![parse("w#1*w", &["w"], &[]).unwrap()]);
        let p = kdv_pencil();
        let lead = p.p2.truncate(0);
        let moved = exp_vector_field(&xi, &lead, 1, 3);
        let t = lie_series(&EvolutionaryVF::new(vec![-xi.comps[0].clone()]), &s(&["w"]), 1, 3);
        let pulled = transform_bivector(&t, &lead, 3).unwrap();
        assert!(moved.sub(&pulled).is_zero_through(3));
    }

    #[test]
    fn reduce_kdv_order_two() {
        let p = kdv_pencil();
        let rep = reduce_pencil(&p, 2, &AnsatzConfig::default()).unwrap();
        assert!(rep.solves[0].zero_admissible);
        let f2 = parse("c*(v#3/v#1 - v#2^2/v#1^2)", &["v"], &["c"]).unwrap();
        assert!(rep.solves[1].contains(&[f2]));
        assert!(!rep.solves[1].contains(&[Expr::zero()]));
    }

    #[test]
    fn reduce_kdv_order_four() {
        let p = kdv_pencil();
        let rep = reduce_pencil(&p, 4, &AnsatzConfig::default()).unwrap();
        assert_eq!(rep.achieved, 4);
        assert!(rep.solves[2].zero_admissible);
        for k in 1..=4 {
            assert!(rep.transform.jet_order(k) <= jet_bound(k));
        }
        assert!(pencil_residual(&rep.transform, &p, 4).unwrap().first_nonzero.is_none());
    }

    #[test]
    fn ch_transform_through_eps4() {
        let w = s(&["w"]);
        let pw = |t: &str| parse(t, &["w"], &[]).unwrap();
        let p1 = EpsBivector::new(
            w.clone(),
            vec![op1(vec![Expr::zero(), Expr::one()]), MatOp::zero(1, 1), op1(vec![Expr::zero(), Expr::zero(), Expr::zero(), Expr::rational(-1, 8)])],
        )
        .unwrap();
        let p2 = EpsBivector::new(w.clone(), vec![op1(vec![pw("1/2*w#1"), pw("w")])]).unwrap();
        let bp: BasePoint = [("w".to_string(), 1.0)].into_iter().collect();
        let p = PoissonPencil::new(p1, p2, vec![], bp).unwrap();
        let v = |t: &str| parse(t, &["v"], &[]).unwrap();
        let f2 = v("v*v#2/(24*v#1) - v#1/48").total_dx();
        let f4 = v("7*v#2^2/(2880*v#1) + v*v#2^3/(180*v#1^3) - v^2*v#2^4/(90*v#1^5) - v#3/512 - 59*v*v#2*v#3/(5760*v#1^2) \
            + 37*v^2*v#2^2*v#3/(1920*v#1^4) - 7*v^2*v#3^2/(1920*v#1^3) + 5*v*v#4/(1152*v#1) - 31*v^2*v#2*v#4/(5760*v#1^3) + v^2*v#5/(1152*v#1^2)")
            .total_dx();
        let t = MiuraTransform::new(w, s(&["v"]), vec![], vec![vec![v("v")], vec![Expr::zero()], vec![f2.clone()], vec![Expr::zero()], vec![f4]]).unwrap();
        assert!(!t.is_polynomial());
        let r = pencil_residual(&t, &p, 4).unwrap();
        assert_eq!(r.first_nonzero, None);
        let rep = reduce_pencil(&p, 2, &AnsatzConfig::default()).unwrap();
        assert!(rep.solves[1].contains(&[f2]));
    }

    #[test]
    fn fd_weights_exact_on_polynomials() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        let f: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        let j = fd_jets(&f, &xs, 3, 9);
        for p in 0..9 {
            assert!((j[1][p] - 3.0 * xs[p] * xs[p]).abs() < 1e-9);
            assert!((j[3][p] - 6.0).abs() < 1e-6);
        }
    }
}
