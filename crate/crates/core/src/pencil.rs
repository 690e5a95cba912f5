//! Graded deformations of bihamiltonian structures of hydrodynamic type: leading
//! metrics, flatness, canonical coordinates, central invariants and changes of
//! representative of the pencil.

use crate::diffop::MatOp;
use crate::expr::expr::monomial_grade_of;
use crate::expr::{Atom, AtomKind, Expr, ExprError, Q};
use crate::jet::{substitute_jets, variational_gradient};
use crate::linsolve::{SparseRow, SparseSystem};
use crate::localgeom::{is_antisymmetric, jacobi_pairs, EpsFunctional, EpsVectorField, LocalBivector, TrivectorResidual};
use rustc_hash::FxHashMap;
use std::collections::BTreeMap;
use thiserror::Error;

pub type Matrix = Vec<Vec<Expr>>;
/// Values of coordinates and parameters at the point where pointwise
/// conditions (nondegeneracy, distinct roots) are certified.
pub type BasePoint = BTreeMap<String, f64>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PencilError {
    #[error("grading violated at eps^{m} delta^({l}) entry ({i},{j}): term {term} should have degree {expected}")]
    Grading { m: usize, l: usize, i: usize, j: usize, term: String, expected: i64 },
    #[error("order-0 part is not of hydrodynamic type: {0}")]
    NotHydrodynamic(String),
    #[error("leading metric is degenerate at the base point")]
    Degenerate,
    #[error("not semisimple at the base point: {0}")]
    NotSemisimple(String),
    #[error("canonical coordinates have no closed form: {0}")]
    NoClosedForm(String),
    #[error("central invariant c_{i} is not a function of u^{i} alone")]
    NotLocal { i: usize },
    #[error("the base point has no value for `{0}`")]
    BasePoint(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate change of representative (ad - bc = 0)")]
    DegenerateChange,
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub(crate) fn point_map(bp: &BasePoint) -> FxHashMap<Atom, f64> {
    let mut m = FxHashMap::default();
    for (k, v) in bp {
        m.insert(Atom::jet(k, 0), *v);
        m.insert(Atom::param(k), *v);
    }
    m
}

pub(crate) fn eval_at(e: &Expr, bp: &BasePoint) -> Result<f64, PencilError> {
    e.eval(&point_map(bp)).map_err(|err| match err {
        ExprError::Invalid(msg) => PencilError::BasePoint(msg),
        other => PencilError::Expr(other),
    })
}

/// Checks that the `eps^m delta^(l)` coefficients of `op` have degree `m - l + 1`.
pub fn check_grading(m: usize, op: &MatOp) -> Result<(), PencilError> {
    for i in 0..op.rows {
        for j in 0..op.cols {
            for (l, e) in op.get(i, j).c.iter().enumerate() {
                let expected = m as i64 - l as i64 + 1;
                for (mono, c) in e.terms() {
                    if monomial_grade_of(mono) != Some(Q::from_int(expected)) {
                        return Err(PencilError::Grading {
                            m,
                            l,
                            i,
                            j,
                            term: Expr::term(mono.clone(), c.clone()).to_string(),
                            expected,
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// A local bivector expanded in the deformation parameter; `orders[m]` multiplies `eps^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsBivector {
    pub vars: Vec<String>,
    pub orders: Vec<MatOp>,
}

impl EpsBivector {
    pub fn new(vars: Vec<String>, orders: Vec<MatOp>) -> Result<Self, PencilError> {
        let n = vars.len();
        for (m, op) in orders.iter().enumerate() {
            if op.rows != n || op.cols != n {
                return Err(PencilError::Dimension(format!("order {m} is {}x{}, expected {n}x{n}", op.rows, op.cols)));
            }
            check_grading(m, op)?;
        }
        let mut b = EpsBivector { vars, orders };
        b.trim();
        Ok(b)
    }

    /// Builds without the grading check (used for intermediate results).
    pub fn new_unchecked(vars: Vec<String>, orders: Vec<MatOp>) -> Self {
        let mut b = EpsBivector { vars, orders };
        b.trim();
        b
    }

    fn trim(&mut self) {
        while self.orders.len() > 1 && self.orders.last().map(|o| o.is_trivially_zero()).unwrap_or(false) {
            self.orders.pop();
        }
    }

    pub fn n(&self) -> usize {
        self.vars.len()
    }

    /// Highest order present.
    pub fn top(&self) -> usize {
        self.orders.len().saturating_sub(1)
    }

    pub fn order(&self, m: usize) -> MatOp {
        self.orders.get(m).cloned().unwrap_or_else(|| MatOp::zero(self.n(), self.n()))
    }

    pub fn bivector(&self, m: usize) -> LocalBivector {
        LocalBivector::new(self.vars.clone(), self.order(m))
    }

    /// Coefficient of `eps^m delta^(l)` in entry `(i, j)`.
    pub fn coeff(&self, m: usize, i: usize, j: usize, l: usize) -> Expr {
        self.orders.get(m).map(|o| o.get(i, j).coeff(l)).unwrap_or_else(Expr::zero)
    }

    pub fn truncate(&self, top: usize) -> EpsBivector {
        EpsBivector::new_unchecked(self.vars.clone(), self.orders.iter().take(top + 1).cloned().collect())
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: &Q, other: &EpsBivector, b: &Q) -> EpsBivector {
        let top = self.orders.len().max(other.orders.len());
        let orders = (0..top).map(|m| self.order(m).scale(a).add(&other.order(m).scale(b))).collect();
        EpsBivector::new_unchecked(self.vars.clone(), orders)
    }

    pub fn sub(&self, other: &EpsBivector) -> EpsBivector {
        self.combine(&Q::one(), other, &-Q::one())
    }

    pub fn is_zero_through(&self, top: usize) -> bool {
        (0..=top).all(|m| self.order(m).is_zero())
    }

    /// First order at which `self` is not zero, if any up to `top`.
    pub fn first_nonzero(&self, top: usize) -> Option<usize> {
        (0..=top).find(|&m| !self.order(m).is_zero())
    }

    pub fn canonical(&self) -> EpsBivector {
        EpsBivector::new_unchecked(self.vars.clone(), self.orders.iter().map(|o| o.canonical()).collect())
    }

    /// Orders at which antisymmetry fails, with the residual `P + P^+`.
    pub fn antisymmetry_failures(&self) -> Vec<(usize, MatOp)> {
        (0..self.orders.len())
            .filter_map(|m| {
                let (ok, r) = is_antisymmetric(&self.bivector(m));
                (!ok).then_some((m, r))
            })
            .collect()
    }

    /// Jacobi residual per order `0..=top`.
    pub fn jacobi(&self, top: usize) -> Vec<TrivectorResidual> {
        (0..=top)
            .map(|m| {
                let ops: Vec<MatOp> = (0..=m).map(|a| self.order(a)).collect();
                let pairs: Vec<(&MatOp, &MatOp)> = (0..=m)
                    .filter(|&a| !ops[a].is_trivially_zero() && !ops[m - a].is_trivially_zero())
                    .map(|a| (&ops[a], &ops[m - a]))
                    .collect();
                jacobi_pairs(&pairs, &self.vars)
            })
            .collect()
    }

    /// Residual `den * xi_m + num * sum_{a+b=m} P_a delta h_b` per order `0..=top`, i.e.
    /// the failure of `w_t = -(num/den) P delta H` at each power of the parameter.
    pub fn flow_residual(&self, system: &EpsVectorField, h: &EpsFunctional, num: &Expr, den: &Expr, top: usize) -> Vec<Vec<Expr>> {
        let grads: Vec<Vec<Expr>> = (0..=top).map(|b| variational_gradient(&h.order(b), &self.vars)).collect();
        (0..=top)
            .map(|m| {
                let mut acc: Vec<Expr> = system.order(m).iter().map(|e| den.mul_ref(e)).collect();
                acc.resize(self.n(), Expr::zero());
                for a in 0..=m {
                    let op = self.order(a);
                    if op.is_trivially_zero() || grads[m - a].iter().all(|g| g.is_trivially_zero()) {
                        continue;
                    }
                    for (x, y) in acc.iter_mut().zip(op.apply(&grads[m - a])) {
                        *x = x.add_ref(&num.mul_ref(&y));
                    }
                }
                acc.into_iter().map(|e| e.canonical()).collect()
            })
            .collect()
    }

    /// Mixed residual with `other` per order `0..=top`.
    pub fn compatibility(&self, other: &EpsBivector, top: usize) -> Vec<TrivectorResidual> {
        (0..=top)
            .map(|m| {
                let a_ops: Vec<MatOp> = (0..=m).map(|a| self.order(a)).collect();
                let b_ops: Vec<MatOp> = (0..=m).map(|a| other.order(a)).collect();
                let mut pairs: Vec<(&MatOp, &MatOp)> = Vec::new();
                for a in 0..=m {
                    if a_ops[a].is_trivially_zero() || b_ops[m - a].is_trivially_zero() {
                        continue;
                    }
                    pairs.push((&a_ops[a], &b_ops[m - a]));
                    pairs.push((&b_ops[m - a], &a_ops[a]));
                }
                jacobi_pairs(&pairs, &self.vars)
            })
            .collect()
    }
}

/// Change of coordinates `old = images(new)` not involving the deformation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateHint {
    pub vars: Vec<String>,
    /// Old coordinates as functions of `vars`.
    pub images: Vec<Expr>,
    pub base_point: BasePoint,
}

/// Pencil `P2 - lambda P1` of two graded bivectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonPencil {
    pub p1: EpsBivector,
    pub p2: EpsBivector,
    pub params: Vec<String>,
    pub base_point: BasePoint,
    /// Coordinates in which canonical coordinates have a closed form, when the
    /// characteristic roots do not.
    pub coords: Option<CoordinateHint>,
}

#[derive(Clone, Debug)]
pub struct LeadingMetrics {
    pub g1: Matrix,
    pub g2: Matrix,
    /// `q[a][i][j][k]`: coefficient of `w^k_x delta` in entry `(i, j)` of bracket `a`.
    pub q: [Vec<Vec<Vec<Expr>>>; 2],
}

impl PoissonPencil {
    pub fn new(p1: EpsBivector, p2: EpsBivector, params: Vec<String>, base_point: BasePoint) -> Result<Self, PencilError> {
        if p1.vars != p2.vars {
            return Err(PencilError::Dimension("brackets use different variables".into()));
        }
        let p = PoissonPencil { p1, p2, params, base_point, coords: None };
        let lm = p.leading_metrics()?;
        let d = det(&lm.g1);
        let dv = eval_at(&d, &p.base_point)?;
        if !dv.is_finite() || dv.abs() < 1e-12 {
            return Err(PencilError::Degenerate);
        }
        Ok(p)
    }

    pub fn with_coords(mut self, hint: CoordinateHint) -> Self {
        self.coords = Some(hint);
        self
    }

    pub fn vars(&self) -> &[String] {
        &self.p1.vars
    }

    pub fn n(&self) -> usize {
        self.p1.n()
    }

    pub fn top(&self) -> usize {
        self.p1.top().max(self.p2.top())
    }

    pub fn bracket(&self, a: usize) -> &EpsBivector {
        if a == 1 {
            &self.p1
        } else {
            &self.p2
        }
    }

    pub fn leading_metrics(&self) -> Result<LeadingMetrics, PencilError> {
        let (g1, q1) = hydrodynamic_part(&self.p1)?;
        let (g2, q2) = hydrodynamic_part(&self.p2)?;
        Ok(LeadingMetrics { g1, g2, q: [q1, q2] })
    }

    /// The same pencil in the hinted coordinates, or itself.
    pub fn working(&self) -> Result<PoissonPencil, PencilError> {
        match &self.coords {
            None => Ok(self.clone()),
            Some(h) => {
                let p1 = point_transform(&self.p1, &h.vars, &h.images)?;
                let p2 = point_transform(&self.p2, &h.vars, &h.images)?;
                PoissonPencil::new(p1, p2, self.params.clone(), h.base_point.clone())
            }
        }
    }

    pub fn canonical_coordinates(&self) -> Result<DiagonalData, PencilError> {
        let w = self.working()?;
        let lm = w.leading_metrics()?;
        let n = w.n();
        let vars = w.vars().to_vec();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || (lm.g1[i][j].is_zero() && lm.g2[i][j].is_zero())));
        let mut u: Vec<Expr> = if diagonal {
            (0..n)
                .map(|i| Ok(lm.g2[i][i].mul_ref(&lm.g1[i][i].inverse()?).canonical()))
                .collect::<Result<_, ExprError>>()?
        } else if n == 2 {
            quadratic_roots(&lm.g1, &lm.g2)?
        } else {
            return Err(PencilError::NoClosedForm(format!(
                "{n} coupled components; supply coordinates in which the metrics are diagonal"
            )));
        };
        let mut vals: Vec<(f64, Expr)> =
            u.drain(..).map(|e| Ok((eval_at(&e, &w.base_point)?, e))).collect::<Result<_, PencilError>>()?;
        vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        for k in 1..vals.len() {
            let scale = 1.0 + vals[k].0.abs().max(vals[k - 1].0.abs());
            if (vals[k].0 - vals[k - 1].0).abs() < 1e-10 * scale {
                return Err(PencilError::NotSemisimple(format!("repeated root {}", vals[k].0)));
            }
        }
        if vals.iter().any(|(v, _)| !v.is_finite()) {
            return Err(PencilError::NotSemisimple("non-real root".into()));
        }
        let u: Vec<Expr> = vals.into_iter().map(|(_, e)| e).collect();
        let jac: Matrix = u.iter().map(|ui| vars.iter().map(|v| ui.diff(Atom::jet(v, 0))).collect()).collect();
        let t1 = congruence(&jac, &lm.g1);
        let t2 = congruence(&jac, &lm.g2);
        for i in 0..n {
            for j in 0..n {
                if i != j && (!t1[i][j].is_zero() || !t2[i][j].is_zero()) {
                    return Err(PencilError::NotSemisimple(format!("metrics not diagonalized in entry ({i},{j})")));
                }
            }
            if !t2[i][i].add_ref(&-u[i].mul_ref(&t1[i][i])).is_zero() {
                return Err(PencilError::NotSemisimple(format!("second metric is not u^{i} f^{i}")));
            }
        }
        let f: Vec<Expr> = (0..n).map(|i| t1[i][i].canonical()).collect();
        Ok(DiagonalData { vars, base_point: w.base_point.clone(), pencil: w, u, jac, f })
    }

    pub fn central_invariants(&self) -> Result<CentralInvariants, PencilError> {
        let diag = self.canonical_coordinates()?;
        let w = &diag.pencil;
        let n = w.n();
        let coeffs = |a: usize, m: usize, l: usize| -> Matrix {
            let b = w.bracket(a);
            (0..n).map(|i| (0..n).map(|j| b.coeff(m, i, j, l)).collect()).collect()
        };
        let p = [congruence(&diag.jac, &coeffs(1, 1, 2)), congruence(&diag.jac, &coeffs(2, 1, 2))];
        let q = [congruence(&diag.jac, &coeffs(1, 2, 3)), congruence(&diag.jac, &coeffs(2, 2, 3))];
        let mut c = Vec::with_capacity(n);
        for i in 0..n {
            let ui = &diag.u[i];
            let mut num = q[1][i][i].add_ref(&-ui.mul_ref(&q[0][i][i]));
            for k in 0..n {
                if k == i {
                    continue;
                }
                let t = p[1][k][i].add_ref(&-ui.mul_ref(&p[0][k][i]));
                if t.is_zero() {
                    continue;
                }
                let den = diag.f[k].mul_ref(&diag.u[k].add_ref(&-ui)).canonical();
                num = num.add_ref(&t.pow(2).mul_ref(&den.inverse()?));
            }
            let den = diag.f[i].pow(2).scale(&Q::from_int(3)).canonical();
            c.push(num.mul_ref(&den.inverse()?).canonical());
        }
        // each c_i must be a function of u^i alone: dc_i ^ du^i = 0
        let vars = &diag.vars;
        for (i, ci) in c.iter().enumerate() {
            let dc: Vec<Expr> = vars.iter().map(|v| ci.diff(Atom::jet(v, 0))).collect();
            for k in 0..n {
                for l in (k + 1)..n {
                    let wedge = dc[k].mul_ref(&diag.jac[i][l]).add_ref(&-dc[l].mul_ref(&diag.jac[i][k]));
                    if !wedge.is_zero() {
                        return Err(PencilError::NotLocal { i: i + 1 });
                    }
                }
            }
            // no dependence on jets either
            if ci.base_atoms().iter().any(|a| a.as_jet().map(|(_, m)| m > 0).unwrap_or(false)) && !is_jet_free(ci) {
                return Err(PencilError::NotLocal { i: i + 1 });
            }
        }
        let names = canonical_names(n);
        let c_of_u = c.iter().enumerate().map(|(i, ci)| fit_in_coordinate(ci, &diag.u[i], &names[i])).collect();
        Ok(CentralInvariants { diag, c, c_of_u, u_names: names, p, q })
    }

    /// New representative `(c P2 + d P1, a P2 + b P1)` together with a comparison of
    /// the recomputed central invariants with the predicted transformation law.
    pub fn sl2_change(&self, a: &Q, b: &Q, c: &Q, d: &Q) -> Result<(PoissonPencil, Sl2Report), PencilError> {
        let det = &(a * d) - &(b * c);
        if det.is_zero() {
            return Err(PencilError::DegenerateChange);
        }
        let p1 = self.p2.combine(c, &self.p1, d);
        let p2 = self.p2.combine(a, &self.p1, b);
        let mut np = PoissonPencil::new(p1, p2, self.params.clone(), self.base_point.clone())?;
        np.coords = self.coords.clone();
        let old = self.central_invariants()?;
        let new = np.central_invariants()?;
        let n = self.n();
        let mut pairs = Vec::new();
        let mut ok = true;
        for j in 0..n {
            let ut = &new.diag.u[j];
            // find i with ut (c u_i + d) = a u_i + b
            let found = (0..n).find(|&i| {
                let ui = &old.diag.u[i];
                let lhs = ut.mul_ref(&ui.scale(c).add_ref(&Expr::constant(d.clone())));
                let rhs = ui.scale(a).add_ref(&Expr::constant(b.clone()));
                lhs.add_ref(&-rhs).is_zero()
            });
            match found {
                Some(i) => {
                    let ui = &old.diag.u[i];
                    let factor = ui.scale(c).add_ref(&Expr::constant(d.clone())).scale(&det.recip());
                    let predicted = factor.mul_ref(&old.c[i]);
                    let good = new.c[j].add_ref(&-predicted).is_zero();
                    ok &= good;
                    pairs.push((i, j, good));
                }
                None => {
                    ok = false;
                }
            }
        }
        let report = Sl2Report { matrix: [a.clone(), b.clone(), c.clone(), d.clone()], pairs, holds: ok, old, new };
        Ok((np, report))
    }

    pub fn semisimple_check(&self) -> Result<SemisimpleReport, PencilError> {
        let lm = self.leading_metrics()?;
        let n = self.n();
        let num = |m: &Matrix| -> Result<nalgebra::DMatrix<f64>, PencilError> {
            let mut out = nalgebra::DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] = eval_at(&m[i][j], &self.base_point)?;
                }
            }
            Ok(out)
        };
        let g1 = num(&lm.g1)?;
        let g2 = num(&lm.g2)?;
        let inv = g1.clone().try_inverse().ok_or(PencilError::Degenerate)?;
        let eig = (inv * g2).complex_eigenvalues();
        let mut roots: Vec<f64> = Vec::new();
        let mut real = true;
        for z in eig.iter() {
            let scale = 1.0 + z.re.abs();
            if z.im.abs() > 1e-9 * scale {
                real = false;
            }
            roots.push(z.re);
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let separation = roots.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let distinct = roots.windows(2).all(|w| (w[1] - w[0]).abs() > 1e-8 * (1.0 + w[0].abs().max(w[1].abs())));
        Ok(SemisimpleReport { roots, separation, semisimple: real && distinct })
    }
}

pub(crate) fn is_jet_free(e: &Expr) -> bool {
    !e.base_atoms().iter().any(|a| a.as_jet().map(|(_, m)| m > 0).unwrap_or(false))
}

fn canonical_names(n: usize) -> Vec<String> {
    if n == 1 {
        vec!["u".into()]
    } else {
        (1..=n).map(|i| format!("u{i}")).collect()
    }
}

/// Splits the order-0 bracket into the metric `g` and the coefficients `Q^{ij}_k`.
fn hydrodynamic_part(b: &EpsBivector) -> Result<(Matrix, Vec<Vec<Vec<Expr>>>), PencilError> {
    let n = b.n();
    let vars = &b.vars;
    let mut g = vec![vec![Expr::zero(); n]; n];
    let mut q = vec![vec![vec![Expr::zero(); n]; n]; n];
    let o = b.order(0);
    for i in 0..n {
        for j in 0..n {
            let e = o.get(i, j);
            if e.c.len() > 2 {
                return Err(PencilError::NotHydrodynamic(format!("entry ({i},{j}) has order {}", e.c.len() - 1)));
            }
            let gij = e.coeff(1);
            if !is_jet_free(&gij) {
                return Err(PencilError::NotHydrodynamic(format!("metric entry ({i},{j}) depends on derivatives")));
            }
            let bij = e.coeff(0);
            let mut rest = bij.clone();
            for (k, v) in vars.iter().enumerate() {
                let qk = bij.diff(Atom::jet(v, 1));
                if !is_jet_free(&qk) {
                    return Err(PencilError::NotHydrodynamic(format!("entry ({i},{j}) is not linear in first derivatives")));
                }
                rest = rest.add_ref(&-qk.mul_ref(&Expr::jet(v, 1)));
                q[i][j][k] = qk;
            }
            if !rest.is_zero() {
                return Err(PencilError::NotHydrodynamic(format!("entry ({i},{j}) has a term {rest}")));
            }
            g[i][j] = gij;
        }
    }
    Ok((g, q))
}

/// `J M J^T`.
pub fn congruence(j: &Matrix, m: &Matrix) -> Matrix {
    let n = j.len();
    let k = m.len();
    let mut out = vec![vec![Expr::zero(); n]; n];
    for a in 0..n {
        for b in 0..n {
            let mut acc = Expr::zero();
            for r in 0..k {
                if j[a][r].is_trivially_zero() {
                    continue;
                }
                for s in 0..k {
                    if j[b][s].is_trivially_zero() || m[r][s].is_trivially_zero() {
                        continue;
                    }
                    acc = acc.add_ref(&j[a][r].mul_ref(&m[r][s]).mul_ref(&j[b][s]));
                }
            }
            out[a][b] = acc;
        }
    }
    out
}

/// Determinant by cofactor expansion (small matrices).
pub fn det(m: &Matrix) -> Expr {
    let n = m.len();
    match n {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        2 => m[0][0].mul_ref(&m[1][1]).add_ref(&-m[0][1].mul_ref(&m[1][0])),
        _ => {
            let mut acc = Expr::zero();
            for c in 0..n {
                if m[0][c].is_trivially_zero() {
                    continue;
                }
                let t = m[0][c].mul_ref(&det(&minor(m, 0, c)));
                acc = if c % 2 == 0 { acc.add_ref(&t) } else { acc.add_ref(&-t) };
            }
            acc
        }
    }
}

fn minor(m: &Matrix, r: usize, c: usize) -> Matrix {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != r)
        .map(|(_, row)| row.iter().enumerate().filter(|(j, _)| *j != c).map(|(_, e)| e.clone()).collect())
        .collect()
}

/// Inverse via the adjugate; a non-monomial determinant becomes a derived atom.
pub fn inverse(m: &Matrix) -> Result<Matrix, PencilError> {
    let n = m.len();
    let d = det(m).canonical();
    if d.is_zero() {
        return Err(PencilError::Degenerate);
    }
    let di = d.inverse()?;
    if n == 1 {
        return Ok(vec![vec![di]]);
    }
    let mut out = vec![vec![Expr::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let c = det(&minor(m, j, i));
            let c = if (i + j) % 2 == 0 { c } else { -c };
            out[i][j] = c.mul_ref(&di);
        }
    }
    Ok(out)
}

fn quadratic_roots(g1: &Matrix, g2: &Matrix) -> Result<Vec<Expr>, PencilError> {
    // det(g2 - lambda g1) = a lambda^2 + b lambda + c
    let a = det(g1);
    let diag = g2[0][0].mul_ref(&g1[1][1]).add_ref(&g1[0][0].mul_ref(&g2[1][1]));
    let off = g2[0][1].mul_ref(&g1[1][0]).add_ref(&g1[0][1].mul_ref(&g2[1][0]));
    let b = off.add_ref(&-diag);
    let c = det(g2);
    let disc = b.mul_ref(&b).add_ref(&a.mul_ref(&c).scale(&Q::from_int(-4))).canonical();
    let s = sqrt_monomial(&disc).ok_or_else(|| {
        PencilError::NoClosedForm(format!("discriminant {disc} is not a perfect square monomial"))
    })?;
    let inv2a = a.scale(&Q::from_int(2)).canonical().inverse()?;
    Ok(vec![(-b.clone()).add_ref(&-s.clone()).mul_ref(&inv2a).canonical(), (-b).add_ref(&s).mul_ref(&inv2a).canonical()])
}

fn sqrt_monomial(e: &Expr) -> Option<Expr> {
    let (m, c) = e.as_monomial()?;
    let r = c.sqrt()?;
    Some(Expr::term(m.pow_rational(1, 2), r))
}

/// Transforms a bivector to coordinates `new` with `old = images(new)`, a change
/// not involving derivatives: `P_new = K^{-1} P_old(images) K^{-T}`.
pub fn point_transform(b: &EpsBivector, new: &[String], images: &[Expr]) -> Result<EpsBivector, PencilError> {
    let n = new.len();
    let k: Matrix = images.iter().map(|w| new.iter().map(|v| w.diff(Atom::jet(v, 0))).collect()).collect();
    let ki = inverse(&k)?;
    let kit: Matrix = (0..n).map(|i| (0..n).map(|j| ki[j][i].clone()).collect()).collect();
    let left = MatOp::from_functions(n, n, &ki.concat());
    let right = MatOp::from_functions(n, n, &kit.concat());
    let mut orders = Vec::new();
    for op in &b.orders {
        let mut sub = op.clone();
        for d in sub.m.iter_mut() {
            for e in d.c.iter_mut() {
                *e = substitute_jets(e, &b.vars, images)?;
            }
        }
        let t = left.compose(&sub).compose(&right).canonical();
        orders.push(t);
    }
    Ok(EpsBivector::new_unchecked(new.to_vec(), orders))
}

/// Canonical coordinates and the diagonal forms of the leading metrics.
#[derive(Clone, Debug)]
pub struct DiagonalData {
    /// Coordinates in which all expressions below are written.
    pub vars: Vec<String>,
    pub base_point: BasePoint,
    /// The pencil in `vars`.
    pub pencil: PoissonPencil,
    pub u: Vec<Expr>,
    /// `jac[i][k] = du^i/dw^k`.
    pub jac: Matrix,
    pub f: Vec<Expr>,
}

impl DiagonalData {
    /// `df^i/du^k` through the inverse Jacobian.
    pub fn f_derivatives(&self) -> Result<Matrix, PencilError> {
        let ji = inverse(&self.jac)?;
        let n = self.u.len();
        Ok((0..n)
            .map(|i| {
                let dw: Vec<Expr> = self.vars.iter().map(|v| self.f[i].diff(Atom::jet(v, 0))).collect();
                (0..n)
                    .map(|k| {
                        let mut acc = Expr::zero();
                        for m in 0..n {
                            acc = acc.add_ref(&dw[m].mul_ref(&ji[m][k]));
                        }
                        acc
                    })
                    .collect()
            })
            .collect())
    }

    /// The forms `A^{ij}`, `B^{ij}` built from `f` and `u_x`.
    pub fn forms(&self) -> Result<(Matrix, Matrix), PencilError> {
        let n = self.u.len();
        let fd = self.f_derivatives()?;
        let ux: Vec<Expr> = self.u.iter().map(|e| e.total_dx()).collect();
        let finv: Vec<Expr> = self.f.iter().map(|f| f.inverse()).collect::<Result<_, _>>()?;
        let half = Q::new(1, 2);
        let mut a = vec![vec![Expr::zero(); n]; n];
        let mut b = vec![vec![Expr::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let t1 = self.f[i].mul_ref(&finv[j]).mul_ref(&fd[j][i]).mul_ref(&ux[j]);
                let t2 = self.f[j].mul_ref(&finv[i]).mul_ref(&fd[i][j]).mul_ref(&ux[i]);
                a[i][j] = t1.add_ref(&-t2.clone()).scale(&half);
                b[i][j] = self.u[i].mul_ref(&t1).add_ref(&-self.u[j].mul_ref(&t2)).scale(&half);
            }
        }
        Ok((a, b))
    }

    /// Checks that the `delta` coefficients of both leading brackets in canonical
    /// coordinates equal `1/2 delta_ij d(f^i) + A^{ij}` and `1/2 delta_ij d(u^i f^i) + B^{ij}`.
    pub fn verify_forms(&self) -> Result<bool, PencilError> {
        let n = self.u.len();
        let (a, b) = self.forms()?;
        let jop = MatOp::from_functions(n, n, &self.jac.concat());
        let jt: Matrix = (0..n).map(|i| (0..n).map(|k| self.jac[k][i].clone()).collect()).collect();
        let jtop = MatOp::from_functions(n, n, &jt.concat());
        for (idx, forms) in [(1usize, &a), (2, &b)] {
            let p = jop.compose(&self.pencil.bracket(idx).order(0)).compose(&jtop);
            for i in 0..n {
                for j in 0..n {
                    let mut expected = forms[i][j].clone();
                    if i == j {
                        let g = if idx == 1 { self.f[i].clone() } else { self.u[i].mul_ref(&self.f[i]) };
                        expected = expected.add_ref(&g.total_dx().scale(&Q::new(1, 2)));
                    }
                    if !p.get(i, j).coeff(0).add_ref(&-expected).is_zero() {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }
}

#[derive(Clone, Debug)]
pub struct CentralInvariants {
    pub diag: DiagonalData,
    /// `c_i` as functions of the working coordinates.
    pub c: Vec<Expr>,
    /// `c_i` rewritten in the canonical coordinate `u_names[i]`, when found.
    pub c_of_u: Vec<Option<Expr>>,
    pub u_names: Vec<String>,
    pub p: [Matrix; 2],
    pub q: [Matrix; 2],
}

impl CentralInvariants {
    /// Compares `c_i` with `expected_i(u^i)` written in `u_names[i]`.
    pub fn matches(&self, expected: &[Expr]) -> Result<bool, PencilError> {
        if expected.len() != self.c.len() {
            return Ok(false);
        }
        for (i, e) in expected.iter().enumerate() {
            let sub = e.subs([(Atom::jet(&self.u_names[i], 0), self.diag.u[i].clone())])?;
            if !sub.add_ref(&-&self.c[i]).is_zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn describe(&self) -> Vec<String> {
        (0..self.c.len())
            .map(|i| match &self.c_of_u[i] {
                Some(e) => format!("c{}({}) = {}", i + 1, self.u_names[i], e),
                None => format!("c{} = {}  [as a function of the coordinates]", i + 1, self.c[i]),
            })
            .collect()
    }
}

fn is_param_factor(a: Atom) -> bool {
    let d = a.data();
    matches!(d.kind, AtomKind::Param { .. }) || d.deps.iter().all(|x| x.is_param())
}

/// Rewrites `c(w)` as `sum alpha_{k,pi} pi u^k` with rational `alpha`, integer
/// `k` in `-6..=6` and `pi` a parameter monomial occurring in `c`.
fn fit_in_coordinate(c: &Expr, u: &Expr, name: &str) -> Option<Expr> {
    if c.is_trivially_zero() {
        return Some(Expr::zero());
    }
    let mut pis: Vec<crate::expr::Monomial> = Vec::new();
    for (m, _) in c.terms() {
        let (p, _) = m.split(is_param_factor);
        if !pis.contains(&p) {
            pis.push(p);
        }
    }
    let uinv = u.inverse().ok()?;
    let mut powers: Vec<(i64, Expr)> = vec![(0, Expr::one())];
    let (mut up, mut dn) = (Expr::one(), Expr::one());
    for k in 1..=6 {
        up = up.mul_ref(u).canonical();
        dn = dn.mul_ref(&uinv).canonical();
        powers.push((k, up.clone()));
        powers.push((-k, dn.clone()));
    }
    let mut cols: Vec<(i64, crate::expr::Monomial, Expr)> = Vec::new();
    for (k, pk) in &powers {
        for p in &pis {
            cols.push((*k, p.clone(), pk.mul_monomial(p, &Q::one()).canonical()));
        }
    }
    let mut index: BTreeMap<crate::expr::Monomial, usize> = BTreeMap::new();
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut rhs: Vec<Q> = Vec::new();
    let mut slot = |m: &crate::expr::Monomial, rows: &mut Vec<SparseRow>, rhs: &mut Vec<Q>| -> usize {
        *index.entry(m.clone()).or_insert_with(|| {
            rows.push(SparseRow::new());
            rhs.push(Q::zero());
            rows.len() - 1
        })
    };
    for (col, (_, _, e)) in cols.iter().enumerate() {
        for (m, q) in e.terms() {
            let r = slot(m, &mut rows, &mut rhs);
            rows[r].insert(col, q.clone());
        }
    }
    let cc = c.canonical();
    for (m, q) in cc.terms() {
        let r = slot(m, &mut rows, &mut rhs);
        rhs[r] = q.clone();
    }
    let mut sys = SparseSystem::new(cols.len());
    for (r, b) in rows.into_iter().zip(rhs) {
        sys.push(r, Expr::constant(b));
    }
    let sol = sys.solve().ok()?;
    let sym = Atom::jet(name, 0);
    let mut out = Expr::zero();
    for (col, (k, p, _)) in cols.iter().enumerate() {
        let Some(a) = sol.particular[col].as_constant() else { continue };
        if a.is_zero() {
            continue;
        }
        let t = Expr::power(sym, crate::expr::Exponent::int(*k)).mul_monomial(p, &a);
        out = out.add_ref(&t);
    }
    let back = out.subs([(sym, u.clone())]).ok()?;
    back.add_ref(&-c).is_zero().then_some(out)
}

#[derive(Clone, Debug)]
pub struct Sl2Report {
    /// `(a, b, c, d)`.
    pub matrix: [Q; 4],
    /// `(old index, new index, law holds)`.
    pub pairs: Vec<(usize, usize, bool)>,
    pub holds: bool,
    pub old: CentralInvariants,
    pub new: CentralInvariants,
}

#[derive(Clone, Debug)]
pub struct SemisimpleReport {
    pub roots: Vec<f64>,
    pub separation: f64,
    pub semisimple: bool,
}

/// Levi-Civita connection and Riemann tensor of a contravariant metric; the
/// nonzero components `R^l_{ijk}` are returned.
pub fn flatness_check(g: &Matrix, vars: &[String]) -> Result<(bool, Vec<((usize, usize, usize, usize), Expr)>), PencilError> {
    let n = vars.len();
    let gl = inverse(g)?;
    let d = |e: &Expr, k: usize| e.diff(Atom::jet(&vars[k], 0));
    // gamma[k][i][j] = Gamma^k_{ij}
    let mut gamma = vec![vec![vec![Expr::zero(); n]; n]; n];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let mut acc = Expr::zero();
                for l in 0..n {
                    if g[k][l].is_trivially_zero() {
                        continue;
                    }
                    let s = d(&gl[j][l], i).add_ref(&d(&gl[i][l], j)).add_ref(&-d(&gl[i][j], l));
                    acc = acc.add_ref(&g[k][l].mul_ref(&s));
                }
                let v = acc.scale(&Q::new(1, 2)).canonical();
                gamma[k][i][j] = v.clone();
                gamma[k][j][i] = v;
            }
        }
    }
    let mut bad = Vec::new();
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                for k in (j + 1)..n {
                    let mut r = d(&gamma[l][i][k], j).add_ref(&-d(&gamma[l][i][j], k));
                    for m in 0..n {
                        r = r.add_ref(&gamma[l][j][m].mul_ref(&gamma[m][i][k]));
                        r = r.add_ref(&-gamma[l][k][m].mul_ref(&gamma[m][i][j]));
                    }
                    if !r.is_zero() {
                        bad.push(((l, i, j, k), r.canonical()));
                    }
                }
            }
        }
    }
    Ok((bad.is_empty(), bad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffop::DiffOp;
    use crate::expr::Scope;

    fn op(s: &Scope, n: usize, entries: &[(usize, usize, &[&str])]) -> MatOp {
        let mut o = MatOp::zero(n, n);
        for (i, j, c) in entries {
            *o.get_mut(*i, *j) = DiffOp::new(c.iter().map(|t| s.parse(t).unwrap()).collect());
        }
        o
    }

    fn kdv() -> PoissonPencil {
        let s = Scope::new(&["w"], &["c"]);
        let v = vec!["w".to_string()];
        let p1 = EpsBivector::new(v.clone(), vec![op(&s, 1, &[(0, 0, &["0", "1"])])]).unwrap();
        let p2 = EpsBivector::new(
            v,
            vec![op(&s, 1, &[(0, 0, &["1/2*w#1", "w"])]), MatOp::zero(1, 1), op(&s, 1, &[(0, 0, &["0", "0", "0", "3*c"])])],
        )
        .unwrap();
        let bp: BasePoint = [("w".to_string(), 1.0), ("c".to_string(), 0.5)].into_iter().collect();
        PoissonPencil::new(p1, p2, vec!["c".into()], bp).unwrap()
    }

    #[test]
    fn grading_rejects_wrong_degree() {
        let s = Scope::new(&["w"], &[] as &[&str]);
        let bad = op(&s, 1, &[(0, 0, &["0", "w#1"])]);
        assert!(matches!(EpsBivector::new(vec!["w".into()], vec![bad]), Err(PencilError::Grading { .. })));
    }

    #[test]
    fn kdv_invariants_and_swap() {
        let p = kdv();
        let ci = p.central_invariants().unwrap();
        assert_eq!(ci.c[0], Expr::param("c"));
        let (_, rep) = p.sl2_change(&Q::zero(), &Q::one(), &Q::one(), &Q::zero()).unwrap();
        assert!(rep.holds);
        assert!(p.semisimple_check().unwrap().semisimple);
    }

    #[test]
    fn gas_metric_flat_and_roots() {
        let s = Scope::new(&["u", "rho"], &["kappa"]);
        let g2 = vec![
            vec![s.parse("2*pow(rho,kappa-1)").unwrap(), s.parse("u").unwrap()],
            vec![s.parse("u").unwrap(), s.parse("2*rho/kappa").unwrap()],
        ];
        let vars = vec!["u".to_string(), "rho".to_string()];
        assert!(flatness_check(&g2, &vars).unwrap().0);
        let g1 = vec![vec![Expr::zero(), Expr::one()], vec![Expr::one(), Expr::zero()]];
        let r = quadratic_roots(&g1, &g2).unwrap();
        let expect = s.parse("u + 2*pow(rho,kappa/2)*pow(kappa,-1/2)").unwrap();
        assert!(r.iter().any(|e| e.equals(&expect)), "{} / {}", r[0], r[1]);
        // a curved metric
        let g = vec![vec![s.parse("u^2 + rho^2 + 1").unwrap(), Expr::zero()], vec![Expr::zero(), s.parse("u^2 + rho^2 + 1").unwrap()]];
        assert!(!flatness_check(&g, &vars).unwrap().0);
    }
}
