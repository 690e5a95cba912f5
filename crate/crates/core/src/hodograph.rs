//! Hyperbolic systems at the dispersionless level and their perturbed solutions:
//! symmetrizability, Tsarev's conditions, the hodograph method, quasi-Miura
//! pipelines on sampled solutions and a spectral reference integrator.

use crate::expr::{Atom, Expr, ExprError, Q};
use crate::miura::{evaluate_on_jets, fd_jets, MiuraError, MiuraTransform};
use crate::pencil::BasePoint;
use num_complex::Complex64;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HodographError {
    #[error("symmetrizer is degenerate")]
    DegenerateEta,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Jacobian of the hodograph equations is degenerate at the seed ({0:e})")]
    DegenerateSeed(f64),
    #[error("Newton iteration did not converge at the seed")]
    NoSeed,
    #[error("solution is not monotone at x = {x}, t = {t}")]
    NotMonotone { x: f64, t: f64 },
    #[error("reference integration became unstable at t = {0}")]
    Unstable(f64),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Miura(#[from] MiuraError),
}

fn point(vars: &[String], u: &[f64], params: &BasePoint) -> FxHashMap<Atom, f64> {
    let mut p: FxHashMap<Atom, f64> = params.iter().map(|(k, v)| (Atom::param(k), *v)).collect();
    for (v, x) in vars.iter().zip(u) {
        p.insert(Atom::jet(v, 0), *x);
    }
    p
}

// ---------------------------------------------------------------- symbolic checks

/// Result of [`symmetrizable_check`].
#[derive(Clone, Debug)]
pub struct Symmetrization {
    pub symmetric: bool,
    /// `p = 1/2 eta_ij v^i v^j`.
    pub p: Expr,
    /// Hamiltonian density with `phi^i = eta^{is} dh/dv^s`, when it could be integrated.
    pub h: Option<Expr>,
    /// Flux of `p`.
    pub q: Option<Expr>,
    /// Flux of `h`.
    pub f: Option<Expr>,
    /// Whether `p_t + q_x = 0` and `h_t + f_x = 0` hold identically on solutions.
    pub conserved: Option<bool>,
}

fn rational_inverse(m: &[Vec<Q>]) -> Option<Vec<Vec<Q>>> {
    let n = m.len();
    let mut a: Vec<Vec<Q>> = m.to_vec();
    let mut inv: Vec<Vec<Q>> = (0..n).map(|i| (0..n).map(|j| if i == j { Q::one() } else { Q::zero() }).collect()).collect();
    for c in 0..n {
        let p = (c..n).find(|&r| !a[r][c].is_zero())?;
        a.swap(c, p);
        inv.swap(c, p);
        let s = a[c][c].recip();
        for j in 0..n {
            a[c][j] = &a[c][j] * &s;
            inv[c][j] = &inv[c][j] * &s;
        }
        for r in 0..n {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c].clone();
                for j in 0..n {
                    a[r][j] = &a[r][j] - &(&f * &a[c][j]);
                    inv[r][j] = &inv[r][j] - &(&f * &inv[c][j]);
                }
            }
        }
    }
    Some(inv)
}

/// Antiderivative of `e` in the coordinate `var`, termwise. `None` when a term
/// involves `var` inside a logarithm or a derived atom.
pub fn integrate(e: &Expr, var: &str) -> Result<Option<Expr>, ExprError> {
    let a = Atom::jet(var, 0);
    let mut out = Expr::zero();
    for (m, c) in e.terms() {
        let mut rest = Vec::new();
        let mut ex = None;
        for &(b, x) in m.factors() {
            if b == a {
                ex = Some(x);
            } else if b.depends_on(a) {
                return Ok(None);
            } else {
                rest.push((b, x));
            }
        }
        let rest = Expr::term(crate::expr::Monomial::from_factors(rest), c.clone());
        let piece = match ex {
            None => rest.mul_ref(&Expr::atom(a)),
            Some(x) => {
                let x1 = x.add_int(1);
                if x1.is_zero() {
                    rest.mul_ref(&Expr::atom(Atom::log(a)))
                } else {
                    let k = crate::expr::exponent_expr(&x1).inverse()?;
                    rest.mul_ref(&Expr::power(a, x1)).mul_ref(&k)
                }
            }
        };
        out.add_assign_ref(&piece);
    }
    Ok(Some(out.canonical()))
}

/// Potential `h` with `dh/dv^i = g[i]`, or `None` if `g` is not a gradient or
/// cannot be integrated termwise.
pub fn potential(g: &[Expr], vars: &[String]) -> Result<Option<Expr>, ExprError> {
    let mut h = Expr::zero();
    for (i, v) in vars.iter().enumerate() {
        let r = g[i].add_ref(&-h.diff(Atom::jet(v, 0))).canonical();
        if vars[..i].iter().any(|w| r.depends_on(Atom::jet(w, 0))) {
            return Ok(None);
        }
        match integrate(&r, v)? {
            Some(p) => h = h.add_ref(&p),
            None => return Ok(None),
        }
    }
    let ok = vars.iter().enumerate().all(|(i, v)| h.diff(Atom::jet(v, 0)).add_ref(&-&g[i]).is_zero());
    Ok(if ok { Some(h.canonical()) } else { None })
}

/// Checks `eta_is dphi^s/dv^j = eta_js dphi^s/dv^i` and builds the conserved
/// quantities `p, q` and `h, f` of the weakly symmetrizable system `v_t + phi(v)_x = 0`.
pub fn symmetrizable_check(phi: &[Expr], vars: &[String], eta: &[Vec<Q>]) -> Result<Symmetrization, HodographError> {
    let n = vars.len();
    if phi.len() != n || eta.len() != n || eta.iter().any(|r| r.len() != n) {
        return Err(HodographError::Dimension(format!("{n} variables")));
    }
    let eta_inv = rational_inverse(eta).ok_or(HodographError::DegenerateEta)?;
    let at = |v: &String| Atom::jet(v, 0);
    let dphi: Vec<Vec<Expr>> = phi.iter().map(|f| vars.iter().map(|v| f.diff(at(v))).collect()).collect();
    let lowered = |i: usize, j: usize| {
        let mut s = Expr::zero();
        for (k, row) in dphi.iter().enumerate() {
            s.add_scaled(&row[j], &eta[i][k]);
        }
        s
    };
    let mut symmetric = true;
    for i in 0..n {
        for j in i + 1..n {
            if !lowered(i, j).add_ref(&-lowered(j, i)).is_zero() {
                symmetric = false;
            }
        }
    }
    let mut p = Expr::zero();
    for i in 0..n {
        for j in 0..n {
            p.add_scaled(&Expr::jet(&vars[i], 0).mul_ref(&Expr::jet(&vars[j], 0)), &(&eta[i][j] * &Q::new(1, 2)));
        }
    }
    let p = p.canonical();
    if !symmetric {
        return Ok(Symmetrization { symmetric, p, h: None, q: None, f: None, conserved: None });
    }
    // dh/dv^s = eta_si phi^i
    let grad: Vec<Expr> = (0..n)
        .map(|s| {
            let mut g = Expr::zero();
            for (i, f) in phi.iter().enumerate() {
                g.add_scaled(f, &eta[s][i]);
            }
            g.canonical()
        })
        .collect();
    let Some(h) = potential(&grad, vars)? else {
        return Ok(Symmetrization { symmetric, p, h: None, q: None, f: None, conserved: None });
    };
    let mut q = -&h;
    for (i, v) in vars.iter().enumerate() {
        q = q.add_ref(&Expr::jet(v, 0).mul_ref(&grad[i]));
    }
    let q = q.canonical();
    let mut f = Expr::zero();
    for i in 0..n {
        for j in 0..n {
            f.add_assign_ref(&grad[i].mul_ref(&grad[j]).scale(&(&eta_inv[i][j] * &Q::new(1, 2))));
        }
    }
    let f = f.canonical();
    // a_t + b_x = 0 on solutions iff da/dv^i dphi^i/dv^j = db/dv^j
    let conserves = |a: &Expr, b: &Expr| {
        (0..n).all(|j| {
            let mut s = -b.diff(at(&vars[j]));
            for (i, v) in vars.iter().enumerate() {
                s = s.add_ref(&a.diff(at(v)).mul_ref(&dphi[i][j]));
            }
            s.is_zero()
        })
    };
    let conserved = conserves(&p, &q) && conserves(&h, &f);
    Ok(Symmetrization { symmetric, p, h: Some(h), q: Some(q), f: Some(f), conserved: Some(conserved) })
}

/// `d_k V^i - (V^k - V^i) d_k log sqrt(g_ii)` for `i != k`, flattened over pairs.
fn tsarev_residuals(v: &[Expr], g: &[Expr], vars: &[String]) -> Result<Vec<Expr>, ExprError> {
    let n = vars.len();
    let mut out = Vec::new();
    for i in 0..n {
        let ginv = g[i].inverse()?;
        for k in 0..n {
            if k == i {
                continue;
            }
            let a = Atom::jet(&vars[k], 0);
            let dlog = g[i].diff(a).mul_ref(&ginv).scale(&Q::new(1, 2));
            let r = v[i].diff(a).add_ref(&-v[k].add_ref(&-&v[i]).mul_ref(&dlog));
            out.push(r.canonical());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TsarevReport {
    /// The conditions hold for `g`.
    pub holds: bool,
    /// They also hold for `g_ii / (u^i - lambda)` with `lambda` symbolic.
    pub pencil_holds: bool,
}

/// Tsarev's conditions for the diagonal system `u^i_t + V^i(u) u^i_x = 0` with the
/// diagonal metric `g`.
pub fn tsarev_check(v: &[Expr], g: &[Expr], vars: &[String]) -> Result<TsarevReport, HodographError> {
    let n = vars.len();
    if v.len() != n || g.len() != n {
        return Err(HodographError::Dimension(format!("{n} variables")));
    }
    let holds = tsarev_residuals(v, g, vars)?.iter().all(|r| r.is_zero());
    let lambda = Expr::param("lambda");
    let gl: Vec<Expr> = (0..n)
        .map(|i| Ok(g[i].mul_ref(&Expr::jet(&vars[i], 0).add_ref(&-&lambda).inverse()?)))
        .collect::<Result<_, ExprError>>()?;
    let pencil_holds = tsarev_residuals(v, &gl, vars)?.iter().all(|r| r.is_zero());
    Ok(TsarevReport { holds, pencil_holds })
}

/// `dW^i/du^j - (dV^i/du^j)/(V^i - V^j) (W^i - W^j)` for `i != j`.
pub fn commuting_flow_residuals(v: &[Expr], w: &[Expr], vars: &[String]) -> Result<Vec<Expr>, ExprError> {
    let n = vars.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = Atom::jet(&vars[j], 0);
            let den = v[i].add_ref(&-&v[j]).inverse()?;
            let r = w[i].diff(a).add_ref(&-v[i].diff(a).mul_ref(&den).mul_ref(&w[i].add_ref(&-&w[j])));
            out.push(r.canonical());
        }
    }
    Ok(out)
}

/// Strict hyperbolicity of `v_t + A(v) v_x = 0` at a point: real, pairwise distinct
/// eigenvalues of the numeric matrix `a`. Returns the sorted eigenvalues.
pub fn strictly_hyperbolic(a: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let ev = m.complex_eigenvalues();
    let scale = a.iter().flatten().fold(1.0f64, |s, x| s.max(x.abs()));
    if ev.iter().any(|z| z.im.abs() > 1e-12 * scale) {
        return None;
    }
    let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
    re.sort_by(|x, y| x.partial_cmp(y).unwrap());
    if re.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-10 * scale) {
        return None;
    }
    Some(re)
}

// ---------------------------------------------------------------- numeric functions

type VecFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type MatFn = dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync;

/// A numeric map `R^n -> R^n` with its Jacobian.
#[derive(Clone)]
pub struct NumMap {
    pub n: usize,
    f: Arc<VecFn>,
    jac: Arc<MatFn>,
}

impl NumMap {
    pub fn new(
        n: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac: impl Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    ) -> NumMap {
        NumMap { n, f: Arc::new(f), jac: Arc::new(jac) }
    }

    /// Components given as expressions in `vars`; the Jacobian is differentiated symbolically.
    pub fn from_exprs(exprs: &[Expr], vars: &[String], params: &BasePoint) -> Result<NumMap, HodographError> {
        let n = vars.len();
        if exprs.len() != n {
            return Err(HodographError::Dimension(format!("{} components for {n} variables", exprs.len())));
        }
        let jac: Vec<Vec<Expr>> = exprs.iter().map(|e| vars.iter().map(|v| e.diff(Atom::jet(v, 0))).collect()).collect();
        let (e1, v1, p1) = (exprs.to_vec(), vars.to_vec(), params.clone());
        let (v2, p2) = (vars.to_vec(), params.clone());
        // evaluation failures (outside the domain) surface as NaN
        Ok(NumMap::new(
            n,
            move |u| {
                let pt = point(&v1, u, &p1);
                e1.iter().map(|e| e.eval(&pt).unwrap_or(f64::NAN)).collect()
            },
            move |u| {
                let pt = point(&v2, u, &p2);
                jac.iter().map(|r| r.iter().map(|e| e.eval(&pt).unwrap_or(f64::NAN)).collect()).collect()
            },
        ))
    }

    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        (self.f)(u)
    }

    pub fn jacobian(&self, u: &[f64]) -> Vec<Vec<f64>> {
        (self.jac)(u)
    }
}

fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let det = m.determinant();
    let lu = m.lu();
    let x = lu.solve(&nalgebra::DVector::from_column_slice(b))?;
    Some((x.iter().copied().collect(), det))
}

// ---------------------------------------------------------------- hodograph method

/// Threshold on `|det(t dV + dW)|` below which a point counts as the catastrophe boundary.
pub const CATASTROPHE_THRESHOLD: f64 = 1e-10;

/// Solution of `x = V^i(u) t + W^i(u)` sampled on a grid.
#[derive(Clone, Debug)]
pub struct HodographData {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `u[k][j]`: solution at `(xs[j], ts[k])`, `None` beyond the catastrophe.
    pub u: Vec<Vec<Option<Vec<f64>>>>,
    /// Max-norm residual of the hodograph equations per point (0 where undefined).
    pub residual: Vec<Vec<f64>>,
    /// Points `(x, t)` approximating the boundary where the Jacobian degenerates.
    pub boundary: Vec<(f64, f64)>,
}

impl HodographData {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().flatten().fold(0.0, |a: f64, b| a.max(*b))
    }

    pub fn is_complete(&self) -> bool {
        self.u.iter().flatten().all(|p| p.is_some())
    }

    /// Component `i` along the time row `k`.
    pub fn row(&self, k: usize, i: usize) -> Option<Vec<f64>> {
        self.u[k].iter().map(|p| p.as_ref().map(|u| u[i])).collect()
    }

    /// CSV with columns `x, t, u1.., residual`.
    pub fn to_csv(&self) -> String {
        let n = self.u.iter().flatten().flatten().next().map(|u| u.len()).unwrap_or(0);
        let mut s = String::from("x,t");
        for i in 1..=n {
            let _ = write!(s, ",u{i}");
        }
        s.push_str(",residual\n");
        for (k, t) in self.ts.iter().enumerate() {
            for (j, x) in self.xs.iter().enumerate() {
                if let Some(u) = &self.u[k][j] {
                    let _ = write!(s, "{x:.17e},{t:.17e}");
                    for c in u {
                        let _ = write!(s, ",{c:.17e}");
                    }
                    let _ = writeln!(s, ",{:.3e}", self.residual[k][j]);
                }
            }
        }
        s
    }
}

struct Newton<'a> {
    v: &'a NumMap,
    w: &'a NumMap,
}

impl Newton<'_> {
    fn residual(&self, x: f64, t: f64, u: &[f64]) -> Vec<f64> {
        let vv = self.v.eval(u);
        let ww = self.w.eval(u);
        (0..u.len()).map(|i| vv[i] * t + ww[i] - x).collect()
    }

    /// Newton iteration from `u0`; returns the solution, residual and final determinant.
    fn solve(&self, x: f64, t: f64, u0: &[f64]) -> Option<(Vec<f64>, f64, f64)> {
        let mut u = u0.to_vec();
        let n = u.len();
        for _ in 0..60 {
            let r = self.residual(x, t, &u);
            let dv = self.v.jacobian(&u);
            let dw = self.w.jacobian(&u);
            let j: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| t * dv[a][b] + dw[a][b]).collect()).collect();
            let (du, det) = solve_dense(&j, &r)?;
            if !det.is_finite() || det.abs() < CATASTROPHE_THRESHOLD {
                return None;
            }
            let step = du.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for i in 0..n {
                u[i] -= du[i];
            }
            if !u.iter().all(|x| x.is_finite()) {
                return None;
            }
            let scale = u.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            if step <= 1e-15 * scale {
                let r = self.residual(x, t, &u);
                let res = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                return Some((u, res, det));
            }
        }
        let r = self.residual(x, t, &u);
        let res = r.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let scale = 1.0 + x.abs();
        (res < 1e-13 * scale).then(|| {
            let dv = self.v.jacobian(&u);
            let dw = self.w.jacobian(&u);
            let j: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| t * dv[a][b] + dw[a][b]).collect()).collect();
            let det = nalgebra::DMatrix::from_fn(n, n, |a, b| j[a][b]).determinant();
            (u, res, det)
        })
    }

    /// Continuation along a straight path in `(x, t)`, halving steps on failure.
    fn continue_to(&self, from: (f64, f64), u: &[f64], to: (f64, f64)) -> Option<(Vec<f64>, f64)> {
        let mut s = 0.0f64;
        let mut h = 1.0f64;
        let mut u = u.to_vec();
        let mut res = 0.0;
        while s < 1.0 {
            let s1 = (s + h).min(1.0);
            let x = from.0 + s1 * (to.0 - from.0);
            let t = from.1 + s1 * (to.1 - from.1);
            match self.solve(x, t, &u) {
                Some((v, r, _)) => {
                    u = v;
                    res = r;
                    s = s1;
                    h = (h * 2.0).min(1.0);
                }
                None => {
                    h /= 2.0;
                    if h < 1e-6 {
                        return None;
                    }
                }
            }
        }
        Some((u, res))
    }
}

/// Solves `x = V^i(u) t + W^i(u)` on the grid by Newton continuation from the seed
/// `(x0, t0, u0)`. Rows are swept outward in time from the row nearest `t0`; points
/// where the continuation fails because the Jacobian degenerates are left empty and
/// the boundary time is located by bisection.
pub fn solve_hodograph(
    v: &NumMap,
    w: &NumMap,
    xs: &[f64],
    ts: &[f64],
    seed: (f64, f64, &[f64]),
) -> Result<HodographData, HodographError> {
    let n = v.n;
    if w.n != n || seed.2.len() != n {
        return Err(HodographError::Dimension(format!("{n} components")));
    }
    if xs.is_empty() || ts.is_empty() {
        return Err(HodographError::Input("empty grid".into()));
    }
    let nw = Newton { v, w };
    let (x0, t0) = (seed.0, seed.1);
    let (u0, _, det) = nw.solve(x0, t0, seed.2).ok_or(HodographError::NoSeed)?;
    if det.abs() < CATASTROPHE_THRESHOLD {
        return Err(HodographError::DegenerateSeed(det));
    }
    let nearest = |g: &[f64], a: f64| (0..g.len()).min_by(|&i, &j| (g[i] - a).abs().partial_cmp(&(g[j] - a).abs()).unwrap()).unwrap();
    let (jx, kt) = (nearest(xs, x0), nearest(ts, t0));
    let mut u: Vec<Vec<Option<Vec<f64>>>> = vec![vec![None; xs.len()]; ts.len()];
    let mut res = vec![vec![0.0; xs.len()]; ts.len()];
    let (us, r) = nw.continue_to((x0, t0), &u0, (xs[jx], ts[kt])).ok_or(HodographError::NoSeed)?;
    u[kt][jx] = Some(us);
    res[kt][jx] = r;
    // seed row, sweeping left and right
    for dir in [-1i64, 1] {
        let mut j = jx as i64 + dir;
        while j >= 0 && (j as usize) < xs.len() {
            let jp = (j - dir) as usize;
            let Some(prev) = u[kt][jp].clone() else { break };
            if let Some((s, r)) = nw.continue_to((xs[jp], ts[kt]), &prev, (xs[j as usize], ts[kt])) {
                u[kt][j as usize] = Some(s);
                res[kt][j as usize] = r;
            }
            j += dir;
        }
    }
    let mut boundary = Vec::new();
    for dir in [-1i64, 1] {
        let mut k = kt as i64 + dir;
        while k >= 0 && (k as usize) < ts.len() {
            let kp = (k - dir) as usize;
            let kk = k as usize;
            let prev_row = u[kp].clone();
            let row: Vec<(Option<Vec<f64>>, f64, Option<f64>)> = (0..xs.len())
                .into_par_iter()
                .map(|j| {
                    let Some(p) = &prev_row[j] else { return (None, 0.0, None) };
                    match nw.continue_to((xs[j], ts[kp]), p, (xs[j], ts[kk])) {
                        Some((s, r)) => (Some(s), r, None),
                        None => {
                            // bisection on t for the boundary
                            let (mut lo, mut hi) = (ts[kp], ts[kk]);
                            let mut ul = p.clone();
                            for _ in 0..40 {
                                let mid = 0.5 * (lo + hi);
                                match nw.continue_to((xs[j], lo), &ul, (xs[j], mid)) {
                                    Some((s, _)) => {
                                        ul = s;
                                        lo = mid;
                                    }
                                    None => hi = mid,
                                }
                            }
                            (None, 0.0, Some(0.5 * (lo + hi)))
                        }
                    }
                })
                .collect();
            for (j, (s, r, b)) in row.into_iter().enumerate() {
                u[kk][j] = s;
                res[kk][j] = r;
                if let Some(tb) = b {
                    boundary.push((xs[j], tb));
                }
            }
            k += dir;
        }
    }
    Ok(HodographData { xs: xs.to_vec(), ts: ts.to_vec(), u, residual: res, boundary })
}

/// Centered finite-difference weights of order 8 for the first derivative on a uniform grid.
const D1_8: [f64; 9] = [1.0 / 280.0, -4.0 / 105.0, 1.0 / 5.0, -4.0 / 5.0, 0.0, 4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Max-norm residual of `u^i_t + V^i(u) u^i_x` over interior points of a uniform
/// grid where the nine-point stencils in `x` and `t` are all defined.
pub fn pde_residual(hd: &HodographData, v: &NumMap) -> Option<f64> {
    let (nx, nt) = (hd.xs.len(), hd.ts.len());
    if nx < 9 || nt < 9 {
        return None;
    }
    let hx = hd.xs[1] - hd.xs[0];
    let ht = hd.ts[1] - hd.ts[0];
    let mut worst = 0.0f64;
    let mut any = false;
    for k in 4..nt - 4 {
        for j in 4..nx - 4 {
            let Some(u) = &hd.u[k][j] else { continue };
            let xs: Option<Vec<&Vec<f64>>> = (0..9).map(|d| hd.u[k][j + d - 4].as_ref()).collect();
            let tsr: Option<Vec<&Vec<f64>>> = (0..9).map(|d| hd.u[k + d - 4][j].as_ref()).collect();
            let (Some(xs), Some(tsr)) = (xs, tsr) else { continue };
            let speeds = v.eval(u);
            for i in 0..u.len() {
                let ux: f64 = (0..9).map(|d| D1_8[d] * xs[d][i]).sum::<f64>() / hx;
                let ut: f64 = (0..9).map(|d| D1_8[d] * tsr[d][i]).sum::<f64>() / ht;
                worst = worst.max((ut + speeds[i] * ux).abs());
                any = true;
            }
        }
    }
    any.then_some(worst)
}

// ---------------------------------------------------------------- one-component jets

/// Truncated power series `sum a_k s^k`.
pub mod series {
    pub fn mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n + 1];
        for (i, x) in a.iter().enumerate().take(n + 1) {
            for (j, y) in b.iter().enumerate().take(n + 1 - i) {
                c[i + j] += x * y;
            }
        }
        c
    }

    /// `a^alpha` for `a[0] > 0`.
    pub fn pow(a: &[f64], alpha: f64, n: usize) -> Vec<f64> {
        let mut b = vec![0.0; n + 1];
        b[0] = a[0].powf(alpha);
        for k in 1..=n {
            let mut s = 0.0;
            for j in 1..=k.min(a.len() - 1) {
                s += ((alpha + 1.0) * j as f64 - k as f64) * a[j] * b[k - j];
            }
            b[k] = s / (k as f64 * a[0]);
        }
        b
    }

    /// Antiderivative with constant term `c0`.
    pub fn integrate(a: &[f64], c0: f64, n: usize) -> Vec<f64> {
        let mut b = vec![0.0; n + 1];
        b[0] = c0;
        for k in 1..=n {
            b[k] = a.get(k - 1).copied().unwrap_or(0.0) / k as f64;
        }
        b
    }

    /// Compositional inverse of `a` with `a[0] = 0`, `a[1] != 0`.
    pub fn revert(a: &[f64], n: usize) -> Vec<f64> {
        let mut b = vec![0.0; n + 1];
        if n == 0 {
            return b;
        }
        b[1] = 1.0 / a[1];
        for m in 2..=n {
            // coefficient of h^m in a(b(h)) with b[m] = 0
            let mut pw = b.clone();
            let mut c = a[1] * pw[m];
            for ak in a.iter().take(m + 1).skip(2) {
                pw = mul(&pw, &b, n);
                c += ak * pw[m];
            }
            b[m] = -c / a[1];
        }
        b
    }
}

/// A scalar function given by its Taylor coefficients `f^(k)(v)/k!` at any point.
#[derive(Clone)]
pub struct Taylor1(Arc<dyn Fn(f64, usize) -> Vec<f64> + Send + Sync>);

impl Taylor1 {
    pub fn new(f: impl Fn(f64, usize) -> Vec<f64> + Send + Sync + 'static) -> Taylor1 {
        Taylor1(Arc::new(f))
    }

    /// From an expression in the single coordinate `var`; derivatives are symbolic.
    pub fn from_expr(e: &Expr, var: &str, params: &BasePoint, order: usize) -> Taylor1 {
        let a = Atom::jet(var, 0);
        let mut ders = vec![e.clone()];
        for k in 1..=order {
            let d = ders[k - 1].diff(a).canonical();
            ders.push(d);
        }
        let (var, params) = (var.to_string(), params.clone());
        Taylor1::new(move |v, n| {
            let pt = point(std::slice::from_ref(&var), &[v], &params);
            let mut fact = 1.0;
            (0..=n)
                .map(|k| {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    ders.get(k).map(|d| d.eval(&pt).unwrap_or(f64::NAN) / fact).unwrap_or(f64::NAN)
                })
                .collect()
        })
    }

    /// `arcsin`, the hodograph function of `sin` data on `(-pi/2, pi/2)`.
    pub fn arcsin() -> Taylor1 {
        Taylor1::new(|v, n| {
            let g = [1.0 - v * v, -2.0 * v, -1.0];
            let d = series::pow(&g, -0.5, n);
            series::integrate(&d, v.asin(), n)
        })
    }

    pub fn identity() -> Taylor1 {
        Taylor1::new(|v, n| {
            let mut c = vec![0.0; n + 1];
            c[0] = v;
            if n >= 1 {
                c[1] = 1.0;
            }
            c
        })
    }

    /// `s x + a sin x`.
    pub fn linear_plus_sin(s: f64, a: f64) -> Taylor1 {
        Taylor1::new(move |x, n| {
            let (sn, cs) = x.sin_cos();
            let cyc = [sn, cs, -sn, -cs];
            let mut fact = 1.0;
            (0..=n)
                .map(|k| {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    let lin = match k {
                        0 => s * x,
                        1 => s,
                        _ => 0.0,
                    };
                    lin + a * cyc[k % 4] / fact
                })
                .collect()
        })
    }

    /// Inverse of an increasing function on the whole line.
    pub fn inverse_of(f: Taylor1) -> Taylor1 {
        Taylor1::new(move |v, n| {
            // safeguarded Newton for f(x) = v
            let (mut lo, mut hi) = (-1.0f64, 1.0f64);
            while f.value(lo) > v {
                lo *= 2.0;
            }
            while f.value(hi) < v {
                hi *= 2.0;
            }
            let mut x = 0.5 * (lo + hi);
            for _ in 0..200 {
                let c = f.coeffs(x, 1);
                let r = c[0] - v;
                if r > 0.0 {
                    hi = x;
                } else {
                    lo = x;
                }
                let mut nx = x - r / c[1];
                if !(nx > lo && nx < hi) {
                    nx = 0.5 * (lo + hi);
                }
                if (nx - x).abs() <= 1e-16 * (1.0 + x.abs()) {
                    x = nx;
                    break;
                }
                x = nx;
            }
            let mut a = f.coeffs(x, n);
            a[0] = 0.0;
            let mut b = series::revert(&a, n);
            b[0] = x;
            b
        })
    }

    pub fn coeffs(&self, v: f64, n: usize) -> Vec<f64> {
        (self.0)(v, n)
    }

    pub fn value(&self, v: f64) -> f64 {
        self.coeffs(v, 0)[0]
    }

    pub fn to_map(&self) -> NumMap {
        let (a, b) = (self.clone(), self.clone());
        NumMap::new(1, move |u| vec![a.value(u[0])], move |u| vec![vec![b.coeffs(u[0], 1)[1]]])
    }
}

/// Derivatives `d^k v/dx^k`, `k = 0..=order`, of the solution of `x = V(v) t + W(v)`
/// through `v`, by reverting the Taylor series of the right-hand side.
pub fn hodograph_jets_1d(v_fn: &Taylor1, w_fn: &Taylor1, t: f64, v: f64, order: usize) -> Vec<f64> {
    let a = v_fn.coeffs(v, order);
    let b = w_fn.coeffs(v, order);
    let mut x: Vec<f64> = (0..=order).map(|k| t * a[k] + b[k]).collect();
    x[0] = 0.0;
    let s = series::revert(&x, order);
    let mut out = Vec::with_capacity(order + 1);
    let mut fact = 1.0;
    for (k, c) in s.iter().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        out.push(if k == 0 { v } else { c * fact });
    }
    out
}

// ---------------------------------------------------------------- perturbed solutions

/// Samples `w(x, t; eps)` of the reducing-transformation pipeline along each time row:
/// hodograph solution, then the transformation (new variables = hodograph
/// variables), then the optional coordinate map `q` (expressions in the old
/// variables of the transform).
pub struct Pipeline<'a> {
    pub transform: &'a MiuraTransform,
    /// Values of the symbolic parameters of the transform and of `q`.
    pub params: BasePoint,
    pub q: Option<&'a [Expr]>,
}

/// One-component jets, exact; rows outside the solved region are `None`.
pub enum Jets<'a> {
    /// Exact jets of a one-component solution through the series of `V` and `W`.
    Exact { v: &'a Taylor1, w: &'a Taylor1 },
    /// Finite-difference jets from the sampled rows.
    Sampled,
}

impl Pipeline<'_> {
    fn jets_row(&self, hd: &HodographData, k: usize, jets: &Jets) -> Result<Vec<Vec<Vec<f64>>>, HodographError> {
        let t = self.transform;
        let m = (0..=t.top()).map(|k| t.jet_order(k)).max().unwrap_or(0) as usize;
        let n = t.n();
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|i| hd.row(k, i).ok_or_else(|| HodographError::Input(format!("row t = {} leaves the solved region", hd.ts[k]))))
            .collect::<Result<_, _>>()?;
        let out = match jets {
            Jets::Exact { v, w } => {
                if n != 1 {
                    return Err(HodographError::Dimension("exact jets need one component".into()));
                }
                let per_point: Vec<Vec<f64>> = cols[0].iter().map(|&u| hodograph_jets_1d(v, w, hd.ts[k], u, m)).collect();
                vec![(0..=m).map(|d| per_point.iter().map(|p| p[d]).collect()).collect()]
            }
            Jets::Sampled => cols.iter().map(|c| fd_jets(c, &hd.xs, m, m + 9)).collect(),
        };
        for i in 0..n {
            if m >= 1 {
                for (j, x) in out[i][1].iter().enumerate() {
                    if x.abs() < 1e-12 {
                        return Err(HodographError::NotMonotone { x: hd.xs[j], t: hd.ts[k] });
                    }
                }
            }
        }
        Ok(out)
    }

    /// `w[i][p]` along the time row `k` at deformation parameter `eps`.
    pub fn row(&self, hd: &HodographData, k: usize, eps: f64, jets: &Jets) -> Result<Vec<Vec<f64>>, HodographError> {
        let j = self.jets_row(hd, k, jets)?;
        let w = evaluate_on_jets(self.transform, &j, &self.params, eps, &hd.xs)?;
        match self.q {
            None => Ok(w),
            Some(q) => {
                let vars = &self.transform.old_vars;
                let mut out = vec![vec![0.0; hd.xs.len()]; q.len()];
                for p in 0..hd.xs.len() {
                    let u: Vec<f64> = w.iter().map(|c| c[p]).collect();
                    let pt = point(vars, &u, &self.params);
                    for (i, e) in q.iter().enumerate() {
                        out[i][p] = e.eval(&pt)?;
                    }
                }
                Ok(out)
            }
        }
    }
}

// ---------------------------------------------------------------- reference integrator

/// `w_t + a w w_x + b w_xxx = 0` for `w = slope * x + periodic` at `t = 0`. The
/// solution keeps the form `w = g(t) x + q(x / L(t), t)` with `L = 1 + a slope t`,
/// `g = slope / L` and `q` periodic of period `length`, solving
/// `q_t + a g q + (a / L) q q_xi + (b / L^3) q_xixixi = 0`.
#[derive(Clone, Copy, Debug)]
pub struct KdvEquation {
    pub a: f64,
    pub b: f64,
    pub length: f64,
    pub slope: f64,
}

impl KdvEquation {
    fn stretch(&self, t: f64) -> f64 {
        1.0 + self.a * self.slope * t
    }

    /// `int_0^t L^-3`.
    fn dispersion_time(&self, t: f64) -> f64 {
        let s = self.a * self.slope;
        if s == 0.0 {
            t
        } else {
            let l = self.stretch(t);
            (1.0 - 1.0 / (l * l)) / (2.0 * s)
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceRun {
    /// Periodic part `q` on the reference grid `xi_j`.
    pub q: Vec<f64>,
    /// `L(t)` and `g(t)`: the sample `j` sits at `x = L xi_j` with `w = g x + q_j`.
    pub stretch: f64,
    pub slope: f64,
    /// Max difference between the run and the run with half the time step.
    pub self_convergence: f64,
    /// Relative drift of the invariants `L int q` and `L^2 int q^2/2`.
    pub mass_drift: f64,
    pub momentum_drift: f64,
    pub steps: usize,
}

impl ReferenceRun {
    /// Physical points and values for the reference grid `xi`.
    pub fn physical(&self, xi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = xi.iter().map(|x| self.stretch * x).collect();
        let w = xs.iter().zip(&self.q).map(|(x, q)| self.slope * x + q).collect();
        (xs, w)
    }
}

struct Spectral {
    n: usize,
    k: Vec<f64>,
    fft: Arc<dyn rustfft::Fft<f64>>,
    ifft: Arc<dyn rustfft::Fft<f64>>,
    dealias: Vec<bool>,
}

impl Spectral {
    fn new(n: usize, length: f64) -> Spectral {
        let mut planner = FftPlanner::new();
        let k: Vec<f64> = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                if n.is_multiple_of(2) && j == n / 2 {
                    0.0
                } else {
                    2.0 * PI * m / length
                }
            })
            .collect();
        let kmax = 2.0 * PI * (n / 2) as f64 / length;
        let dealias = k.iter().map(|x| x.abs() <= 2.0 / 3.0 * kmax).collect();
        Spectral { n, k, fft: planner.plan_fft_forward(n), ifft: planner.plan_fft_inverse(n), dealias }
    }

    fn forward(&self, w: &[f64]) -> Vec<Complex64> {
        let mut b: Vec<Complex64> = w.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.fft.process(&mut b);
        b
    }

    fn inverse(&self, h: &[Complex64]) -> Vec<f64> {
        let mut b = h.to_vec();
        self.ifft.process(&mut b);
        let s = 1.0 / self.n as f64;
        b.iter().map(|z| z.re * s).collect()
    }

    fn project(&self, h: &mut [Complex64]) {
        for (j, z) in h.iter_mut().enumerate() {
            if !self.dealias[j] {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Fourier transform of `-a (q^2/2)_xi`, dealiased.
    fn nonlinear(&self, qh: &[Complex64], a: f64) -> Vec<Complex64> {
        let q = self.inverse(qh);
        let sq: Vec<f64> = q.iter().map(|x| 0.5 * x * x).collect();
        let mut h = self.forward(&sq);
        for (j, z) in h.iter_mut().enumerate() {
            *z = if self.dealias[j] { Complex64::new(0.0, -a * self.k[j]) * *z } else { Complex64::new(0.0, 0.0) };
        }
        h
    }
}

fn if_rk4(sp: &Spectral, eq: &KdvEquation, q0: &[f64], t_end: f64, steps: usize) -> Result<Vec<f64>, HodographError> {
    let dt = t_end / steps as f64;
    let n = sp.n;
    // exact propagator of the linear part between two times
    let prop = |t0: f64, t1: f64| -> Vec<Complex64> {
        let damp = eq.stretch(t0) / eq.stretch(t1);
        let tau = eq.dispersion_time(t1) - eq.dispersion_time(t0);
        sp.k.iter().map(|k| Complex64::from_polar(damp, eq.b * k * k * k * tau)).collect()
    };
    let mut qh = sp.forward(q0);
    sp.project(&mut qh);
    for s in 0..steps {
        let t0 = s as f64 * dt;
        let (th, t1) = (t0 + dt / 2.0, t0 + dt);
        let (e_half, e_full, e_rest) = (prop(t0, th), prop(t0, t1), prop(th, t1));
        let (a0, ah, a1) = (eq.a / eq.stretch(t0), eq.a / eq.stretch(th), eq.a / eq.stretch(t1));
        let k1 = sp.nonlinear(&qh, a0);
        let a: Vec<Complex64> = (0..n).map(|j| e_half[j] * (qh[j] + k1[j] * (dt / 2.0))).collect();
        let k2 = sp.nonlinear(&a, ah);
        let b: Vec<Complex64> = (0..n).map(|j| e_half[j] * qh[j] + k2[j] * (dt / 2.0)).collect();
        let k3 = sp.nonlinear(&b, ah);
        let c: Vec<Complex64> = (0..n).map(|j| e_full[j] * qh[j] + e_rest[j] * k3[j] * dt).collect();
        let k4 = sp.nonlinear(&c, a1);
        for j in 0..n {
            qh[j] = e_full[j] * qh[j] + (e_full[j] * k1[j] + e_rest[j] * (k2[j] + k3[j]) * 2.0 + k4[j]) * (dt / 6.0);
        }
        if s % 64 == 0 && qh.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(HodographError::Unstable(t0));
        }
    }
    let q = sp.inverse(&qh);
    if q.iter().any(|x| !x.is_finite()) {
        return Err(HodographError::Unstable(t_end));
    }
    Ok(q)
}

/// Integrates `eq` from the periodic part `q0` (uniform grid over one period) to
/// `t_end`: Fourier collocation with 2/3 dealiasing, integrating-factor RK4 in time.
/// The run is repeated with half the step to report self-convergence.
pub fn integrate_reference(eq: &KdvEquation, q0: &[f64], t_end: f64, steps: usize) -> Result<ReferenceRun, HodographError> {
    if q0.len() < 8 || steps == 0 {
        return Err(HodographError::Input("grid or step count too small".into()));
    }
    if eq.stretch(t_end) <= 0.0 {
        return Err(HodographError::Input("the linear part collapses before t_end".into()));
    }
    let sp = Spectral::new(q0.len(), eq.length);
    let (fine, coarse) = rayon::join(|| if_rk4(&sp, eq, q0, t_end, 2 * steps), || if_rk4(&sp, eq, q0, t_end, steps));
    let (q, coarse) = (fine?, coarse?);
    let self_convergence = q.iter().zip(&coarse).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let dxi = eq.length / q0.len() as f64;
    let mut h0 = sp.forward(q0);
    sp.project(&mut h0);
    let q0p = sp.inverse(&h0);
    let l = eq.stretch(t_end);
    let mass = |v: &[f64], l: f64| l * v.iter().sum::<f64>() * dxi;
    let mom = |v: &[f64], l: f64| l * l * v.iter().map(|x| 0.5 * x * x).sum::<f64>() * dxi;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    Ok(ReferenceRun {
        mass_drift: rel(mass(&q, l), mass(&q0p, 1.0)),
        momentum_drift: rel(mom(&q, l), mom(&q0p, 1.0)),
        q,
        stretch: l,
        slope: eq.slope / l,
        self_convergence,
        steps: 2 * steps,
    })
}

// ---------------------------------------------------------------- convergence study

/// Data and numerical settings of the KdV perturbation study. The unperturbed
/// solution starts from `slope x + amplitude sin x` (monotone for
/// `slope > amplitude`), the reference run from the same data corrected by the
/// truncated transformation; both are compared over one full period.
#[derive(Clone, Debug)]
pub struct KdvStudy {
    /// `c` in the KdV pencil; the equation is `w_t + w w_x + 2 c eps^2 w_xxx = 0`.
    pub c: f64,
    pub eps: Vec<f64>,
    pub t: f64,
    pub slope: f64,
    pub amplitude: f64,
    pub grid: usize,
    pub steps: usize,
}

impl Default for KdvStudy {
    fn default() -> Self {
        KdvStudy { c: 1.0 / 24.0, eps: vec![0.1, 0.05, 0.025], t: 0.5, slope: 1.0, amplitude: 0.5, grid: 512, steps: 1000 }
    }
}

#[derive(Clone, Debug)]
pub struct StudyRow {
    pub eps: f64,
    pub error: f64,
    pub reference_self_convergence: f64,
}

#[derive(Clone, Debug)]
pub struct StudyReport {
    /// Highest power of `eps` kept in the transformation.
    pub top: usize,
    pub rows: Vec<StudyRow>,
    /// Fitted `p` and `C` in `error = C eps^p`.
    pub p: f64,
    pub c: f64,
}

impl StudyReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("truncation eps^{}\n", self.top);
        for r in &self.rows {
            let _ = writeln!(s, "eps = {:<8} error = {:.6e}  reference self-convergence = {:.2e}", r.eps, r.error, r.reference_self_convergence);
        }
        let _ = writeln!(s, "fitted order p = {:.4}, C = {:.4e}", self.p, self.c);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("top,eps,error,self_convergence\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.17e},{:.3e}", self.top, r.eps, r.error, r.reference_self_convergence);
        }
        s
    }
}

/// Least-squares fit of `log e = log C + p log eps`.
pub fn fit_order(eps: &[f64], err: &[f64]) -> Result<(f64, f64), HodographError> {
    if eps.len() < 2 || eps.len() != err.len() {
        return Err(HodographError::Input("need at least two values of eps to fit an order".into()));
    }
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(HodographError::Input("eps values must differ".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let p = sxy / sxx;
    Ok((p, (my - p * mx).exp()))
}

impl KdvStudy {
    fn data(&self) -> Taylor1 {
        Taylor1::linear_plus_sin(self.slope, self.amplitude)
    }

    /// Pipeline values at `xs` and time `t`.
    fn pipeline(&self, transform: &MiuraTransform, xs: &[f64], t: f64, eps: f64) -> Result<Vec<f64>, HodographError> {
        let vf = Taylor1::identity();
        let wf = Taylor1::inverse_of(self.data());
        let hd = solve_hodograph(&vf.to_map(), &wf.to_map(), xs, &[t], (0.0, t, &[0.0]))?;
        if !hd.is_complete() {
            return Err(HodographError::Input("sample points beyond the catastrophe".into()));
        }
        let params: BasePoint = [("c".to_string(), self.c)].into_iter().collect();
        let pl = Pipeline { transform, params, q: None };
        Ok(pl.row(&hd, 0, eps, &Jets::Exact { v: &vf, w: &wf })?.remove(0))
    }

    /// Runs the study with the transformation truncated at `eps^top`.
    pub fn run(&self, transform: &MiuraTransform, top: usize) -> Result<StudyReport, HodographError> {
        if self.eps.len() < 2 {
            return Err(HodographError::Input("need at least two values of eps".into()));
        }
        if self.amplitude.abs() >= self.slope {
            return Err(HodographError::Input("data must be increasing: need |amplitude| < slope".into()));
        }
        let tr = transform.truncate(top);
        let h = 2.0 * PI / self.grid as f64;
        let xi: Vec<f64> = (0..self.grid).map(|j| -PI + j as f64 * h).collect();
        let rows: Vec<Result<StudyRow, HodographError>> = self
            .eps
            .par_iter()
            .map(|&eps| {
                let w0 = self.pipeline(&tr, &xi, 0.0, eps)?;
                let q0: Vec<f64> = w0.iter().zip(&xi).map(|(w, x)| w - self.slope * x).collect();
                let eq = KdvEquation { a: 1.0, b: 2.0 * self.c * eps * eps, length: 2.0 * PI, slope: self.slope };
                let run = integrate_reference(&eq, &q0, self.t, self.steps)?;
                let (xs, w_ref) = run.physical(&xi);
                let w_t = self.pipeline(&tr, &xs, self.t, eps)?;
                let error = w_ref.iter().zip(&w_t).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                Ok(StudyRow { eps, error, reference_self_convergence: run.self_convergence })
            })
            .collect();
        let rows: Vec<StudyRow> = rows.into_iter().collect::<Result<_, _>>()?;
        let (p, c) = fit_order(&rows.iter().map(|r| r.eps).collect::<Vec<_>>(), &rows.iter().map(|r| r.error).collect::<Vec<_>>())?;
        Ok(StudyReport { top, rows, p, c })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn sv(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn gas_is_weakly_symmetrizable() {
        let vars = sv(&["u", "rho"]);
        let p = |t: &str| parse(t, &["u", "rho"], &["kappa"]).unwrap();
        let phi = vec![p("u^2/2 + pow(rho,kappa)"), p("rho*u")];
        let eta = vec![vec![Q::zero(), Q::one()], vec![Q::one(), Q::zero()]];
        let s = symmetrizable_check(&phi, &vars, &eta).unwrap();
        assert!(s.symmetric);
        assert_eq!(s.p, p("u*rho"));
        let h = s.h.unwrap();
        assert!(h.diff(Atom::jet("rho", 0)).add_ref(&-p("u^2/2 + pow(rho,kappa)")).is_zero());
        assert!(h.diff(Atom::jet("u", 0)).add_ref(&-p("rho*u")).is_zero());
        assert_eq!(s.conserved, Some(true));
    }

    #[test]
    fn symmetrizability_examples() {
        let v = sv(&["v"]);
        let s = symmetrizable_check(&[parse("v^2/2", &["v"], &[]).unwrap()], &v, &[vec![Q::one()]]).unwrap();
        assert!(s.symmetric);
        assert_eq!(s.conserved, Some(true));
        let v2 = sv(&["a", "b"]);
        let p = |t: &str| parse(t, &["a", "b"], &[]).unwrap();
        let id = vec![vec![Q::one(), Q::zero()], vec![Q::zero(), Q::one()]];
        assert!(!symmetrizable_check(&[p("b^2"), p("a*b")], &v2, &id).unwrap().symmetric);
        let zero = vec![vec![Q::zero(); 2]; 2];
        assert!(matches!(symmetrizable_check(&[p("a"), p("b")], &v2, &zero), Err(HodographError::DegenerateEta)));
    }

    #[test]
    fn tsarev_conditions() {
        let vars = sv(&["r1", "r2"]);
        let p = |t: &str| parse(t, &["r1", "r2"], &[]).unwrap();
        // constant speeds: g_ii may depend on u^i only
        assert!(tsarev_check(&[Expr::int(1), Expr::int(2)], &[p("r1^2"), p("r2")], &vars).unwrap().holds);
        assert!(!tsarev_check(&[Expr::int(1), Expr::int(2)], &[p("r1^2 + r2"), p("r2")], &vars).unwrap().holds);
        // shallow water (kappa = 1) in Riemann invariants, g_ii = r1 - r2
        let v = vec![p("3/4*r1 + 1/4*r2"), p("1/4*r1 + 3/4*r2")];
        let g = vec![p("r1 - r2"), p("r1 - r2")];
        let r = tsarev_check(&v, &g, &vars).unwrap();
        assert!(r.holds && r.pencil_holds);
        let bad = vec![p("r1*r2"), p("r1")];
        assert!(!tsarev_check(&bad, &g, &vars).unwrap().holds);
        // a commuting flow of shallow water
        let w = vec![p("5*r1^2 + 2*r1*r2 + r2^2"), p("r1^2 + 2*r1*r2 + 5*r2^2")];
        assert!(commuting_flow_residuals(&v, &w, &vars).unwrap().iter().all(|e| e.is_zero()));
    }

    #[test]
    fn hopf_hodograph() {
        // V = v, W = v: u = x / (t + 1)
        let id = NumMap::new(1, |u| vec![u[0]], |_| vec![vec![1.0]]);
        let xs: Vec<f64> = (0..41).map(|j| -1.0 + 0.05 * j as f64).collect();
        let ts: Vec<f64> = (0..21).map(|k| 0.05 * k as f64).collect();
        let hd = solve_hodograph(&id, &id, &xs, &ts, (0.0, 0.0, &[0.0])).unwrap();
        assert!(hd.is_complete());
        assert!(hd.max_residual() < 1e-12);
        for (k, t) in ts.iter().enumerate() {
            for (j, x) in xs.iter().enumerate() {
                assert!((hd.u[k][j].as_ref().unwrap()[0] - x / (t + 1.0)).abs() < 1e-13);
            }
        }
        assert!(pde_residual(&hd, &id).unwrap() < 1e-7);
    }

    #[test]
    fn catastrophe_boundary() {
        // data u(x, 0) = -x: W = -v, catastrophe at t = 1
        let v = NumMap::new(1, |u| vec![u[0]], |_| vec![vec![1.0]]);
        let w = NumMap::new(1, |u| vec![-u[0]], |_| vec![vec![-1.0]]);
        let xs = vec![-0.5, 0.0, 0.5];
        let ts: Vec<f64> = (0..6).map(|k| 0.25 * k as f64).collect();
        let hd = solve_hodograph(&v, &w, &xs, &ts, (0.0, 0.0, &[0.0])).unwrap();
        assert!(!hd.is_complete());
        assert!(hd.u[3].iter().all(|p| p.is_some()));
        assert!(hd.u[4].iter().all(|p| p.is_none()));
        assert!(hd.boundary.iter().all(|(_, t)| (t - 1.0).abs() < 1e-6));
    }

    #[test]
    fn shallow_water_hodograph() {
        let vars = sv(&["r1", "r2"]);
        let p = |t: &str| parse(t, &["r1", "r2"], &[]).unwrap();
        let bp = BasePoint::new();
        let v = NumMap::from_exprs(&[p("3/4*r1 + 1/4*r2"), p("1/4*r1 + 3/4*r2")], &vars, &bp).unwrap();
        let w = NumMap::from_exprs(&[p("5*r1^2 + 2*r1*r2 + r2^2 + r1"), p("r1^2 + 2*r1*r2 + 5*r2^2 + r2")], &vars, &bp).unwrap();
        let xs: Vec<f64> = (0..41).map(|j| 0.2 + 0.01 * j as f64).collect();
        let ts: Vec<f64> = (0..21).map(|k| 0.005 * k as f64).collect();
        let x0 = w.eval(&[0.3, 0.1])[0];
        let hd = solve_hodograph(&v, &w, &xs, &ts, (x0, 0.0, &[0.3, 0.1])).unwrap();
        assert!(hd.max_residual() < 1e-12);
        assert!(pde_residual(&hd, &v).unwrap() < 1e-6);
    }

    #[test]
    fn series_reversion_and_jets() {
        // x = v + v^3 -> inverse series
        let a = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let b = series::revert(&a, 6);
        let back = {
            let mut acc = vec![0.0; 7];
            let mut pw = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            for ak in &a {
                for k in 0..7 {
                    acc[k] += ak * pw[k];
                }
                pw = series::mul(&pw, &b, 6);
            }
            acc
        };
        for (k, c) in back.iter().enumerate() {
            assert!((c - if k == 1 { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
        // sin data at t = 0: jets of v = sin x
        let vf = Taylor1::from_expr(&parse("v", &["v"], &[]).unwrap(), "v", &BasePoint::new(), 8);
        let x: f64 = 0.3;
        let j = hodograph_jets_1d(&vf, &Taylor1::arcsin(), 0.0, x.sin(), 6);
        let expect = [x.sin(), x.cos(), -x.sin(), -x.cos(), x.sin(), x.cos(), -x.sin()];
        for (a, b) in j.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn pipeline_at_zero_eps_is_the_hodograph_field() {
        let e = crate::catalog::kdv(Some(Q::new(1, 24))).unwrap();
        let t = e.transform.unwrap();
        let vf = Taylor1::from_expr(&parse("v", &["v"], &[]).unwrap(), "v", &BasePoint::new(), 8);
        let wf = Taylor1::arcsin();
        let xs: Vec<f64> = (0..21).map(|j| -0.5 + 0.05 * j as f64).collect();
        let hd = solve_hodograph(&vf.to_map(), &wf.to_map(), &xs, &[0.0, 0.25], (0.0, 0.0, &[0.0])).unwrap();
        let pl = Pipeline { transform: &t, params: BasePoint::new(), q: None };
        let jets = Jets::Exact { v: &vf, w: &wf };
        for k in 0..2 {
            let w = pl.row(&hd, k, 0.0, &jets).unwrap();
            assert_eq!(w[0], hd.row(k, 0).unwrap());
        }
    }

    #[test]
    fn reference_integrator_matches_hopf() {
        let n = 256;
        let xs: Vec<f64> = (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect();
        let w0: Vec<f64> = xs.iter().map(|x| 0.5 * x.sin()).collect();
        let eq = KdvEquation { a: 1.0, b: 0.0, length: 2.0 * PI, slope: 0.0 };
        let t = 0.5;
        let run = integrate_reference(&eq, &w0, t, 400).unwrap();
        assert!(run.self_convergence < 1e-8);
        assert!(run.mass_drift < 1e-12 && run.momentum_drift < 1e-8, "{} {}", run.mass_drift, run.momentum_drift);
        let vf = Taylor1::from_expr(&parse("v", &["v"], &[]).unwrap(), "v", &BasePoint::new(), 2);
        // data 0.5 sin x on the monotone window: W(v) = arcsin(2 v)
        let w = NumMap::new(1, |u| vec![(2.0 * u[0]).asin()], |u| vec![vec![2.0 / (1.0 - 4.0 * u[0] * u[0]).sqrt()]]);
        let win: Vec<usize> = (0..n).filter(|&j| xs[j].abs() < 1.0).collect();
        let wx: Vec<f64> = win.iter().map(|&j| xs[j]).collect();
        let hd = solve_hodograph(&vf.to_map(), &w, &wx, &[t], (0.0, t, &[0.0])).unwrap();
        let err = win.iter().enumerate().fold(0.0f64, |a, (p, &j)| a.max((hd.u[0][p].as_ref().unwrap()[0] - run.q[j]).abs()));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn kdv_self_convergence_and_conservation() {
        let n = 256;
        let xs: Vec<f64> = (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect();
        let w0: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let eq = KdvEquation { a: 1.0, b: 0.01 / 12.0, length: 2.0 * PI, slope: 0.0 };
        let run = integrate_reference(&eq, &w0, 0.3, 600).unwrap();
        assert!(run.self_convergence < 1e-8, "{}", run.self_convergence);
        assert!(run.mass_drift < 1e-12);
        assert!(run.momentum_drift < 1e-8, "{}", run.momentum_drift);
    }

    #[test]
    fn stretched_reference_matches_hopf() {
        // data x + sin(x)/2: the hodograph solution is global
        let n = 128;
        let xi: Vec<f64> = (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect();
        let q0: Vec<f64> = xi.iter().map(|x| 0.5 * x.sin()).collect();
        let eq = KdvEquation { a: 1.0, b: 0.0, length: 2.0 * PI, slope: 1.0 };
        let t = 0.7;
        let run = integrate_reference(&eq, &q0, t, 400).unwrap();
        assert!(run.self_convergence < 1e-9, "{}", run.self_convergence);
        assert!(run.mass_drift < 1e-12 && run.momentum_drift < 1e-9, "{} {}", run.mass_drift, run.momentum_drift);
        let (xs, w) = run.physical(&xi);
        let vf = Taylor1::identity();
        let wf = Taylor1::inverse_of(Taylor1::linear_plus_sin(1.0, 0.5));
        let hd = solve_hodograph(&vf.to_map(), &wf.to_map(), &xs, &[t], (0.0, t, &[0.0])).unwrap();
        let err = (0..n).fold(0.0f64, |a, j| a.max((hd.u[0][j].as_ref().unwrap()[0] - w[j]).abs()));
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn inverse_taylor_coefficients() {
        let f = Taylor1::linear_plus_sin(1.0, 0.5);
        let g = Taylor1::inverse_of(f.clone());
        let v = 0.8;
        let x = g.value(v);
        assert!((f.value(x) - v).abs() < 1e-14);
        // g'(v) = 1 / f'(x), g'' = -f'' / f'^3
        let (fc, gc) = (f.coeffs(x, 2), g.coeffs(v, 2));
        assert!((gc[1] - 1.0 / fc[1]).abs() < 1e-14);
        assert!((2.0 * gc[2] + 2.0 * fc[2] / fc[1].powi(3)).abs() < 1e-13);
    }

    #[test]
    fn fit_needs_two_points() {
        assert!(fit_order(&[0.1], &[1e-3]).is_err());
        let (p, c) = fit_order(&[0.1, 0.05], &[2e-4, 2e-4 / 16.0]).unwrap();
        assert!((p - 4.0).abs() < 1e-12 && (c - 2.0).abs() < 1e-9);
    }
}
