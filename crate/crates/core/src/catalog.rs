//! Built-in bihamiltonian pencils: KdV, Camassa-Holm, the multi-component KdV-CH
//! family, four two-component structures sharing one leading term, and the
//! dispersive isentropic gas, with their flows, Hamiltonians, reducing
//! transformations and expected central invariants.
//!
//! Flows use `w_t = -(num/den) P_a delta H_a`. Brackets are stored as operators
//! `P^{ij} = sum_l P^{ij}_l(x) d^l`, i.e. `{w^i(x), w^j(y)} = sum_l P^{ij}_l(x) delta^(l)(x-y)`.

use crate::diffop::{DiffOp, MatOp};
use crate::expr::{Atom, Expr, ExprError, Q, Scope};
use crate::localgeom::{EpsFunctional, EpsVectorField, EvolutionaryVF};
use crate::miura::{MiuraError, MiuraTransform};
use crate::pencil::{BasePoint, CoordinateHint, EpsBivector, PencilError, PoissonPencil};
use rustc_hash::FxHashMap;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CatalogError {
    #[error("unknown catalog entry `{0}`")]
    Unknown(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Pencil(#[from] PencilError),
    #[error(transparent)]
    Miura(#[from] MiuraError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Numerical parameter values; parameters left out stay symbolic.
pub type Params = BTreeMap<String, Q>;

/// `H_a` with the factor `num_a / den_a` in `w_t = -(num_a/den_a) P_a delta H_a`.
#[derive(Clone, Debug)]
pub struct Hamiltonians {
    pub h: [EpsFunctional; 2],
    pub factor: [(Expr, Expr); 2],
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: String,
    /// Symbolic parameters left in the expressions.
    pub params: Vec<String>,
    pub pencil: PoissonPencil,
    /// Highest power of the deformation parameter that is transcribed.
    pub truncation: usize,
    pub system: Option<EpsVectorField>,
    pub hamiltonians: Option<Hamiltonians>,
    /// Reducing transformation: old coordinates through the new ones.
    pub transform: Option<MiuraTransform>,
    /// Expected `c_i`, in the canonical coordinate names `u` (one component) or `u1, u2, ...`.
    pub expected_invariants: Vec<Expr>,
    pub notes: Vec<String>,
}

/// Names accepted by [`get_entry`].
pub const ENTRY_NAMES: &[&str] = &["kdv", "ch", "kdv-ch", "nls", "two-ch", "boussinesq", "ito-variant", "gas"];

fn sv(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn q(n: i64, d: i64) -> Expr {
    Expr::rational(n, d)
}

/// Operator `sum_l c[l] d^l` from the coefficient list.
fn d_op(c: Vec<Expr>) -> DiffOp {
    DiffOp::new(c)
}

fn mat(n: usize, entries: Vec<((usize, usize), DiffOp)>) -> MatOp {
    let mut m = MatOp::zero(n, n);
    for ((i, j), d) in entries {
        *m.get_mut(i, j) = d;
    }
    m
}

/// Splits `name(a, b, ...)` into the name and its arguments.
pub fn split_name(spec: &str) -> Result<(String, Vec<Q>), CatalogError> {
    let spec = spec.trim();
    let Some(open) = spec.find('(') else {
        return Ok((spec.to_string(), Vec::new()));
    };
    if !spec.ends_with(')') {
        return Err(CatalogError::InvalidParams(format!("unbalanced parentheses in `{spec}`")));
    }
    let name = spec[..open].trim().to_string();
    let inner = &spec[open + 1..spec.len() - 1];
    let mut args = Vec::new();
    for a in inner.split(',').map(str::trim).filter(|a| !a.is_empty()) {
        let e = crate::expr::parse(a, &[], &[]).map_err(|e| CatalogError::InvalidParams(format!("argument `{a}`: {e}")))?;
        let c = e.as_constant().ok_or_else(|| CatalogError::InvalidParams(format!("argument `{a}` is not a number")))?;
        args.push(c);
    }
    Ok((name, args))
}

/// Looks up an entry. `spec` is a name, optionally with arguments:
/// `kdv-ch(n,k,l,a0,...,an)` and `gas(kappa)`; `params` supplies the same by name
/// (`c`, `kappa`, `n`, `k`, `l`, `a0`, ...).
pub fn get_entry(spec: &str, params: &Params) -> Result<CatalogEntry, CatalogError> {
    let (name, args) = split_name(spec)?;
    match name.as_str() {
        "kdv" => kdv(params.get("c").cloned().or_else(|| args.first().cloned())),
        "ch" => ch(),
        "kdv-ch" => {
            let int = |key: &str, pos: usize| -> Result<usize, CatalogError> {
                let v = args.get(pos).cloned().or_else(|| params.get(key).cloned());
                let v = v.ok_or_else(|| CatalogError::InvalidParams(format!("kdv-ch needs `{key}`")))?;
                v.as_small()
                    .filter(|&(x, d)| d == 1 && x >= 0)
                    .map(|(x, _)| x)
                    .map(|x| x as usize)
                    .ok_or_else(|| CatalogError::InvalidParams(format!("`{key}` must be a nonnegative integer")))
            };
            let n = int("n", 0)?;
            let k = int("k", 1)?;
            let l = int("l", 2)?;
            let a: Vec<Q> = (0..=n)
                .map(|i| {
                    args.get(3 + i)
                        .cloned()
                        .or_else(|| params.get(&format!("a{i}")).cloned())
                        .ok_or_else(|| CatalogError::InvalidParams(format!("kdv-ch needs a{i}")))
                })
                .collect::<Result<_, _>>()?;
            if args.len() > 3 + n + 1 {
                return Err(CatalogError::InvalidParams(format!("kdv-ch with n = {n} takes {} arguments", n + 4)));
            }
            kdv_ch(n, k, l, &a)
        }
        "nls" => lt_variant(LtVariant::Nls),
        "two-ch" | "2ch" => lt_variant(LtVariant::TwoCh),
        "boussinesq" => lt_variant(LtVariant::Boussinesq),
        "ito-variant" | "ito" | "fpb" => lt_variant(LtVariant::Ito),
        "gas" => gas(params.get("kappa").cloned().or_else(|| args.first().cloned())),
        _ => Err(CatalogError::Unknown(name)),
    }
}

// ---------------------------------------------------------------- KdV, CH

fn kdv_transform(c: &Expr, params: &[String]) -> Result<MiuraTransform, CatalogError> {
    let v = |t: &str| crate::expr::parse(t, &["v"], &[]);
    let f2 = v("v#3/v#1 - v#2^2/v#1^2")?.mul_ref(c);
    let f4 = v("5*v#4/v#1^2 - 21*v#2*v#3/v#1^3 + 16*v#2^3/v#1^4")?.total_dx_n(2).mul_ref(&c.pow(2)).scale(&Q::new(1, 10));
    Ok(MiuraTransform::new(
        sv(&["w"]),
        sv(&["v"]),
        params.to_vec(),
        vec![vec![Expr::jet("v", 0)], vec![Expr::zero()], vec![f2], vec![Expr::zero()], vec![f4]],
    )?)
}

/// The KdV pencil `(d, w d + 1/2 w_x + 3 c eps^2 d^3)`; `c` symbolic when `None`.
pub fn kdv(c: Option<Q>) -> Result<CatalogEntry, CatalogError> {
    let (cx, params) = match &c {
        Some(v) => (Expr::constant(v.clone()), vec![]),
        None => (Expr::param("c"), sv(&["c"])),
    };
    let w = |t: &str| crate::expr::parse(t, &["w"], &[]);
    let p1 = EpsBivector::new(sv(&["w"]), vec![mat(1, vec![((0, 0), DiffOp::d(1))])])?;
    let p2 = EpsBivector::new(
        sv(&["w"]),
        vec![
            mat(1, vec![((0, 0), d_op(vec![w("1/2*w#1")?, w("w")?]))]),
            MatOp::zero(1, 1),
            mat(1, vec![((0, 0), d_op(vec![Expr::zero(), Expr::zero(), Expr::zero(), cx.scale(&Q::from_int(3))]))]),
        ],
    )?;
    let mut bp: BasePoint = [("w".to_string(), 1.0)].into_iter().collect();
    if c.is_none() {
        bp.insert("c".into(), 1.0);
    }
    let pencil = PoissonPencil::new(p1, p2, params.clone(), bp)?;
    let two_c = cx.scale(&Q::from_int(2));
    let system = EpsVectorField::new(
        sv(&["w"]),
        vec![vec![w("-w*w#1")?], vec![Expr::zero()], vec![w("-w#3")?.mul_ref(&two_c)]],
    );
    let h1 = EpsFunctional::new(vec![w("w^3/6")?, Expr::zero(), w("-w#1^2")?.mul_ref(&cx)]);
    let h2 = EpsFunctional::new(vec![w("w^2/2")?]);
    Ok(CatalogEntry {
        name: "kdv".into(),
        params: params.clone(),
        pencil,
        truncation: 2,
        system: Some(system),
        hamiltonians: Some(Hamiltonians { h: [h1, h2], factor: [(Expr::one(), Expr::one()), (Expr::int(2), Expr::int(3))] }),
        transform: Some(kdv_transform(&cx, &params)?),
        expected_invariants: vec![cx],
        notes: vec!["c = 1/24 gives w_t + w w_x + eps^2/12 w_xxx = 0".into()],
    })
}

/// The Camassa-Holm pencil `(d - eps^2/8 d^3, w d + 1/2 w_x)`.
pub fn ch() -> Result<CatalogEntry, CatalogError> {
    let w = |t: &str| crate::expr::parse(t, &["w"], &[]);
    let p1 = EpsBivector::new(
        sv(&["w"]),
        vec![
            mat(1, vec![((0, 0), DiffOp::d(1))]),
            MatOp::zero(1, 1),
            mat(1, vec![((0, 0), d_op(vec![Expr::zero(), Expr::zero(), Expr::zero(), q(-1, 8)]))]),
        ],
    )?;
    let p2 = EpsBivector::new(sv(&["w"]), vec![mat(1, vec![((0, 0), d_op(vec![w("1/2*w#1")?, w("w")?]))])])?;
    let bp: BasePoint = [("w".to_string(), 1.0)].into_iter().collect();
    let pencil = PoissonPencil::new(p1, p2, vec![], bp)?;
    let v = |t: &str| crate::expr::parse(t, &["v"], &[]);
    let f2 = v("v*v#2/(24*v#1) - v#1/48")?.total_dx();
    let f4 = v("7*v#2^2/(2880*v#1) + v*v#2^3/(180*v#1^3) - v^2*v#2^4/(90*v#1^5) - v#3/512 \
        - 59*v*v#2*v#3/(5760*v#1^2) + 37*v^2*v#2^2*v#3/(1920*v#1^4) - 7*v^2*v#3^2/(1920*v#1^3) \
        + 5*v*v#4/(1152*v#1) - 31*v^2*v#2*v#4/(5760*v#1^3) + v^2*v#5/(1152*v#1^2)")?
    .total_dx();
    let t = MiuraTransform::new(
        sv(&["w"]),
        sv(&["v"]),
        vec![],
        vec![vec![Expr::jet("v", 0)], vec![Expr::zero()], vec![f2], vec![Expr::zero()], vec![f4]],
    )?;
    Ok(CatalogEntry {
        name: "ch".into(),
        params: vec![],
        pencil,
        truncation: 2,
        system: None,
        hamiltonians: None,
        transform: Some(t),
        expected_invariants: vec![Expr::jet("u", 0).scale(&Q::new(1, 24))],
        notes: vec![],
    })
}

// ---------------------------------------------------------------- KdV-CH family

fn canonical_names(n: usize) -> Vec<String> {
    if n == 1 {
        sv(&["u"])
    } else {
        (1..=n).map(|i| format!("u{i}")).collect()
    }
}

fn coordinate_names(n: usize) -> Vec<String> {
    if n == 1 {
        sv(&["w"])
    } else {
        (1..=n).map(|i| format!("w{i}")).collect()
    }
}

/// Names of the roots `lambda_i` used by [`kdv_ch_central_invariants`].
pub fn root_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("l{i}")).collect()
}

/// `D_i = w^i d + 1/2 w^i_x + a_i eps^2/8 d^3` as orders `[eps^0, eps^1, eps^2]`,
/// with `w^0 = 1` and `D_i = 0` outside `0..=n`.
fn d_family(i: i64, n: usize, a: &[Q], vars: &[String]) -> [DiffOp; 3] {
    if i < 0 || i as usize > n {
        return [DiffOp::zero(), DiffOp::zero(), DiffOp::zero()];
    }
    let lead = if i == 0 {
        DiffOp::d(1)
    } else {
        let w = Expr::jet(&vars[i as usize - 1], 0);
        d_op(vec![w.total_dx().scale(&Q::new(1, 2)), w])
    };
    let top = d_op(vec![Expr::zero(), Expr::zero(), Expr::zero(), Expr::constant(&a[i as usize] * &Q::new(1, 8))]);
    [lead, DiffOp::zero(), top]
}

fn f_sign(i: usize, j: usize, m: usize) -> i64 {
    if i <= m && j <= m {
        -1
    } else if i > m && j > m {
        1
    } else {
        0
    }
}

/// The bracket `{w^i, w^j}_m = (-1)^m f^{ij}_m D_{i+j-m-1}`, `1 <= i, j <= n`.
pub fn kdv_ch_bracket(n: usize, m: usize, a: &[Q]) -> Result<EpsBivector, CatalogError> {
    let vars = coordinate_names(n);
    let mut orders = vec![MatOp::zero(n, n); 3];
    let sign = if m.is_multiple_of(2) { 1 } else { -1 };
    for i in 1..=n {
        for j in 1..=n {
            let f = sign * f_sign(i, j, m);
            if f == 0 {
                continue;
            }
            let ops = d_family(i as i64 + j as i64 - m as i64 - 1, n, a, &vars);
            for (o, d) in orders.iter_mut().zip(ops) {
                *o.get_mut(i - 1, j - 1) = d.scale(&Q::from_int(f));
            }
        }
    }
    Ok(EpsBivector::new(vars, orders)?)
}

/// Elementary symmetric polynomials of `roots`.
fn elementary_symmetric(roots: &[Expr]) -> Vec<Expr> {
    let mut e = vec![Expr::one()];
    for r in roots {
        let mut next = vec![Expr::zero(); e.len() + 1];
        for (k, ek) in e.iter().enumerate() {
            next[k] = next[k].add_ref(ek);
            next[k + 1] = next[k + 1].add_ref(&ek.mul_ref(r));
        }
        e = next;
    }
    e.into_iter().skip(1).collect()
}

fn elementary_symmetric_f64(roots: &[f64]) -> Vec<f64> {
    let mut e = vec![1.0];
    for r in roots {
        let mut next = vec![0.0; e.len() + 1];
        for (k, ek) in e.iter().enumerate() {
            next[k] += ek;
            next[k + 1] += ek * r;
        }
        e = next;
    }
    e.into_iter().skip(1).collect()
}

/// The pencil `B_{k,l} = ({,}_k, {,}_l)` at the point whose roots are `lambda_base`.
/// For `n >= 2` the roots of `lambda^n - w^1 lambda^(n-1) + w^2 lambda^(n-2) - ...`
/// are attached as coordinates.
pub fn kdv_ch_pencil(n: usize, k: usize, l: usize, a: &[Q], lambda_base: &[f64]) -> Result<PoissonPencil, CatalogError> {
    check_kdv_ch(n, k, l, a)?;
    if lambda_base.len() != n {
        return Err(CatalogError::InvalidParams(format!("need {n} base values of the roots")));
    }
    let p1 = kdv_ch_bracket(n, k, a)?;
    let p2 = kdv_ch_bracket(n, l, a)?;
    let vars = coordinate_names(n);
    let wb = elementary_symmetric_f64(lambda_base);
    let bp: BasePoint = vars.iter().cloned().zip(wb).collect();
    let mut p = PoissonPencil::new(p1, p2, vec![], bp)?;
    if n >= 2 {
        let names = root_names(n);
        let roots: Vec<Expr> = names.iter().map(|s| Expr::jet(s, 0)).collect();
        let images = elementary_symmetric(&roots);
        let base_point = names.iter().cloned().zip(lambda_base.iter().copied()).collect();
        p = p.with_coords(CoordinateHint { vars: names, images, base_point });
    }
    Ok(p)
}

fn check_kdv_ch(n: usize, k: usize, l: usize, a: &[Q]) -> Result<(), CatalogError> {
    if n == 0 {
        return Err(CatalogError::InvalidParams("n must be at least 1".into()));
    }
    if k > n || l > n {
        return Err(CatalogError::InvalidParams(format!("k and l must lie in 0..={n}")));
    }
    if k == l {
        return Err(CatalogError::InvalidParams("k and l must differ".into()));
    }
    if a.len() != n + 1 {
        return Err(CatalogError::InvalidParams(format!("expected {} constants a_i", n + 1)));
    }
    if a.iter().all(|x| x.is_zero()) {
        return Err(CatalogError::InvalidParams("at least one a_i must be nonzero".into()));
    }
    Ok(())
}

fn int_power(x: &Expr, k: i64) -> Result<Expr, ExprError> {
    if k >= 0 {
        Ok(x.pow(k as u32))
    } else {
        x.inverse_monomial().map(|i| i.pow((-k) as u32))
    }
}

/// `c_i = sum_j (-1)^j a_j lambda_i^(n-j) / (24 (l-k) lambda_i^(n-1-l))` in the root names `l1, l2, ...`.
pub fn kdv_ch_central_invariants(n: usize, k: usize, l: usize, a: &[Q]) -> Result<Vec<Expr>, CatalogError> {
    check_kdv_ch(n, k, l, a)?;
    root_names(n)
        .iter()
        .map(|name| {
            let lam = Expr::jet(name, 0);
            let mut num = Expr::zero();
            for (j, aj) in a.iter().enumerate() {
                let s = if j % 2 == 0 { aj.clone() } else { -aj.clone() };
                num = num.add_ref(&int_power(&lam, (n - j) as i64)?.scale(&s));
            }
            let den = int_power(&lam, n as i64 - 1 - l as i64)?.scale(&Q::from_int(24 * (l as i64 - k as i64)));
            Ok(num.mul_ref(&den.inverse_monomial()?).canonical())
        })
        .collect()
}

/// Rewrites invariants in root names through the canonical coordinates `u^i = lambda_i^(k-l)`.
fn invariants_in_canonical(c: &[Expr], k: usize, l: usize) -> Result<Vec<Expr>, CatalogError> {
    let n = c.len();
    let roots = root_names(n);
    let us = canonical_names(n);
    let d = k as i64 - l as i64;
    c.iter()
        .enumerate()
        .map(|(i, ci)| {
            let lam = Expr::power(Atom::jet(&us[i], 0), crate::expr::Exponent::rational(1, d));
            Ok(ci.subs([(Atom::jet(&roots[i], 0), lam)])?.canonical())
        })
        .collect()
}

pub fn kdv_ch(n: usize, k: usize, l: usize, a: &[Q]) -> Result<CatalogEntry, CatalogError> {
    let base: Vec<f64> = (0..n).map(|i| (i + 2) as f64).collect();
    let pencil = kdv_ch_pencil(n, k, l, a, &base)?;
    let c = kdv_ch_central_invariants(n, k, l, a)?;
    let expected = invariants_in_canonical(&c, k, l)?;
    let args: Vec<String> = a.iter().map(|x| x.to_string()).collect();
    Ok(CatalogEntry {
        name: format!("kdv-ch({n},{k},{l},{})", args.join(",")),
        params: vec![],
        pencil,
        truncation: 2,
        system: None,
        hamiltonians: None,
        transform: None,
        expected_invariants: expected,
        notes: vec!["roots taken of lambda^n - w^1 lambda^(n-1) + w^2 lambda^(n-2) - ...".into()],
    })
}

// ---------------------------------------------------------------- two-component structures

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LtVariant {
    Nls,
    TwoCh,
    Boussinesq,
    Ito,
}

impl LtVariant {
    pub fn name(self) -> &'static str {
        match self {
            LtVariant::Nls => "nls",
            LtVariant::TwoCh => "two-ch",
            LtVariant::Boussinesq => "boussinesq",
            LtVariant::Ito => "ito-variant",
        }
    }
}

/// Leading brackets in `(phi, rho)`: `{rho, phi}_1 = delta'`; `{phi, phi}_2 = 2 delta'`,
/// `{rho, phi}_2 = phi delta'`, `{rho, rho}_2 = 2 rho delta' + rho' delta`.
fn lt_leading() -> Result<(MatOp, MatOp), CatalogError> {
    let s = Scope::new(&["phi", "rho"], &[]);
    let p1 = mat(2, vec![((1, 0), DiffOp::d(1)), ((0, 1), DiffOp::d(1))]);
    let p2 = mat(
        2,
        vec![
            ((0, 0), d_op(vec![Expr::zero(), Expr::int(2)])),
            ((1, 0), d_op(vec![Expr::zero(), s.parse("phi")?])),
            ((0, 1), d_op(vec![s.parse("phi#1")?, s.parse("phi")?])),
            ((1, 1), d_op(vec![s.parse("rho#1")?, s.parse("2*rho")?])),
        ],
    );
    Ok((p1, p2))
}

/// Adds `c d^l` to entry `(i, j)` at order `m` and the antisymmetric partner to `(j, i)`.
fn add_antisymmetric(orders: &mut Vec<MatOp>, m: usize, i: usize, j: usize, l: usize, c: Expr) {
    while orders.len() <= m {
        orders.push(MatOp::zero(2, 2));
    }
    let mut coeffs = vec![Expr::zero(); l + 1];
    coeffs[l] = c;
    let d = d_op(coeffs);
    let partner = d.adjoint().neg();
    if i == j {
        let e = orders[m].get(i, i).add(&d);
        *orders[m].get_mut(i, i) = e.canonical();
    } else {
        let e = orders[m].get(i, j).add(&d);
        *orders[m].get_mut(i, j) = e.canonical();
        let e = orders[m].get(j, i).add(&partner);
        *orders[m].get_mut(j, i) = e.canonical();
    }
}

pub fn lt_variant(v: LtVariant) -> Result<CatalogEntry, CatalogError> {
    let (l1, l2) = lt_leading()?;
    let mut o1 = vec![l1];
    let mut o2 = vec![l2];
    // indices: phi = 0, rho = 1
    match v {
        LtVariant::Nls => add_antisymmetric(&mut o2, 1, 1, 0, 2, Expr::one()),
        LtVariant::TwoCh => add_antisymmetric(&mut o1, 1, 1, 0, 2, Expr::one()),
        LtVariant::Boussinesq => add_antisymmetric(&mut o2, 2, 1, 1, 3, q(1, 2)),
        LtVariant::Ito => add_antisymmetric(&mut o1, 2, 1, 1, 3, q(-1, 2)),
    }
    let vars = sv(&["phi", "rho"]);
    let p1 = EpsBivector::new(vars.clone(), o1)?;
    let p2 = EpsBivector::new(vars.clone(), o2)?;
    let bp: BasePoint = [("phi".to_string(), 2.0), ("rho".to_string(), 0.25)].into_iter().collect();
    let pencil = PoissonPencil::new(p1, p2, vec![], bp)?;
    let u = |i: usize| Expr::jet(&format!("u{i}"), 0);
    let expected = match v {
        LtVariant::Nls | LtVariant::Boussinesq => vec![q(1, 24), q(1, 24)],
        LtVariant::TwoCh => vec![u(1).pow(2).scale(&Q::new(1, 24)), u(2).pow(2).scale(&Q::new(1, 24))],
        LtVariant::Ito => vec![u(1).scale(&Q::new(1, 24)), u(2).scale(&Q::new(1, 24))],
    };
    Ok(CatalogEntry {
        name: v.name().into(),
        params: vec![],
        pencil,
        truncation: match v {
            LtVariant::Nls | LtVariant::TwoCh => 1,
            _ => 2,
        },
        system: None,
        hamiltonians: None,
        transform: None,
        expected_invariants: expected,
        notes: vec!["canonical coordinates u = phi -/+ 2 rho^(1/2)".into()],
    })
}

/// A polynomial change `w = Phi(phi, rho)` relating a two-component structure to `scale * B_{2,1}`.
#[derive(Clone, Debug)]
pub struct Bridge {
    pub variant: LtVariant,
    pub transform: MiuraTransform,
    /// The constants `a_0, a_1, a_2` of the target.
    pub a: [Q; 3],
    pub scale: Q,
    /// Highest order through which the relation holds.
    pub valid_through: usize,
}

impl Bridge {
    /// `scale * B_{2,1}` in `w1, w2`, with base point the image of the variant's base point.
    pub fn target(&self) -> Result<PoissonPencil, CatalogError> {
        let e = lt_variant(self.variant)?;
        let pm: FxHashMap<Atom, f64> = e.pencil.base_point.iter().map(|(k, v)| (Atom::jet(k, 0), *v)).collect();
        let phi0 = self.transform.order(0);
        let (w1, w2) = (phi0[0].eval(&pm)?, phi0[1].eval(&pm)?);
        let disc = (w1 * w1 - 4.0 * w2).sqrt();
        let roots = [(w1 - disc) / 2.0, (w1 + disc) / 2.0];
        let p = kdv_ch_pencil(2, 2, 1, &self.a, &roots)?;
        let p1 = p.p1.combine(&self.scale, &p.p1, &Q::zero());
        let p2 = p.p2.combine(&self.scale, &p.p2, &Q::zero());
        let mut out = PoissonPencil::new(p1, p2, vec![], p.base_point.clone())?;
        out.coords = p.coords;
        Ok(out)
    }
}

pub fn miura_bridge(name: &str) -> Result<Bridge, CatalogError> {
    let s = Scope::new(&["phi", "rho"], &[]);
    let (variant, order1, a, valid) = match name {
        "nls" => (LtVariant::Nls, vec![Expr::zero(), s.parse("2*phi#1")?], [0, 0, -8], 2),
        "two-ch" | "2ch" => (LtVariant::TwoCh, vec![s.parse("2*phi#1")?, Expr::zero()], [-8, 0, 0], 2),
        "boussinesq" => (LtVariant::Boussinesq, vec![Expr::zero(), Expr::zero()], [0, 0, -8], 2),
        "ito-variant" | "ito" | "fpb" => (LtVariant::Ito, vec![Expr::zero(), Expr::zero()], [0, 8, 0], 2),
        other => return Err(CatalogError::Unknown(format!("bridge `{other}`"))),
    };
    let order0 = vec![s.parse("2*phi")?, s.parse("phi^2 - 4*rho")?];
    let mut orders = vec![order0];
    if order1.iter().any(|e| !e.is_trivially_zero()) {
        orders.push(order1);
    }
    let transform = MiuraTransform::new(sv(&["w1", "w2"]), sv(&["phi", "rho"]), vec![], orders)?
        .with_inverse(vec![s_w("w1/2")?, s_w("w1^2/16 - w2/4")?]);
    Ok(Bridge { variant, transform, a: a.map(Q::from_int), scale: Q::from_int(8), valid_through: valid })
}

fn s_w(t: &str) -> Result<Expr, ExprError> {
    crate::expr::parse(t, &["w1", "w2"], &[])
}

// ---------------------------------------------------------------- isentropic gas

const A_COEFFS: [&str; 10] = [
    "(18 + 75*kappa - 15*kappa^2 + 20*kappa^3 + 2*kappa^4)/(2880*kappa^3)",
    "(6 + 113*kappa + 409*kappa^2 - 185*kappa^3 + 17*kappa^4)/(5760*kappa^2)",
    "-(18 + 11*kappa + 3*kappa^2)/(720*kappa^2)",
    "7/(720*kappa)",
    "(-6 + 3*kappa - kappa^2)/(480*kappa^2)",
    "(-6 - 39*kappa - 10*kappa^2 + 5*kappa^3)/(480*kappa)",
    "(14 + 5*kappa + 5*kappa^2)/1440",
    "1/(120*kappa)",
    "(2 + 5*kappa)/240",
    "-(kappa + 2)*(kappa + 3)*(kappa^2 - 1)/(5760*kappa^4)",
];

const A_MONOMIALS: [&str; 10] = [
    "pow(rho,-4)*u#1^2*rho#1^2",
    "pow(rho,kappa-6)*rho#1^4",
    "pow(rho,-3)*u#2*u#1*rho#1",
    "pow(rho,-2)*u#2^2",
    "pow(rho,-3)*u#1^2*rho#2",
    "pow(rho,kappa-5)*rho#1^2*rho#2",
    "pow(rho,kappa-4)*rho#2^2",
    "pow(rho,-2)*u#1*u#3",
    "pow(rho,kappa-4)*rho#1*rho#3",
    "pow(rho,-kappa-2)*u#1^4",
];

const B_COEFFS: [&str; 9] = [
    "(42 + 83*kappa - 53*kappa^2 + 8*kappa^3)/(1440*kappa^3)",
    "-(6 + 35*kappa - 24*kappa^2 + 5*kappa^3)/(720*kappa^3)",
    "-(12 + 40*kappa - 13*kappa^2 + 5*kappa^3)/(720*kappa^3)",
    "(6 - 4*kappa + kappa^2)/(180*kappa^2)",
    "(6 + kappa + kappa^2)/(720*kappa^2)",
    "(6 + kappa + kappa^2)/(720*kappa^2)",
    "-1/(360*kappa)",
    "-(kappa + 2)*(kappa + 3)/(720*kappa^4)",
    "(kappa + 1)*(kappa + 2)*(kappa + 3)/(1440*kappa^4)",
];

const B_MONOMIALS: [&str; 9] = [
    "pow(rho,-4)*u#1*rho#1^3",
    "pow(rho,-3)*rho#1^2*u#2",
    "pow(rho,-3)*u#1*rho#1*rho#2",
    "pow(rho,-2)*u#2*rho#2",
    "pow(rho,-2)*u#3*rho#1",
    "pow(rho,-2)*u#1*rho#3",
    "pow(rho,-1)*u#4",
    "pow(rho,-kappa-1)*u#1^2*u#2",
    "pow(rho,-kappa-2)*u#1^3*rho#1",
];

fn gas_scope() -> Scope {
    Scope::new(&["u", "rho"], &["kappa"])
}

fn table_sum(s: &Scope, coeffs: &[&str], monos: &[&str]) -> Result<Expr, ExprError> {
    let mut acc = Expr::zero();
    for (c, m) in coeffs.iter().zip(monos) {
        acc = acc.add_ref(&s.parse(c)?.mul_ref(&s.parse(m)?));
    }
    Ok(acc)
}

/// The fluxes `(phi_u, phi_rho)` of the dispersive gas system at orders 0, 2, 4.
pub fn gas_fluxes() -> Result<[[Expr; 2]; 3], ExprError> {
    let s = gas_scope();
    let k23 = s.parse("(kappa-2)*(kappa-3)")?;
    let u0 = s.parse("u^2/2 + pow(rho,kappa)")?;
    let r0 = s.parse("rho*u")?;
    let u2 = s.parse("kappa*(kappa-2)/8*pow(rho,kappa-3)*rho#1^2 + kappa^2/12*pow(rho,kappa-2)*rho#2")?;
    let r2 = s.parse("(2-kappa)*(kappa-3)/(12*kappa)*pow(rho,-1)*u#1*rho#1 + u#2/6")?;
    let u4 = k23
        .mul_ref(&table_sum(&s, &A_COEFFS, &A_MONOMIALS)?)
        .add_ref(&s.parse("kappa*(kappa^2-4)/360*pow(rho,kappa-3)*rho#4")?);
    let r4 = k23.mul_ref(&table_sum(&s, &B_COEFFS, &B_MONOMIALS)?);
    Ok([[u0, r0], [u2, r2], [u4, r4]])
}

/// `w_t = -d_x(flux)` through `eps^4`.
pub fn gas_system() -> Result<EpsVectorField, ExprError> {
    let f = gas_fluxes()?;
    let mut orders = vec![vec![Expr::zero(), Expr::zero()]; 5];
    for (k, fl) in f.iter().enumerate() {
        orders[2 * k] = fl.iter().map(|e| (-e.total_dx()).canonical()).collect();
    }
    Ok(EpsVectorField::new(sv(&["u", "rho"]), orders))
}

/// Densities `h_1, h_2` through `eps^4`.
pub fn gas_hamiltonians() -> Result<Hamiltonians, ExprError> {
    let mut s = gas_scope();
    s.define("K1", "kappa + 1")?;
    let dh2_2 = s.parse("-(kappa-2)*(kappa-3)/(12*kappa)*pow(rho,-1)*u#1*rho#1")?;
    let dh2_4 = s.parse(
        "(kappa-2)*(kappa-3)/(720*kappa^3)*( -2*kappa*(kappa^2 - 8*kappa + 6)*pow(rho,-2)*u#1*rho#3 \
         + kappa*(7*kappa^2 - 61*kappa + 42)*pow(rho,-3)*u#1*rho#1*rho#2 \
         + (-5*kappa^3 + 79/2*kappa^2 - 55/2*kappa + 3)*pow(rho,-4)*u#1*rho#1^3 \
         + 1/(6*kappa)*(kappa+3)*(kappa+2)*(kappa+1)*pow(rho,-kappa-2)*u#1^3*rho#1 )",
    )?;
    let u = Expr::jet("u", 0);
    let dh1_2 = u.mul_ref(&dh2_2).add_ref(&s.parse(
        "-1/(24*kappa)*((kappa^2 - 3*kappa + 6)*u#1^2 + kappa*(2*kappa^2 - 5*kappa + 6)*pow(rho,kappa-2)*rho#1^2)",
    )?);
    // the rho_xx^2 term carries 1/(kappa-3), cancelled against the prefactor
    let dh1_4 = u.mul_ref(&dh2_4).add_ref(&s.parse(
        "(kappa-2)*(kappa-3)/(240*kappa^3)*( -1/3*kappa*(kappa^2 - 4*kappa + 6)*pow(rho,-1)*u#1*u#3 \
         + 1/3*kappa*(2*kappa^2 - 13*kappa + 12)*pow(rho,-2)*u#1*u#2*rho#1 \
         + 1/72*(3*kappa+5)*(kappa+3)*(kappa+2)/kappa*pow(rho,-kappa-1)*u#1^4 \
         - 1/12*(2*kappa-3)*(kappa+3)*(kappa+2)*pow(rho,-3)*u#1^2*rho#1^2 \
         - 1/72*kappa*(kappa-1)*(16*kappa^4 - 100*kappa^3 + 229*kappa^2 - 211*kappa + 6)*pow(rho,kappa-5)*rho#1^4 ) \
         + (kappa-2)/(240*kappa^3)*kappa^2*(kappa-1)*(3*kappa^2 - 8*kappa + 12)/2*pow(rho,kappa-3)*rho#2^2",
    )?);
    let h1_0 = s.parse("rho*u^2/2 + pow(rho,kappa+1)/K1")?;
    let h2_0 = s.parse("rho*u")?;
    let z = Expr::zero();
    let h1 = EpsFunctional::new(vec![h1_0, z.clone(), dh1_2.canonical(), z.clone(), dh1_4.canonical()]);
    let h2 = EpsFunctional::new(vec![h2_0, z.clone(), dh2_2.canonical(), z, dh2_4.canonical()]);
    Ok(Hamiltonians { h: [h1, h2], factor: [(Expr::one(), Expr::one()), (Expr::param("kappa"), s.parse("kappa + 1")?)] })
}

/// The derivation `T_2`: `u -> kappa rho^(kappa-2) rho_x`, `rho -> u_x`.
fn t2_field(s: &Scope) -> Result<EvolutionaryVF, ExprError> {
    Ok(EvolutionaryVF::new(vec![s.parse("kappa*pow(rho,kappa-2)*rho#1")?, s.parse("u#1")?]))
}

struct Contraction<'a> {
    /// `r[a][b] = T_1^a T_2^b rho`.
    r: &'a [Vec<Expr>],
    /// Numerators of `M^{alpha beta}`; indices 0 and 1 stand for `T_1` and `T_2`.
    m: &'a [[Expr; 2]; 2],
}

impl Contraction<'_> {
    /// `sum over alpha of prod_g rho_{alpha in group g} prod_p M^{alpha_p0 alpha_p1}`, without the `D^-|pairs|`.
    fn eval(&self, groups: &[&[usize]], pairs: &[(usize, usize)], nidx: usize) -> Expr {
        let mut acc = Expr::zero();
        for bits in 0u32..(1 << nidx) {
            let idx = |i: usize| ((bits >> i) & 1) as usize;
            let mut t = Expr::one();
            for g in groups {
                let twos = g.iter().filter(|&&i| idx(i) == 1).count();
                t = t.mul_ref(&self.r[g.len() - twos][twos]);
            }
            for &(a, b) in pairs {
                t = t.mul_ref(&self.m[idx(a)][idx(b)]);
                if t.is_trivially_zero() {
                    break;
                }
            }
            acc.add_assign_ref(&t);
        }
        acc.canonical()
    }
}

/// The generating functions `F_1`, `F_2` of the gas reducing transformation.
pub fn gas_generators() -> Result<(Expr, Expr), ExprError> {
    let (f1, parts) = gas_generator_parts()?;
    let mut f2 = Expr::zero();
    for p in &parts {
        f2.add_assign_ref(p);
    }
    Ok((f1, f2.canonical()))
}

/// `F_1` and the five summands of `F_2`: the four index contractions followed by the
/// `(kappa-2)(kappa-3) D^-2 [...]` term.
pub fn gas_generator_parts() -> Result<(Expr, [Expr; 5]), ExprError> {
    let mut s = gas_scope();
    let d = s.define("D", "u#1^2 - kappa*pow(rho,kappa-2)*rho#1^2")?;
    let vars = sv(&["u", "rho"]);
    let t2 = t2_field(&s)?;
    // log(-D) and log(D) differ by a constant; use the sign-normalized atom
    let (d_atom, _) = d.as_monomial().and_then(|(m, _)| m.factors().first().cloned()).expect("D is an atom");
    let f1 = Expr::atom(Atom::log(d_atom))
        .scale(&Q::new(1, 24))
        .add_ref(&s.parse("-1/24*(kappa-2)*(kappa-3)/kappa*log(rho)")?);
    let mut r: Vec<Vec<Expr>> = vec![vec![Expr::jet("rho", 0)]];
    for b in 1..=6 {
        let prev = r[0][b - 1].clone();
        r[0].push(t2.apply(&prev, &vars).canonical());
    }
    for a in 1..=6 {
        let row: Vec<Expr> = (0..=(6 - a)).map(|b| r[a - 1][b].total_dx()).collect();
        r.push(row);
    }
    let m = [[s.parse("-kappa*pow(rho,kappa-2)*rho#1")?, s.parse("u#1")?], [s.parse("u#1")?, s.parse("-rho#1")?]];
    let c = Contraction { r: &r, m: &m };
    let dinv = d.inverse()?;
    let dpow = |k: u32| dinv.pow(k);
    let t1 = c.eval(&[&[0, 1, 2, 3]], &[(0, 1), (2, 3)], 4).mul_ref(&dpow(2)).scale(&Q::new(1, 1152));
    let t2c = c.eval(&[&[0, 1, 2], &[3, 4, 5]], &[(0, 3), (1, 4), (2, 5)], 6).mul_ref(&dpow(3)).scale(&Q::new(-1, 360));
    let t3 = c.eval(&[&[0, 1], &[2, 3, 4, 5]], &[(0, 2), (1, 3), (4, 5)], 6).mul_ref(&dpow(3)).scale(&Q::new(-1, 1152));
    let t4 = c
        .eval(&[&[0, 1], &[2, 3, 4], &[5, 6, 7]], &[(0, 2), (1, 5), (3, 6), (4, 7)], 8)
        .mul_ref(&dpow(4))
        .scale(&Q::new(1, 360));
    let bracket = s.parse(
        "-1/240*kappa*pow(rho,2*kappa-5)*rho#3*rho#1^3 \
         + 11/2880*kappa*pow(rho,2*kappa-5)*rho#2^2*rho#1^2 \
         + (-7/5760*kappa^2 + 19/5760*kappa + 7/960)*pow(rho,2*kappa-6)*rho#2*rho#1^4 \
         + 11/2880*pow(rho,kappa-3)*rho#1^2*u#2^2 \
         - 1/(5760*kappa)*(kappa^4 - 9*kappa^3 + kappa^2 + 53*kappa + 6)*pow(rho,2*kappa-7)*rho#1^6 \
         + 1/240*pow(rho,kappa-3)*rho#1^2*u#3*u#1 \
         + 1/240*pow(rho,kappa-3)*rho#1*rho#3*u#1^2 \
         - 11/720*pow(rho,kappa-3)*rho#1*u#1*u#2*rho#2 \
         + 11/2880*pow(rho,kappa-3)*u#1^2*rho#2^2 \
         - 1/1440*(11*kappa - 21)*pow(rho,kappa-4)*rho#1^3*u#2*u#1 \
         + 1/(2880*kappa)*(22*kappa^2 - 47*kappa - 42)*pow(rho,kappa-4)*rho#1^2*u#1^2*rho#2 \
         + 1/(5760*kappa^2)*(12*kappa^4 - 45*kappa^3 + 15*kappa^2 + 101*kappa + 6)*pow(rho,kappa-5)*u#1^2*rho#1^4 \
         - 1/(240*kappa)*pow(rho,-1)*u#3*u#1^3 \
         + 11/(2880*kappa)*pow(rho,-1)*u#1^2*u#2^2 \
         + 1/(1440*kappa)*pow(rho,-2)*u#2*u#1^3*rho#1 \
         + 1/(5760*kappa^2)*(7*kappa^2 - 13*kappa + 42)*pow(rho,-2)*rho#2*u#1^4 \
         - 1/(5760*kappa^3)*(8*kappa^3 - 31*kappa^2 + 43*kappa - 6)*pow(rho,-3)*u#1^4*rho#1^2 \
         - 1/(5760*kappa^4)*(kappa+3)*(kappa+2)*pow(rho,-kappa-1)*u#1^6",
    )?;
    let t5 = s.parse("(kappa-2)*(kappa-3)")?.mul_ref(&dpow(2)).mul_ref(&bracket);
    Ok((f1, [t1, t2c, t3, t4, t5.canonical()]))
}

/// Grade of each summand of `F_2`, `None` when a summand is itself inhomogeneous.
pub fn gas_f2_grades() -> Result<Vec<Option<Q>>, ExprError> {
    let (_, parts) = gas_generator_parts()?;
    Ok(parts.iter().map(|p| p.homogeneous_grade()).collect())
}

/// `u = v + T_1 T_2 (eps^2 F_1 + eps^4 F_2)`, `rho = v + T_1 T_1 (...)`, through `eps^top` (2 or 4).
pub fn gas_reducing_transform(top: usize) -> Result<MiuraTransform, CatalogError> {
    let (f1, f2) = gas_generators()?;
    gas_transform_from(&f1, &f2, top)
}

/// The reducing transformation generated by arbitrary `F_1`, `F_2`.
pub fn gas_transform_from(f1: &Expr, f2: &Expr, top: usize) -> Result<MiuraTransform, CatalogError> {
    let s = gas_scope();
    let vars = sv(&["u", "rho"]);
    let t2 = t2_field(&s)?;
    let image = |f: &Expr| -> Vec<Expr> { vec![t2.apply(f, &vars).total_dx().canonical(), f.total_dx_n(2).canonical()] };
    let z = vec![Expr::zero(), Expr::zero()];
    let mut orders = vec![vec![Expr::jet("u", 0), Expr::jet("rho", 0)], z.clone(), image(f1)];
    if top >= 4 {
        orders.push(z);
        orders.push(image(f2));
    }
    Ok(MiuraTransform::new(vars.clone(), vars, sv(&["kappa"]), orders)?)
}

/// Leading gas brackets in `(u, rho)`.
pub fn gas_leading_pencil(kappa: Option<&Q>) -> Result<PoissonPencil, CatalogError> {
    let s = gas_scope();
    let p1 = mat(2, vec![((0, 1), DiffOp::d(1)), ((1, 0), DiffOp::d(1))]);
    let p2 = mat(
        2,
        vec![
            ((0, 0), d_op(vec![s.parse("pow(rho,kappa-1)")?.total_dx(), s.parse("2*pow(rho,kappa-1)")?])),
            ((0, 1), d_op(vec![s.parse("u#1/kappa")?, s.parse("u")?])),
            ((1, 0), d_op(vec![s.parse("u#1 - u#1/kappa")?, s.parse("u")?])),
            ((1, 1), d_op(vec![s.parse("rho#1/kappa")?, s.parse("2*rho/kappa")?])),
        ],
    );
    let vars = sv(&["u", "rho"]);
    let bp = gas_base_point(kappa);
    let p = PoissonPencil::new(EpsBivector::new(vars.clone(), vec![p1])?, EpsBivector::new(vars, vec![p2])?, sv(&["kappa"]), bp)?;
    Ok(match kappa {
        Some(k) => substitute_pencil(&p, &[("kappa", k)])?,
        None => p,
    })
}

fn gas_base_point(kappa: Option<&Q>) -> BasePoint {
    let k = kappa.map(|q| q.to_f64()).unwrap_or(0.4);
    [("u".to_string(), 0.5), ("rho".to_string(), 1.0), ("kappa".to_string(), k)].into_iter().collect()
}

/// The dispersive isentropic gas with `kappa` symbolic when `None`. The deformed
/// pencil is the image of the leading one under the inverse of the `F_1` part of
/// the reducing transformation, truncated at `eps^4`. The printed `F_2` is not
/// homogeneous (see `gas_f2_grades`), so the `eps^4` brackets carry only the
/// contribution of `F_1`.
pub fn gas(kappa: Option<Q>) -> Result<CatalogEntry, CatalogError> {
    if let Some(k) = &kappa {
        if k.is_zero() || *k == Q::from_int(-1) {
            return Err(CatalogError::InvalidParams("kappa must differ from 0 and -1".into()));
        }
    }
    let t = gas_reducing_transform(2)?;
    let lead = gas_leading_pencil(None)?;
    let inv = crate::miura::invert(&t, 4)?;
    let mut pencil = crate::miura::apply_to_pencil(&inv, &lead, 4)?;
    pencil.params = sv(&["kappa"]);
    let system = gas_system()?;
    let hams = gas_hamiltonians()?;
    let mut entry = CatalogEntry {
        name: "gas".into(),
        params: sv(&["kappa"]),
        pencil,
        truncation: 4,
        system: Some(system),
        hamiltonians: Some(hams),
        transform: Some(t),
        expected_invariants: vec![q(1, 24), q(1, 24)],
        notes: vec![
            "deformed brackets are the push-forward of the leading pencil by the F_1 transformation".into(),
            "eps^4 brackets omit F_2: the transcribed F_2 is inhomogeneous (grades 2, 3, 3, 4, 2 by summand)".into(),
        ],
    };
    if let Some(k) = kappa {
        entry = substitute_entry(&entry, &[("kappa", &k)])?;
        entry.pencil.base_point = gas_base_point(Some(&k));
    }
    Ok(entry)
}

// ---------------------------------------------------------------- parameter substitution

fn param_bindings(values: &[(&str, &Q)]) -> FxHashMap<Atom, Expr> {
    values.iter().map(|(n, v)| (Atom::param(n), Expr::constant((*v).clone()))).collect()
}

fn subst(e: &Expr, b: &FxHashMap<Atom, Expr>) -> Result<Expr, ExprError> {
    Ok(e.substitute(b)?.canonical())
}

fn substitute_bivector(p: &EpsBivector, b: &FxHashMap<Atom, Expr>) -> Result<EpsBivector, ExprError> {
    let mut orders = Vec::new();
    for o in &p.orders {
        let mut o = o.clone();
        for d in o.m.iter_mut() {
            for e in d.c.iter_mut() {
                *e = subst(e, b)?;
            }
        }
        orders.push(o);
    }
    Ok(EpsBivector::new_unchecked(p.vars.clone(), orders))
}

/// Fixes parameters to numerical values throughout a pencil.
pub fn substitute_pencil(p: &PoissonPencil, values: &[(&str, &Q)]) -> Result<PoissonPencil, CatalogError> {
    let b = param_bindings(values);
    let fixed: Vec<&str> = values.iter().map(|(n, _)| *n).collect();
    Ok(PoissonPencil {
        p1: substitute_bivector(&p.p1, &b)?,
        p2: substitute_bivector(&p.p2, &b)?,
        params: p.params.iter().filter(|n| !fixed.contains(&n.as_str())).cloned().collect(),
        base_point: p.base_point.clone(),
        coords: p.coords.clone(),
    })
}

fn substitute_entry(e: &CatalogEntry, values: &[(&str, &Q)]) -> Result<CatalogEntry, CatalogError> {
    let b = param_bindings(values);
    let fixed: Vec<&str> = values.iter().map(|(n, _)| *n).collect();
    let sub_all = |v: &[Expr]| -> Result<Vec<Expr>, ExprError> { v.iter().map(|x| subst(x, &b)).collect() };
    let system = match &e.system {
        Some(s) => Some(EpsVectorField::new(s.vars.clone(), s.orders.iter().map(|o| sub_all(o)).collect::<Result<_, _>>()?)),
        None => None,
    };
    let hamiltonians = match &e.hamiltonians {
        Some(h) => {
            let f = |x: &EpsFunctional| -> Result<EpsFunctional, ExprError> { Ok(EpsFunctional::new(sub_all(&x.orders)?)) };
            Some(Hamiltonians {
                h: [f(&h.h[0])?, f(&h.h[1])?],
                factor: [
                    (subst(&h.factor[0].0, &b)?, subst(&h.factor[0].1, &b)?),
                    (subst(&h.factor[1].0, &b)?, subst(&h.factor[1].1, &b)?),
                ],
            })
        }
        None => None,
    };
    let transform = match &e.transform {
        Some(t) => {
            let orders = t.orders.iter().map(|o| sub_all(o)).collect::<Result<_, _>>()?;
            let params = t.params.iter().filter(|n| !fixed.contains(&n.as_str())).cloned().collect();
            Some(MiuraTransform::new(t.old_vars.clone(), t.new_vars.clone(), params, orders)?)
        }
        None => None,
    };
    Ok(CatalogEntry {
        name: e.name.clone(),
        params: e.params.iter().filter(|n| !fixed.contains(&n.as_str())).cloned().collect(),
        pencil: substitute_pencil(&e.pencil, values)?,
        truncation: e.truncation,
        system,
        hamiltonians,
        transform,
        expected_invariants: sub_all(&e.expected_invariants)?,
        notes: e.notes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_zero(r: &[crate::localgeom::TrivectorResidual]) -> bool {
        r.iter().all(|x| x.is_zero())
    }

    fn assert_poisson(e: &CatalogEntry, top: usize) {
        let p = &e.pencil;
        assert!(p.p1.antisymmetry_failures().is_empty(), "{}: P1 not antisymmetric", e.name);
        assert!(p.p2.antisymmetry_failures().is_empty(), "{}: P2 not antisymmetric", e.name);
        assert!(all_zero(&p.p1.jacobi(top)), "{}: Jacobi P1", e.name);
        assert!(all_zero(&p.p2.jacobi(top)), "{}: Jacobi P2", e.name);
        assert!(all_zero(&p.p1.compatibility(&p.p2, top)), "{}: compatibility", e.name);
    }

    fn assert_invariants(e: &CatalogEntry) {
        let ci = e.pencil.central_invariants().unwrap();
        assert!(ci.matches(&e.expected_invariants).unwrap(), "{}: got {:?}, expected {:?}", e.name, ci.describe(), e.expected_invariants);
    }

    #[test]
    fn names_and_arguments() {
        let (n, a) = split_name("kdv-ch(1, 1, 0, 0, 1/2)").unwrap();
        assert_eq!(n, "kdv-ch");
        assert_eq!(a.len(), 5);
        assert_eq!(a[4], Q::new(1, 2));
        assert!(matches!(get_entry("burgers", &Params::new()), Err(CatalogError::Unknown(_))));
        assert!(matches!(get_entry("kdv-ch(1,1,0,0,0)", &Params::new()), Err(CatalogError::InvalidParams(_))));
        assert!(matches!(get_entry("kdv-ch(1,1,1,0,1)", &Params::new()), Err(CatalogError::InvalidParams(_))));
        assert!(matches!(get_entry("gas(-1)", &Params::new()), Err(CatalogError::InvalidParams(_))));
        assert!(matches!(get_entry("gas(0)", &Params::new()), Err(CatalogError::InvalidParams(_))));
    }

    #[test]
    fn kdv_and_ch() {
        for e in [kdv(None).unwrap(), ch().unwrap(), kdv(Some(Q::new(1, 24))).unwrap()] {
            assert_poisson(&e, e.truncation);
            assert_invariants(&e);
        }
    }

    #[test]
    fn kdv_flow_is_bihamiltonian() {
        let e = kdv(None).unwrap();
        let h = e.hamiltonians.as_ref().unwrap();
        let sys = e.system.as_ref().unwrap();
        for (a, p) in [&e.pencil.p1, &e.pencil.p2].into_iter().enumerate() {
            let r = p.flow_residual(sys, &h.h[a], &h.factor[a].0, &h.factor[a].1, 4);
            assert!(r.iter().flatten().all(|x| x.is_zero()), "bracket {}", a + 1);
        }
    }

    #[test]
    fn kdv_ch_one_component() {
        // B_{1,0} with a = (0, 1) is the KdV pencil with c = 1/24
        let e = kdv_ch(1, 1, 0, &[Q::zero(), Q::one()]).unwrap();
        let k = kdv(Some(Q::new(1, 24))).unwrap();
        assert_eq!(e.pencil.p1.sub(&k.pencil.p1).first_nonzero(2), None);
        assert_eq!(e.pencil.p2.sub(&k.pencil.p2).first_nonzero(2), None);
        assert_eq!(e.expected_invariants, vec![q(1, 24)]);
        assert_invariants(&e);
        // a = (-1, 0) is the CH pencil
        let e = kdv_ch(1, 1, 0, &[-Q::one(), Q::zero()]).unwrap();
        let c = ch().unwrap();
        assert_eq!(e.pencil.p1.sub(&c.pencil.p1).first_nonzero(2), None);
        assert_eq!(e.pencil.p2.sub(&c.pencil.p2).first_nonzero(2), None);
        assert_invariants(&e);
    }

    #[test]
    fn kdv_ch_two_components() {
        for (k, l, a) in [(2, 1, [0, 0, -8]), (2, 1, [1, 2, 3]), (1, 0, [0, 1, 0]), (0, 2, [1, 0, 1])] {
            let a: Vec<Q> = a.iter().map(|&x| Q::from_int(x)).collect();
            let e = kdv_ch(2, k, l, &a).unwrap();
            assert_poisson(&e, 2);
            assert_invariants(&e);
        }
    }

    #[test]
    fn two_component_variants() {
        for v in [LtVariant::Nls, LtVariant::TwoCh, LtVariant::Boussinesq, LtVariant::Ito] {
            let e = lt_variant(v).unwrap();
            assert_poisson(&e, 2);
            assert_invariants(&e);
        }
        let nls = lt_variant(LtVariant::Nls).unwrap().pencil.central_invariants().unwrap();
        let bou = lt_variant(LtVariant::Boussinesq).unwrap().pencil.central_invariants().unwrap();
        let tch = lt_variant(LtVariant::TwoCh).unwrap().pencil.central_invariants().unwrap();
        assert!((0..2).all(|i| nls.c[i].add_ref(&-&bou.c[i]).is_zero()));
        assert!((0..2).any(|i| !nls.c[i].add_ref(&-&tch.c[i]).is_zero()));
    }

    #[test]
    fn bridges_reach_the_family() {
        for name in ["nls", "two-ch", "boussinesq", "ito-variant"] {
            let b = miura_bridge(name).unwrap();
            let pulled = crate::miura::apply_to_pencil(&b.transform, &b.target().unwrap(), 2).unwrap();
            let e = lt_variant(b.variant).unwrap();
            assert_eq!(pulled.p1.sub(&e.pencil.p1).first_nonzero(2), None, "{name}: P1");
            assert_eq!(pulled.p2.sub(&e.pencil.p2).first_nonzero(2), None, "{name}: P2");
        }
        assert!(miura_bridge("kdv").is_err());
    }

    #[test]
    fn gas_first_generator_reduces_the_system() {
        let t = gas_reducing_transform(2).unwrap();
        let r = crate::miura::reduce_system(&gas_system().unwrap(), &t, 2).unwrap();
        assert_eq!(r.first_nonzero, None);
    }

    #[test]
    fn gas_second_generator_is_inhomogeneous() {
        let two = Some(Q::from_int(2));
        let g = gas_f2_grades().unwrap();
        assert_eq!(g, vec![two.clone(), Some(Q::from_int(3)), Some(Q::from_int(3)), Some(Q::from_int(4)), two]);
        assert!(matches!(gas_reducing_transform(4), Err(CatalogError::Miura(_))));
    }

    #[test]
    fn gas_entry() {
        let e = gas(None).unwrap();
        assert_poisson(&e, 2);
        assert_invariants(&e);
        let h = e.hamiltonians.as_ref().unwrap();
        let sys = e.system.as_ref().unwrap();
        for (a, p) in [&e.pencil.p1, &e.pencil.p2].into_iter().enumerate() {
            let r = p.flow_residual(sys, &h.h[a], &h.factor[a].0, &h.factor[a].1, 2);
            assert!(r.iter().flatten().all(|x| x.is_zero()), "bracket {}", a + 1);
        }
    }
}
