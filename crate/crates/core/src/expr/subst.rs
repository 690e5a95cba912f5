//! Simultaneous substitution and numeric evaluation.

use super::atom::{Atom, AtomKind};
use super::expr::Expr;
use super::monomial::{Exponent, Monomial};
use super::rational::Q;
use super::ExprError;
use rustc_hash::FxHashMap;

pub type Bindings = FxHashMap<Atom, Expr>;

struct Substituter<'a> {
    bind: &'a Bindings,
    cache: FxHashMap<(Atom, Exponent), Expr>,
    atom_cache: FxHashMap<Atom, Option<Expr>>,
}

impl<'a> Substituter<'a> {
    /// Image of an atom, or `None` when it is unaffected by the bindings.
    fn image(&mut self, a: Atom) -> Result<Option<Expr>, ExprError> {
        if let Some(v) = self.atom_cache.get(&a) {
            return Ok(v.clone());
        }
        let res = if let Some(e) = self.bind.get(&a) {
            Some(e.clone())
        } else {
            let data = a.data();
            if !data.deps.iter().any(|d| self.bind.contains_key(d)) {
                None
            } else {
                match &data.kind {
                    AtomKind::Jet { .. } | AtomKind::Param { .. } => None,
                    AtomKind::Log { base } => {
                        let img = self.image(*base)?.expect("dependent base has an image");
                        Some(log_of(&img)?)
                    }
                    AtomKind::Derived { def, .. } => {
                        let img = self.run(def)?;
                        if img.is_trivially_zero() {
                            return Err(ExprError::DivisionByZero);
                        }
                        if img.as_monomial().is_some() {
                            Some(img)
                        } else {
                            let (s, d) = Atom::derived_auto(&img).map_err(ExprError::Invalid)?;
                            Some(Expr::atom(d).scale(&s))
                        }
                    }
                }
            }
        };
        self.atom_cache.insert(a, res.clone());
        Ok(res)
    }

    fn factor(&mut self, a: Atom, e: Exponent) -> Result<Option<Expr>, ExprError> {
        if let Some(v) = self.cache.get(&(a, e)) {
            return Ok(Some(v.clone()));
        }
        let img = self.image(a)?;
        // symbolic exponent whose parameter is bound
        let mut e2 = e;
        let mut exp_changed = false;
        if let Some((p, (n, d))) = e.symbolic() {
            if let Some(pv) = self.bind.get(&p) {
                let v = pv.as_constant().ok_or_else(|| {
                    ExprError::Invalid(format!("parameter {p} in an exponent bound to a non-constant"))
                })?;
                let (vn, vd) = v.as_small().ok_or_else(|| ExprError::Invalid("exponent too large".into()))?;
                let c = &e.constant_q() + &(&Q::new(n, d) * &Q::new(vn, vd));
                let (cn, cd) = c.as_small().unwrap();
                e2 = Exponent::rational(cn, cd);
                exp_changed = true;
            }
        }
        if img.is_none() && !exp_changed {
            return Ok(None);
        }
        let base = img.unwrap_or_else(|| Expr::atom(a));
        let out = power_of(&base, e2, a)?;
        self.cache.insert((a, e), out.clone());
        Ok(Some(out))
    }

    fn run(&mut self, ex: &Expr) -> Result<Expr, ExprError> {
        let mut acc: Vec<(Monomial, Q)> = Vec::new();
        let mut products: Vec<Expr> = Vec::new();
        for (m, c) in ex.terms() {
            let mut kept: Vec<(Atom, Exponent)> = Vec::new();
            let mut parts: Vec<Expr> = Vec::new();
            for &(a, e) in m.factors() {
                match self.factor(a, e)? {
                    None => kept.push((a, e)),
                    Some(x) => parts.push(x),
                }
            }
            let mono = Monomial::from_factors(kept);
            if parts.is_empty() {
                acc.push((mono, c.clone()));
                continue;
            }
            let mut t = Expr::term(mono, c.clone());
            parts.sort_by_key(|p| p.len());
            for p in parts {
                t = t.mul_ref(&p);
                if t.is_trivially_zero() {
                    break;
                }
            }
            products.push(t);
        }
        let mut out = Expr::from_terms(acc);
        if products.len() > 8 {
            let mut all: Vec<(Monomial, Q)> = out.into_terms();
            for p in products {
                all.extend(p.into_terms());
            }
            return Ok(Expr::from_terms(all));
        }
        for p in products {
            out = out.add_ref(&p);
        }
        Ok(out)
    }
}

/// `base^e` where `base` is the image of atom `a`.
fn power_of(base: &Expr, e: Exponent, a: Atom) -> Result<Expr, ExprError> {
    if let Some(n) = e.as_int() {
        if n >= 0 {
            return Ok(base.pow(n as u32));
        }
    }
    if base.is_trivially_zero() {
        return Err(ExprError::DivisionByZero);
    }
    let (m, c) = match base.as_monomial() {
        Some(x) => x,
        None => {
            if let Some(n) = e.as_int() {
                // negative integer power of a sum: route through a derived atom
                let inv = base.inverse().map_err(|_| ExprError::NotInvertible(format!("{a} -> {base}")))?;
                return Ok(inv.pow((-n) as u32));
            }
            return Err(ExprError::NotInvertible(format!("{a} -> {base} raised to {e}")));
        }
    };
    let coef = if let Some(n) = e.as_int() {
        c.pow(n)
    } else if c.is_one() {
        Q::one()
    } else if e.is_constant() {
        let (n, d) = e.constant();
        rational_power(c, n, d).ok_or_else(|| ExprError::NotInvertible(format!("{c}^{e} is irrational")))?
    } else {
        return Err(ExprError::NotInvertible(format!("{c}^({e}) has a symbolic exponent")));
    };
    let mut fs: Vec<(Atom, Exponent)> = Vec::new();
    for &(b, k) in m.factors() {
        let ke = k.mul(&e).ok_or_else(|| ExprError::Invalid("product of two symbolic exponents".into()))?;
        fs.push((b, ke));
    }
    Ok(Expr::term(Monomial::from_factors(fs), coef))
}

/// `c^(n/d)` when rational.
fn rational_power(c: &Q, n: i64, d: i64) -> Option<Q> {
    let mut r = c.clone();
    match d {
        1 => {}
        2 => r = r.sqrt()?,
        4 => r = r.sqrt()?.sqrt()?,
        _ => return None,
    }
    Some(r.pow(n))
}

/// `log` of a monomial image with unit coefficient.
fn log_of(img: &Expr) -> Result<Expr, ExprError> {
    let (m, c) = img
        .as_monomial()
        .ok_or_else(|| ExprError::NotInvertible(format!("log of a sum {img}")))?;
    if !c.is_one() {
        return Err(ExprError::Invalid(format!("log of {img} has a non-unit constant factor")));
    }
    let mut out = Expr::zero();
    for &(b, k) in m.factors() {
        let kq = if k.is_constant() {
            Expr::constant(k.constant_q())
        } else {
            super::expr::exponent_expr(&k)
        };
        out = out.add_ref(&kq.mul_ref(&Expr::atom(Atom::log(b))));
    }
    Ok(out)
}

impl Expr {
    /// Simultaneous substitution of atoms by expressions.
    pub fn substitute(&self, bind: &Bindings) -> Result<Expr, ExprError> {
        if bind.is_empty() {
            return Ok(self.clone());
        }
        let mut s = Substituter { bind, cache: FxHashMap::default(), atom_cache: FxHashMap::default() };
        s.run(self)
    }

    /// Substitution through an iterator of pairs.
    pub fn subs<I: IntoIterator<Item = (Atom, Expr)>>(&self, pairs: I) -> Result<Expr, ExprError> {
        let b: Bindings = pairs.into_iter().collect();
        self.substitute(&b)
    }

    /// Substitutes many expressions sharing one cache.
    pub fn substitute_all(exprs: &[Expr], bind: &Bindings) -> Result<Vec<Expr>, ExprError> {
        let mut s = Substituter { bind, cache: FxHashMap::default(), atom_cache: FxHashMap::default() };
        exprs.iter().map(|e| s.run(e)).collect()
    }

    /// Floating point value at a point assigning every base atom.
    pub fn eval(&self, point: &FxHashMap<Atom, f64>) -> Result<f64, ExprError> {
        let mut cache: FxHashMap<Atom, f64> = FxHashMap::default();
        let mut total = 0.0;
        for (m, c) in self.terms() {
            let mut t = c.to_f64();
            for &(a, e) in m.factors() {
                let v = atom_value(a, point, &mut cache)?;
                t *= power_value(v, e, point, a)?;
            }
            total += t;
        }
        Ok(total)
    }
}

fn atom_value(a: Atom, point: &FxHashMap<Atom, f64>, cache: &mut FxHashMap<Atom, f64>) -> Result<f64, ExprError> {
    if let Some(v) = point.get(&a) {
        return Ok(*v);
    }
    if let Some(v) = cache.get(&a) {
        return Ok(*v);
    }
    let v = match a.kind() {
        AtomKind::Jet { .. } | AtomKind::Param { .. } => {
            return Err(ExprError::Invalid(format!("no value for {a}")))
        }
        AtomKind::Log { base } => {
            let b = atom_value(base, point, cache)?;
            if b <= 0.0 {
                return Err(ExprError::Domain(format!("log of non-positive value {b} ({base})")));
            }
            b.ln()
        }
        AtomKind::Derived { def, .. } => def.eval(point)?,
    };
    cache.insert(a, v);
    Ok(v)
}

fn power_value(v: f64, e: Exponent, point: &FxHashMap<Atom, f64>, a: Atom) -> Result<f64, ExprError> {
    if let Some(n) = e.as_int() {
        if n < 0 && v == 0.0 {
            return Err(ExprError::DivisionByZero);
        }
        return Ok(v.powi(n as i32));
    }
    let mut x = e.constant_q().to_f64();
    if let Some((p, (n, d))) = e.symbolic() {
        let pv = point.get(&p).ok_or_else(|| ExprError::Invalid(format!("no value for {p}")))?;
        x += (n as f64 / d as f64) * pv;
    }
    if x.fract() == 0.0 && x.abs() < 1e9 {
        if x < 0.0 && v == 0.0 {
            return Err(ExprError::DivisionByZero);
        }
        return Ok(v.powi(x as i32));
    }
    if v < 0.0 {
        return Err(ExprError::Domain(format!("{a} = {v} raised to non-integer power {x}")));
    }
    Ok(v.powf(x))
}
