//! Sparse polynomial expressions over Q in jet, parameter, log and derived atoms.

use super::atom::{Atom, AtomKind};
use super::monomial::{Exponent, Monomial};
use super::rational::Q;
use super::ExprError;
use rustc_hash::FxHashMap;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Sum of `coefficient * monomial`, terms sorted by monomial, no zero coefficients.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Expr {
    terms: Vec<(Monomial, Q)>,
}

impl Expr {
    pub fn zero() -> Expr {
        Expr { terms: Vec::new() }
    }

    pub fn one() -> Expr {
        Expr::constant(Q::one())
    }

    pub fn constant(q: Q) -> Expr {
        if q.is_zero() {
            Expr::zero()
        } else {
            Expr { terms: vec![(Monomial::one(), q)] }
        }
    }

    pub fn int(n: i64) -> Expr {
        Expr::constant(Q::from_int(n))
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Expr::constant(Q::new(n, d))
    }

    pub fn atom(a: Atom) -> Expr {
        Expr::term(Monomial::atom(a), Q::one())
    }

    /// `var` differentiated `order` times.
    pub fn jet(var: &str, order: u32) -> Expr {
        Expr::atom(Atom::jet(var, order))
    }

    pub fn param(name: &str) -> Expr {
        Expr::atom(Atom::param(name))
    }

    pub fn power(a: Atom, e: Exponent) -> Expr {
        Expr::term(Monomial::power(a, e), Q::one())
    }

    /// `log(var#order)`.
    pub fn log_jet(var: &str, order: u32) -> Expr {
        Expr::atom(Atom::log(Atom::jet(var, order)))
    }

    pub fn term(m: Monomial, q: Q) -> Expr {
        if q.is_zero() {
            Expr::zero()
        } else {
            Expr { terms: vec![(m, q)] }
        }
    }

    /// Sorts and merges arbitrary terms.
    pub fn from_terms(mut terms: Vec<(Monomial, Q)>) -> Expr {
        if terms.len() <= 1 {
            terms.retain(|t| !t.1.is_zero());
            return Expr { terms };
        }
        terms.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Monomial, Q)> = Vec::with_capacity(terms.len());
        for (m, q) in terms {
            if let Some(last) = out.last_mut() {
                if last.0 == m {
                    last.1 += &q;
                    continue;
                }
            }
            out.push((m, q));
        }
        out.retain(|t| !t.1.is_zero());
        Expr { terms: out }
    }

    pub fn terms(&self) -> &[(Monomial, Q)] {
        &self.terms
    }

    pub fn into_terms(self) -> Vec<(Monomial, Q)> {
        self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Structural zero test (no cancellation through derived atoms).
    pub fn is_trivially_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn as_constant(&self) -> Option<Q> {
        match self.terms.len() {
            0 => Some(Q::zero()),
            1 if self.terms[0].0.is_one() => Some(self.terms[0].1.clone()),
            _ => None,
        }
    }

    pub fn as_monomial(&self) -> Option<(&Monomial, &Q)> {
        if self.terms.len() == 1 {
            Some((&self.terms[0].0, &self.terms[0].1))
        } else {
            None
        }
    }

    /// Sorted atoms appearing, including parameters inside symbolic exponents.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut v: Vec<Atom> = Vec::new();
        for (m, _) in &self.terms {
            for (a, e) in m.factors() {
                v.push(*a);
                if let Some((p, _)) = e.symbolic() {
                    v.push(p);
                }
            }
        }
        v.sort();
        v.dedup();
        v
    }

    /// Jet and parameter atoms the expression depends on, through logs and derived atoms.
    pub fn base_atoms(&self) -> Vec<Atom> {
        let mut v: Vec<Atom> = Vec::new();
        for a in self.atoms() {
            v.extend(a.data().deps.iter().copied());
        }
        v.sort();
        v.dedup();
        v
    }

    pub fn depends_on(&self, base: Atom) -> bool {
        self.terms.iter().any(|(m, _)| {
            m.factors().iter().any(|(a, e)| {
                a.depends_on(base) || e.symbolic().map(|s| s.0) == Some(base)
            })
        })
    }

    pub fn contains_derived(&self) -> bool {
        self.atoms().iter().any(|a| matches!(a.data().kind, AtomKind::Derived { .. }))
    }

    /// Differential degree when every term has the same one.
    pub fn homogeneous_grade(&self) -> Option<Q> {
        let mut g: Option<Q> = None;
        for (m, _) in &self.terms {
            let t = monomial_grade(m)?;
            match &g {
                None => g = Some(t),
                Some(h) if *h == t => {}
                _ => return None,
            }
        }
        Some(g.unwrap_or_else(Q::zero))
    }

    pub fn scale(&self, q: &Q) -> Expr {
        if q.is_zero() {
            return Expr::zero();
        }
        if q.is_one() {
            return self.clone();
        }
        Expr { terms: self.terms.iter().map(|(m, c)| (m.clone(), c * q)).collect() }
    }

    pub fn mul_monomial(&self, mono: &Monomial, q: &Q) -> Expr {
        if q.is_zero() {
            return Expr::zero();
        }
        Expr::from_terms(self.terms.iter().map(|(m, c)| (m.mul(mono), c * q)).collect())
    }

    pub fn add_ref(&self, o: &Expr) -> Expr {
        if o.terms.is_empty() {
            return self.clone();
        }
        if self.terms.is_empty() {
            return o.clone();
        }
        let mut out = Vec::with_capacity(self.terms.len() + o.terms.len());
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() && j < o.terms.len() {
            match self.terms[i].0.cmp(&o.terms[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(self.terms[i].clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(o.terms[j].clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let c = &self.terms[i].1 + &o.terms[j].1;
                    if !c.is_zero() {
                        out.push((self.terms[i].0.clone(), c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.terms[i..]);
        out.extend_from_slice(&o.terms[j..]);
        Expr { terms: out }
    }

    pub fn add_assign_ref(&mut self, o: &Expr) {
        if o.terms.is_empty() {
            return;
        }
        *self = self.add_ref(o);
    }

    /// `self += q * o`.
    pub fn add_scaled(&mut self, o: &Expr, q: &Q) {
        if q.is_zero() || o.terms.is_empty() {
            return;
        }
        *self = self.add_ref(&o.scale(q));
    }

    pub fn mul_ref(&self, o: &Expr) -> Expr {
        if self.terms.is_empty() || o.terms.is_empty() {
            return Expr::zero();
        }
        if let Some(c) = o.as_constant() {
            return self.scale(&c);
        }
        if let Some(c) = self.as_constant() {
            return o.scale(&c);
        }
        if self.terms.len() * o.terms.len() < 64 {
            let mut v = Vec::with_capacity(self.terms.len() * o.terms.len());
            for (m1, c1) in &self.terms {
                for (m2, c2) in &o.terms {
                    v.push((m1.mul(m2), c1 * c2));
                }
            }
            return Expr::from_terms(v);
        }
        let mut acc: FxHashMap<Monomial, Q> = FxHashMap::default();
        acc.reserve(self.terms.len() * o.terms.len());
        for (m1, c1) in &self.terms {
            for (m2, c2) in &o.terms {
                let c = c1 * c2;
                acc.entry(m1.mul(m2)).and_modify(|x| *x += &c).or_insert(c);
            }
        }
        let mut v: Vec<(Monomial, Q)> = acc.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        v.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        Expr { terms: v }
    }

    pub fn pow(&self, n: u32) -> Expr {
        let mut acc = Expr::one();
        let mut base = self.clone();
        let mut k = n;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul_ref(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul_ref(&base);
            }
        }
        acc
    }

    /// Inverse of a nonzero monomial expression.
    pub fn inverse_monomial(&self) -> Result<Expr, ExprError> {
        if self.terms.is_empty() {
            return Err(ExprError::DivisionByZero);
        }
        match self.as_monomial() {
            Some((m, c)) => Ok(Expr::term(m.inverse(), c.recip())),
            None => Err(ExprError::NotInvertible(self.to_string())),
        }
    }

    /// Inverse of a monomial or a constant multiple of a power of a derived atom;
    /// other sums are registered as a new derived atom.
    pub fn inverse(&self) -> Result<Expr, ExprError> {
        if self.terms.is_empty() {
            return Err(ExprError::DivisionByZero);
        }
        if let Ok(e) = self.inverse_monomial() {
            return Ok(e);
        }
        // clear integer denominators first so that definitions never contain
        // inverted atoms: self = N / M with M a monomial
        let mut lowest: BTreeMap<Atom, i64> = BTreeMap::new();
        for (m, _) in &self.terms {
            for (a, e) in m.factors() {
                if let Some(k) = e.as_int() {
                    let v = lowest.entry(*a).or_insert(0);
                    *v = (*v).min(k);
                }
            }
        }
        let den = Monomial::from_factors(lowest.into_iter().filter(|(_, k)| *k < 0).map(|(a, k)| (a, Exponent::int(-k))).collect());
        let num = if den.is_one() {
            self.clone()
        } else {
            super::canonical::expand_positive_derived(&self.mul_monomial(&den, &Q::one())).canonical()
        };
        if num.terms.is_empty() {
            return Err(ExprError::DivisionByZero);
        }
        let den_e = super::canonical::expand_positive_derived(&Expr::term(den, Q::one()));
        if let Ok(e) = num.inverse_monomial() {
            return Ok(e.mul_ref(&den_e).canonical());
        }
        let (s, d) = Atom::derived_auto(&num).map_err(ExprError::Invalid)?;
        Ok(Expr::power(d, Exponent::int(-1)).scale(&s.recip()).mul_ref(&den_e).canonical())
    }

    /// Keeps only terms satisfying `pred`.
    pub fn filter_terms(&self, pred: impl Fn(&Monomial, &Q) -> bool) -> Expr {
        Expr { terms: self.terms.iter().filter(|(m, c)| pred(m, c)).cloned().collect() }
    }

    pub fn map_coefficients(&self, f: impl Fn(&Q) -> Q) -> Expr {
        Expr::from_terms(self.terms.iter().map(|(m, c)| (m.clone(), f(c))).collect())
    }

    /// Partial derivative with respect to a jet or parameter atom, with chain rule
    /// through logs, derived atoms and symbolic exponents.
    pub fn diff(&self, a: Atom) -> Expr {
        let mut out: Vec<(Monomial, Q)> = Vec::new();
        for (m, c) in &self.terms {
            if !m.factors().iter().any(|(b, e)| b.depends_on(a) || e.symbolic().map(|s| s.0) == Some(a)) {
                continue;
            }
            for (k, &(b, e)) in m.factors().iter().enumerate() {
                let fd = factor_partial(b, e, a);
                if fd.terms.is_empty() {
                    continue;
                }
                let rest = remove_factor(m, k);
                for (fm, fc) in fd.terms {
                    out.push((rest.mul(&fm), c * &fc));
                }
            }
        }
        Expr::from_terms(out)
    }

    /// Total x-derivative.
    pub fn total_dx(&self) -> Expr {
        let mut out: Vec<(Monomial, Q)> = Vec::with_capacity(self.terms.len() * 3);
        for (m, c) in &self.terms {
            for (k, &(b, e)) in m.factors().iter().enumerate() {
                let fd = factor_dx(b, e);
                if fd.terms.is_empty() {
                    continue;
                }
                let rest = remove_factor(m, k);
                for (fm, fc) in fd.terms {
                    out.push((rest.mul(&fm), c * &fc));
                }
            }
        }
        Expr::from_terms(out)
    }

    /// `n`-fold total x-derivative.
    pub fn total_dx_n(&self, n: u32) -> Expr {
        let mut e = self.clone();
        for _ in 0..n {
            e = e.total_dx();
        }
        e
    }
}

fn monomial_grade(m: &Monomial) -> Option<Q> {
    let mut g = Q::zero();
    for (a, e) in m.factors() {
        let ag = a.data().grade.clone()?;
        if ag.is_zero() {
            continue;
        }
        if !e.is_constant() {
            return None;
        }
        g += &(&ag * &e.constant_q());
    }
    Some(g)
}

/// Differential degree of a monomial.
pub fn monomial_grade_of(m: &Monomial) -> Option<Q> {
    monomial_grade(m)
}

fn remove_factor(m: &Monomial, k: usize) -> Monomial {
    let mut v = m.0.clone();
    v.remove(k);
    Monomial(v)
}

/// `e` as an expression `c + s * p`.
pub fn exponent_expr(e: &Exponent) -> Expr {
    let mut out = Expr::constant(e.constant_q());
    if let Some((p, (n, d))) = e.symbolic() {
        out = out.add_ref(&Expr::term(Monomial::atom(p), Q::new(n, d)));
    }
    out
}

/// `d(b^e)/db = e b^(e-1)` as an expression.
fn power_rule(b: Atom, e: Exponent) -> Expr {
    let lowered = Monomial::power(b, e.add_int(-1));
    exponent_expr(&e).mul_monomial(&lowered, &Q::one())
}

/// `d(log base)/da`.
fn log_partial(base: Atom, a: Atom) -> Expr {
    match base.data().kind.clone() {
        AtomKind::Derived { def, .. } => {
            Expr::power(base, Exponent::int(-1)).mul_ref(&def.diff(a))
        }
        _ => {
            if base == a {
                Expr::power(base, Exponent::int(-1))
            } else {
                Expr::zero()
            }
        }
    }
}

fn factor_partial(b: Atom, e: Exponent, a: Atom) -> Expr {
    let mut out = Expr::zero();
    if b.depends_on(a) {
        let data = b.data();
        let inner = match &data.kind {
            AtomKind::Jet { .. } | AtomKind::Param { .. } => {
                if b == a {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            AtomKind::Log { base } => log_partial(*base, a),
            AtomKind::Derived { def, .. } => def.diff(a),
        };
        if !inner.terms.is_empty() {
            out = power_rule(b, e).mul_ref(&inner);
        }
    }
    if let Some((p, (n, d))) = e.symbolic() {
        if p == a {
            // d/dp b^(c + s p) = s log(b) b^(c + s p)
            let m = Monomial::from_factors(vec![(b, e), (Atom::log(b), Exponent::ONE)]);
            out = out.add_ref(&Expr::term(m, Q::new(n, d)));
        }
    }
    out
}

fn factor_dx(b: Atom, e: Exponent) -> Expr {
    let data = b.data();
    let inner = match &data.kind {
        AtomKind::Jet { var, order } => Expr::atom(Atom::jet(var, order + 1)),
        AtomKind::Param { .. } => return Expr::zero(),
        AtomKind::Log { base } => {
            let bd = base.data();
            match &bd.kind {
                AtomKind::Jet { var, order } => Expr::term(
                    Monomial::from_factors(vec![
                        (Atom::jet(var, order + 1), Exponent::ONE),
                        (*base, Exponent::int(-1)),
                    ]),
                    Q::one(),
                ),
                AtomKind::Param { .. } => return Expr::zero(),
                AtomKind::Derived { .. } => base.derived_dx().mul_monomial(&Monomial::power(*base, Exponent::int(-1)), &Q::one()),
                AtomKind::Log { .. } => {
                    let ib = factor_dx(*base, Exponent::ONE);
                    ib.mul_monomial(&Monomial::power(*base, Exponent::int(-1)), &Q::one())
                }
            }
        }
        AtomKind::Derived { .. } => b.derived_dx(),
    };
    if inner.terms.is_empty() {
        return inner;
    }
    power_rule(b, e).mul_ref(&inner)
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        self.add_ref(&o)
    }
}
impl<'a> Add<&'a Expr> for &'a Expr {
    type Output = Expr;
    fn add(self, o: &Expr) -> Expr {
        self.add_ref(o)
    }
}
impl Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        self.add_ref(&-o)
    }
}
impl<'a> Sub<&'a Expr> for &'a Expr {
    type Output = Expr;
    fn sub(self, o: &Expr) -> Expr {
        self.add_ref(&-o)
    }
}
impl Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        self.mul_ref(&o)
    }
}
impl<'a> Mul<&'a Expr> for &'a Expr {
    type Output = Expr;
    fn mul(self, o: &Expr) -> Expr {
        self.mul_ref(o)
    }
}
impl Neg for Expr {
    type Output = Expr;
    fn neg(mut self) -> Expr {
        for t in self.terms.iter_mut() {
            t.1 = -t.1.clone();
        }
        self
    }
}
impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}

impl From<Q> for Expr {
    fn from(q: Q) -> Expr {
        Expr::constant(q)
    }
}
impl From<i64> for Expr {
    fn from(n: i64) -> Expr {
        Expr::int(n)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut ts: Vec<(Vec<(u8, String, u32, Exponent)>, String, &Q)> = self
            .terms
            .iter()
            .map(|(m, c)| {
                let mut key: Vec<(u8, String, u32, Exponent)> = m
                    .factors()
                    .iter()
                    .map(|(a, e)| {
                        let k = a.display_key();
                        (k.0, k.1, k.2, *e)
                    })
                    .collect();
                key.sort();
                (key, m.to_string(), c)
            })
            .collect();
        ts.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut first = true;
        for (key, ms, c) in ts {
            let neg = c.is_negative();
            let ca = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else if neg {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            first = false;
            if key.is_empty() {
                write!(f, "{ca}")?;
            } else if ca.is_one() {
                write!(f, "{ms}")?;
            } else {
                write!(f, "{ca}*{ms}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
