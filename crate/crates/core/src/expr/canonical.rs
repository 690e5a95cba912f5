//! Exact zero testing and canonical reduction with respect to derived atoms.
//!
//! A derived atom `D := def` appears with negative exponents. Every expression
//! is brought to the form `N_0 + sum_k D^-k R_k` where `R_k` has degree below
//! `deg_m def` in a chosen main variable `m`; this form is unique, so the zero
//! test becomes structural.

use super::atom::{Atom, AtomKind};
use super::expr::Expr;
use super::monomial::{Exponent, Monomial};
use super::rational::Q;
use std::collections::BTreeMap;

/// Main variable of a definition: an atom of nonnegative integer degree `d`
/// whose leading coefficient is a single invertible monomial.
fn main_variable(def: &Expr) -> Option<(Atom, i64, Monomial, Q)> {
    let candidates: Vec<Atom> = def
        .atoms()
        .into_iter()
        .filter(|a| matches!(a.data().kind, AtomKind::Jet { .. } | AtomKind::Param { .. }))
        .collect();
    let mut best: Option<((bool, u32), (Atom, i64, Monomial, Q))> = None;
    'cand: for a in candidates {
        let mut deg = 0i64;
        for (m, _) in def.terms() {
            let e = m.exponent_of(a);
            match e.as_int() {
                Some(k) if k >= 0 => deg = deg.max(k),
                _ => continue 'cand,
            }
            if m.factors().iter().any(|(_, x)| x.symbolic().map(|s| s.0) == Some(a)) {
                continue 'cand;
            }
        }
        if deg == 0 {
            continue;
        }
        let lead: Vec<&(Monomial, Q)> =
            def.terms().iter().filter(|(m, _)| m.exponent_of(a).as_int() == Some(deg)).collect();
        if lead.len() == 1 {
            let (m, c) = lead[0];
            let lm = m.without(a);
            // prefer constant leading coefficients, then high jet orders
            let key = (lm.is_one(), a.as_jet().map(|x| x.1).unwrap_or(0));
            if best.as_ref().map(|b| key > b.0).unwrap_or(true) {
                best = Some((key, (a, deg, lm, c.clone())));
            }
        }
    }
    best.map(|b| b.1)
}

fn derived_atoms(e: &Expr) -> Vec<Atom> {
    e.atoms().into_iter().filter(|a| matches!(a.data().kind, AtomKind::Derived { .. })).collect()
}

/// Replaces positive powers of derived atoms by their definitions.
pub fn expand_positive_derived(e: &Expr) -> Expr {
    let ds = derived_atoms(e);
    if ds.is_empty() {
        return e.clone();
    }
    let mut out: Vec<(Monomial, Q)> = Vec::new();
    let mut extra = Expr::zero();
    for (m, c) in e.terms() {
        let pos: Vec<(Atom, i64)> = m
            .factors()
            .iter()
            .filter(|(a, x)| ds.contains(a) && x.is_positive_int())
            .map(|(a, x)| (*a, x.as_int().unwrap()))
            .collect();
        if pos.is_empty() {
            out.push((m.clone(), c.clone()));
            continue;
        }
        let mut mono = m.clone();
        for (a, _) in &pos {
            mono = mono.without(*a);
        }
        let mut t = Expr::term(mono, c.clone());
        for (a, k) in pos {
            t = t.mul_ref(&a.definition().unwrap().pow(k as u32));
        }
        extra = extra.add_ref(&t);
    }
    Expr::from_terms(out).add_ref(&extra)
}

/// Division of `n` by `def` as a polynomial in the main variable.
/// Returns `(quotient, remainder)` with `deg_m remainder < deg`.
fn divide(n: &Expr, def: &Expr, m: Atom, deg: i64, lead: &Monomial, lc: &Q) -> (Expr, Expr) {
    let lead_inv = lead.inverse();
    let lc_inv = lc.recip();
    let mut rem = n.clone();
    let mut quo: Vec<(Monomial, Q)> = Vec::new();
    loop {
        let mut qt: Vec<(Monomial, Q)> = Vec::new();
        for (mono, c) in rem.terms() {
            let k = mono.exponent_of(m).as_int().unwrap_or(0);
            if k >= deg {
                let q = mono.with_exponent(m, Exponent::int(k - deg)).mul(&lead_inv);
                qt.push((q, c * &lc_inv));
            }
        }
        if qt.is_empty() {
            break;
        }
        let qe = Expr::from_terms(qt);
        rem = rem.sub(&qe.mul_ref(def));
        quo.extend(qe.into_terms());
    }
    (Expr::from_terms(quo), rem)
}

trait SubRef {
    fn sub(&self, o: &Expr) -> Expr;
}
impl SubRef for Expr {
    fn sub(&self, o: &Expr) -> Expr {
        self.add_ref(&-o)
    }
}

/// Canonical reduction with respect to one derived atom. `None` when no main
/// variable exists or the main variable appears with negative powers.
fn reduce_one(e: &Expr, d: Atom) -> Option<Expr> {
    let def = d.definition()?;
    let (m, deg, lead, lc) = main_variable(&def)?;
    // negative powers of the main variable: reduce m^s e and divide back
    let mut low = 0i64;
    for (mono, _) in e.terms() {
        low = low.min(mono.exponent_of(m).as_int()?);
    }
    if low < 0 {
        let up = Monomial::power(m, Exponent::int(-low));
        let r = reduce_one(&e.mul_monomial(&up, &Q::one()), d)?;
        return Some(r.mul_monomial(&up.inverse(), &Q::one()));
    }
    // group by power of d
    let mut by_pow: BTreeMap<i64, Vec<(Monomial, Q)>> = BTreeMap::new();
    for (mono, c) in e.terms() {
        let k = mono.exponent_of(d).as_int()?;
        let x = mono.exponent_of(m);
        if !(x.is_integer() && x.as_int().unwrap() >= 0) {
            return None;
        }
        if mono.factors().iter().any(|(_, x)| x.symbolic().map(|s| s.0) == Some(m)) {
            return None;
        }
        by_pow.entry(k).or_default().push((mono.without(d), c.clone()));
    }
    let mut n: BTreeMap<i64, Expr> = by_pow.into_iter().map(|(k, v)| (k, Expr::from_terms(v))).collect();
    // positive powers into N_0
    let pos: Vec<i64> = n.keys().copied().filter(|k| *k > 0).collect();
    for k in pos {
        let t = n.remove(&k).unwrap().mul_ref(&def.pow(k as u32));
        let z = n.entry(0).or_insert_with(Expr::zero);
        *z = z.add_ref(&t);
    }
    let mut out = n.remove(&0).unwrap_or_else(Expr::zero);
    let mut k = n.keys().copied().min().unwrap_or(0);
    let mut carry = Expr::zero();
    while k < 0 {
        let cur = n.remove(&k).unwrap_or_else(Expr::zero).add_ref(&carry);
        let (q, r) = divide(&cur, &def, m, deg, &lead, &lc);
        out = out.add_ref(&r.mul_monomial(&Monomial::power(d, Exponent::int(k)), &Q::one()));
        carry = q;
        k += 1;
    }
    Some(out.add_ref(&carry))
}

impl Expr {
    /// Canonical form: derived atoms reduced to remainders, positive powers expanded.
    /// Falls back to full expansion over a common denominator when no canonical
    /// main variable exists (the result is then zero-equivalent but not unique).
    pub fn canonical(&self) -> Expr {
        let ds = derived_atoms(self);
        if ds.is_empty() {
            return self.clone();
        }
        let mut cur = self.clone();
        for d in &ds {
            match reduce_one(&cur, *d) {
                Some(r) => cur = r,
                None => return expand_positive_derived(self),
            }
        }
        // a later reduction may reintroduce an earlier atom's positive powers
        if derived_atoms(&cur).iter().any(|d| cur.terms().iter().any(|(m, _)| m.exponent_of(*d).is_positive_int())) {
            return expand_positive_derived(&cur);
        }
        cur
    }

    /// Exact semantic zero test.
    pub fn is_zero(&self) -> bool {
        if self.is_trivially_zero() {
            return true;
        }
        let ds = derived_atoms(self);
        if ds.is_empty() {
            return false;
        }
        if ds.len() == 1 {
            if let Some(r) = reduce_one(self, ds[0]) {
                return r.is_trivially_zero();
            }
        }
        clear_denominators(self).is_trivially_zero()
    }

    /// Semantic equality.
    pub fn equals(&self, o: &Expr) -> bool {
        self.add_ref(&-o).is_zero()
    }

    /// True when the canonical form contains no negative powers of derived atoms.
    pub fn is_free_of_derived_denominators(&self) -> bool {
        let c = self.canonical();
        derived_atoms(&c).is_empty()
    }
}

/// Multiplies by a common power product of derived atoms and expands every
/// derived atom; the result is zero iff the input is zero.
pub fn clear_denominators(e: &Expr) -> Expr {
    let mut cur = e.clone();
    loop {
        let ds = derived_atoms(&cur);
        if ds.is_empty() {
            return cur;
        }
        let d = ds[0];
        let mut min = 0i64;
        for (m, _) in cur.terms() {
            if let Some(k) = m.exponent_of(d).as_int() {
                min = min.min(k);
            }
        }
        let shifted = cur.mul_monomial(&Monomial::power(d, Exponent::int(-min)), &Q::one());
        let def = d.definition().unwrap();
        let mut out = Expr::zero();
        let mut by_pow: BTreeMap<i64, Vec<(Monomial, Q)>> = BTreeMap::new();
        for (m, c) in shifted.terms() {
            let k = m.exponent_of(d).as_int().unwrap_or(0);
            by_pow.entry(k).or_default().push((m.without(d), c.clone()));
        }
        for (k, v) in by_pow {
            out = out.add_ref(&Expr::from_terms(v).mul_ref(&def.pow(k as u32)));
        }
        cur = out;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_atom_reduces() {
        let u1 = Expr::jet("cz_u1", 0);
        let u2 = Expr::jet("cz_u2", 0);
        let (s, d) = Atom::derived("cz_d12", &(&u1 - &u2)).unwrap();
        assert!(s.is_one());
        let dinv = Expr::power(d, Exponent::int(-1));
        // (u1^2 - u2^2)/(u1 - u2) = u1 + u2
        let e = (&(&u1 * &u1) - &(&u2 * &u2)) * dinv.clone();
        assert!(e.canonical().equals(&(&u1 + &u2)));
        assert_eq!(e.canonical(), &u1 + &u2);
        let z = &(&e - &u1) - &u2;
        assert!(z.is_zero());
        assert!(!(&z + &dinv).is_zero());
    }
}
