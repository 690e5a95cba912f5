//! Exponents (rational, optionally affine in one parameter) and monomials.

use super::atom::Atom;
use super::rational::Q;
use smallvec::SmallVec;
use std::fmt;

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn reduce(n: i64, d: i64) -> (i32, i32) {
    let (n, d) = if d < 0 { (-n, -d) } else { (n, d) };
    let g = gcd(n, d).max(1);
    let (n, d) = (n / g, d / g);
    (i32::try_from(n).expect("exponent overflow"), i32::try_from(d).expect("exponent overflow"))
}

/// Exponent `c + s * p` with rational `c`, `s` and an optional parameter atom `p`.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Exponent {
    num: i32,
    den: i32,
    /// parameter atom index + 1 (0 when the exponent is constant)
    sym: u32,
    snum: i32,
    sden: i32,
}

impl Exponent {
    pub const ZERO: Exponent = Exponent { num: 0, den: 1, sym: 0, snum: 0, sden: 1 };
    pub const ONE: Exponent = Exponent { num: 1, den: 1, sym: 0, snum: 0, sden: 1 };

    pub fn int(n: i64) -> Exponent {
        Exponent::rational(n, 1)
    }

    pub fn rational(n: i64, d: i64) -> Exponent {
        let (num, den) = reduce(n, d);
        Exponent { num, den, sym: 0, snum: 0, sden: 1 }
    }

    /// `c + s * param`.
    pub fn affine(c: (i64, i64), s: (i64, i64), param: Atom) -> Exponent {
        let (num, den) = reduce(c.0, c.1);
        let (snum, sden) = reduce(s.0, s.1);
        if snum == 0 {
            return Exponent { num, den, sym: 0, snum: 0, sden: 1 };
        }
        Exponent { num, den, sym: param.0 + 1, snum, sden }
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0 && self.sym == 0
    }

    pub fn is_integer(&self) -> bool {
        self.sym == 0 && self.den == 1
    }

    pub fn is_constant(&self) -> bool {
        self.sym == 0
    }

    pub fn as_int(&self) -> Option<i64> {
        if self.is_integer() {
            Some(self.num as i64)
        } else {
            None
        }
    }

    /// Constant part as `(num, den)`.
    pub fn constant(&self) -> (i64, i64) {
        (self.num as i64, self.den as i64)
    }

    pub fn constant_q(&self) -> Q {
        Q::new(self.num as i64, self.den as i64)
    }

    /// Parameter and its rational coefficient, if symbolic.
    pub fn symbolic(&self) -> Option<(Atom, (i64, i64))> {
        if self.sym == 0 {
            None
        } else {
            Some((Atom(self.sym - 1), (self.snum as i64, self.sden as i64)))
        }
    }

    /// Strictly negative constant exponent.
    pub fn is_negative(&self) -> bool {
        self.sym == 0 && self.num < 0
    }

    /// Positive integer exponent.
    pub fn is_positive_int(&self) -> bool {
        self.is_integer() && self.num > 0
    }

    pub fn add(&self, o: &Exponent) -> Exponent {
        let (num, den) = reduce(
            self.num as i64 * o.den as i64 + o.num as i64 * self.den as i64,
            self.den as i64 * o.den as i64,
        );
        let (sym, snum, sden) = match (self.sym, o.sym) {
            (0, 0) => (0, 0, 1),
            (a, 0) => (a, self.snum, self.sden),
            (0, b) => (b, o.snum, o.sden),
            (a, b) => {
                assert_eq!(a, b, "exponents affine in different parameters");
                let (n, d) = reduce(
                    self.snum as i64 * o.sden as i64 + o.snum as i64 * self.sden as i64,
                    self.sden as i64 * o.sden as i64,
                );
                if n == 0 {
                    (0, 0, 1)
                } else {
                    (a, n, d)
                }
            }
        };
        Exponent { num, den, sym, snum, sden }
    }

    /// Whether the two exponents can be added (same or no parameter).
    pub fn compatible(&self, o: &Exponent) -> bool {
        self.sym == 0 || o.sym == 0 || self.sym == o.sym
    }

    /// Product of two exponents; at most one of them may be symbolic.
    pub fn mul(&self, o: &Exponent) -> Option<Exponent> {
        match (self.sym, o.sym) {
            (0, _) => Some(o.scale(self.num as i64, self.den as i64)),
            (_, 0) => Some(self.scale(o.num as i64, o.den as i64)),
            _ => None,
        }
    }

    pub fn neg(&self) -> Exponent {
        Exponent { num: -self.num, den: self.den, sym: self.sym, snum: -self.snum, sden: self.sden }
    }

    pub fn add_int(&self, k: i64) -> Exponent {
        self.add(&Exponent::int(k))
    }

    /// Multiplies by a rational constant.
    pub fn scale(&self, n: i64, d: i64) -> Exponent {
        let (num, den) = reduce(self.num as i64 * n, self.den as i64 * d);
        if self.sym == 0 {
            return Exponent { num, den, sym: 0, snum: 0, sden: 1 };
        }
        let (snum, sden) = reduce(self.snum as i64 * n, self.sden as i64 * d);
        if snum == 0 {
            return Exponent { num, den, sym: 0, snum: 0, sden: 1 };
        }
        Exponent { num, den, sym: self.sym, snum, sden }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.constant_q();
        match self.symbolic() {
            None => write!(f, "{}", c),
            Some((p, (n, d))) => {
                let s = Q::new(n, d);
                let sym = if s.is_one() {
                    format!("{p}")
                } else if s == -Q::one() {
                    format!("-{p}")
                } else {
                    format!("{s}*{p}")
                };
                if c.is_zero() {
                    write!(f, "{sym}")
                } else if c.is_negative() {
                    write!(f, "{sym}-{}", c.abs())
                } else {
                    write!(f, "{sym}+{c}")
                }
            }
        }
    }
}

impl fmt::Debug for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Product of atom powers, sorted by atom, with no zero exponents.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(pub(crate) SmallVec<[(Atom, Exponent); 4]>);

impl Monomial {
    pub fn one() -> Monomial {
        Monomial(SmallVec::new())
    }

    pub fn atom(a: Atom) -> Monomial {
        Monomial::power(a, Exponent::ONE)
    }

    pub fn power(a: Atom, e: Exponent) -> Monomial {
        let mut v = SmallVec::new();
        if !e.is_zero() {
            v.push((a, e));
        }
        Monomial(v)
    }

    /// Builds a monomial from unsorted factors, merging repeats.
    pub fn from_factors(mut f: Vec<(Atom, Exponent)>) -> Monomial {
        f.sort_by_key(|x| x.0);
        let mut out: SmallVec<[(Atom, Exponent); 4]> = SmallVec::new();
        for (a, e) in f {
            if let Some(last) = out.last_mut() {
                if last.0 == a {
                    last.1 = last.1.add(&e);
                    if last.1.is_zero() {
                        out.pop();
                    }
                    continue;
                }
            }
            if !e.is_zero() {
                out.push((a, e));
            }
        }
        Monomial(out)
    }

    pub fn factors(&self) -> &[(Atom, Exponent)] {
        &self.0
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn exponent_of(&self, a: Atom) -> Exponent {
        match self.0.binary_search_by_key(&a, |x| x.0) {
            Ok(i) => self.0[i].1,
            Err(_) => Exponent::ZERO,
        }
    }

    pub fn mul(&self, o: &Monomial) -> Monomial {
        if o.0.is_empty() {
            return self.clone();
        }
        if self.0.is_empty() {
            return o.clone();
        }
        let mut out: SmallVec<[(Atom, Exponent); 4]> = SmallVec::with_capacity(self.0.len() + o.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < o.0.len() {
            let (a, ea) = self.0[i];
            let (b, eb) = o.0[j];
            if a < b {
                out.push((a, ea));
                i += 1;
            } else if b < a {
                out.push((b, eb));
                j += 1;
            } else {
                let e = ea.add(&eb);
                if !e.is_zero() {
                    out.push((a, e));
                }
                i += 1;
                j += 1;
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&o.0[j..]);
        Monomial(out)
    }

    pub fn inverse(&self) -> Monomial {
        Monomial(self.0.iter().map(|(a, e)| (*a, e.neg())).collect())
    }

    /// Multiplies every exponent by `n/d`.
    pub fn pow_rational(&self, n: i64, d: i64) -> Monomial {
        Monomial(self.0.iter().map(|(a, e)| (*a, e.scale(n, d))).filter(|x| !x.1.is_zero()).collect())
    }

    /// Replaces the exponent of `a`.
    pub fn with_exponent(&self, a: Atom, e: Exponent) -> Monomial {
        let mut v = self.0.clone();
        match v.binary_search_by_key(&a, |x| x.0) {
            Ok(i) => {
                if e.is_zero() {
                    v.remove(i);
                } else {
                    v[i].1 = e;
                }
            }
            Err(i) => {
                if !e.is_zero() {
                    v.insert(i, (a, e));
                }
            }
        }
        Monomial(v)
    }

    pub fn without(&self, a: Atom) -> Monomial {
        self.with_exponent(a, Exponent::ZERO)
    }

    pub fn contains(&self, a: Atom) -> bool {
        self.0.binary_search_by_key(&a, |x| x.0).is_ok()
    }

    /// Atoms whose exponents mention `p` symbolically.
    pub fn has_symbolic_in(&self, p: Atom) -> bool {
        self.0.iter().any(|(_, e)| e.symbolic().map(|s| s.0) == Some(p))
    }

    /// Splits into (part made of atoms selected by `pred`, remainder).
    pub fn split(&self, pred: impl Fn(Atom) -> bool) -> (Monomial, Monomial) {
        let mut a = SmallVec::new();
        let mut b = SmallVec::new();
        for &(x, e) in &self.0 {
            if pred(x) {
                a.push((x, e));
            } else {
                b.push((x, e));
            }
        }
        (Monomial(a), Monomial(b))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        let mut fs: Vec<(Atom, Exponent)> = self.0.to_vec();
        fs.sort_by_cached_key(|(a, _)| a.display_key());
        let mut first = true;
        for (a, e) in fs {
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == Exponent::ONE {
                write!(f, "{a}")?;
            } else if e.is_integer() && e.as_int().unwrap() > 0 {
                write!(f, "{a}^{e}")?;
            } else {
                write!(f, "pow({a},{e})")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
