//! Text syntax for expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' int)?
//! primary := number | name | var '#' int | log(expr) | pow(expr, expr) | '(' expr ')'
//! ```

use super::atom::{Atom, AtomKind};
use super::expr::Expr;
use super::monomial::{Exponent, Monomial};
use super::rational::Q;
use super::ExprError;
use rustc_hash::{FxHashMap, FxHashSet};

/// Names visible to the parser.
#[derive(Clone, Debug, Default)]
pub struct Scope {
    pub vars: Vec<String>,
    pub params: Vec<String>,
    derived: FxHashMap<String, Expr>,
    /// When set, only these atoms may carry negative or fractional exponents.
    invertible: Option<FxHashSet<Atom>>,
}

impl Scope {
    pub fn new<S: AsRef<str>>(vars: &[S], params: &[S]) -> Scope {
        Scope {
            vars: vars.iter().map(|s| s.as_ref().to_string()).collect(),
            params: params.iter().map(|s| s.as_ref().to_string()).collect(),
            derived: FxHashMap::default(),
            invertible: None,
        }
    }

    /// Registers a named derived atom `name := def` (def in this scope's syntax).
    pub fn define(&mut self, name: &str, def: &str) -> Result<Expr, ExprError> {
        let d = self.parse(def)?;
        let (s, a) = Atom::derived(name, &d).map_err(ExprError::Invalid)?;
        let e = Expr::atom(a).scale(&s);
        self.derived.insert(name.to_string(), e.clone());
        Ok(e)
    }

    /// Registers an existing derived atom under its own name.
    pub fn add_derived(&mut self, name: &str, e: Expr) {
        self.derived.insert(name.to_string(), e);
    }

    /// Restricts which atoms may be inverted (names in input syntax, e.g. `u#1`, `rho`).
    pub fn restrict_invertible<S: AsRef<str>>(&mut self, names: &[S]) -> Result<(), ExprError> {
        let mut set = FxHashSet::default();
        for n in names {
            let e = self.parse(n.as_ref())?;
            let (m, _) = e.as_monomial().ok_or_else(|| ExprError::Invalid(format!("{} is not an atom", n.as_ref())))?;
            for (a, _) in m.factors() {
                set.insert(*a);
            }
        }
        self.invertible = Some(set);
        Ok(())
    }

    pub fn is_invertible(&self, a: Atom) -> bool {
        if matches!(a.data().kind, AtomKind::Derived { .. }) {
            return true;
        }
        match &self.invertible {
            None => true,
            Some(s) => s.contains(&a),
        }
    }

    pub fn parse(&self, text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { s: text.as_bytes(), pos: 0, scope: self };
        let e = p.expr()?;
        p.ws();
        if p.pos != p.s.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    fn check_exponents(&self, m: &Monomial) -> Result<(), ExprError> {
        for &(a, e) in m.factors() {
            if !e.is_positive_int() && !self.is_invertible(a) {
                return Err(ExprError::NotInvertible(format!("{a} is not declared invertible")));
            }
        }
        Ok(())
    }
}

/// Parses with an all-permissive scope.
pub fn parse(text: &str, vars: &[&str], params: &[&str]) -> Result<Expr, ExprError> {
    Scope::new(vars, params).parse(text)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    scope: &'a Scope,
}

const RESERVED: &[&str] = &["eps", "epsilon"];

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Parse { pos: self.pos, msg: msg.to_string() }
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && (self.s[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.term()?;
        loop {
            if self.eat(b'+') {
                acc = acc.add_ref(&self.term()?);
            } else if self.eat(b'-') {
                acc = acc.add_ref(&-self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(b'*') {
                acc = acc.mul_ref(&self.unary()?);
            } else if self.eat(b'/') {
                let at = self.pos;
                let d = self.unary()?;
                if d.is_trivially_zero() {
                    return Err(ExprError::DivisionByZero);
                }
                let inv = d.inverse_monomial().map_err(|_| ExprError::Parse {
                    pos: at,
                    msg: format!("cannot divide by the sum {d}; declare it as a derived atom"),
                })?;
                if let Some((m, _)) = inv.as_monomial() {
                    self.scope.check_exponents(m)?;
                }
                acc = acc.mul_ref(&inv);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(-self.unary()?);
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn integer(&mut self) -> Result<i64, ExprError> {
        self.ws();
        let neg = self.eat(b'-');
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected an integer"));
        }
        let t = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
        let v: i64 = t.parse().map_err(|_| self.err("integer too large"))?;
        Ok(if neg { -v } else { v })
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let paren = self.eat(b'(');
        let n = self.integer()?;
        if paren {
            self.expect(b')')?;
        }
        if n >= 0 {
            return Ok(base.pow(n as u32));
        }
        if base.is_trivially_zero() {
            return Err(ExprError::DivisionByZero);
        }
        let inv = base.inverse_monomial().map_err(|_| self.err(&format!("negative power of the sum {base}")))?;
        if let Some((m, _)) = inv.as_monomial() {
            self.scope.check_exponents(m)?;
        }
        Ok(inv.pow((-n) as u32))
    }

    fn ident(&mut self) -> Option<String> {
        self.ws();
        let start = self.pos;
        if self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphabetic() || self.s[self.pos] == b'_') {
            self.pos += 1;
            while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
                self.pos += 1;
            }
            Some(std::str::from_utf8(&self.s[start..self.pos]).unwrap().to_string())
        } else {
            None
        }
    }

    fn number(&mut self) -> Result<Option<Q>, ExprError> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Ok(None);
        }
        let int: Q = std::str::from_utf8(&self.s[start..self.pos]).unwrap().parse().map_err(|e: String| self.err(&e))?;
        if self.pos < self.s.len() && self.s[self.pos] == b'.' {
            self.pos += 1;
            let fs = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let frac = std::str::from_utf8(&self.s[fs..self.pos]).unwrap();
            if frac.is_empty() {
                return Ok(Some(int));
            }
            let num: Q = frac.parse().map_err(|e: String| self.err(&e))?;
            let den = Q::from_int(10).pow(frac.len() as i64);
            return Ok(Some(&int + &(&num / &den)));
        }
        Ok(Some(int))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        if let Some(q) = self.number()? {
            return Ok(Expr::constant(q));
        }
        if self.eat(b'(') {
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        let at = self.pos;
        let name = match self.ident() {
            Some(n) => n,
            None => {
                if self.pos < self.s.len() && !self.s[self.pos].is_ascii() {
                    return Err(ExprError::Epsilon);
                }
                return Err(self.err("expected a number, name or '('"));
            }
        };
        if RESERVED.contains(&name.as_str()) {
            return Err(ExprError::Epsilon);
        }
        if name == "log" && self.peek() == Some(b'(') {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return self.log(arg);
        }
        if name == "pow" && self.peek() == Some(b'(') {
            self.expect(b'(')?;
            let base = self.expr()?;
            self.expect(b',')?;
            let ex = self.expr()?;
            self.expect(b')')?;
            return self.pow(base, ex);
        }
        if self.peek() == Some(b'#') {
            self.pos += 1;
            let k = self.integer()?;
            if k < 0 {
                return Err(self.err("negative jet order"));
            }
            if !self.scope.vars.contains(&name) {
                return Err(ExprError::Undeclared(name));
            }
            return Ok(Expr::jet(&name, k as u32));
        }
        if self.scope.vars.contains(&name) {
            return Ok(Expr::jet(&name, 0));
        }
        if self.scope.params.contains(&name) {
            return Ok(Expr::param(&name));
        }
        if let Some(e) = self.scope.derived.get(&name) {
            return Ok(e.clone());
        }
        let _ = at;
        Err(ExprError::Undeclared(name))
    }

    fn log(&mut self, arg: Expr) -> Result<Expr, ExprError> {
        let (m, c) = arg.as_monomial().ok_or_else(|| self.err("log of a sum is not supported; declare a derived atom"))?;
        if !c.is_one() {
            return Err(self.err("log argument must have unit coefficient"));
        }
        let mut out = Expr::zero();
        for &(a, e) in m.factors() {
            out = out.add_ref(&super::expr::exponent_expr(&e).mul_ref(&Expr::atom(Atom::log(a))));
        }
        Ok(out)
    }

    fn pow(&mut self, base: Expr, ex: Expr) -> Result<Expr, ExprError> {
        let (m, c) = base.as_monomial().ok_or_else(|| self.err("pow base must be a single atom or monomial"))?;
        if !c.is_one() {
            return Err(self.err("pow base must have unit coefficient"));
        }
        let e = affine_exponent(&ex).ok_or_else(|| self.err("pow exponent must be affine in one parameter"))?;
        let mut fs = Vec::new();
        for &(a, k) in m.factors() {
            let ke = k.mul(&e).ok_or_else(|| self.err("product of symbolic exponents"))?;
            fs.push((a, ke));
        }
        let mono = Monomial::from_factors(fs);
        self.scope.check_exponents(&mono)?;
        Ok(Expr::term(mono, Q::one()))
    }
}

/// Reads `c + s*p` from an expression.
pub fn affine_exponent(ex: &Expr) -> Option<Exponent> {
    let mut c = Q::zero();
    let mut sym: Option<(Atom, Q)> = None;
    for (m, q) in ex.terms() {
        if m.is_one() {
            c = q.clone();
            continue;
        }
        let f = m.factors();
        if f.len() != 1 || f[0].1 != Exponent::ONE || !f[0].0.is_param() || sym.is_some() {
            return None;
        }
        sym = Some((f[0].0, q.clone()));
    }
    let (cn, cd) = c.as_small()?;
    match sym {
        None => Some(Exponent::rational(cn, cd)),
        Some((p, s)) => {
            let (sn, sd) = s.as_small()?;
            Some(Exponent::affine((cn, cd), (sn, sd), p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_jets_and_powers() {
        let sc = Scope::new(&["w", "rho"], &["k"]);
        let e = sc.parse("w*w#1").unwrap();
        assert_eq!(e.to_string(), "w*w#1");
        let p = sc.parse("pow(rho,k-2)*rho#1^2").unwrap();
        assert_eq!(p.len(), 1);
        assert!(matches!(sc.parse("eps*w"), Err(ExprError::Epsilon)));
        assert!(matches!(sc.parse("q*w"), Err(ExprError::Undeclared(_))));
        assert_eq!(sc.parse("1/2*w#2 - 0.5*w#2").unwrap(), Expr::zero());
        assert!(sc.parse("1/(w+rho)").is_err());
    }

    #[test]
    fn roundtrip_display() {
        let sc = Scope::new(&["u", "rho"], &["kappa"]);
        for s in ["u#1*pow(rho,kappa-2) - 1/3*log(u#1)*u#3", "pow(u#1,-3)*u#2^2 + 7", "pow(rho,1/2)*kappa"] {
            let e = sc.parse(s).unwrap();
            let e2 = sc.parse(&e.to_string()).unwrap();
            assert_eq!(e, e2, "{s}");
        }
    }

    #[test]
    fn invertibility_is_checked() {
        let mut sc = Scope::new(&["v"], &[]);
        sc.restrict_invertible(&["v#1"]).unwrap();
        assert!(sc.parse("1/v#1").is_ok());
        assert!(matches!(sc.parse("1/v"), Err(ExprError::NotInvertible(_))));
    }
}
