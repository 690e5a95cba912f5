//! Scalar and matrix differential operators with expression coefficients.

use crate::expr::{Expr, Q};
use std::fmt;

/// `sum_l c[l] * d^l` acting on functions of x.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiffOp {
    pub c: Vec<Expr>,
}

impl DiffOp {
    pub fn zero() -> DiffOp {
        DiffOp { c: Vec::new() }
    }

    /// Multiplication operator.
    pub fn mult(e: Expr) -> DiffOp {
        DiffOp::new(vec![e])
    }

    /// `d^k`.
    pub fn d(k: usize) -> DiffOp {
        let mut c = vec![Expr::zero(); k + 1];
        c[k] = Expr::one();
        DiffOp { c }
    }

    pub fn new(c: Vec<Expr>) -> DiffOp {
        let mut o = DiffOp { c };
        o.trim();
        o
    }

    fn trim(&mut self) {
        while self.c.last().map(|e| e.is_trivially_zero()).unwrap_or(false) {
            self.c.pop();
        }
    }

    pub fn order(&self) -> Option<usize> {
        if self.c.is_empty() {
            None
        } else {
            Some(self.c.len() - 1)
        }
    }

    pub fn coeff(&self, l: usize) -> Expr {
        self.c.get(l).cloned().unwrap_or_else(Expr::zero)
    }

    pub fn is_trivially_zero(&self) -> bool {
        self.c.iter().all(|e| e.is_trivially_zero())
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|e| e.is_zero())
    }

    pub fn add(&self, o: &DiffOp) -> DiffOp {
        let n = self.c.len().max(o.c.len());
        DiffOp::new((0..n).map(|l| self.coeff(l).add_ref(&o.coeff(l))).collect())
    }

    pub fn sub(&self, o: &DiffOp) -> DiffOp {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> DiffOp {
        DiffOp { c: self.c.iter().map(|e| -e).collect() }
    }

    pub fn scale(&self, q: &Q) -> DiffOp {
        DiffOp::new(self.c.iter().map(|e| e.scale(q)).collect())
    }

    /// Left multiplication by a function.
    pub fn lmul(&self, f: &Expr) -> DiffOp {
        DiffOp::new(self.c.iter().map(|e| e.mul_ref(f)).collect())
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> DiffOp {
        DiffOp::new(self.c.iter().map(f).collect())
    }

    /// `self o other`.
    pub fn compose(&self, o: &DiffOp) -> DiffOp {
        if self.c.is_empty() || o.c.is_empty() {
            return DiffOp::zero();
        }
        let la = self.c.len() - 1;
        let lb = o.c.len() - 1;
        let mut out = vec![Expr::zero(); la + lb + 1];
        for (m, b) in o.c.iter().enumerate() {
            if b.is_trivially_zero() {
                continue;
            }
            // derivatives of b_m up to the order of self
            let mut ders = Vec::with_capacity(la + 1);
            ders.push(b.clone());
            for r in 1..=la {
                let next = ders[r - 1].total_dx();
                ders.push(next);
            }
            for (l, a) in self.c.iter().enumerate() {
                if a.is_trivially_zero() {
                    continue;
                }
                for r in 0..=l {
                    if ders[r].is_trivially_zero() {
                        continue;
                    }
                    let k = l - r + m;
                    let t = a.mul_ref(&ders[r]);
                    out[k].add_scaled(&t, &Q::binomial(l as u32, r as u32));
                }
            }
        }
        DiffOp::new(out)
    }

    /// Formal adjoint `sum_l (-d)^l o c_l`.
    pub fn adjoint(&self) -> DiffOp {
        if self.c.is_empty() {
            return DiffOp::zero();
        }
        let mut out = vec![Expr::zero(); self.c.len()];
        for (l, a) in self.c.iter().enumerate() {
            if a.is_trivially_zero() {
                continue;
            }
            let sign = if l % 2 == 0 { Q::one() } else { -Q::one() };
            let mut der = a.clone();
            for r in 0..=l {
                if r > 0 {
                    der = der.total_dx();
                }
                out[l - r].add_scaled(&der, &(&sign * &Q::binomial(l as u32, r as u32)));
            }
        }
        DiffOp::new(out)
    }

    /// `sum_l c_l d^l f`.
    pub fn apply(&self, f: &Expr) -> Expr {
        let mut out = Expr::zero();
        let mut der = f.clone();
        for (l, a) in self.c.iter().enumerate() {
            if l > 0 {
                der = der.total_dx();
            }
            if !a.is_trivially_zero() {
                out = out.add_ref(&a.mul_ref(&der));
            }
        }
        out
    }

    pub fn canonical(&self) -> DiffOp {
        self.map(|e| e.canonical())
    }
}

impl fmt::Display for DiffOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (l, e) in self.c.iter().enumerate() {
            if e.is_trivially_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({e})*D^{l}")?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Matrix of differential operators, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MatOp {
    pub rows: usize,
    pub cols: usize,
    pub m: Vec<DiffOp>,
}

impl MatOp {
    pub fn zero(rows: usize, cols: usize) -> MatOp {
        MatOp { rows, cols, m: vec![DiffOp::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> MatOp {
        let mut o = MatOp::zero(n, n);
        for i in 0..n {
            o.m[i * n + i] = DiffOp::mult(Expr::one());
        }
        o
    }

    /// Multiplication by a matrix of functions.
    pub fn from_functions(rows: usize, cols: usize, f: &[Expr]) -> MatOp {
        MatOp { rows, cols, m: f.iter().map(|e| DiffOp::mult(e.clone())).collect() }
    }

    pub fn get(&self, i: usize, j: usize) -> &DiffOp {
        &self.m[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut DiffOp {
        &mut self.m[i * self.cols + j]
    }

    pub fn add(&self, o: &MatOp) -> MatOp {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols));
        MatOp { rows: self.rows, cols: self.cols, m: self.m.iter().zip(&o.m).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, o: &MatOp) -> MatOp {
        self.add(&o.neg())
    }

    pub fn neg(&self) -> MatOp {
        MatOp { rows: self.rows, cols: self.cols, m: self.m.iter().map(|a| a.neg()).collect() }
    }

    pub fn scale(&self, q: &Q) -> MatOp {
        MatOp { rows: self.rows, cols: self.cols, m: self.m.iter().map(|a| a.scale(q)).collect() }
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> MatOp {
        MatOp { rows: self.rows, cols: self.cols, m: self.m.iter().map(|a| a.map(&f)).collect() }
    }

    pub fn compose(&self, o: &MatOp) -> MatOp {
        assert_eq!(self.cols, o.rows);
        let mut out = MatOp::zero(self.rows, o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc = DiffOp::zero();
                for k in 0..self.cols {
                    let a = self.get(i, k);
                    let b = o.get(k, j);
                    if a.is_trivially_zero() || b.is_trivially_zero() {
                        continue;
                    }
                    acc = acc.add(&a.compose(b));
                }
                *out.get_mut(i, j) = acc;
            }
        }
        out
    }

    /// Formal adjoint: transpose of entrywise adjoints.
    pub fn adjoint(&self) -> MatOp {
        let mut out = MatOp::zero(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.get_mut(j, i) = self.get(i, j).adjoint();
            }
        }
        out
    }

    pub fn apply(&self, v: &[Expr]) -> Vec<Expr> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                let mut acc = Expr::zero();
                for j in 0..self.cols {
                    acc = acc.add_ref(&self.get(i, j).apply(&v[j]));
                }
                acc
            })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().all(|a| a.is_zero())
    }

    pub fn is_trivially_zero(&self) -> bool {
        self.m.iter().all(|a| a.is_trivially_zero())
    }

    pub fn canonical(&self) -> MatOp {
        self.map(|e| e.canonical())
    }

    /// Highest derivative order over all entries.
    pub fn order(&self) -> Option<usize> {
        self.m.iter().filter_map(|a| a.order()).max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn compose_and_adjoint() {
        let f = parse("u", &["u"], &[]).unwrap();
        let a = DiffOp::new(vec![Expr::zero(), f.clone()]); // u d
        let d = DiffOp::d(1);
        // d o u = u d + u_x
        let c = d.compose(&DiffOp::mult(f.clone()));
        assert_eq!(c, DiffOp::new(vec![f.total_dx(), f.clone()]));
        // (u d)^+ = -d o u = -u d - u_x
        assert_eq!(a.adjoint(), c.neg());
        assert_eq!(a.adjoint().adjoint(), a);
    }
}
