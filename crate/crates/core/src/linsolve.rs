//! Sparse exact Gaussian elimination over the rationals with expression right-hand sides.
//!
//! Unknowns are columns `0..ncols`; pivots are chosen at the smallest available
//! column, so the particular solution uses the earliest basis elements and sets
//! free unknowns to zero.

use crate::expr::{Expr, Q};
use std::collections::BTreeMap;

pub type SparseRow = BTreeMap<usize, Q>;

#[derive(Clone, Debug, Default)]
pub struct SparseSystem {
    pub ncols: usize,
    rows: Vec<(SparseRow, Expr)>,
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// Value of each unknown in the particular solution.
    pub particular: Vec<Expr>,
    /// Basis of the homogeneous solution space.
    pub kernel: Vec<SparseRow>,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inconsistent {
    /// Reduced right-hand side of a contradictory equation.
    pub residual: Expr,
}

impl SparseSystem {
    pub fn new(ncols: usize) -> Self {
        SparseSystem { ncols, rows: Vec::new() }
    }

    pub fn push(&mut self, row: SparseRow, rhs: Expr) {
        let row: SparseRow = row.into_iter().filter(|(_, q)| !q.is_zero()).collect();
        if row.is_empty() && rhs.is_trivially_zero() {
            return;
        }
        self.rows.push((row, rhs));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn solve(&self) -> Result<Solution, Inconsistent> {
        // pivot column -> (row normalized to pivot 1, rhs)
        let mut piv: BTreeMap<usize, (SparseRow, Expr)> = BTreeMap::new();
        // sparsest rows first limits fill-in; the reduced echelon form does not
        // depend on the row order
        let mut order: Vec<&(SparseRow, Expr)> = self.rows.iter().collect();
        order.sort_by_key(|(r, b)| (r.len(), r.keys().next().copied(), b.len()));
        for (row, rhs) in order {
            let (r, b) = reduce(row.clone(), rhs.clone(), &piv);
            match r.keys().next().copied() {
                Some(c) => {
                    let inv = r[&c].recip();
                    let r: SparseRow = r.into_iter().map(|(k, q)| (k, &q * &inv)).collect();
                    piv.insert(c, (r, b.scale(&inv)));
                }
                None => {
                    if !b.is_zero() {
                        return Err(Inconsistent { residual: b.canonical() });
                    }
                }
            }
        }
        // back substitution to reduced echelon form, highest pivot first
        let cols: Vec<usize> = piv.keys().rev().copied().collect();
        for &c in &cols {
            let (rc, bc) = piv[&c].clone();
            for (_, (r, b)) in piv.range_mut(..c) {
                if let Some(f) = r.get(&c).cloned() {
                    axpy(r, b, &-f, &rc, &bc);
                }
            }
        }
        let mut particular = vec![Expr::zero(); self.ncols];
        for (&c, (_, b)) in &piv {
            particular[c] = b.clone();
        }
        let mut kernel = Vec::new();
        for f in 0..self.ncols {
            if piv.contains_key(&f) {
                continue;
            }
            let mut v = SparseRow::new();
            v.insert(f, Q::one());
            for (&c, (r, _)) in &piv {
                if let Some(q) = r.get(&f) {
                    v.insert(c, -q.clone());
                }
            }
            kernel.push(v);
        }
        Ok(Solution { particular, kernel, rank: piv.len() })
    }
}

fn axpy(r: &mut SparseRow, b: &mut Expr, f: &Q, src: &SparseRow, sb: &Expr) {
    for (k, q) in src {
        let e = r.entry(*k).or_insert_with(Q::zero);
        *e = &*e + &(f * q);
        if e.is_zero() {
            r.remove(k);
        }
    }
    b.add_scaled(sb, f);
}

fn reduce(mut r: SparseRow, mut b: Expr, piv: &BTreeMap<usize, (SparseRow, Expr)>) -> (SparseRow, Expr) {
    let mut from = 0usize;
    loop {
        let next = r.range(from..).map(|(k, _)| *k).find(|k| piv.contains_key(k));
        let Some(c) = next else { break };
        let f = -r[&c].clone();
        let (pr, pb) = &piv[&c];
        axpy(&mut r, &mut b, &f, pr, pb);
        from = c + 1;
    }
    (r, b)
}

impl Solution {
    /// Whether `x` solves the system, decided as `x - particular` lying in the kernel span.
    pub fn contains(&self, x: &[Expr]) -> bool {
        // each kernel vector has a unit entry at its free column, which is its largest key
        let mut diff: Vec<Expr> = x.iter().zip(&self.particular).map(|(a, b)| a.add_ref(&-b)).collect();
        for v in &self.kernel {
            let free = *v.keys().next_back().unwrap();
            let t = diff[free].clone();
            if t.is_trivially_zero() {
                continue;
            }
            for (k, q) in v {
                diff[*k] = diff[*k].add_ref(&-t.scale(q));
            }
        }
        diff.iter().all(|e| e.is_zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(e: &[(usize, i64)]) -> SparseRow {
        e.iter().map(|&(k, v)| (k, Q::from_int(v))).collect()
    }

    #[test]
    fn small_system_with_kernel() {
        // x0 + x1 = 3, x1 - x2 = 1
        let mut s = SparseSystem::new(3);
        s.push(row(&[(0, 1), (1, 1)]), Expr::int(3));
        s.push(row(&[(1, 1), (2, -1)]), Expr::int(1));
        let sol = s.solve().unwrap();
        assert_eq!(sol.rank, 2);
        assert_eq!(sol.kernel.len(), 1);
        assert_eq!(sol.particular, vec![Expr::int(2), Expr::int(1), Expr::zero()]);
        assert!(sol.contains(&[Expr::int(1), Expr::int(2), Expr::int(1)]));
        assert!(!sol.contains(&[Expr::int(1), Expr::int(2), Expr::int(2)]));
    }

    #[test]
    fn inconsistent() {
        let mut s = SparseSystem::new(2);
        s.push(row(&[(0, 1), (1, 1)]), Expr::int(1));
        s.push(row(&[(0, 2), (1, 2)]), Expr::int(3));
        assert!(s.solve().is_err());
    }

    #[test]
    fn symbolic_rhs() {
        let c = Expr::param("c");
        let mut s = SparseSystem::new(1);
        s.push(row(&[(0, 3)]), c.clone());
        let sol = s.solve().unwrap();
        assert_eq!(sol.particular[0], c.scale(&Q::new(1, 3)));
    }
}
