//! Jet-space calculus: total derivatives, grading, variational derivatives,
//! the Helmholtz test and homotopy reconstruction of densities.

use crate::diffop::{DiffOp, MatOp};
use crate::expr::{Atom, AtomKind, Bindings, Expr, ExprError, Monomial, Q};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum JetError {
    #[error("expression is not homogeneous in the differential grading: {0}")]
    Inhomogeneous(String),
    #[error("density is not representable by the homotopy formula: {0}")]
    NotRepresentable(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Total x-derivative (the chain rule over every jet atom).
pub fn total_x_derivative(e: &Expr) -> Expr {
    e.total_dx()
}

/// Differential degree; jets of order m count m, everything else 0.
pub fn grade_of(e: &Expr) -> Result<Q, JetError> {
    e.homogeneous_grade().ok_or_else(|| JetError::Inhomogeneous(e.to_string()))
}

/// Highest order of `var` among the base atoms of `e`, if any.
pub fn max_order(e: &Expr, var: &str) -> Option<u32> {
    e.base_atoms()
        .into_iter()
        .filter_map(|a| a.as_jet().filter(|(v, _)| &**v == var).map(|(_, m)| m))
        .max()
}

/// `delta h / delta u^var = sum_s (-d)^s dh/du^var_(s)`.
pub fn variational_derivative(h: &Expr, var: &str) -> Expr {
    let Some(top) = max_order(h, var) else { return Expr::zero() };
    // Horner form: p_top, then p_{s} - d(acc)
    let mut acc = Expr::zero();
    for s in (0..=top).rev() {
        let p = h.diff(Atom::jet(var, s));
        acc = p.add_ref(&-acc.total_dx());
    }
    acc
}

/// Variational derivatives with respect to every variable.
pub fn variational_gradient(h: &Expr, vars: &[String]) -> Vec<Expr> {
    vars.iter().map(|v| variational_derivative(h, v)).collect()
}

/// Substitutes `var^(m) -> d^m images[var]` for every jet of `vars` occurring in `e`.
pub fn substitute_jets(e: &Expr, vars: &[String], images: &[Expr]) -> Result<Expr, ExprError> {
    let mut b = Bindings::default();
    for (i, v) in vars.iter().enumerate() {
        let Some(top) = max_order(e, v) else { continue };
        let mut d = images[i].clone();
        for m in 0..=top {
            if m > 0 {
                d = d.total_dx();
            }
            b.insert(Atom::jet(v, m), d.clone());
        }
    }
    if b.is_empty() {
        return Ok(e.clone());
    }
    e.substitute(&b)
}

/// Fréchet derivative of a vector of functions as a matrix operator.
pub fn frechet(f: &[Expr], vars: &[String]) -> MatOp {
    let n = vars.len();
    let mut out = MatOp::zero(f.len(), n);
    for (i, fi) in f.iter().enumerate() {
        for (j, v) in vars.iter().enumerate() {
            let Some(top) = max_order(fi, v) else { continue };
            let c: Vec<Expr> = (0..=top).map(|s| fi.diff(Atom::jet(v, s))).collect();
            *out.get_mut(i, j) = DiffOp::new(c);
        }
    }
    out
}

/// Helmholtz test: `psi` is a variational derivative iff its Fréchet derivative is self-adjoint.
pub fn is_variational(psi: &[Expr], vars: &[String]) -> bool {
    let d = frechet(psi, vars);
    d.sub(&d.adjoint()).is_zero()
}

/// Two densities define the same functional iff their difference has zero
/// variational derivative.
pub fn same_functional(h1: &Expr, h2: &Expr, vars: &[String]) -> bool {
    let d = h1.add_ref(&-h2);
    variational_gradient(&d, vars).iter().all(|e| e.is_zero())
}

/// Density `h = int_0^1 sum_i u^i psi_i[lambda u] d lambda` for a variational `psi`.
///
/// Supports terms whose scaling weight under `u -> lambda u` is a rational
/// constant greater than -1, with at most one logarithm of a jet atom.
pub fn homotopy_density(psi: &[Expr], vars: &[String]) -> Result<Expr, JetError> {
    let mut out = Expr::zero();
    for (i, p) in psi.iter().enumerate() {
        let ui = Expr::jet(&vars[i], 0);
        let mut acc: Vec<(Monomial, Q)> = Vec::new();
        for (m, c) in p.terms() {
            let mut deg = Q::zero();
            let mut log_atom: Option<Atom> = None;
            for &(a, e) in m.factors() {
                match a.data().kind.clone() {
                    AtomKind::Jet { var, .. } if vars.iter().any(|v| **v == *var) => {
                        if !e.is_constant() {
                            return Err(JetError::NotRepresentable(format!("symbolic power of {a}")));
                        }
                        deg += &e.constant_q();
                    }
                    AtomKind::Jet { .. } | AtomKind::Param { .. } => {}
                    AtomKind::Log { base } => {
                        let scaled = base.data().deps.iter().any(|d| {
                            d.as_jet().map(|(v, _)| vars.iter().any(|w| **w == *v)).unwrap_or(false)
                        });
                        if scaled {
                            if log_atom.is_some() || e.as_int() != Some(1) || !base.is_jet() {
                                return Err(JetError::NotRepresentable(format!("log factor {a}^{e}")));
                            }
                            log_atom = Some(a);
                        }
                    }
                    AtomKind::Derived { .. } => {
                        return Err(JetError::NotRepresentable(format!("derived atom {a}")));
                    }
                }
            }
            let d1 = &deg + &Q::one();
            if !(Q::zero() < d1) {
                return Err(JetError::NotRepresentable(format!("scaling weight {deg} <= -1")));
            }
            let inv = d1.recip();
            acc.push((m.clone(), c * &inv));
            if let Some(l) = log_atom {
                // int lambda^d log(lambda) = -1/(d+1)^2
                let mono = m.without(l);
                acc.push((mono, -(c * &(&inv * &inv))));
            }
        }
        out = out.add_ref(&Expr::from_terms(acc).mul_ref(&ui));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn vars() -> Vec<String> {
        vec!["u".into(), "v".into()]
    }

    #[test]
    fn variational_derivative_of_kdv_density() {
        let h = parse("u^3/6 - 1/24*u#1^2", &["u"], &[]).unwrap();
        let d = variational_derivative(&h, "u");
        assert_eq!(d, parse("u^2/2 + 1/12*u#2", &["u"], &[]).unwrap());
    }

    #[test]
    fn grading() {
        let e = parse("u#3/u#1 - u#2^2/u#1^2", &["u"], &[]).unwrap();
        assert_eq!(grade_of(&e).unwrap(), Q::from_int(2));
        assert!(grade_of(&parse("u#1 + u#2", &["u"], &[]).unwrap()).is_err());
    }

    #[test]
    fn homotopy_roundtrip() {
        let v = vars();
        let h = parse("u^2*v#1 + u#1^2*v - 3*v#2^2 + u^3", &["u", "v"], &[]).unwrap();
        let psi = variational_gradient(&h, &v);
        assert!(is_variational(&psi, &v));
        let h2 = homotopy_density(&psi, &v).unwrap();
        assert!(same_functional(&h, &h2, &v));
        let not = vec![parse("u#1*v", &["u", "v"], &[]).unwrap(), Expr::zero()];
        assert!(!is_variational(&not, &v));
    }

    #[test]
    fn homotopy_with_log() {
        let v = vec!["u".to_string()];
        let h = parse("u#1*log(u#1)", &["u"], &[]).unwrap();
        let psi = variational_gradient(&h, &v);
        let h2 = homotopy_density(&psi, &v).unwrap();
        assert!(same_functional(&h, &h2, &v));
    }
}
