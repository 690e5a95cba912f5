//! Exact symbolic kernel: rational coefficients, interned atoms, sparse expressions.

pub mod atom;
pub mod canonical;
#[allow(clippy::module_inception)]
pub mod expr;
pub mod monomial;
pub mod parse;
pub mod rational;
pub mod subst;

pub use atom::{Atom, AtomKind};
pub use expr::{exponent_expr, Expr};
pub use monomial::{Exponent, Monomial};
pub use parse::{parse, Scope};
pub use rational::Q;
pub use subst::Bindings;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("undeclared identifier `{0}`")]
    Undeclared(String),
    #[error("the deformation parameter is not an expression atom; give each power of it as a separate slot")]
    Epsilon,
    #[error("division by zero")]
    DivisionByZero,
    #[error("not invertible: {0}")]
    NotInvertible(String),
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error("{0}")]
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustc_hash::FxHashMap;

    fn sc() -> Scope {
        Scope::new(&["u", "rho", "w", "v"], &["kappa"])
    }

    #[test]
    fn cancellation_and_exponent_merge() {
        let s = sc();
        assert!(s.parse("u*u#1 - u#1*u").unwrap().is_trivially_zero());
        let a = s.parse("pow(rho,kappa-2)*rho^2").unwrap();
        assert_eq!(a, s.parse("pow(rho,kappa)").unwrap());
    }

    #[test]
    fn derivative_of_symbolic_power() {
        let s = sc();
        let rho = Atom::jet("rho", 0);
        let d = s.parse("pow(rho,kappa-2)").unwrap().diff(rho);
        assert_eq!(d, s.parse("(kappa-2)*pow(rho,kappa-3)").unwrap());
        let kappa = Atom::param("kappa");
        let dk = s.parse("pow(rho,kappa)").unwrap().diff(kappa);
        assert_eq!(dk, s.parse("pow(rho,kappa)*log(rho)").unwrap());
    }

    #[test]
    fn total_derivative_chain_rule() {
        let s = sc();
        let e = s.parse("log(v#1)").unwrap().total_dx();
        assert_eq!(e, s.parse("v#2/v#1").unwrap());
        let e = s.parse("pow(rho,kappa)").unwrap().total_dx();
        assert_eq!(e, s.parse("kappa*pow(rho,kappa-1)*rho#1").unwrap());
    }

    #[test]
    fn substitution_into_inverse_zero_image_fails() {
        let s = sc();
        let e = s.parse("1/u#1").unwrap();
        let b: Bindings = [(Atom::jet("u", 1), s.parse("v#1 - v#1").unwrap())].into_iter().collect();
        assert_eq!(e.substitute(&b), Err(ExprError::DivisionByZero));
        let b: Bindings = [(Atom::jet("u", 1), s.parse("2*v#1").unwrap())].into_iter().collect();
        assert_eq!(e.substitute(&b).unwrap(), s.parse("1/2/v#1").unwrap());
    }

    #[test]
    fn numeric_symbolic_power() {
        let s = sc();
        let e = s.parse("pow(rho,kappa)").unwrap();
        let mut p = FxHashMap::default();
        p.insert(Atom::jet("rho", 0), 4.0);
        p.insert(Atom::param("kappa"), 0.5);
        assert!((e.eval(&p).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn substituting_parameter_value_into_exponent() {
        let s = sc();
        let e = s.parse("pow(rho,kappa-2)").unwrap();
        let b: Bindings = [(Atom::param("kappa"), Expr::int(3))].into_iter().collect();
        assert_eq!(e.substitute(&b).unwrap(), s.parse("rho").unwrap());
    }
}
