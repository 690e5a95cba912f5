//! Real functions of one variable given as text, for boundary data.

use anyhow::{anyhow, Result};
use evalexpr::{ContextWithMutableFunctions, ContextWithMutableVariables, Function, HashMapContext, Node, Value};

pub struct LineFn {
    var: String,
    tree: Node,
    ctx: HashMapContext,
}

/// Integer literals become floats so that `1/2` is not integer division.
fn floatify(text: &str) -> String {
    let b = text.as_bytes();
    let mut out = String::with_capacity(text.len() + 8);
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let ident_before = i > 0 && (b[i - 1].is_ascii_alphanumeric() || b[i - 1] == b'_' || b[i - 1] == b'.');
        if c.is_ascii_digit() && !ident_before {
            let start = i;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            out.push_str(&text[start..i]);
            let next = b.get(i).copied();
            if !matches!(next, Some(b'.') | Some(b'e') | Some(b'E')) && !next.is_some_and(|n| n.is_ascii_alphabetic() || n == b'_') {
                out.push_str(".0");
            }
            continue;
        }
        out.push(c as char);
        i += 1;
    }
    out
}

type Unary = fn(f64) -> f64;

fn unary(f: Unary) -> Function {
    Function::new(move |a: &Value| Ok(Value::Float(f(a.as_number()?))))
}

impl LineFn {
    pub fn parse(text: &str, var: &str) -> Result<LineFn> {
        let tree = evalexpr::build_operator_tree(&floatify(text)).map_err(|e| anyhow!("cannot parse `{text}`: {e}"))?;
        for id in tree.iter_variable_identifiers() {
            if id != var && id != "pi" {
                return Err(anyhow!("`{text}` uses `{id}`; only `{var}` and `pi` are allowed"));
            }
        }
        let mut ctx = HashMapContext::new();
        let fs: [(&str, Unary); 11] = [
            ("sin", f64::sin),
            ("cos", f64::cos),
            ("tan", f64::tan),
            ("exp", f64::exp),
            ("ln", f64::ln),
            ("sqrt", f64::sqrt),
            ("sinh", f64::sinh),
            ("cosh", f64::cosh),
            ("tanh", f64::tanh),
            ("atan", f64::atan),
            ("abs", f64::abs),
        ];
        for (name, f) in fs {
            ctx.set_function(name.into(), unary(f))?;
        }
        ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))?;
        ctx.set_value(var.into(), Value::Float(0.0))?;
        let f = LineFn { var: var.to_string(), tree, ctx };
        f.try_eval(1.0)?;
        Ok(f)
    }

    fn try_eval(&self, x: f64) -> Result<f64> {
        let mut ctx = self.ctx.clone();
        ctx.set_value(self.var.clone(), Value::Float(x))?;
        Ok(self.tree.eval_number_with_context(&ctx)?)
    }

    /// Panics only if evaluation fails after the probe in `parse` succeeded.
    pub fn eval(&self, x: f64) -> f64 {
        self.try_eval(x).expect("expression evaluated at the probe point")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_division_is_real() {
        let f = LineFn::parse("1/2 + x^2", "x").unwrap();
        assert_eq!(f.eval(3.0), 9.5);
    }

    #[test]
    fn functions_and_pi() {
        let f = LineFn::parse("0.3*sin(2*u2) + cos(pi)", "u2").unwrap();
        assert!((f.eval(0.25) - (0.3 * 0.5f64.sin() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn foreign_variable_is_rejected() {
        assert!(LineFn::parse("u1 + u2", "u1").is_err());
    }

    #[test]
    fn floatify_keeps_decimals_and_names() {
        assert_eq!(floatify("2*x1 + 1.5e3 - 10"), "2.0*x1 + 1.5e3 - 10.0");
    }
}
