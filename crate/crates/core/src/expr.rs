//! Closed-form coefficient expressions in the variables `x`, `y`, `t`.
//!
//! Supports `+ - * / ^`, parentheses, `sin`, `cos`, `exp`, `sqrt`, `abs`
//! and the constants `pi` and `e`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cannot parse expression `{source_text}`: {message}")]
pub struct ExprError {
    pub source_text: String,
    pub message: String,
}

#[derive(Clone)]
pub struct Expression {
    text: String,
    expr: Arc<meval::Expr>,
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let err = |message: String| ExprError {
            source_text: text.to_string(),
            message,
        };
        let expr: meval::Expr = text.parse().map_err(|e: meval::Error| err(e.to_string()))?;
        let e = Expression {
            text: text.to_string(),
            expr: Arc::new(expr),
        };
        // catches unknown variables and functions at parse time
        e.try_eval(0.5, 0.5, 0.5).map_err(err)?;
        Ok(e)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn try_eval(&self, x: f64, y: f64, t: f64) -> Result<f64, String> {
        let ctx = meval::Context::new();
        self.expr
            .eval_with_context(((("x", x), ("y", y)), (("t", t), &ctx)))
            .map_err(|e| e.to_string())
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        self.try_eval(x, y, t).expect("validated at parse time")
    }

    /// True when the expression does not mention `t`.
    pub fn is_time_independent(&self) -> bool {
        let probe = [(0.3, 0.7), (0.11, 0.59), (0.83, 0.27)];
        probe
            .iter()
            .all(|&(x, y)| self.eval(x, y, 0.0).to_bits() == self.eval(x, y, 1.37).to_bits())
    }
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.text)
    }
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_in_xyt() {
        let e = Expression::parse("1 + sin(pi*x)/2 + y*t^2").unwrap();
        let v = e.eval(0.5, 2.0, 3.0);
        assert!((v - 19.5).abs() < 1e-14);
        assert!(!e.is_time_independent());
        assert!(Expression::parse("exp(-x)*cos(y)").unwrap().is_time_independent());
    }

    #[test]
    fn rejects_unknown_names() {
        assert!(Expression::parse("z + 1").is_err());
        assert!(Expression::parse("1 +").is_err());
        assert!(Expression::parse("foo(x)").is_err());
    }
}
