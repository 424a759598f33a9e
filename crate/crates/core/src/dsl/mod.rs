//! Scalar expression language over `(t, x, d, u)` used to define systems,
//! Lyapunov candidates, comparison functions and reconstruction maps in text.
//!
//! `a^b` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. `|x|^(1/2)` is spelled `abs(x)^0.5`. `0^0` evaluates to 1.

mod ast;
mod eval;
mod parser;

pub use ast::{BinOp, Constant, Expr, Func, Var};
pub use eval::Env;

use crate::error::Result;

/// Variables an expression may reference: `x1..xn`, `d1..dm`, `u1..uk`,
/// `t`, plus named auxiliary reals (`s`, `y0`, `u0`, ...). Auxiliary names
/// shadow the built-in spellings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub aux: Vec<String>,
}

impl Dims {
    pub fn new(n: usize, m: usize, k: usize) -> Self {
        Dims {
            n,
            m,
            k,
            aux: Vec::new(),
        }
    }

    /// Only `t` and the given auxiliary names.
    pub fn aux_only<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Dims {
            aux: names.into_iter().map(Into::into).collect(),
            ..Dims::default()
        }
    }

    pub fn state(n: usize) -> Self {
        Dims::new(n, 0, 0)
    }

    /// Returns an error if `e` references a variable outside these dims.
    pub fn check(&self, e: &Expr) -> Result<()> {
        let mut bad = None;
        e.for_each_var(&mut |v| {
            let ok = match v {
                Var::T => true,
                Var::X(i) => *i < self.n,
                Var::D(i) => *i < self.m,
                Var::U(i) => *i < self.k,
                Var::Aux { index, name } => {
                    self.aux.get(*index).map(String::as_str) == Some(name.as_ref())
                }
            };
            if !ok && bad.is_none() {
                bad = Some(v.to_string());
            }
        });
        match bad {
            None => Ok(()),
            Some(name) => Err(crate::Error::UnknownIdentifier { name, pos: 0 }),
        }
    }
}

/// Parses `text` and validates every variable against `dims`.
pub fn parse_expression(text: &str, dims: &Dims) -> Result<Expr> {
    parser::Parser::parse(text, dims)
}

/// Parses a closed numeric expression such as `(2+e)/(2*e)`.
pub fn parse_number(text: &str) -> Result<f64> {
    let e = parse_expression(text, &Dims::default())?;
    if e.depends_on(&|_| true) {
        return Err(crate::Error::invalid(format!("`{text}` is not a constant")));
    }
    e.eval(&Env::time(0.0))
}

/// Evaluates `e` in `env`.
pub fn eval_expression(e: &Expr, env: &Env<'_>) -> Result<f64> {
    e.eval(env)
}
