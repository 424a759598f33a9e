use super::ast::{BinOp, Expr, Func, Var};
use crate::error::{Error, Result};

/// Values for every variable kind. Time is carried as a real.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub d: &'a [f64],
    pub u: &'a [f64],
    pub aux: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: &'a [f64], d: &'a [f64], u: &'a [f64]) -> Self {
        Env {
            t,
            x,
            d,
            u,
            aux: &[],
        }
    }

    pub fn time(t: f64) -> Self {
        Env::new(t, &[], &[], &[])
    }

    pub fn state(t: f64, x: &'a [f64]) -> Self {
        Env::new(t, x, &[], &[])
    }

    pub fn aux(t: f64, aux: &'a [f64]) -> Self {
        Env {
            aux,
            ..Env::time(t)
        }
    }

    pub fn with_aux(self, aux: &'a [f64]) -> Self {
        Env { aux, ..self }
    }
}

fn domain(e: &Expr, reason: &str) -> Error {
    Error::Domain {
        expr: e.to_string(),
        reason: reason.to_string(),
    }
}

fn lookup(slice: &[f64], i: usize, v: &Var) -> Result<f64> {
    slice.get(i).copied().ok_or_else(|| Error::Dimension {
        what: format!("environment slot for `{v}`"),
        expected: i + 1,
        got: slice.len(),
    })
}

impl Expr {
    pub fn eval(&self, env: &Env<'_>) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Const(c) => c.value(),
            Expr::Var(var) => match var {
                Var::T => env.t,
                Var::X(i) => lookup(env.x, *i, var)?,
                Var::D(i) => lookup(env.d, *i, var)?,
                Var::U(i) => lookup(env.u, *i, var)?,
                Var::Aux { index, .. } => lookup(env.aux, *index, var)?,
            },
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(domain(self, "division by zero"));
                        }
                        a / b
                    }
                    BinOp::Pow => power(self, a, b)?,
                }
            }
            Expr::Call(func, args) => {
                let arg = |i: usize| args[i].eval(env);
                match func {
                    Func::Exp => arg(0)?.exp(),
                    Func::Log => {
                        let a = arg(0)?;
                        if a <= 0.0 {
                            return Err(domain(self, "log of a non-positive number"));
                        }
                        a.ln()
                    }
                    Func::Abs => arg(0)?.abs(),
                    Func::Sqrt => {
                        let a = arg(0)?;
                        if a < 0.0 {
                            return Err(domain(self, "sqrt of a negative number"));
                        }
                        a.sqrt()
                    }
                    Func::Sign => {
                        let a = arg(0)?;
                        if a > 0.0 {
                            1.0
                        } else if a < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Min | Func::Max => {
                        let mut acc = arg(0)?;
                        for i in 1..args.len() {
                            let v = arg(i)?;
                            acc = if *func == Func::Min {
                                acc.min(v)
                            } else {
                                acc.max(v)
                            };
                        }
                        acc
                    }
                    Func::Pow => power(self, arg(0)?, arg(1)?)?,
                }
            }
        };
        if v.is_nan() {
            return Err(domain(self, "result is not a number"));
        }
        if v.is_infinite() {
            return Err(domain(self, "overflow"));
        }
        Ok(v)
    }
}

fn power(e: &Expr, base: f64, exp: f64) -> Result<f64> {
    if base == 0.0 && exp < 0.0 {
        return Err(domain(e, "zero raised to a negative power"));
    }
    if base < 0.0 && exp.fract() != 0.0 {
        return Err(domain(e, "negative base with non-integer exponent"));
    }
    // powf already gives 0^0 = 1
    Ok(base.powf(exp))
}
