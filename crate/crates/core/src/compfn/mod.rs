//! Comparison functions: class K / K∞ gains of a scalar `s`, class K⁺ time
//! gains, and KL envelopes `σ(s, t)`.

mod fit;
mod validate;

pub use fit::{
    check_domination, fit_kl_envelope, fit_points, DominationGrid, DominationReport, EnvelopeFit,
    FitPoint, FitTarget, GrowthSampler,
};
pub use validate::{validate_class, AxiomResult, Candidate, ClassReport, ClassTag, GridConfig};

use serde::Serialize;

use crate::dsl::{parse_expression, Dims, Env, Expr, Var};
use crate::error::{Error, Result};

fn s_dims() -> Dims {
    Dims::aux_only(["s"])
}

fn s_var() -> Expr {
    Expr::Var(Var::Aux {
        index: 0,
        name: "s".into(),
    })
}

/// A class K (or K∞) function of one nonnegative argument.
#[derive(Debug, Clone, PartialEq)]
pub enum KFn {
    Identity,
    /// `c s`
    Linear(f64),
    /// `c s^p`
    Power {
        coef: f64,
        exp: f64,
    },
    /// `a s + b sqrt(s)`
    AffineRoot {
        lin: f64,
        root: f64,
    },
    /// Any expression in the variable `s`.
    Expr(Expr),
    /// `outer(inner(s))`
    Compose(Box<KFn>, Box<KFn>),
}

impl KFn {
    pub fn parse(text: &str) -> Result<KFn> {
        Ok(KFn::Expr(parse_expression(text, &s_dims())?))
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        Ok(match self {
            KFn::Identity => s,
            KFn::Linear(c) => c * s,
            KFn::Power { coef, exp } => coef * s.powf(*exp),
            KFn::AffineRoot { lin, root } => lin * s + root * s.sqrt(),
            KFn::Expr(e) => e.eval(&Env::aux(0.0, &[s]))?,
            KFn::Compose(outer, inner) => outer.eval(inner.eval(s)?)?,
        })
    }

    /// `v ↦ s` with `self(s) = v`; closed form where available, otherwise
    /// bisection on a bracket grown by doubling.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        if v <= 0.0 {
            return Ok(0.0);
        }
        Ok(match self {
            KFn::Identity => v,
            KFn::Linear(c) => v / c,
            KFn::Power { coef, exp } => (v / coef).powf(1.0 / exp),
            KFn::AffineRoot { lin, root } if *lin > 0.0 => {
                let r = (-root + (root * root + 4.0 * lin * v).sqrt()) / (2.0 * lin);
                r * r
            }
            KFn::AffineRoot { root, .. } => (v / root).powi(2),
            KFn::Compose(outer, inner) => inner.inverse(outer.inverse(v)?)?,
            KFn::Expr(_) => self.bisect_inverse(v)?,
        })
    }

    fn bisect_inverse(&self, v: f64) -> Result<f64> {
        let mut hi = 1.0;
        while self.eval(hi)? < v {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Unbounded(format!(
                    "{} never reaches {v}",
                    self.describe()
                )));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid)? < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// The function as an expression in the auxiliary variable `s`.
    pub fn to_expr(&self) -> Expr {
        let s = s_var();
        match self {
            KFn::Identity => s,
            KFn::Linear(c) => Expr::mul(Expr::Num(*c), s),
            KFn::Power { coef, exp } => Expr::mul(Expr::Num(*coef), Expr::pow(s, Expr::Num(*exp))),
            KFn::AffineRoot { lin, root } => Expr::add(
                Expr::mul(Expr::Num(*lin), s.clone()),
                Expr::mul(
                    Expr::Num(*root),
                    Expr::call(crate::dsl::Func::Sqrt, vec![s]),
                ),
            ),
            KFn::Expr(e) => e.clone(),
            KFn::Compose(outer, inner) => {
                let inner = inner.to_expr();
                outer.to_expr().substitute(&|v| match v {
                    Var::Aux { .. } => Some(inner.clone()),
                    _ => None,
                })
            }
        }
    }

    /// `self` applied to `arg`, as an expression (the `s` slot replaced).
    pub fn apply_expr(&self, arg: &Expr) -> Expr {
        self.to_expr().substitute(&|v| match v {
            Var::Aux { .. } => Some(arg.clone()),
            _ => None,
        })
    }

    pub fn describe(&self) -> String {
        format!("s -> {}", self.to_expr())
    }
}

/// A time gain: a class K⁺ function (positive), or a nonnegative weight `q`
/// expected to decay to zero.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeGain {
    Const(f64),
    /// `scale * ratio^t`
    Geometric {
        scale: f64,
        ratio: f64,
    },
    /// Any expression in `t`.
    Expr(Expr),
}

/// Horizon over which suprema of non-geometric gains are taken.
pub const SUP_WINDOW: u64 = 10_000;

impl TimeGain {
    pub fn parse(text: &str) -> Result<TimeGain> {
        Ok(TimeGain::Expr(parse_expression(text, &Dims::default())?))
    }

    pub fn one() -> TimeGain {
        TimeGain::Const(1.0)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        Ok(match self {
            TimeGain::Const(c) => *c,
            TimeGain::Geometric { scale, ratio } => scale * ratio.powf(t),
            TimeGain::Expr(e) => e.eval(&Env::time(t))?,
        })
    }

    /// `sup_{t >= from} g(t)`: exact for constant and non-increasing geometric
    /// gains, otherwise a maximum over `[from, from + SUP_WINDOW]`.
    pub fn sup_from(&self, from: u64) -> Result<f64> {
        match self {
            TimeGain::Const(c) => Ok(*c),
            TimeGain::Geometric { ratio, .. } if *ratio <= 1.0 => self.eval(from as f64),
            TimeGain::Geometric { .. } => Err(Error::Unbounded(format!(
                "{} grows without bound",
                self.describe()
            ))),
            TimeGain::Expr(_) => self.max_on(from, from + SUP_WINDOW),
        }
    }

    /// `max_{lo <= t <= hi} g(t)` over integers.
    pub fn max_on(&self, lo: u64, hi: u64) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for t in lo..=hi {
            best = best.max(self.eval(t as f64)?);
        }
        Ok(best)
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            TimeGain::Const(c) => Expr::Num(*c),
            TimeGain::Geometric { scale, ratio } => Expr::mul(
                Expr::Num(*scale),
                Expr::pow(Expr::Num(*ratio), Expr::Var(Var::T)),
            ),
            TimeGain::Expr(e) => e.clone(),
        }
    }

    /// The gain as an expression evaluated at `at` instead of `t`.
    pub fn expr_at(&self, at: &Expr) -> Expr {
        self.to_expr().substitute(&|v| match v {
            Var::T => Some(at.clone()),
            _ => None,
        })
    }

    pub fn describe(&self) -> String {
        format!("t -> {}", self.to_expr())
    }
}

/// A class KL function `σ(s, t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Sigma {
    /// `gain * s * exp(-rate * t)`
    Exponential { gain: f64, rate: f64 },
    /// Any expression in `s` and `t`.
    Expr(Expr),
}

impl Sigma {
    pub fn parse(text: &str) -> Result<Sigma> {
        Ok(Sigma::Expr(parse_expression(text, &s_dims())?))
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        match self {
            Sigma::Exponential { gain, rate } => Ok(gain * s * (-rate * t).exp()),
            Sigma::Expr(e) => e.eval(&Env::aux(t, &[s])),
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            Sigma::Exponential { gain, rate } => Expr::mul(
                Expr::mul(Expr::Num(*gain), s_var()),
                Expr::call(
                    crate::dsl::Func::Exp,
                    vec![Expr::Neg(Box::new(Expr::mul(
                        Expr::Num(*rate),
                        Expr::Var(Var::T),
                    )))],
                ),
            ),
            Sigma::Expr(e) => e.clone(),
        }
    }

    pub fn describe(&self) -> String {
        format!("(s, t) -> {}", self.to_expr())
    }

    /// The same envelope with its gain multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Sigma {
        match self {
            Sigma::Exponential { gain, rate } => Sigma::Exponential {
                gain: gain * factor,
                rate: *rate,
            },
            Sigma::Expr(e) => Sigma::Expr(Expr::mul(Expr::Num(factor), e.clone())),
        }
    }
}

/// A KL envelope together with its initial-time gain: the bound
/// `σ(β(t0) ‖x0‖, t - t0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KLEnvelope {
    pub sigma: Sigma,
    pub beta: TimeGain,
}

impl KLEnvelope {
    pub fn bound(&self, t0: u64, x0_norm: f64, t: u64) -> Result<f64> {
        let s = self.beta.eval(t0 as f64)? * x0_norm;
        self.sigma.eval(s, (t - t0) as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Descriptor {
    pub kind: &'static str,
    pub expr: String,
}

impl From<&TimeGain> for Descriptor {
    fn from(g: &TimeGain) -> Self {
        let kind = match g {
            TimeGain::Const(_) => "constant",
            TimeGain::Geometric { .. } => "geometric",
            TimeGain::Expr(_) => "expression",
        };
        Descriptor {
            kind,
            expr: g.to_expr().to_string(),
        }
    }
}
