use serde::Serialize;

use crate::compfn::{KFn, TimeGain, SUP_WINDOW};
use crate::error::{Error, Result};

/// Lower floor substituted for `q(t)` in the denominator, so that a `q`
/// that reaches exactly zero does not divide by zero.
pub const Q_FLOOR: f64 = 1e-300;

/// Longest `τ̃` scanned before the bound is declared unattainable.
const SCAN_LIMIT: u64 = 100_000;
/// The same for expression-valued `q`, whose suprema are tabulated.
const SCAN_LIMIT_EXPR: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct TauInputs {
    pub a1: KFn,
    pub a2: KFn,
    pub a3: KFn,
    pub beta: TimeGain,
    pub q: TimeGain,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauReport {
    pub tau: u64,
    pub tau_tilde: u64,
    pub num: f64,
    pub den: f64,
    /// `floor(num / den)`; the bracket in the formula is read as the integer part.
    pub quotient: u64,
    pub q_floor_used: bool,
}

/// `sup_{t >= from} q(t)`: exact for constant and geometric `q`; for
/// expressions, suffix maxima of a table reaching `SUP_WINDOW` past the end
/// of the scan.
struct TailSup<'a> {
    q: &'a TimeGain,
    suffix: Vec<f64>,
}

impl<'a> TailSup<'a> {
    fn new(q: &'a TimeGain, last: u64) -> Result<Self> {
        let mut suffix = Vec::new();
        if let TimeGain::Expr(_) = q {
            let end = last + SUP_WINDOW;
            suffix = (0..=end).map(|t| q.eval(t as f64)).collect::<Result<_>>()?;
            for i in (0..suffix.len() - 1).rev() {
                suffix[i] = suffix[i].max(suffix[i + 1]);
            }
        }
        Ok(TailSup { q, suffix })
    }

    fn at(&self, from: u64) -> Result<f64> {
        match self.q {
            TimeGain::Expr(_) => {
                self.suffix.get(from as usize).copied().ok_or_else(|| {
                    Error::Unbounded(format!("q tail beyond t = {from} not tabulated"))
                })
            }
            _ => self.q.sup_from(from),
        }
    }
}

/// Attainment time `τ(ε, T, R) = T + τ̃ + floor(num / den) + 1` of the
/// relaxed-decrease certificate, where `τ̃` is the least integer with
/// `a3⁻¹(2 S(τ̃)) + S(τ̃) <= a1(ε)`, `S(τ) = sup_{t >= τ} q(t)`,
/// `num = a2(R max_{t0 <= T} β(t0)) + a3⁻¹(q_max) + q_max` and
/// `den = S(T + τ̃)`.
pub fn tau_bound(inp: &TauInputs, eps: f64, horizon_t: u64, radius: f64) -> Result<TauReport> {
    if !(eps > 0.0) || radius < 0.0 {
        return Err(Error::invalid("tau bound needs eps > 0 and R >= 0"));
    }
    let target = inp.a1.eval(eps)?;
    let limit = match inp.q {
        TimeGain::Expr(_) => SCAN_LIMIT_EXPR,
        _ => SCAN_LIMIT,
    };
    let tail = TailSup::new(&inp.q, limit + horizon_t)?;
    let mut tau_tilde = None;
    for tau in 0..=limit {
        let s = tail.at(tau)?;
        if inp.a3.inverse(2.0 * s)? + s <= target {
            tau_tilde = Some(tau);
            break;
        }
    }
    let tau_tilde = tau_tilde.ok_or_else(|| {
        Error::Unbounded(format!(
            "no tau up to {limit} brings the residual below a1({eps}) = {target}"
        ))
    })?;
    let q_max = tail.at(0)?;
    let beta_max = inp.beta.max_on(0, horizon_t)?;
    let num = inp.a2.eval(radius * beta_max)? + inp.a3.inverse(q_max)? + q_max;
    let raw_den = tail.at(horizon_t + tau_tilde)?;
    let q_floor_used = !(raw_den >= Q_FLOOR);
    let den = if q_floor_used { Q_FLOOR } else { raw_den };
    let ratio = (num / den).floor();
    if !(ratio < u64::MAX as f64) {
        return Err(Error::Unbounded(format!(
            "num / den = {num} / {den} overflows"
        )));
    }
    let quotient = ratio as u64;
    Ok(TauReport {
        tau: horizon_t + tau_tilde + quotient + 1,
        tau_tilde,
        num,
        den,
        quotient,
        q_floor_used,
    })
}
