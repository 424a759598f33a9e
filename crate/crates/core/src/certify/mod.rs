//! Numeric checks of Lyapunov certificates on sampled domains.
//!
//! Every inequality `lhs <= rhs` is judged by its margin `lhs - rhs`: a
//! nonpositive margin passes, a margin within `tol (1 + |rhs|)` passes "with
//! tolerance", anything larger fails. The reported witness is the sample with
//! the largest relative margin `(lhs - rhs) / (1 + |rhs|)`.

mod rofs;
mod tau;
mod transform;

pub use rofs::{check_rofs_inf_sup, coordinate_fiber, Fiber, RofsEntry, RofsMode, RofsReport};
pub use tau::{tau_bound, TauInputs, TauReport, Q_FLOOR};
pub use transform::{build_transformed_system, compose_v_from_u};

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::compfn::{KFn, TimeGain};
use crate::dsl::{parse_expression, Dims, Env, Expr};
use crate::error::{Error, Result};
use crate::sampling::{box_samples, log_space, norm};
use crate::system::SystemDef;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedDecrease {
    pub a3: KFn,
    pub q: TimeGain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IosDecrease {
    pub a3: KFn,
    pub phi: TimeGain,
}

/// A candidate `V(t, x)` with the data of its sandwich and decrease bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCandidate {
    pub v: Expr,
    pub n: usize,
    /// Lower bound `a1(‖H(t, x)‖ + μ(t)‖x‖) <= V`.
    pub a1: KFn,
    /// Upper bound `V <= a2(β(t)‖x‖)`.
    pub a2: KFn,
    pub beta: TimeGain,
    /// `None` drops the `μ(t)‖x‖` term.
    pub mu: Option<TimeGain>,
    pub lambda: Option<f64>,
    pub relaxed: Option<RelaxedDecrease>,
    pub ios: Option<IosDecrease>,
}

impl LyapunovCandidate {
    pub fn new(v: Expr, n: usize) -> Result<Self> {
        Dims::state(n).check(&v)?;
        let cand = LyapunovCandidate {
            v,
            n,
            a1: KFn::Identity,
            a2: KFn::Identity,
            beta: TimeGain::one(),
            mu: None,
            lambda: None,
            relaxed: None,
            ios: None,
        };
        let zero = vec![0.0; n];
        for t in 0..=20u64 {
            let v0 = cand.value(t, &zero)?;
            if v0 != 0.0 {
                return Err(Error::invalid(format!("V({t}, 0) = {v0}, expected 0")));
            }
        }
        Ok(cand)
    }

    pub fn parse(v: &str, n: usize) -> Result<Self> {
        Self::new(parse_expression(v, &Dims::state(n))?, n)
    }

    pub fn with_sandwich(mut self, a1: KFn, a2: KFn, beta: TimeGain, mu: Option<TimeGain>) -> Self {
        self.a1 = a1;
        self.a2 = a2;
        self.beta = beta;
        self.mu = mu;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid(format!(
                "lambda = {lambda} is not in (0, 1)"
            )));
        }
        self.lambda = Some(lambda);
        Ok(self)
    }

    /// Requires `a3(s) <= s` on a log grid over `[1e-9, 1e9]`.
    pub fn with_relaxed(mut self, a3: KFn, q: TimeGain) -> Result<Self> {
        check_below_identity(&a3)?;
        self.relaxed = Some(RelaxedDecrease { a3, q });
        Ok(self)
    }

    pub fn with_ios(mut self, lambda: f64, a3: KFn, phi: TimeGain) -> Result<Self> {
        self = self.with_lambda(lambda)?;
        self.ios = Some(IosDecrease { a3, phi });
        Ok(self)
    }

    pub fn value(&self, t: u64, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::dim("state passed to V", self.n, x.len()));
        }
        self.v.eval(&Env::state(t as f64, x))
    }

    fn lambda(&self) -> Result<f64> {
        self.lambda
            .ok_or_else(|| Error::invalid("candidate has no contraction factor lambda"))
    }
}

fn check_below_identity(a3: &KFn) -> Result<()> {
    let mut grid = vec![0.0];
    grid.extend(log_space(1e-9, 1e9, 181));
    for s in grid {
        let v = a3.eval(s)?;
        if v > s {
            return Err(Error::invalid(format!("a3({s}) = {v} exceeds {s}")));
        }
    }
    Ok(())
}

/// Sample points `(t, x)` and the disturbances and inputs paired with them.
#[derive(Debug, Clone)]
pub struct SampleGrid {
    pub times: Vec<u64>,
    pub states: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl SampleGrid {
    /// Disturbances default to the box corners plus a 9-point grid, inputs
    /// to zero.
    pub fn new(sys: &SystemDef, times: Vec<u64>, states: Vec<Vec<f64>>) -> Self {
        SampleGrid {
            times,
            states,
            disturbances: box_samples(&sys.d_box, 9, 0, 0),
            inputs: vec![vec![0.0; sys.k]],
        }
    }

    pub fn with_disturbances(mut self, d: Vec<Vec<f64>>) -> Self {
        self.disturbances = d;
        self
    }

    pub fn with_inputs(mut self, u: Vec<Vec<f64>>) -> Self {
        self.inputs = u;
        self
    }

    fn tx(&self) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.times.len() * self.states.len());
        for &t in &self.times {
            for x in &self.states {
                out.push(Point {
                    t,
                    x: x.clone(),
                    d: Vec::new(),
                    u: Vec::new(),
                });
            }
        }
        out
    }

    fn txd(&self, with_u: bool) -> Vec<Point> {
        let zero_u = [Vec::new()];
        let us: &[Vec<f64>] = if with_u { &self.inputs } else { &zero_u };
        let mut out = Vec::new();
        for &t in &self.times {
            for x in &self.states {
                for d in &self.disturbances {
                    for u in us {
                        out.push(Point {
                            t,
                            x: x.clone(),
                            d: d.clone(),
                            u: u.clone(),
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Point {
    t: u64,
    x: Vec<f64>,
    d: Vec<f64>,
    u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    PassTolerance,
    Fail,
}

impl Verdict {
    pub fn of(margin: f64, rhs: f64, tol: f64) -> Verdict {
        if margin <= 0.0 {
            Verdict::Pass
        } else if margin <= tol * (1.0 + rhs.abs()) {
            Verdict::PassTolerance
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self != Verdict::Fail
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::PassTolerance => "pass (tolerance)",
            Verdict::Fail => "fail",
        }
    }

    fn combine(self, other: Verdict) -> Verdict {
        use Verdict::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (PassTolerance, _) | (_, PassTolerance) => PassTolerance,
            _ => Pass,
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: u64,
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub u: Vec<f64>,
    /// Measured output `h(t, x)`.
    pub y: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inequality {
    pub name: &'static str,
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub worst_relative: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
    /// Sample indices whose verdict is `fail`, in sample order.
    #[serde(skip)]
    pub failing: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub check: String,
    pub verdict: Verdict,
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub samples: usize,
    pub tol: f64,
    pub inequalities: Vec<Inequality>,
    pub notes: Vec<String>,
}

impl CertificateReport {
    fn from_parts(
        check: &str,
        tol: f64,
        inequalities: Vec<Inequality>,
        notes: Vec<String>,
    ) -> Self {
        let verdict = inequalities
            .iter()
            .fold(Verdict::Pass, |acc, i| acc.combine(i.verdict));
        let worst = inequalities
            .iter()
            .max_by(|a, b| a.worst_relative.total_cmp(&b.worst_relative))
            .expect("at least one inequality");
        CertificateReport {
            check: check.to_string(),
            verdict,
            worst_margin: worst.worst_margin,
            witness: worst.witness.clone(),
            samples: inequalities.iter().map(|i| i.samples).sum(),
            tol,
            inequalities,
            notes,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

/// The inequalities that can be evaluated at a single point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// `a1(‖H(t, x)‖ + μ(t)‖x‖) <= V(t, x)`
    SandwichLower,
    /// `V(t, x) <= a2(β(t)‖x‖)`
    SandwichUpper,
    /// `V(t+1, f(t, d, x)) <= λ V(t, x)`
    Contraction,
    /// `V(t+1, f(t, d, x)) <= V(t, x) - a3(V(t, x)) + q(t)`
    Relaxed,
    /// `V(t+1, f(t, d, x, u)) <= λ V(t, x) + a3(φ(t)‖u‖)`
    Ios,
}

impl CheckKind {
    fn name(self) -> &'static str {
        match self {
            CheckKind::SandwichLower => "sandwich lower",
            CheckKind::SandwichUpper => "sandwich upper",
            CheckKind::Contraction => "contraction",
            CheckKind::Relaxed => "relaxed decrease",
            CheckKind::Ios => "ios decrease",
        }
    }
}

/// `(lhs, rhs)` of one inequality at one point. Reports re-evaluate their
/// witnesses through this function.
pub fn evaluate(
    kind: CheckKind,
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    t: u64,
    x: &[f64],
    d: &[f64],
    u: &[f64],
) -> Result<(f64, f64)> {
    let tf = t as f64;
    let v = cand.value(t, x)?;
    let next_v = |u: &[f64]| -> Result<f64> {
        let next = sys.step_unchecked(t, x, d, u)?;
        cand.value(t + 1, &next)
    };
    match kind {
        CheckKind::SandwichLower => {
            let mut arg = norm(&sys.output(t, x)?);
            if let Some(mu) = &cand.mu {
                arg += mu.eval(tf)? * norm(x);
            }
            Ok((cand.a1.eval(arg)?, v))
        }
        CheckKind::SandwichUpper => Ok((v, cand.a2.eval(cand.beta.eval(tf)? * norm(x))?)),
        CheckKind::Contraction => {
            let zero = vec![0.0; sys.k];
            Ok((next_v(&zero)?, cand.lambda()? * v))
        }
        CheckKind::Relaxed => {
            let r = cand
                .relaxed
                .as_ref()
                .ok_or_else(|| Error::invalid("candidate has no relaxed decrease data (a3, q)"))?;
            let zero = vec![0.0; sys.k];
            Ok((next_v(&zero)?, v - r.a3.eval(v)? + r.q.eval(tf)?))
        }
        CheckKind::Ios => {
            let ios = cand
                .ios
                .as_ref()
                .ok_or_else(|| Error::invalid("candidate has no input-gain data (a3, phi)"))?;
            let gain = ios.a3.eval(ios.phi.eval(tf)? * norm(u))?;
            Ok((next_v(u)?, cand.lambda()? * v + gain))
        }
    }
}

fn run(
    kind: CheckKind,
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    points: &[Point],
    tol: f64,
) -> Result<Inequality> {
    if points.is_empty() {
        return Err(Error::invalid("empty sample set"));
    }
    for p in points {
        if !p.d.is_empty() && !sys.contains_disturbance(&p.d) {
            return Err(Error::invalid(format!(
                "sampled disturbance {:?} lies outside D",
                p.d
            )));
        }
    }
    let values = points
        .par_iter()
        .map(|p| evaluate(kind, sys, cand, p.t, &p.x, &p.d, &p.u).map_err(|e| e.at_step(p.t)))
        .collect::<Result<Vec<_>>>()?;
    let mut verdict = Verdict::Pass;
    let mut worst_rel = f64::NEG_INFINITY;
    let mut worst = (0usize, 0.0, 0.0);
    let mut failing = Vec::new();
    for (i, &(lhs, rhs)) in values.iter().enumerate() {
        let margin = lhs - rhs;
        let v = Verdict::of(margin, rhs, tol);
        if v == Verdict::Fail {
            failing.push(i);
        }
        verdict = verdict.combine(v);
        let rel = margin / (1.0 + rhs.abs());
        if rel > worst_rel {
            worst_rel = rel;
            worst = (i, lhs, rhs);
        }
    }
    let (i, lhs, rhs) = worst;
    let p = &points[i];
    Ok(Inequality {
        name: kind.name(),
        verdict,
        worst_margin: lhs - rhs,
        worst_relative: worst_rel,
        witness: Some(Witness {
            t: p.t,
            x: p.x.clone(),
            d: p.d.clone(),
            u: p.u.clone(),
            y: sys.measure(p.t, &p.x)?,
            lhs,
            rhs,
            margin: lhs - rhs,
        }),
        samples: points.len(),
        failing,
    })
}

fn require_unforced(sys: &SystemDef, check: &str) -> Result<()> {
    if sys.k != 0 {
        return Err(Error::invalid(format!(
            "{check} needs an unforced system (k = 0); close the loop first"
        )));
    }
    Ok(())
}

pub fn check_sandwich(
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    samples: &SampleGrid,
    tol: f64,
) -> Result<CertificateReport> {
    let pts = samples.tx();
    let lower = run(CheckKind::SandwichLower, sys, cand, &pts, tol)?;
    let upper = run(CheckKind::SandwichUpper, sys, cand, &pts, tol)?;
    let notes = vec![format!(
        "a1 = {}, a2 = {}, beta = {}, mu = {}",
        cand.a1.describe(),
        cand.a2.describe(),
        cand.beta.describe(),
        cand.mu
            .as_ref()
            .map_or("none".to_string(), TimeGain::describe)
    )];
    Ok(CertificateReport::from_parts(
        "sandwich",
        tol,
        vec![lower, upper],
        notes,
    ))
}

pub fn check_contraction(
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    samples: &SampleGrid,
    tol: f64,
) -> Result<CertificateReport> {
    require_unforced(sys, "the contraction check")?;
    let lambda = cand.lambda()?;
    let ineq = run(CheckKind::Contraction, sys, cand, &samples.txd(false), tol)?;
    Ok(CertificateReport::from_parts(
        "contraction",
        tol,
        vec![ineq],
        vec![format!("lambda = {lambda:?}")],
    ))
}

pub fn check_relaxed_decrease(
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    samples: &SampleGrid,
    tol: f64,
) -> Result<CertificateReport> {
    require_unforced(sys, "the relaxed decrease check")?;
    let r = cand
        .relaxed
        .as_ref()
        .ok_or_else(|| Error::invalid("candidate has no relaxed decrease data (a3, q)"))?;
    let mut notes = vec![format!("a3 = {}, q = {}", r.a3.describe(), r.q.describe())];
    if let Some(lambda) = cand.lambda {
        notes.push(format!("lambda = {lambda:?}"));
    }
    let ineq = run(CheckKind::Relaxed, sys, cand, &samples.txd(false), tol)?;
    Ok(CertificateReport::from_parts(
        "relaxed-decrease",
        tol,
        vec![ineq],
        notes,
    ))
}

pub fn check_ios_decrease(
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    samples: &SampleGrid,
    tol: f64,
) -> Result<CertificateReport> {
    let ios = cand
        .ios
        .as_ref()
        .ok_or_else(|| Error::invalid("candidate has no input-gain data (a3, phi)"))?;
    let notes = vec![format!(
        "lambda = {:?}, a3 = {}, phi = {}",
        cand.lambda()?,
        ios.a3.describe(),
        ios.phi.describe()
    )];
    let ineq = run(CheckKind::Ios, sys, cand, &samples.txd(true), tol)?;
    Ok(CertificateReport::from_parts(
        "ios-decrease",
        tol,
        vec![ineq],
        notes,
    ))
}
