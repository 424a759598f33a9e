//! The three worked examples, each bundled with the data its certificates
//! and estimates need, plus a self-test that runs every bundle through its
//! own checks.

use std::f64::consts::E;

use serde::Serialize;

use crate::certify::{
    check_contraction, check_relaxed_decrease, check_sandwich, tau_bound, LyapunovCandidate,
    SampleGrid, TauInputs,
};
use crate::compfn::{KFn, KLEnvelope, Sigma, TimeGain};
use crate::dsl::{parse_expression, Dims, Expr};
use crate::error::{Error, Result};
use crate::sampling::{cartesian, log_space};
use crate::stability::{
    check_ios_estimate, run_scenario, scenario, test_output_attractivity, FalsifyBudget, IosForm,
};
use crate::synth::{
    check_reconstruction, run_output_feedback, synthesize_delay_controller, DelayChainController,
    ObservabilityChain, ReconSamples, ReconstructionMap, Retraction,
};
use crate::system::{DisturbancePolicy, Feedback, SystemDef};

pub const EXAMPLE_NAMES: [&str; 3] = ["example_2_3", "example_3_4", "example_4_7"];

/// `r` used by `example_4_7` when none is given.
pub const DEFAULT_R: f64 = 0.5;

/// `λ = (2 + e) / (2e)`.
pub fn lambda_2_3() -> f64 {
    (2.0 + E) / (2.0 * E)
}

/// `K = 1 / (1 - 2/e)`.
pub fn k_3_4() -> f64 {
    1.0 / (1.0 - 2.0 / E)
}

/// `c = log(2 / (1 + 2/e))`.
pub fn c_3_4() -> f64 {
    (2.0 / (1.0 + 2.0 / E)).ln()
}

const F_UNFORCED: [&str; 2] = ["d1*x1", "2^(-t)*d1*abs(x1)^0.5"];
const F_FORCED: [&str; 2] = ["d1*x1", "2^(-t)*d1*abs(x1)^0.5+u1"];
const F_PLANT: [&str; 3] = ["x2", "x2^2+u1", "d1*x3+exp(t)*x2"];
const V_2_3: &str = "exp(-t)*abs(x1)+abs(x2)";
const V_4_7: &str = "abs(x1)+3*exp(t)*abs(x2)+abs(x3)";
const K_4_7: &str = "-x2^2";
const PSI_4_7: &str = "-(y1^2+u0)^2";

#[derive(Debug, Clone)]
pub struct Example23 {
    pub system: SystemDef,
    /// `V = e^{-t}|x1| + |x2|` with `a1 = a2 = id`, `β ≡ 2`, `λ`,
    /// `a3(s) = (1 - λ) s` and `q(t) = (2e/(e-2)) (e/4)^t`.
    pub candidate: LyapunovCandidate,
    pub lambda: f64,
    pub tau: TauInputs,
}

#[derive(Debug, Clone)]
pub struct Example34 {
    pub system: SystemDef,
    /// Same dynamics with the input removed.
    pub unforced: SystemDef,
    /// `σ(s, t) = 6K e^{-ct} s`, `β ≡ 1`.
    pub envelope: KLEnvelope,
    /// `ρ(s) = s/3`, `γ ≡ 1`.
    pub form: IosForm,
    pub k: f64,
    pub c: f64,
    /// `V(t, x) = e^{-t}|x1| + |x2|`.
    pub v: Expr,
}

#[derive(Debug, Clone)]
pub struct Example47 {
    pub r: f64,
    pub system: SystemDef,
    pub feedback: Vec<Expr>,
    pub closed_loop: SystemDef,
    /// `V = |x1| + 3e^t|x2| + |x3|` with `a1 = a2 = id`, `β(t) = 5e^t`,
    /// `λ = max(2/3, r)`.
    pub candidate: LyapunovCandidate,
    pub lambda: f64,
    pub psi: ReconstructionMap,
    pub controller: DelayChainController,
}

#[derive(Debug, Clone)]
pub enum Example {
    E23(Example23),
    E34(Example34),
    E47(Example47),
}

pub fn example_2_3() -> Result<Example23> {
    let system = SystemDef::parse(
        "example_2_3",
        2,
        1,
        0,
        vec![(-2.0, 2.0)],
        &F_UNFORCED,
        &["x2"],
        &["x2"],
    )?;
    let lambda = lambda_2_3();
    let a3 = KFn::Linear(1.0 - lambda);
    let q = TimeGain::Geometric {
        scale: 2.0 * E / (E - 2.0),
        ratio: E / 4.0,
    };
    let beta = TimeGain::Const(2.0);
    let candidate = LyapunovCandidate::parse(V_2_3, 2)?
        .with_sandwich(KFn::Identity, KFn::Identity, beta.clone(), None)
        .with_lambda(lambda)?
        .with_relaxed(a3.clone(), q.clone())?;
    Ok(Example23 {
        system,
        candidate,
        lambda,
        tau: TauInputs {
            a1: KFn::Identity,
            a2: KFn::Identity,
            a3,
            beta,
            q,
        },
    })
}

pub fn example_3_4() -> Result<Example34> {
    let system = SystemDef::parse(
        "example_3_4",
        2,
        1,
        1,
        vec![(-2.0, 2.0)],
        &F_FORCED,
        &["x2"],
        &["x2"],
    )?;
    let unforced = SystemDef::parse(
        "example_3_4_unforced",
        2,
        1,
        0,
        vec![(-2.0, 2.0)],
        &F_UNFORCED,
        &["x2"],
        &["x2"],
    )?;
    let (k, c) = (k_3_4(), c_3_4());
    Ok(Example34 {
        system,
        unforced,
        envelope: KLEnvelope {
            sigma: Sigma::Exponential {
                gain: 6.0 * k,
                rate: c,
            },
            beta: TimeGain::one(),
        },
        form: IosForm::Max {
            rho: KFn::Linear(1.0 / 3.0),
            gamma: TimeGain::one(),
        },
        k,
        c,
        v: parse_expression(V_2_3, &Dims::state(2))?,
    })
}

pub fn example_4_7(r: f64) -> Result<Example47> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::invalid(format!(
            "r = {r} is outside the range [0, 1)"
        )));
    }
    let system = SystemDef::parse(
        "example_4_7",
        3,
        1,
        1,
        vec![(-r, r)],
        &F_PLANT,
        &["x1", "x2", "x3"],
        &["x1"],
    )?;
    let fb = Feedback::parse_state(3, &[K_4_7])?;
    let closed_loop = system.closed_loop(&fb)?;
    let Feedback::State(feedback) = fb else {
        unreachable!("parse_state builds state feedback")
    };
    let lambda = (2.0f64 / 3.0).max(r);
    let candidate = LyapunovCandidate::parse(V_4_7, 3)?
        .with_sandwich(
            KFn::Identity,
            KFn::Identity,
            TimeGain::parse("5*exp(t)")?,
            None,
        )
        .with_lambda(lambda)?;
    let psi = ReconstructionMap::parse(1, 1, 1, &[PSI_4_7])?;
    let controller = synthesize_delay_controller(psi.clone(), 1, Retraction::Identity)?;
    Ok(Example47 {
        r,
        system,
        feedback,
        closed_loop,
        candidate,
        lambda,
        psi,
        controller,
    })
}

/// Looks up a registry entry; `r` applies to `example_4_7` only.
pub fn load_example(name: &str, r: Option<f64>) -> Result<Example> {
    if r.is_some() && name != "example_4_7" {
        return Err(Error::invalid(format!("{name} takes no r parameter")));
    }
    match name {
        "example_2_3" => example_2_3().map(Example::E23),
        "example_3_4" => example_3_4().map(Example::E34),
        "example_4_7" => example_4_7(r.unwrap_or(DEFAULT_R)).map(Example::E47),
        _ => Err(Error::UnknownExample(name.to_string())),
    }
}

impl Example {
    pub fn name(&self) -> &'static str {
        match self {
            Example::E23(_) => "example_2_3",
            Example::E34(_) => "example_3_4",
            Example::E47(_) => "example_4_7",
        }
    }

    /// The system the example is stated for; for `example_4_7` this is the
    /// open-loop plant with its input.
    pub fn system(&self) -> &SystemDef {
        match self {
            Example::E23(e) => &e.system,
            Example::E34(e) => &e.system,
            Example::E47(e) => &e.system,
        }
    }

    /// Every expression in the bundle with the dimensions it was parsed under.
    pub fn expressions(&self) -> Vec<(String, Expr, Dims)> {
        let mut out = Vec::new();
        let sys = self.system();
        let dims = Dims::new(sys.n, sys.m, sys.k);
        for (label, list) in [("f", &sys.f), ("H", &sys.stabilized), ("h", &sys.measured)] {
            for (i, e) in list.iter().enumerate() {
                out.push((format!("{label}{}", i + 1), e.clone(), dims.clone()));
            }
        }
        match self {
            Example::E23(e) => out.push(("V".into(), e.candidate.v.clone(), Dims::state(2))),
            Example::E34(e) => out.push(("V".into(), e.v.clone(), Dims::state(2))),
            Example::E47(e) => {
                out.push(("V".into(), e.candidate.v.clone(), Dims::state(3)));
                out.push(("k".into(), e.feedback[0].clone(), Dims::state(3)));
                out.push((
                    "psi".into(),
                    e.psi.psi[0].clone(),
                    Dims::aux_only(ReconstructionMap::aux_names(1, 1, 1)),
                ));
                for (i, fi) in e.closed_loop.f.iter().enumerate() {
                    out.push((
                        format!("closed-loop f{}", i + 1),
                        fi.clone(),
                        Dims::new(3, 1, 0),
                    ));
                }
            }
        }
        out
    }
}

/// `t ∈ {0..30}`, `x1 = ±s` for 200 log-spaced `s ∈ [1e-6, 1e6]`,
/// `x2 ∈ {0, ±1, ±100}`, `d ∈ {-2, -1, 0, 1, 2}`.
pub fn grid_2_3(sys: &SystemDef) -> SampleGrid {
    let mags = log_space(1e-6, 1e6, 200);
    let x1: Vec<f64> = mags.iter().flat_map(|&s| [s, -s]).collect();
    let x2 = vec![0.0, 1.0, -1.0, 100.0, -100.0];
    SampleGrid::new(sys, (0..=30).collect(), cartesian(&[x1, x2])).with_disturbances(vec![
        vec![-2.0],
        vec![-1.0],
        vec![0.0],
        vec![1.0],
        vec![2.0],
    ])
}

/// `t ∈ {0..30}`, each coordinate from `{0, ±1e-3, ±0.5, ±1, ±10, ±1e3}`,
/// `d ∈ {-r, -r/2, 0, r/2, r}`.
pub fn grid_4_7(e: &Example47) -> SampleGrid {
    let axis = vec![
        0.0, 1e-3, -1e-3, 0.5, -0.5, 1.0, -1.0, 10.0, -10.0, 1e3, -1e3,
    ];
    let r = e.r;
    let ds = [-r, -0.5 * r, 0.0, 0.5 * r, r]
        .iter()
        .map(|&d| vec![d])
        .collect();
    SampleGrid::new(
        &e.closed_loop,
        (0..=30).collect(),
        cartesian(&[axis.clone(), axis.clone(), axis]),
    )
    .with_disturbances(ds)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfTestLine {
    pub example: String,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

fn line(example: &str, check: &str, passed: bool, detail: String) -> SelfTestLine {
    SelfTestLine {
        example: example.into(),
        check: check.into(),
        passed,
        detail,
    }
}

fn self_test_2_3(e: &Example23, seed: u64, out: &mut Vec<SelfTestLine>) -> Result<()> {
    let name = "example_2_3";
    let grid = grid_2_3(&e.system);
    let sw = check_sandwich(&e.system, &e.candidate, &grid, 0.0)?;
    out.push(line(
        name,
        "sandwich",
        sw.passed(),
        format!("{} over {} samples", sw.verdict.label(), sw.samples),
    ));
    let rd = check_relaxed_decrease(&e.system, &e.candidate, &grid, 1e-9)?;
    out.push(line(
        name,
        "relaxed-decrease",
        rd.passed(),
        format!(
            "{} (lambda = {:?}, worst margin {:e})",
            rd.verdict.label(),
            e.lambda,
            rd.worst_margin
        ),
    ));
    let tau = tau_bound(&e.tau, 1.0, 0, 1.0)?;
    let budget = FalsifyBudget {
        trajectories: 200,
        horizon: 200,
        seed,
        ..FalsifyBudget::default()
    };
    let seen = test_output_attractivity(&e.system, 1.0, 0, 1.0, &budget)?;
    let ok = seen.tau_hat.is_some_and(|t| t <= tau.tau);
    out.push(line(
        name,
        "tau-dominance",
        ok,
        format!(
            "tau_bound(1, 0, 1) = {} vs observed {:?}",
            tau.tau, seen.tau_hat
        ),
    ));
    Ok(())
}

fn self_test_3_4(e: &Example34, seed: u64, out: &mut Vec<SelfTestLine>) -> Result<()> {
    let name = "example_3_4";
    let budget = FalsifyBudget {
        trajectories: 200,
        seed,
        ..FalsifyBudget::default()
    };
    let batch = (0..budget.trajectories)
        .map(|i| {
            run_scenario(
                &e.system,
                &scenario(&e.system, &budget, i, budget.x0_radius, true),
                budget.horizon,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let rep = check_ios_estimate(&batch, &e.envelope, &e.form, 1e-9)?;
    out.push(line(
        name,
        "ios-estimate",
        rep.passed(),
        format!(
            "{} over {} rows, worst ratio {:.6}",
            rep.verdict.label(),
            rep.rows,
            rep.worst_ratio
        ),
    ));
    let tr = crate::system::simulate(
        &e.system,
        3,
        &[1.5, 0.0],
        &DisturbancePolicy::Constant(vec![2.0]),
        &crate::system::InputPolicy::Zero,
        40,
    )?;
    let exact = tr
        .rows
        .iter()
        .all(|row| row.x[0].abs() == 2f64.powi((row.t - tr.t0) as i32) * 1.5);
    out.push(line(
        name,
        "component-bound",
        exact,
        "|x1(t)| = 2^(t-t0)|x0| under d = 2".into(),
    ));
    Ok(())
}

fn self_test_4_7(e: &Example47, seed: u64, out: &mut Vec<SelfTestLine>) -> Result<()> {
    let name = format!("example_4_7 (r = {})", e.r);
    let grid = grid_4_7(e);
    let sw = check_sandwich(&e.closed_loop, &e.candidate, &grid, 0.0)?;
    out.push(line(
        &name,
        "sandwich",
        sw.passed(),
        sw.verdict.label().into(),
    ));
    let ct = check_contraction(&e.closed_loop, &e.candidate, &grid, 1e-12)?;
    out.push(line(
        &name,
        "contraction",
        ct.passed(),
        format!("{} (lambda = {:?})", ct.verdict.label(), e.lambda),
    ));
    let chain = ObservabilityChain::new(&e.system, 1)?;
    let samples = ReconSamples {
        seed,
        ..ReconSamples::default()
    };
    let rec = check_reconstruction(&chain, &e.feedback, &e.psi, &samples, 0.0)?;
    out.push(line(&name, "reconstruction", rec.pass, rec.summary.clone()));
    let (_, co) = run_output_feedback(
        &e.system,
        &e.controller,
        0,
        &[1.0, -0.5, 2.0],
        Some(&[0.3, 0.25]),
        &DisturbancePolicy::RandomUniform { seed },
        40,
        Some(&e.feedback),
        1e-12,
    )?;
    out.push(line(
        &name,
        "output-feedback",
        co.pass,
        format!("coincident from t = {:?}", co.coincident_from),
    ));
    Ok(())
}

/// Runs every bundle through its own checks; `example_4_7` for
/// `r ∈ {0, 0.5, 0.9}`.
pub fn self_test(seed: u64) -> Result<Vec<SelfTestLine>> {
    let mut out = Vec::new();
    self_test_2_3(&example_2_3()?, seed, &mut out)?;
    self_test_3_4(&example_3_4()?, seed, &mut out)?;
    for r in [0.0, 0.5, 0.9] {
        self_test_4_7(&example_4_7(r)?, seed, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let e = load_example("example_2_3", None).unwrap();
        assert_eq!(e.system().n, 2);
        assert_eq!(e.system().d_box, vec![(-2.0, 2.0)]);
        assert!(matches!(
            load_example("nope", None),
            Err(Error::UnknownExample(_))
        ));
        assert!(matches!(
            load_example("example_4_7", Some(1.0)),
            Err(Error::Invalid(_))
        ));
        assert!(load_example("example_4_7", Some(-0.1)).is_err());
        assert!(load_example("example_2_3", Some(0.5)).is_err());
        let Example::E47(e) = load_example("example_4_7", Some(0.9)).unwrap() else {
            panic!()
        };
        assert_eq!(e.lambda, 0.9);
        assert_eq!(e.closed_loop.k, 0);
    }

    #[test]
    fn constants() {
        assert!((k_3_4() - 3.784422382354666).abs() < 1e-14);
        assert!((c_3_4() - 0.14170246662789424).abs() < 1e-15);
    }

    #[test]
    fn expressions_round_trip() {
        for name in EXAMPLE_NAMES {
            for (label, e, dims) in load_example(name, None).unwrap().expressions() {
                let back = parse_expression(&e.to_string(), &dims).unwrap();
                assert_eq!(back, e, "{name} {label}");
            }
        }
    }

    #[test]
    fn bundles_pass_their_checks() {
        let lines = self_test(42).unwrap();
        assert_eq!(lines.len(), 5 + 4 * 3);
        for l in &lines {
            assert!(l.passed, "{l:?}");
        }
    }
}
