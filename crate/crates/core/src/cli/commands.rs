use std::fs;
use std::io::Write;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    split_top_level, BudgetArgs, CandidateArgs, CertifyArgs, CheckArg, Cli, Command, EnvelopeArgs,
    ExamplesArgs, FalsifyArgs, FormArg, GlobalArgs, GridArgs, Outcome, PropertyArg, SimulateArgs,
    SourceArgs, SynthSpecArgs, SynthesizeArgs, VerifyArgs,
};
use crate::certify::{
    check_contraction, check_ios_decrease, check_relaxed_decrease, check_rofs_inf_sup,
    check_sandwich, coordinate_fiber, tau_bound, CertificateReport, Fiber, LyapunovCandidate,
    RofsMode, SampleGrid, TauInputs,
};
use crate::compfn::{KFn, KLEnvelope, Sigma, TimeGain};
use crate::dsl::{parse_expression, Dims, Expr};
use crate::error::{Error, Result};
use crate::registry::{self, grid_2_3, grid_4_7, load_example, Example, Example47, EXAMPLE_NAMES};
use crate::sampling::{box_grid, box_samples, lin_space, norm};
use crate::stability::{
    check_ios_estimate, check_kl_estimate, falsify, run_scenario, scenario,
    test_output_attractivity, test_output_stability, EnvelopeClaim, FalsifyBudget, IosForm,
    StabilityReport, StrategyMix,
};
use crate::synth::{
    check_reconstruction, run_output_feedback, synthesize_delay_controller, DelayChainController,
    ObservabilityChain, ReconSamples, ReconstructionMap, Retraction,
};
use crate::system::{
    parse_system_file, simulate, DisturbancePolicy, InputPolicy, SystemDef, Trajectory,
};

pub(super) fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<Outcome> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => run_simulate(a, g, out),
        Command::Certify(a) => run_certify(a, g, out),
        Command::Verify(a) => run_verify(a, g, out),
        Command::Synthesize(a) => run_synthesize(a, g, out),
        Command::Falsify(a) => run_falsify(a, g, out),
        Command::Examples(a) => run_examples(a, g, out),
    }
}

// built once per command, so the size gap between variants does not matter
#[allow(clippy::large_enum_variant)]
enum Source {
    Example(Example),
    File(SystemDef),
}

impl Source {
    fn label(&self) -> String {
        match self {
            Source::Example(e) => e.name().to_string(),
            Source::File(s) => format!("file system `{}`", s.name),
        }
    }

    /// The plant as stated (open loop for example_4_7).
    fn system(&self) -> &SystemDef {
        match self {
            Source::Example(e) => e.system(),
            Source::File(s) => s,
        }
    }

    /// The unforced system whose stability is in question.
    fn unforced(&self) -> Result<&SystemDef> {
        match self {
            Source::Example(Example::E23(e)) => Ok(&e.system),
            Source::Example(Example::E34(e)) => Ok(&e.unforced),
            Source::Example(Example::E47(e)) => Ok(&e.closed_loop),
            Source::File(s) if s.k == 0 => Ok(s),
            Source::File(_) => Err(Error::invalid(
                "this command needs an unforced system (k = 0)",
            )),
        }
    }
}

fn load_source(a: &SourceArgs) -> Result<Source> {
    match (&a.example, &a.system) {
        (Some(name), None) => Ok(Source::Example(load_example(name, a.r)?)),
        (None, Some(path)) => {
            if a.r.is_some() {
                return Err(Error::invalid("--r applies to example_4_7 only"));
            }
            let doc = fs::read_to_string(path)?;
            let parsed = parse_system_file(&doc)?;
            for w in &parsed.warnings {
                eprintln!("warning: {w:?}");
            }
            let mut sys = parsed.system;
            if sys.name.is_empty() {
                sys.name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
            }
            Ok(Source::File(sys))
        }
        _ => Err(Error::invalid("give exactly one of --example or --system")),
    }
}

fn emit(out: &mut dyn Write, g: &GlobalArgs, name: &str, doc: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    writeln!(out, "{text}")?;
    if let Some(dir) = &g.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{name}.json")), format!("{text}\n"))?;
    }
    Ok(())
}

fn save_csv(g: &GlobalArgs, name: &str, tr: &Trajectory) -> Result<()> {
    if let Some(dir) = &g.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{name}.csv")), tr.to_csv())?;
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn outcome(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn list_after<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.strip_prefix(prefix)
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    split_top_level(text)
        .into_iter()
        .map(crate::dsl::parse_number)
        .collect()
}

fn disturbance_policy(text: &str, sys: &SystemDef, seed: u64) -> Result<DisturbancePolicy> {
    Ok(match text {
        "greedy" => DisturbancePolicy::greedy_output(sys),
        "corners" => DisturbancePolicy::RandomCorners { seed },
        "uniform" => DisturbancePolicy::RandomUniform { seed },
        _ => match list_after(text, "const:") {
            Some(rest) => DisturbancePolicy::Constant(parse_list(rest)?),
            None => {
                return Err(Error::invalid(format!(
                    "unknown disturbance policy `{text}`"
                )))
            }
        },
    })
}

fn example_4_7_of(src: &Source) -> Option<&Example47> {
    match src {
        Source::Example(Example::E47(e)) => Some(e),
        _ => None,
    }
}

fn run_simulate(a: &SimulateArgs, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let src = load_source(&a.source)?;
    let sys = src.system();
    let x0 = a.x0.clone().unwrap_or_else(|| vec![1.0; sys.n]);
    let dpol = disturbance_policy(&a.disturbance, sys, g.seed)?;
    let upol = match a.input.as_str() {
        "zero" => InputPolicy::Zero,
        "feedback" => InputPolicy::StateFeedback(
            example_4_7_of(&src)
                .ok_or_else(|| Error::invalid("--input feedback needs example_4_7"))?
                .feedback
                .clone(),
        ),
        "controller" => InputPolicy::OutputFeedback(Box::new(
            example_4_7_of(&src)
                .ok_or_else(|| Error::invalid("--input controller needs example_4_7"))?
                .controller
                .clone(),
        )),
        text => match list_after(text, "const:") {
            Some(rest) => InputPolicy::Constant(parse_list(rest)?),
            None => return Err(Error::invalid(format!("unknown input policy `{text}`"))),
        },
    };
    let tr = simulate(sys, a.t0, &x0, &dpol, &upol, g.horizon)?;
    save_csv(g, "trajectory", &tr)?;
    if a.csv {
        write!(out, "{}", tr.to_csv())?;
        return Ok(Outcome::Pass);
    }
    let last = tr.rows.last().expect("at least one row");
    let max_y = tr.rows.iter().map(|r| norm(&r.big_y)).fold(0.0, f64::max);
    let doc = json!({
        "command": "simulate",
        "source": src.label(),
        "t0": a.t0,
        "x0": x0,
        "horizon": g.horizon,
        "seed": g.seed,
        "disturbance": tr.meta.disturbance,
        "input": tr.meta.input,
        "rows": tr.rows.len(),
        "final_t": last.t,
        "final_state": last.x,
        "max_output_norm": max_y,
    });
    emit(out, g, "simulate", &doc)?;
    Ok(Outcome::Pass)
}

fn candidate_flags_given(c: &CandidateArgs) -> bool {
    c.v.is_some()
        || c.a1.is_some()
        || c.a2.is_some()
        || c.beta.is_some()
        || c.mu.is_some()
        || c.lambda.is_some()
        || c.a3.is_some()
        || c.q.is_some()
        || c.phi.is_some()
}

fn kfn_or(text: &Option<String>, default: KFn) -> Result<KFn> {
    text.as_deref().map_or(Ok(default), KFn::parse)
}

fn gain_or(text: &Option<String>, default: TimeGain) -> Result<TimeGain> {
    text.as_deref().map_or(Ok(default), TimeGain::parse)
}

fn file_candidate(c: &CandidateArgs, sys: &SystemDef) -> Result<LyapunovCandidate> {
    let v =
        c.v.as_deref()
            .ok_or_else(|| Error::invalid("--v is required for a file system"))?;
    let mut cand = LyapunovCandidate::parse(v, sys.n)?.with_sandwich(
        kfn_or(&c.a1, KFn::Identity)?,
        kfn_or(&c.a2, KFn::Identity)?,
        gain_or(&c.beta, TimeGain::one())?,
        c.mu.as_deref().map(TimeGain::parse).transpose()?,
    );
    if let Some(l) = c.lambda {
        cand = cand.with_lambda(l)?;
    }
    if let (Some(a3), Some(q)) = (&c.a3, &c.q) {
        cand = cand.with_relaxed(KFn::parse(a3)?, TimeGain::parse(q)?)?;
    }
    if let (Some(a3), Some(phi), Some(l)) = (&c.a3, &c.phi, c.lambda) {
        cand = cand.with_ios(l, KFn::parse(a3)?, TimeGain::parse(phi)?)?;
    }
    Ok(cand)
}

fn file_grid(grid: &GridArgs, sys: &SystemDef) -> SampleGrid {
    let states = box_grid(&vec![(-grid.x_max, grid.x_max); sys.n], grid.x_points);
    let mut samples = SampleGrid::new(sys, (0..=grid.t_max).collect(), states);
    if sys.k > 0 {
        samples = samples.with_inputs(box_grid(
            &vec![(-grid.u_max, grid.u_max); sys.k],
            grid.x_points,
        ));
    }
    samples
}

fn certificate_doc(
    src: &Source,
    check: &str,
    params: Value,
    report: &CertificateReport,
) -> Result<Value> {
    Ok(json!({
        "command": "certify",
        "source": src.label(),
        "check": check,
        "parameters": params,
        "report": to_value(report)?,
    }))
}

fn run_certify(a: &CertifyArgs, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let src = load_source(&a.source)?;
    if matches!(src, Source::Example(_)) && candidate_flags_given(&a.candidate) {
        return Err(Error::invalid(
            "candidate flags apply to --system sources; examples carry their own bundle",
        ));
    }
    let check_name = a
        .check
        .to_possible_value()
        .map_or_else(String::new, |v| v.get_name().to_string());
    match a.check {
        CheckArg::Tau => return certify_tau(a, &src, g, out),
        CheckArg::Rofs => return certify_rofs(&src, g, out),
        _ => {}
    }
    let (sys, cand, grid, params) = match &src {
        Source::Example(Example::E23(e)) => (
            e.system.clone(),
            e.candidate.clone(),
            grid_2_3(&e.system),
            json!({
                "V": e.candidate.v.to_string(),
                "lambda": "(2+e)/(2*e)",
                "lambda_value": e.lambda,
                "a3": e.tau.a3.describe(),
                "q": e.tau.q.describe(),
                "beta": e.tau.beta.describe(),
            }),
        ),
        Source::Example(Example::E47(e)) => (
            e.closed_loop.clone(),
            e.candidate.clone(),
            grid_4_7(e),
            json!({
                "V": e.candidate.v.to_string(),
                "k": e.feedback[0].to_string(),
                "r": e.r,
                "lambda": "max(2/3, r)",
                "lambda_value": e.lambda,
                "beta": e.candidate.beta.describe(),
            }),
        ),
        Source::Example(Example::E34(_)) => {
            return Err(Error::invalid(
                "example_3_4 bundles an IOS envelope, not a certificate; use `verify --property ios-estimate`",
            ))
        }
        Source::File(sys) => {
            let cand = file_candidate(&a.candidate, sys)?;
            let params = json!({ "V": cand.v.to_string(), "lambda": cand.lambda });
            (sys.clone(), cand, file_grid(&a.grid, sys), params)
        }
    };
    let report = match a.check {
        CheckArg::Sandwich => check_sandwich(&sys, &cand, &grid, g.tol)?,
        CheckArg::Contraction => check_contraction(&sys, &cand, &grid, g.tol)?,
        CheckArg::RelaxedDecrease => check_relaxed_decrease(&sys, &cand, &grid, g.tol)?,
        CheckArg::IosDecrease => check_ios_decrease(&sys, &cand, &grid, g.tol)?,
        CheckArg::Tau | CheckArg::Rofs => unreachable!("handled above"),
    };
    let doc = certificate_doc(&src, &check_name, params, &report)?;
    emit(out, g, "certify", &doc)?;
    Ok(outcome(report.passed()))
}

fn certify_tau(
    a: &CertifyArgs,
    src: &Source,
    g: &GlobalArgs,
    out: &mut dyn Write,
) -> Result<Outcome> {
    let inputs = match src {
        Source::Example(Example::E23(e)) => e.tau.clone(),
        Source::File(_) => {
            let c = &a.candidate;
            let need = |v: &Option<String>, flag: &str| {
                v.clone()
                    .ok_or_else(|| Error::invalid(format!("--check tau needs {flag}")))
            };
            TauInputs {
                a1: kfn_or(&c.a1, KFn::Identity)?,
                a2: kfn_or(&c.a2, KFn::Identity)?,
                a3: KFn::parse(&need(&c.a3, "--a3")?)?,
                beta: gain_or(&c.beta, TimeGain::one())?,
                q: TimeGain::parse(&need(&c.q, "--q")?)?,
            }
        }
        Source::Example(_) => {
            return Err(Error::invalid(
                "the attainment-time bound is bundled with example_2_3 only",
            ))
        }
    };
    let rep = tau_bound(&inputs, a.eps, a.big_t, a.big_r)?;
    let doc = json!({
        "command": "certify",
        "source": src.label(),
        "check": "tau",
        "parameters": { "eps": a.eps, "T": a.big_t, "R": a.big_r },
        "report": to_value(&rep)?,
    });
    emit(out, g, "certify", &doc)?;
    Ok(Outcome::Pass)
}

fn certify_rofs(src: &Source, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let e = example_4_7_of(src)
        .ok_or_else(|| Error::invalid("--check rofs is bundled with example_4_7 only"))?;
    let states = coordinate_fiber(3, &[(0, 1.0), (2, 0.0)], &[(1, vec![1.0, 2.0])])?;
    let fibers: Vec<Fiber> = (0..=5)
        .map(|t| Fiber {
            t,
            y: vec![1.0],
            states: states.clone(),
        })
        .collect();
    let us: Vec<Vec<f64>> = lin_space(-10.0, 10.0, 401)
        .into_iter()
        .map(|u| vec![u])
        .collect();
    let ds = box_samples(&e.system.d_box, 9, 0, 0);
    let rep = check_rofs_inf_sup(
        &e.system,
        &e.candidate,
        &fibers,
        &us,
        &ds,
        RofsMode::Plain,
        g.tol,
    )?;
    let doc = json!({
        "command": "certify",
        "source": src.label(),
        "check": "rofs",
        "parameters": { "fiber": "x1 = 1, x2 in {1, 2}, x3 = 0", "inputs": "401 points in [-10, 10]", "lambda": e.lambda },
        "report": to_value(&rep)?,
    });
    emit(out, g, "certify", &doc)?;
    Ok(outcome(rep.passed()))
}

fn budget_of(b: &BudgetArgs, g: &GlobalArgs) -> Result<FalsifyBudget> {
    let [corners, greedy, random] = b.mix[..] else {
        return Err(Error::invalid(
            "--mix takes three weights: corners, greedy, random",
        ));
    };
    Ok(FalsifyBudget {
        trajectories: b.trajectories,
        horizon: g.horizon,
        mix: StrategyMix {
            corners,
            greedy,
            random,
        },
        seed: g.seed,
        t0_max: b.t0_max,
        x0_radius: b.x0_radius,
        u_max: b.u_max,
        ..FalsifyBudget::default()
    })
}

fn default_envelope(src: &Source) -> Option<KLEnvelope> {
    match src {
        Source::Example(Example::E23(_)) | Source::Example(Example::E34(_)) => {
            registry::example_3_4().ok().map(|e| e.envelope)
        }
        _ => None,
    }
}

fn envelope_of(a: &EnvelopeArgs, src: &Source) -> Result<KLEnvelope> {
    let default = default_envelope(src);
    let sigma = match (&a.sigma, &default) {
        (Some(text), _) => Sigma::parse(text)?,
        (None, Some(env)) => env.sigma.clone(),
        (None, None) => return Err(Error::invalid("--sigma is required for this source")),
    };
    let beta = match (&a.beta, &default) {
        (Some(text), _) => TimeGain::parse(text)?,
        (None, Some(env)) => env.beta.clone(),
        (None, None) => TimeGain::one(),
    };
    let sigma = if a.scale == 1.0 {
        sigma
    } else {
        sigma.scaled(a.scale)
    };
    Ok(KLEnvelope { sigma, beta })
}

fn form_of(a: &EnvelopeArgs, src: &Source) -> Result<IosForm> {
    let example = match src {
        Source::Example(Example::E34(e)) => Some(e.form.clone()),
        _ => None,
    };
    match a.form {
        FormArg::Max => match (&a.rho, &example) {
            (Some(rho), _) => Ok(IosForm::Max {
                rho: KFn::parse(rho)?,
                gamma: gain_or(&a.gamma, TimeGain::one())?,
            }),
            (None, Some(IosForm::Max { rho, gamma })) => Ok(IosForm::Max {
                rho: rho.clone(),
                gamma: gain_or(&a.gamma, gamma.clone())?,
            }),
            _ => Err(Error::invalid("the max form needs --rho")),
        },
        FormArg::Sup => {
            let zeta = a
                .zeta
                .as_deref()
                .ok_or_else(|| Error::invalid("the sup form needs --zeta"))?;
            Ok(IosForm::Sup {
                zeta: KFn::parse(zeta)?,
                delta: gain_or(&a.delta, TimeGain::one())?,
            })
        }
    }
}

fn forced_system(src: &Source) -> Result<&SystemDef> {
    let sys = src.system();
    if sys.k == 0 || matches!(src, Source::Example(Example::E47(_))) {
        return Err(Error::invalid(
            "IOS estimates need a system with inputs (example_3_4 or a file with k > 0)",
        ));
    }
    Ok(sys)
}

fn batch(sys: &SystemDef, budget: &FalsifyBudget, with_inputs: bool) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    (0..budget.trajectories)
        .into_par_iter()
        .map(|i| {
            run_scenario(
                sys,
                &scenario(sys, budget, i, budget.x0_radius, with_inputs),
                budget.horizon,
            )
        })
        .collect()
}

fn stability_doc(src: &Source, rep: &StabilityReport, g: &GlobalArgs) -> Result<Value> {
    if let Some(c) = &rep.counterexample {
        save_csv(g, "counterexample", &c.trajectory)?;
    }
    Ok(json!({
        "command": "verify",
        "source": src.label(),
        "horizon": g.horizon,
        "report": to_value(rep)?,
    }))
}

fn run_verify(a: &VerifyArgs, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let src = load_source(&a.source)?;
    let budget = budget_of(&a.budget, g)?;
    match a.property {
        PropertyArg::Stability => {
            let rep = test_output_stability(src.unforced()?, a.eps, a.big_t, &budget)?;
            emit(out, g, "verify", &stability_doc(&src, &rep, g)?)?;
            Ok(outcome(rep.delta.is_some()))
        }
        PropertyArg::Attractivity => {
            let rep = test_output_attractivity(src.unforced()?, a.eps, a.big_t, a.big_r, &budget)?;
            emit(out, g, "verify", &stability_doc(&src, &rep, g)?)?;
            Ok(outcome(rep.attained))
        }
        PropertyArg::KlEstimate => {
            let sys = src.unforced()?;
            let env = envelope_of(&a.envelope, &src)?;
            let rep = check_kl_estimate(&batch(sys, &budget, false)?, &env, g.tol)?;
            let doc = json!({
                "command": "verify",
                "source": src.label(),
                "sigma": env.sigma.describe(),
                "beta": env.beta.describe(),
                "trajectories": budget.trajectories,
                "horizon": g.horizon,
                "seed": g.seed,
                "report": to_value(&rep)?,
            });
            emit(out, g, "verify", &doc)?;
            Ok(outcome(rep.passed()))
        }
        PropertyArg::IosEstimate => {
            let sys = forced_system(&src)?;
            let env = envelope_of(&a.envelope, &src)?;
            let form = form_of(&a.envelope, &src)?;
            let rep = check_ios_estimate(&batch(sys, &budget, true)?, &env, &form, g.tol)?;
            let doc = json!({
                "command": "verify",
                "source": src.label(),
                "sigma": env.sigma.describe(),
                "beta": env.beta.describe(),
                "form": format!("{form:?}"),
                "trajectories": budget.trajectories,
                "horizon": g.horizon,
                "seed": g.seed,
                "report": to_value(&rep)?,
            });
            emit(out, g, "verify", &doc)?;
            Ok(outcome(rep.passed()))
        }
        PropertyArg::Reconstruction => {
            let (sys, k, psi) = synth_spec(&src, &a.synth)?;
            let chain = ObservabilityChain::new(sys, psi.p)?;
            let samples = ReconSamples {
                count: a.samples,
                seed: g.seed,
                ..ReconSamples::default()
            };
            let rep = check_reconstruction(&chain, &k, &psi, &samples, g.tol)?;
            let doc = json!({
                "command": "verify",
                "source": src.label(),
                "p": psi.p,
                "report": to_value(&rep)?,
            });
            emit(out, g, "verify", &doc)?;
            Ok(outcome(rep.pass))
        }
    }
}

/// The plant, target feedback and reconstruction map, from the example
/// bundle or from flags.
fn synth_spec<'a>(
    src: &'a Source,
    s: &SynthSpecArgs,
) -> Result<(&'a SystemDef, Vec<Expr>, ReconstructionMap)> {
    if let Some(e) = example_4_7_of(src) {
        if !s.k.is_empty() || !s.psi.is_empty() {
            return Err(Error::invalid("example_4_7 carries its own k and psi"));
        }
        return Ok((&e.system, e.feedback.clone(), e.psi.clone()));
    }
    let Source::File(sys) = src else {
        return Err(Error::invalid(
            "synthesis is bundled with example_4_7; other examples have no output feedback",
        ));
    };
    if s.k.len() != sys.k || s.psi.len() != sys.k {
        return Err(Error::invalid(format!(
            "give one --k and one --psi per input ({} inputs)",
            sys.k
        )));
    }
    let k =
        s.k.iter()
            .map(|e| parse_expression(e, &Dims::state(sys.n)))
            .collect::<Result<Vec<_>>>()?;
    let psi_refs: Vec<&str> = s.psi.iter().map(String::as_str).collect();
    let psi = ReconstructionMap::parse(s.p, sys.p_meas(), sys.k, &psi_refs)?;
    Ok((sys, k, psi))
}

fn controller_for(
    src: &Source,
    s: &SynthSpecArgs,
    psi: ReconstructionMap,
) -> Result<DelayChainController> {
    let retraction = if s.retraction.is_empty() {
        Retraction::Identity
    } else {
        let refs: Vec<&str> = s.retraction.iter().map(String::as_str).collect();
        Retraction::parse(src.system().p_meas(), &refs)?
    };
    synthesize_delay_controller(psi, s.p.max(1), retraction)
}

/// Default initial state of the example_4_7 closed loop; with a zero
/// controller state the first input differs from `k`.
const EXAMPLE_4_7_X0: [f64; 3] = [1.0, -0.5, 2.0];

fn run_synthesize(a: &SynthesizeArgs, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let src = load_source(&a.source)?;
    let (sys, k, psi) = synth_spec(&src, &a.synth)?;
    let chain = ObservabilityChain::new(sys, psi.p)?;
    let samples = ReconSamples {
        count: a.samples,
        seed: g.seed,
        ..ReconSamples::default()
    };
    let rec = check_reconstruction(&chain, &k, &psi, &samples, g.tol)?;
    let p = psi.p;
    let ctrl = match example_4_7_of(&src) {
        Some(e) if a.synth.retraction.is_empty() => e.controller.clone(),
        _ => controller_for(
            &src,
            &SynthSpecArgs {
                p,
                ..a.synth.clone()
            },
            psi,
        )?,
    };
    let mut doc = json!({
        "command": "synthesize",
        "source": src.label(),
        "reconstruction": to_value(&rec)?,
        "controller": ctrl.to_json(),
    });
    if let Some(dir) = &g.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("controller.json"),
            format!("{}\n", serde_json::to_string_pretty(&ctrl.to_json())?),
        )?;
    }
    let mut pass = rec.pass;
    if a.simulate {
        let x0 = match (&a.x0, example_4_7_of(&src)) {
            (Some(x0), _) => x0.clone(),
            (None, Some(_)) => EXAMPLE_4_7_X0.to_vec(),
            (None, None) => vec![1.0; sys.n],
        };
        let (tr, co) = run_output_feedback(
            sys,
            &ctrl,
            a.t0,
            &x0,
            a.w0.as_deref(),
            &DisturbancePolicy::RandomUniform { seed: g.seed },
            g.horizon,
            Some(&k),
            g.tol.max(1e-12),
        )?;
        save_csv(g, "closed_loop", &tr)?;
        pass &= co.pass;
        doc["coincidence"] = to_value(&co)?;
    }
    emit(out, g, "synthesize", &doc)?;
    Ok(outcome(pass))
}

fn run_falsify(a: &FalsifyArgs, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    let src = load_source(&a.source)?;
    let budget = budget_of(&a.budget, g)?;
    let env = envelope_of(&a.envelope, &src)?;
    let (sys, claim) = match &src {
        Source::Example(Example::E34(e)) => (
            &e.system,
            EnvelopeClaim::ios(env, form_of(&a.envelope, &src)?),
        ),
        Source::File(s) if s.k > 0 => (s, EnvelopeClaim::ios(env, form_of(&a.envelope, &src)?)),
        _ => (src.unforced()?, EnvelopeClaim::kl(env)),
    };
    let rep = falsify(sys, &claim, &budget)?;
    if let Some(tr) = &rep.trajectory {
        save_csv(g, "worst_trajectory", tr)?;
    }
    let doc = json!({
        "command": "falsify",
        "source": src.label(),
        "sigma": claim.envelope.sigma.describe(),
        "beta": claim.envelope.beta.describe(),
        "input_term": claim.input.as_ref().map(|f| format!("{f:?}")),
        "horizon": g.horizon,
        "report": to_value(&rep)?,
    });
    emit(out, g, "falsify", &doc)?;
    Ok(outcome(!rep.violated))
}

fn describe_example(name: &str) -> &'static str {
    match name {
        "example_2_3" => "x1+ = d x1, x2+ = 2^-t d |x1|^(1/2), Y = x2, d in [-2, 2]; V = e^-t |x1| + |x2| with relaxed decrease",
        "example_3_4" => "the same plant with an additive input on x2; IOS envelope 6K e^(-ct) s with rho(s) = s/3",
        _ => "x1+ = x2, x2+ = x2^2 + u, x3+ = d x3 + e^t x2, y = x1, d in [-r, r]; k = -x2^2 and its delay-chain realization",
    }
}

fn run_examples(a: &ExamplesArgs, g: &GlobalArgs, out: &mut dyn Write) -> Result<Outcome> {
    if !a.self_test {
        let entries: Vec<Value> = EXAMPLE_NAMES
            .iter()
            .map(|&name| {
                let sys = load_example(name, None)?.system().clone();
                Ok(json!({
                    "name": name,
                    "n": sys.n,
                    "m": sys.m,
                    "k": sys.k,
                    "description": describe_example(name),
                }))
            })
            .collect::<Result<_>>()?;
        emit(out, g, "examples", &Value::Array(entries))?;
        return Ok(Outcome::Pass);
    }
    let lines = registry::self_test(g.seed)?;
    for l in &lines {
        let mark = if l.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{mark} {} {}: {}", l.example, l.check, l.detail)?;
    }
    if let Some(dir) = &g.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("self_test.json"),
            format!("{}\n", serde_json::to_string_pretty(&lines)?),
        )?;
    }
    Ok(outcome(lines.iter().all(|l| l.passed)))
}
