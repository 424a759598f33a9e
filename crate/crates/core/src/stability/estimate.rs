use rayon::prelude::*;
use serde::Serialize;

use super::{run_scenario, scenario, FalsifyBudget};
use crate::certify::Verdict;
use crate::compfn::{KFn, KLEnvelope, TimeGain};
use crate::dsl::{Expr, Func, Var};
use crate::error::{Error, Result};
use crate::sampling::norm;
use crate::system::{SystemDef, Trajectory};

/// Input term of an IOS estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum IosForm {
    /// `sup_{t0 <= τ <= t} σ(β(τ) ρ(γ(τ) ‖u(τ)‖), t - τ)`
    Max { rho: KFn, gamma: TimeGain },
    /// `sup_{t0 <= τ <= t} ζ(δ(τ) ‖u(τ)‖)`
    Sup { zeta: KFn, delta: TimeGain },
}

/// `‖Y(t)‖ <= σ(β(t0) ‖x0‖, t - t0)`, optionally maxed with an input term.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeClaim {
    pub envelope: KLEnvelope,
    pub input: Option<IosForm>,
}

impl EnvelopeClaim {
    pub fn kl(envelope: KLEnvelope) -> Self {
        EnvelopeClaim {
            envelope,
            input: None,
        }
    }

    pub fn ios(envelope: KLEnvelope, form: IosForm) -> Self {
        EnvelopeClaim {
            envelope,
            input: Some(form),
        }
    }

    /// The claimed bound at every row of `tr`.
    pub fn bounds(&self, tr: &Trajectory) -> Result<Vec<f64>> {
        let x0 = norm(tr.x0());
        let env = &self.envelope;
        let mut out = Vec::with_capacity(tr.rows.len());
        let mut running = 0.0f64;
        for (j, row) in tr.rows.iter().enumerate() {
            let mut b = env.bound(tr.t0, x0, row.t)?;
            match &self.input {
                None => {}
                Some(IosForm::Max { rho, gamma }) => {
                    let mut sup = 0.0f64;
                    for past in &tr.rows[..=j] {
                        let tau = past.t as f64;
                        let s = env.beta.eval(tau)? * rho.eval(gamma.eval(tau)? * norm(&past.u))?;
                        sup = sup.max(env.sigma.eval(s, (row.t - past.t) as f64)?);
                    }
                    b = b.max(sup);
                }
                Some(IosForm::Sup { zeta, delta }) => {
                    running = running.max(zeta.eval(delta.eval(row.t as f64)? * norm(&row.u))?);
                    b = b.max(running);
                }
            }
            out.push(b);
        }
        Ok(out)
    }

    fn name(&self) -> &'static str {
        match self.input {
            None => "kl-estimate",
            Some(IosForm::Max { .. }) => "ios-estimate (max form)",
            Some(IosForm::Sup { .. }) => "ios-estimate (sup form)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateWitness {
    /// Index of the trajectory in the batch (or of the search scenario).
    pub trajectory: usize,
    pub t0: u64,
    pub x0: Vec<f64>,
    pub t: u64,
    pub value: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub check: &'static str,
    pub verdict: Verdict,
    /// Largest `‖Y(t)‖ / bound(t)`; `0/0` counts as 0.
    pub worst_ratio: f64,
    /// The row with the largest relative margin.
    pub witness: Option<EstimateWitness>,
    pub rows: usize,
    pub tol: f64,
    /// Per-row verdicts in batch order.
    #[serde(skip)]
    pub row_verdicts: Vec<Vec<Verdict>>,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }
}

fn ratio(value: f64, bound: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else if bound > 0.0 {
        value / bound
    } else {
        f64::INFINITY
    }
}

struct Scan {
    verdicts: Vec<Verdict>,
    worst_ratio: f64,
    worst: Option<(f64, EstimateWitness)>,
}

fn scan(index: usize, tr: &Trajectory, claim: &EnvelopeClaim, tol: f64) -> Result<Scan> {
    let bounds = claim.bounds(tr)?;
    let mut s = Scan {
        verdicts: Vec::with_capacity(bounds.len()),
        worst_ratio: 0.0,
        worst: None,
    };
    for (row, &bound) in tr.rows.iter().zip(&bounds) {
        let value = norm(&row.big_y);
        let margin = value - bound;
        s.verdicts.push(Verdict::of(margin, bound, tol));
        s.worst_ratio = s.worst_ratio.max(ratio(value, bound));
        let rel = margin / (1.0 + bound.abs());
        if s.worst.as_ref().is_none_or(|(r, _)| rel > *r) {
            s.worst = Some((
                rel,
                EstimateWitness {
                    trajectory: index,
                    t0: tr.t0,
                    x0: tr.x0().to_vec(),
                    t: row.t,
                    value,
                    bound,
                    margin,
                },
            ));
        }
    }
    Ok(s)
}

fn check_batch(batch: &[Trajectory], claim: &EnvelopeClaim, tol: f64) -> Result<EstimateReport> {
    let scans = batch
        .par_iter()
        .enumerate()
        .map(|(i, tr)| scan(i, tr, claim, tol))
        .collect::<Result<Vec<_>>>()?;
    let mut verdict = Verdict::Pass;
    let mut worst_ratio = 0.0f64;
    let mut worst: Option<(f64, EstimateWitness)> = None;
    let mut row_verdicts = Vec::with_capacity(scans.len());
    let mut rows = 0;
    for s in scans {
        rows += s.verdicts.len();
        for &v in &s.verdicts {
            verdict = match (verdict, v) {
                (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
                (Verdict::PassTolerance, _) | (_, Verdict::PassTolerance) => Verdict::PassTolerance,
                _ => Verdict::Pass,
            };
        }
        worst_ratio = worst_ratio.max(s.worst_ratio);
        if let Some((r, w)) = s.worst {
            if worst.as_ref().is_none_or(|(b, _)| r > *b) {
                worst = Some((r, w));
            }
        }
        row_verdicts.push(s.verdicts);
    }
    Ok(EstimateReport {
        check: claim.name(),
        verdict,
        worst_ratio,
        witness: worst.map(|(_, w)| w),
        rows,
        tol,
        row_verdicts,
    })
}

/// Pointwise check of `‖Y(t)‖ <= σ(β(t0) ‖x0‖, t - t0)` over a batch of
/// unforced trajectories.
pub fn check_kl_estimate(
    batch: &[Trajectory],
    envelope: &KLEnvelope,
    tol: f64,
) -> Result<EstimateReport> {
    check_batch(batch, &EnvelopeClaim::kl(envelope.clone()), tol)
}

/// Pointwise check of an IOS estimate over trajectories with inputs. Each
/// trajectory's rows carry its whole input history from `t0`.
pub fn check_ios_estimate(
    batch: &[Trajectory],
    envelope: &KLEnvelope,
    form: &IosForm,
    tol: f64,
) -> Result<EstimateReport> {
    check_batch(
        batch,
        &EnvelopeClaim::ios(envelope.clone(), form.clone()),
        tol,
    )
}

/// The unforced system whose extra disturbances `d'` in `[-1, 1]^k` enter
/// through `u = p(t) θ(‖x‖) d'`.
pub fn build_small_input_system(sys: &SystemDef, p: &TimeGain, theta: &KFn) -> Result<SystemDef> {
    if sys.k == 0 {
        return Err(Error::invalid(
            "the small-input system needs a system with inputs",
        ));
    }
    let squares = (0..sys.n)
        .map(|i| Expr::mul(Expr::Var(Var::X(i)), Expr::Var(Var::X(i))))
        .reduce(Expr::add)
        .ok_or_else(|| Error::dim("state", 1, 0))?;
    let gain = Expr::mul(
        p.to_expr(),
        theta.apply_expr(&Expr::call(Func::Sqrt, vec![squares])),
    );
    let m = sys.m;
    let f = sys
        .f
        .iter()
        .map(|fi| {
            fi.substitute(&|v| match v {
                Var::U(j) => Some(Expr::mul(gain.clone(), Expr::Var(Var::D(m + j)))),
                _ => None,
            })
        })
        .collect();
    let mut d_box = sys.d_box.clone();
    d_box.extend(std::iter::repeat_n((-1.0, 1.0), sys.k));
    SystemDef::new(
        format!("{} (small inputs)", sys.name),
        sys.n,
        m + sys.k,
        0,
        d_box,
        f,
        sys.stabilized.clone(),
        sys.measured.clone(),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct FalsifyReport {
    pub check: &'static str,
    /// Largest `‖Y(t)‖ / bound(t)` found; above 1 is a violation.
    pub ratio: f64,
    pub violated: bool,
    pub witness: Option<EstimateWitness>,
    pub disturbance: String,
    pub input: String,
    pub trajectories_run: usize,
    pub seed: u64,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

/// Searches the scenario stream for the largest ratio of output norm to the
/// claimed bound. Inputs are drawn only when the claim has an input term.
pub fn falsify(
    sys: &SystemDef,
    claim: &EnvelopeClaim,
    budget: &FalsifyBudget,
) -> Result<FalsifyReport> {
    budget.validate()?;
    let with_inputs = claim.input.is_some();
    if !with_inputs && sys.k != 0 {
        return Err(Error::invalid(
            "a KL claim is falsified on an unforced system",
        ));
    }
    let found = (0..budget.trajectories)
        .into_par_iter()
        .map(|i| -> Result<(f64, EstimateWitness, Trajectory)> {
            let tr = run_scenario(
                sys,
                &scenario(sys, budget, i, budget.x0_radius, with_inputs),
                budget.horizon,
            )?;
            let bounds = claim.bounds(&tr)?;
            let mut best: Option<(f64, EstimateWitness)> = None;
            for (row, &bound) in tr.rows.iter().zip(&bounds) {
                let value = norm(&row.big_y);
                let r = ratio(value, bound);
                if best.as_ref().is_none_or(|(b, _)| r > *b) {
                    best = Some((
                        r,
                        EstimateWitness {
                            trajectory: i,
                            t0: tr.t0,
                            x0: tr.x0().to_vec(),
                            t: row.t,
                            value,
                            bound,
                            margin: value - bound,
                        },
                    ));
                }
            }
            let (r, w) = best.expect("trajectories have at least one row");
            Ok((r, w, tr))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ratio, witness, tr) = found
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("budget is positive");
    let mut notes = vec!["search is a lower bound on the adversary".to_string()];
    if ratio <= 1.0 {
        notes.push(format!(
            "no violation found at {} trajectories",
            budget.trajectories
        ));
    }
    Ok(FalsifyReport {
        check: claim.name(),
        ratio,
        violated: ratio > 1.0,
        witness: Some(witness),
        disturbance: tr.meta.disturbance.clone(),
        input: tr.meta.input.clone(),
        trajectories_run: budget.trajectories,
        seed: budget.seed,
        notes,
        trajectory: Some(tr),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compfn::Sigma;
    use crate::sampling::rng;
    use crate::system::{simulate, DisturbancePolicy, InputPolicy};
    use rand::Rng;
    use std::f64::consts::E;

    fn sys(forced: bool) -> SystemDef {
        let f2 = if forced {
            "2^(-t)*d1*abs(x1)^0.5+u1"
        } else {
            "2^(-t)*d1*abs(x1)^0.5"
        };
        SystemDef::parse(
            "ex",
            2,
            1,
            forced as usize,
            vec![(-2.0, 2.0)],
            &["d1*x1", f2],
            &["x2"],
            &["x2"],
        )
        .unwrap()
    }

    fn envelope_3_4() -> KLEnvelope {
        let k = 1.0 / (1.0 - 2.0 / E);
        let c = (2.0 / (1.0 + 2.0 / E)).ln();
        KLEnvelope {
            sigma: Sigma::Exponential {
                gain: 6.0 * k,
                rate: c,
            },
            beta: TimeGain::one(),
        }
    }

    fn batch(sys: &SystemDef, count: usize, with_inputs: bool) -> Vec<Trajectory> {
        let budget = FalsifyBudget {
            trajectories: count,
            ..FalsifyBudget::default()
        };
        (0..count)
            .map(|i| run_scenario(sys, &scenario(sys, &budget, i, 10.0, with_inputs), 60).unwrap())
            .collect()
    }

    #[test]
    fn envelope_holds_on_unforced_batch() {
        let rep =
            check_kl_estimate(&batch(&sys(false), 200, false), &envelope_3_4(), 1e-9).unwrap();
        assert!(rep.passed(), "{:?}", rep.witness);
        assert!(rep.worst_ratio < 1.0);
    }

    #[test]
    fn tiny_envelope_fails_at_initial_time() {
        let env = KLEnvelope {
            sigma: Sigma::parse("0.01*s*exp(-t)").unwrap(),
            beta: TimeGain::one(),
        };
        let b = batch(&sys(false), 50, false);
        let rep = check_kl_estimate(&b, &env, 1e-9).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        let w = rep.witness.unwrap();
        assert_eq!(w.t, w.t0);
    }

    #[test]
    fn zero_trajectory_passes() {
        let s = sys(false);
        let tr = simulate(
            &s,
            0,
            &[0.0, 0.0],
            &DisturbancePolicy::Constant(vec![2.0]),
            &InputPolicy::Zero,
            20,
        )
        .unwrap();
        let rep = check_kl_estimate(&[tr], &envelope_3_4(), 0.0).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.worst_ratio, 0.0);
    }

    #[test]
    fn ios_with_constant_input_from_rest() {
        let s = sys(true);
        let form = IosForm::Max {
            rho: KFn::Linear(1.0 / 3.0),
            gamma: TimeGain::one(),
        };
        let b: Vec<Trajectory> = (0..20)
            .map(|t0| {
                simulate(
                    &s,
                    t0,
                    &[0.0, 0.0],
                    &DisturbancePolicy::RandomCorners { seed: t0 },
                    &InputPolicy::Constant(vec![3.0]),
                    60,
                )
                .unwrap()
            })
            .collect();
        assert!(check_ios_estimate(&b, &envelope_3_4(), &form, 1e-9)
            .unwrap()
            .passed());
    }

    #[test]
    fn zero_input_reduces_to_kl() {
        let s = sys(true);
        let b = batch(&s, 60, false);
        let env = KLEnvelope {
            sigma: Sigma::Exponential {
                gain: 1.0,
                rate: 0.5,
            },
            beta: TimeGain::one(),
        };
        let kl = check_kl_estimate(&b, &env, 1e-9).unwrap();
        for form in [
            IosForm::Max {
                rho: KFn::Linear(1.0 / 3.0),
                gamma: TimeGain::one(),
            },
            IosForm::Sup {
                zeta: KFn::Identity,
                delta: TimeGain::one(),
            },
        ] {
            let ios = check_ios_estimate(&b, &env, &form, 1e-9).unwrap();
            assert_eq!(ios.row_verdicts, kl.row_verdicts);
            assert_eq!(ios.worst_ratio, kl.worst_ratio);
        }
        assert_eq!(kl.verdict, Verdict::Fail);
    }

    #[test]
    fn shrunken_sup_gain_fails() {
        let s = sys(true);
        let b = batch(&s, 200, true);
        let zeta = |scale: f64| IosForm::Sup {
            zeta: KFn::Linear(scale * 2.0 * (2.0 * 0.1417f64).exp() / (0.1417f64.exp() - 1.0)),
            delta: TimeGain::one(),
        };
        let good = check_ios_estimate(&b, &envelope_3_4(), &zeta(1.0), 1e-9).unwrap();
        let bad = check_ios_estimate(&b, &envelope_3_4(), &zeta(1e-3), 1e-9).unwrap();
        assert!(good.passed());
        assert_eq!(bad.verdict, Verdict::Fail);
    }

    #[test]
    fn small_input_substitution() {
        let s = sys(true);
        let small = build_small_input_system(&s, &TimeGain::one(), &KFn::Identity).unwrap();
        assert_eq!((small.m, small.k), (2, 0));
        assert_eq!(small.d_box[1], (-1.0, 1.0));
        let mut r = rng(9, 0);
        for _ in 0..200 {
            let t = r.gen_range(0..20u64);
            let x = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)];
            let d = [r.gen_range(-2.0..2.0), r.gen_range(-1.0..1.0)];
            let direct = s.step(t, &x, &d[..1], &[norm(&x) * d[1]]).unwrap();
            assert_eq!(small.step(t, &x, &d, &[]).unwrap(), direct);
        }
        assert_eq!(
            small.step(3, &[0.0, 0.0], &[2.0, 1.0], &[]).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(build_small_input_system(&sys(false), &TimeGain::one(), &KFn::Identity).is_err());
    }

    #[test]
    fn falsify_envelope_and_shrunken_copy() {
        let s = sys(false);
        let budget = FalsifyBudget {
            trajectories: 100,
            ..FalsifyBudget::default()
        };
        let ok = falsify(&s, &EnvelopeClaim::kl(envelope_3_4()), &budget).unwrap();
        assert!(!ok.violated && ok.ratio <= 1.0);
        let shrunk = KLEnvelope {
            sigma: envelope_3_4().sigma.scaled(0.01),
            beta: TimeGain::one(),
        };
        let bad = falsify(&s, &EnvelopeClaim::kl(shrunk), &budget).unwrap();
        assert!(bad.violated);
        let w = bad.witness.unwrap();
        assert!(w.t - w.t0 <= 3, "{w:?}");
    }

    #[test]
    fn falsify_ratio_grows_with_budget() {
        let s = sys(false);
        let claim = EnvelopeClaim::kl(envelope_3_4());
        let mut last = 0.0;
        for n in [1, 5, 20, 80] {
            let b = FalsifyBudget {
                trajectories: n,
                horizon: 30,
                ..FalsifyBudget::default()
            };
            let r = falsify(&s, &claim, &b).unwrap().ratio;
            assert!(r >= last);
            last = r;
        }
        let zero = FalsifyBudget {
            trajectories: 0,
            ..FalsifyBudget::default()
        };
        assert!(falsify(&s, &claim, &zero).is_err());
    }
}
