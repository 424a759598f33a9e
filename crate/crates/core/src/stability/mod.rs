//! Empirical tests of output stability and attractivity, KL and IOS
//! estimates on trajectory batches, and adversarial falsification.
//!
//! All searches draw their trajectories from [`scenario`], which depends only
//! on the master seed and the trajectory index: a bigger budget runs the same
//! trajectories first and then more, so a worst case can only grow with the
//! budget.

mod estimate;

pub use estimate::{
    build_small_input_system, check_ios_estimate, check_kl_estimate, falsify, EnvelopeClaim,
    EstimateReport, EstimateWitness, FalsifyReport, IosForm,
};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampling::{ball_uniform, box_uniform, norm, rng, scale, sphere_directions};
use crate::system::{
    simulate, DisturbancePolicy, GreedyObjective, InputPolicy, SystemDef, Trajectory,
};

/// Relative weights of the disturbance strategies used by random draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyMix {
    pub corners: f64,
    pub greedy: f64,
    pub random: f64,
}

impl Default for StrategyMix {
    fn default() -> Self {
        StrategyMix {
            corners: 1.0,
            greedy: 1.0,
            random: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalsifyBudget {
    pub trajectories: usize,
    pub horizon: usize,
    pub mix: StrategyMix,
    pub seed: u64,
    /// Initial times are drawn from `0..=t0_max`.
    pub t0_max: u64,
    /// Initial states are drawn from the closed ball of this radius.
    pub x0_radius: f64,
    /// Inputs (when the claim involves them) satisfy `|u_i| <= u_max`.
    pub u_max: f64,
    pub objective: GreedyObjective,
}

impl Default for FalsifyBudget {
    fn default() -> Self {
        FalsifyBudget {
            trajectories: 1000,
            horizon: 60,
            mix: StrategyMix::default(),
            seed: 42,
            t0_max: 10,
            x0_radius: 10.0,
            u_max: 5.0,
            objective: GreedyObjective::Output,
        }
    }
}

impl FalsifyBudget {
    fn validate(&self) -> Result<()> {
        if self.trajectories == 0 {
            return Err(Error::invalid(
                "falsification budget must allow at least one trajectory",
            ));
        }
        let w = self.mix;
        if !(w.corners >= 0.0
            && w.greedy >= 0.0
            && w.random >= 0.0
            && w.corners + w.greedy + w.random > 0.0)
        {
            return Err(Error::invalid(
                "strategy mix weights must be nonnegative with a positive sum",
            ));
        }
        Ok(())
    }
}

/// One searched trajectory: initial data and policies.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub index: usize,
    pub t0: u64,
    pub x0: Vec<f64>,
    pub dpol: DisturbancePolicy,
    pub upol: InputPolicy,
}

fn mix_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_add(0x632b_e59b_d9b4_e019)
}

/// Number of deterministic scenarios (sign directions × {0, t0_max}) that
/// precede the random draws.
pub fn prefix_len(sys: &SystemDef, budget: &FalsifyBudget) -> usize {
    let times = if budget.t0_max == 0 { 1 } else { 2 };
    sphere_directions(sys.n, 0, 0).len() * times
}

/// Scenario `index` for initial states of norm at most `radius`.
/// The first [`prefix_len`] indices put `x0` on the sphere along axes and
/// sign corners with a greedy adversary; later indices are random draws.
pub fn scenario(
    sys: &SystemDef,
    budget: &FalsifyBudget,
    index: usize,
    radius: f64,
    with_inputs: bool,
) -> Scenario {
    let greedy = || DisturbancePolicy::Greedy {
        objective: budget.objective.clone(),
        candidates: crate::sampling::box_samples(&sys.d_box, 9, 0, 0),
    };
    let dirs = sphere_directions(sys.n, 0, 0);
    let times: Vec<u64> = if budget.t0_max == 0 {
        vec![0]
    } else {
        vec![0, budget.t0_max]
    };
    if index < dirs.len() * times.len() {
        return Scenario {
            index,
            t0: times[index % times.len()],
            x0: scale(&dirs[index / times.len()], radius),
            dpol: greedy(),
            upol: InputPolicy::Zero,
        };
    }
    let mut r = rng(budget.seed, index as u64 + 1);
    let t0 = r.gen_range(0..=budget.t0_max);
    let x0 = ball_uniform(sys.n, radius, &mut r);
    let w = budget.mix;
    let pick = r.gen::<f64>() * (w.corners + w.greedy + w.random);
    let sub = mix_seed(budget.seed, index);
    let dpol = if pick < w.corners {
        DisturbancePolicy::RandomCorners { seed: sub }
    } else if pick < w.corners + w.greedy {
        greedy()
    } else {
        DisturbancePolicy::RandomUniform { seed: sub }
    };
    let upol = if with_inputs && sys.k > 0 {
        let u_box = vec![(-budget.u_max, budget.u_max); sys.k];
        match r.gen_range(0..3) {
            0 => InputPolicy::Zero,
            1 => InputPolicy::Constant(box_uniform(&u_box, &mut r)),
            _ => InputPolicy::Sequence(
                (0..=budget.horizon)
                    .map(|_| box_uniform(&u_box, &mut r))
                    .collect(),
            ),
        }
    } else {
        InputPolicy::Zero
    };
    Scenario {
        index,
        t0,
        x0,
        dpol,
        upol,
    }
}

pub fn run_scenario(sys: &SystemDef, sc: &Scenario, horizon: usize) -> Result<Trajectory> {
    simulate(sys, sc.t0, &sc.x0, &sc.dpol, &sc.upol, horizon)
}

/// `‖Y(t)‖` along the trajectory.
fn output_norms(tr: &Trajectory) -> Vec<f64> {
    tr.rows.iter().map(|r| norm(&r.big_y)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub scenario: usize,
    pub t0: u64,
    pub x0: Vec<f64>,
    pub t: u64,
    pub value: f64,
    pub disturbance: String,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub property: &'static str,
    pub eps: f64,
    #[serde(rename = "T")]
    pub t_max: u64,
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    /// Largest `δ` for which no violation was found.
    pub delta: Option<f64>,
    /// `(largest passing δ, smallest failing δ)` bracketing the boundary.
    pub delta_interval: Option<(f64, f64)>,
    pub tau_hat: Option<u64>,
    pub attained: bool,
    pub counterexample: Option<Counterexample>,
    pub trajectories_run: usize,
    pub seed: u64,
    pub notes: Vec<String>,
}

/// Worst `‖Y‖` over one batch of scenarios from the ball of radius `radius`;
/// returns the value, the time and the trajectory where it occurs.
fn worst_output(
    sys: &SystemDef,
    budget: &FalsifyBudget,
    radius: f64,
    t0_max: u64,
) -> Result<(f64, u64, usize, Trajectory)> {
    let budget = FalsifyBudget {
        t0_max,
        ..budget.clone()
    };
    let results = (0..budget.trajectories)
        .into_par_iter()
        .map(|i| -> Result<(f64, u64, usize, Trajectory)> {
            let tr = run_scenario(
                sys,
                &scenario(sys, &budget, i, radius, false),
                budget.horizon,
            )?;
            let (mut best, mut at) = (f64::NEG_INFINITY, tr.t0);
            for (row, v) in tr.rows.iter().zip(output_norms(&tr)) {
                if v > best {
                    best = v;
                    at = row.t;
                }
            }
            Ok((best, at, i, tr))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results
        .into_iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })
        .expect("budget is positive"))
}

/// `(δ, worst ‖Y‖, time, scenario index, trajectory)` of a failing trial.
type Failure = (f64, f64, u64, usize, Trajectory);

/// Default upper end of the `δ` search.
pub const DELTA_CAP: f64 = 1e6;
const BISECTIONS: usize = 20;

/// Largest `δ` such that no searched trajectory with `t0 <= T` and
/// `‖x0‖ <= δ` has `‖Y(t)‖ > ε` within the horizon. A geometric pass from
/// `DELTA_CAP` down by factors of ten brackets the boundary, then twenty
/// bisection steps refine it.
pub fn test_output_stability(
    sys: &SystemDef,
    eps: f64,
    t_max: u64,
    budget: &FalsifyBudget,
) -> Result<StabilityReport> {
    budget.validate()?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    if sys.k != 0 {
        return Err(Error::invalid(
            "output stability is tested on unforced systems",
        ));
    }
    let mut runs = 0usize;
    let mut trial = |delta: f64| -> Result<(bool, Failure)> {
        runs += budget.trajectories;
        let (v, t, i, tr) = worst_output(sys, budget, delta, t_max)?;
        Ok((v <= eps, (delta, v, t, i, tr)))
    };
    let mut notes = vec![
        "boundedness of the output is only witnessed over the finite horizon".to_string(),
        "search is a lower bound on the adversary".to_string(),
    ];
    let mut failing: Option<Failure> = None;
    let mut delta = DELTA_CAP;
    let lo = loop {
        let (ok, fail) = trial(delta)?;
        if ok {
            break Some(delta);
        }
        failing = Some(fail);
        delta /= 10.0;
        if delta < 1e-15 {
            break None;
        }
    };
    let to_cex = |(_, v, t, scenario, tr): Failure| Counterexample {
        scenario,
        t0: tr.t0,
        x0: tr.x0().to_vec(),
        t,
        value: v,
        disturbance: tr.meta.disturbance.clone(),
        trajectory: tr,
    };
    let Some(mut lo) = lo else {
        notes.push("no tested delta passes".into());
        return Ok(StabilityReport {
            property: "output stability",
            eps,
            t_max,
            radius: None,
            delta: None,
            delta_interval: None,
            tau_hat: None,
            attained: false,
            counterexample: failing.map(to_cex),
            trajectories_run: runs,
            seed: budget.seed,
            notes,
        });
    };
    let mut interval = None;
    if let Some(f) = failing {
        let mut hi = f.0;
        let mut worst_fail = f;
        for _ in 0..BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let (ok, fail) = trial(mid)?;
            if ok {
                lo = mid;
            } else {
                hi = mid;
                worst_fail = fail;
            }
        }
        interval = Some((lo, hi));
        failing = Some(worst_fail);
    } else {
        notes.push(format!("the cap delta = {DELTA_CAP:e} passes"));
    }
    Ok(StabilityReport {
        property: "output stability",
        eps,
        t_max,
        radius: None,
        delta: Some(lo),
        delta_interval: interval,
        tau_hat: None,
        attained: true,
        counterexample: failing.map(to_cex),
        trajectories_run: runs,
        seed: budget.seed,
        notes,
    })
}

/// Smallest `τ̂` such that every searched trajectory with `t0 <= T` and
/// `‖x0‖ <= R` has `‖Y(t)‖ <= ε` for `t >= t0 + τ̂`: the maximum over
/// trajectories of (last time above `ε`) − `t0` + 1. An under-approximation
/// of the true worst case.
pub fn test_output_attractivity(
    sys: &SystemDef,
    eps: f64,
    t_max: u64,
    radius: f64,
    budget: &FalsifyBudget,
) -> Result<StabilityReport> {
    budget.validate()?;
    if !(eps > 0.0) || radius < 0.0 {
        return Err(Error::invalid("need eps > 0 and R >= 0"));
    }
    if sys.k != 0 {
        return Err(Error::invalid(
            "output attractivity is tested on unforced systems",
        ));
    }
    let budget_t = FalsifyBudget {
        t0_max: t_max,
        ..budget.clone()
    };
    let per = (0..budget.trajectories)
        .into_par_iter()
        .map(|i| -> Result<(u64, bool, usize, Trajectory)> {
            let tr = run_scenario(
                sys,
                &scenario(sys, &budget_t, i, radius, false),
                budget.horizon,
            )?;
            let norms = output_norms(&tr);
            let last = norms.iter().rposition(|&v| v > eps);
            let tau = last.map_or(0, |j| j as u64 + 1);
            let unfinished = last == Some(norms.len() - 1);
            Ok((tau, unfinished, i, tr))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst: Option<(u64, bool, usize, Trajectory)> = None;
    for item in per {
        let replace = match &worst {
            None => true,
            Some(w) => (item.1 && !w.1) || (item.1 == w.1 && item.0 > w.0),
        };
        if replace {
            worst = Some(item);
        }
    }
    let (tau, unfinished, index, tr) = worst.expect("budget is positive");
    let mut notes = vec!["under-approximation: maximum over searched trajectories".to_string()];
    if unfinished {
        notes.push("not attained within the horizon".into());
    }
    let norms = output_norms(&tr);
    let cex = (tau > 0).then(|| {
        let j = tau as usize - 1;
        Counterexample {
            scenario: index,
            t0: tr.t0,
            x0: tr.x0().to_vec(),
            t: tr.rows[j].t,
            value: norms[j],
            disturbance: tr.meta.disturbance.clone(),
            trajectory: tr.clone(),
        }
    });
    Ok(StabilityReport {
        property: "output attractivity",
        eps,
        t_max,
        radius: Some(radius),
        delta: None,
        delta_interval: None,
        tau_hat: (!unfinished).then_some(tau),
        attained: !unfinished,
        counterexample: cex,
        trajectories_run: budget.trajectories,
        seed: budget.seed,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqrt_coupled() -> SystemDef {
        SystemDef::parse(
            "sqrt_coupled",
            2,
            1,
            0,
            vec![(-2.0, 2.0)],
            &["d1*x1", "2^(-t)*d1*abs(x1)^0.5"],
            &["x2"],
            &["x2"],
        )
        .unwrap()
    }

    fn small_budget() -> FalsifyBudget {
        FalsifyBudget {
            trajectories: 40,
            horizon: 40,
            ..FalsifyBudget::default()
        }
    }

    #[test]
    fn delta_for_sqrt_coupled() {
        let rep = test_output_stability(&sqrt_coupled(), 1.0, 0, &small_budget()).unwrap();
        let d = rep.delta.unwrap();
        assert!(d <= 0.25 && d > 0.2499, "{d}");
        let (lo, hi) = rep.delta_interval.unwrap();
        assert!(lo <= 0.25 && hi > 0.25);
    }

    #[test]
    fn zero_map_passes_at_cap() {
        let sys = SystemDef::parse("zero", 1, 0, 0, vec![], &["0"], &["x1"], &["x1"]).unwrap();
        let rep = test_output_stability(&sys, 1e7, 0, &small_budget()).unwrap();
        assert_eq!(rep.delta, Some(DELTA_CAP));
    }

    #[test]
    fn doubling_has_no_delta() {
        let sys = SystemDef::parse("double", 1, 0, 0, vec![], &["2*x1"], &["x1"], &["x1"]).unwrap();
        let budget = FalsifyBudget {
            horizon: 60,
            ..small_budget()
        };
        let rep = test_output_stability(&sys, 1.0, 0, &budget).unwrap();
        assert_eq!(rep.delta, None);
        assert!(rep.counterexample.unwrap().value > 1.0);
    }

    #[test]
    fn attractivity_time_for_sqrt_coupled() {
        let rep = test_output_attractivity(&sqrt_coupled(), 0.1, 0, 1.0, &small_budget()).unwrap();
        assert_eq!(rep.tau_hat, Some(10));
        let zero = test_output_attractivity(&sqrt_coupled(), 0.1, 0, 0.0, &small_budget()).unwrap();
        assert_eq!(zero.tau_hat, Some(0));
    }

    #[test]
    fn divergence_is_not_attained() {
        let sys = SystemDef::parse("double", 1, 0, 0, vec![], &["2*x1"], &["x1"], &["x1"]).unwrap();
        let rep = test_output_attractivity(&sys, 1.0, 0, 1.0, &small_budget()).unwrap();
        assert!(!rep.attained);
        assert_eq!(rep.tau_hat, None);
    }

    #[test]
    fn scenarios_do_not_depend_on_budget_size() {
        let sys = sqrt_coupled();
        let a = FalsifyBudget {
            trajectories: 10,
            ..FalsifyBudget::default()
        };
        let b = FalsifyBudget {
            trajectories: 500,
            ..FalsifyBudget::default()
        };
        for i in 0..10 {
            let (sa, sb) = (
                scenario(&sys, &a, i, 3.0, true),
                scenario(&sys, &b, i, 3.0, true),
            );
            assert_eq!((sa.t0, &sa.x0, &sa.dpol), (sb.t0, &sb.x0, &sb.dpol));
        }
        assert_eq!(prefix_len(&sys, &a), 16);
    }

    #[test]
    fn zero_budget_is_rejected() {
        let b = FalsifyBudget {
            trajectories: 0,
            ..FalsifyBudget::default()
        };
        assert!(test_output_stability(&sqrt_coupled(), 1.0, 0, &b).is_err());
    }
}
