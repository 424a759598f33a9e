use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SystemDef;
use crate::dsl::{Env, Expr};
use crate::error::{Error, Result};
use crate::sampling::{box_corners, box_uniform, norm, rng};
use crate::synth::DelayChainController;

/// What a greedy adversary maximizes over its candidate disturbances.
#[derive(Debug, Clone, PartialEq)]
pub enum GreedyObjective {
    /// `‖H(t+1, f(t, d, x, u))‖`.
    Output,
    /// `V(t+1, f(t, d, x, u))` for a candidate `V` over `(t, x)`.
    Lyapunov(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbancePolicy {
    Constant(Vec<f64>),
    /// Explicit per-step values; must cover every row.
    Sequence(Vec<Vec<f64>>),
    RandomCorners {
        seed: u64,
    },
    RandomUniform {
        seed: u64,
    },
    /// Per step, the candidate maximizing the objective at the successor
    /// state. Ties keep the earliest candidate.
    Greedy {
        objective: GreedyObjective,
        candidates: Vec<Vec<f64>>,
    },
}

impl DisturbancePolicy {
    /// Greedy output-seeking adversary over the corners plus a 9-point grid.
    pub fn greedy_output(sys: &SystemDef) -> Self {
        DisturbancePolicy::Greedy {
            objective: GreedyObjective::Output,
            candidates: crate::sampling::box_samples(&sys.d_box, 9, 0, 0),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DisturbancePolicy::Constant(d) => format!("constant {d:?}"),
            DisturbancePolicy::Sequence(s) => format!("sequence of {}", s.len()),
            DisturbancePolicy::RandomCorners { seed } => format!("random corners (seed {seed})"),
            DisturbancePolicy::RandomUniform { seed } => format!("random uniform (seed {seed})"),
            DisturbancePolicy::Greedy {
                objective,
                candidates,
            } => {
                let obj = match objective {
                    GreedyObjective::Output => "output".to_string(),
                    GreedyObjective::Lyapunov(v) => format!("V = {v}"),
                };
                format!("greedy on {obj} over {} candidates", candidates.len())
            }
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            DisturbancePolicy::RandomCorners { seed }
            | DisturbancePolicy::RandomUniform { seed } => Some(*seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputPolicy {
    Zero,
    Constant(Vec<f64>),
    /// Explicit per-step values; must cover every row.
    Sequence(Vec<Vec<f64>>),
    /// `u = k(t, x)` with expressions over `(t, x)`.
    StateFeedback(Vec<Expr>),
    OutputFeedback(Box<DelayChainController>),
}

impl InputPolicy {
    pub fn describe(&self) -> String {
        match self {
            InputPolicy::Zero => "zero".into(),
            InputPolicy::Constant(u) => format!("constant {u:?}"),
            InputPolicy::Sequence(s) => format!("sequence of {}", s.len()),
            InputPolicy::StateFeedback(k) => {
                let parts: Vec<String> = k.iter().map(ToString::to_string).collect();
                format!("state feedback [{}]", parts.join(", "))
            }
            InputPolicy::OutputFeedback(c) => format!("delay-chain output feedback (p = {})", c.p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub t: u64,
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub u: Vec<f64>,
    /// Stabilized output `H(t, x(t))`.
    pub big_y: Vec<f64>,
    /// Measured output `h(t, x(t))`.
    pub y: Vec<f64>,
    /// Controller state, empty unless an output-feedback controller ran.
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrajectoryMeta {
    pub system: String,
    pub seed: Option<u64>,
    pub disturbance: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub t0: u64,
    pub rows: Vec<Row>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn x0(&self) -> &[f64] {
        &self.rows[0].x
    }

    /// CSV with header `t,x1..xn,d1..dm,u1..uk,Y1..,y1..[,w1..]`; floats carry
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.rows.first() else {
            return out;
        };
        let mut header = vec!["t".to_string()];
        let mut names = |prefix: &str, len: usize| {
            header.extend((1..=len).map(|i| format!("{prefix}{i}")));
        };
        names("x", first.x.len());
        names("d", first.d.len());
        names("u", first.u.len());
        names("Y", first.big_y.len());
        names("y", first.y.len());
        names("w", first.w.len());
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{}", row.t);
            for v in row
                .x
                .iter()
                .chain(&row.d)
                .chain(&row.u)
                .chain(&row.big_y)
                .chain(&row.y)
                .chain(&row.w)
            {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

struct DisturbanceState<'a> {
    policy: &'a DisturbancePolicy,
    rng: Option<ChaCha8Rng>,
    corners: Vec<Vec<f64>>,
}

impl<'a> DisturbanceState<'a> {
    fn new(sys: &SystemDef, policy: &'a DisturbancePolicy) -> Self {
        DisturbanceState {
            policy,
            rng: policy.seed().map(|s| rng(s, 0)),
            corners: box_corners(&sys.d_box),
        }
    }

    fn next(
        &mut self,
        sys: &SystemDef,
        i: usize,
        t: u64,
        x: &[f64],
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let d = match self.policy {
            DisturbancePolicy::Constant(d) => d.clone(),
            DisturbancePolicy::Sequence(seq) => seq.get(i).cloned().ok_or_else(|| {
                Error::invalid(format!("disturbance sequence ends before row {i}"))
            })?,
            DisturbancePolicy::RandomCorners { .. } => self
                .corners
                .choose(self.rng.as_mut().expect("seeded"))
                .cloned()
                .unwrap_or_default(),
            DisturbancePolicy::RandomUniform { .. } => {
                box_uniform(&sys.d_box, self.rng.as_mut().expect("seeded"))
            }
            DisturbancePolicy::Greedy {
                objective,
                candidates,
            } => {
                let mut best: Option<(f64, &Vec<f64>)> = None;
                for cand in candidates {
                    let next = sys.step_unchecked(t, x, cand, u)?;
                    let score = match objective {
                        GreedyObjective::Output => norm(&sys.output(t + 1, &next)?),
                        GreedyObjective::Lyapunov(v) => {
                            v.eval(&Env::state((t + 1) as f64, &next))?
                        }
                    };
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, cand));
                    }
                }
                best.map(|(_, d)| d.clone())
                    .ok_or_else(|| Error::invalid("greedy policy has no candidates"))?
            }
        };
        if !sys.contains_disturbance(&d) {
            return Err(Error::invalid(format!(
                "policy emitted {d:?} outside the box {:?}",
                sys.d_box
            )));
        }
        Ok(d)
    }
}

/// Simulates `horizon` steps from `x(t0) = x0`, producing `horizon + 1` rows.
/// Each row records the input and disturbance applied at that time; the last
/// row's `(d, u)` are generated but not applied.
pub fn simulate(
    sys: &SystemDef,
    t0: u64,
    x0: &[f64],
    dpol: &DisturbancePolicy,
    upol: &InputPolicy,
    horizon: usize,
) -> Result<Trajectory> {
    if x0.len() != sys.n {
        return Err(Error::dim("initial state", sys.n, x0.len()));
    }
    let mut dist = DisturbanceState::new(sys, dpol);
    let mut x = x0.to_vec();
    let mut w = match upol {
        InputPolicy::OutputFeedback(c) => {
            c.check_against(sys)?;
            c.w0.clone()
        }
        _ => Vec::new(),
    };
    let mut rows = Vec::with_capacity(horizon + 1);
    for i in 0..=horizon {
        let t = t0 + i as u64;
        let run = |x: &[f64], w: &[f64], dist: &mut DisturbanceState<'_>| -> Result<Row> {
            let big_y = sys.output(t, x)?;
            let y = sys.measure(t, x)?;
            let u = match upol {
                InputPolicy::Zero => vec![0.0; sys.k],
                InputPolicy::Constant(u) => u.clone(),
                InputPolicy::Sequence(seq) => seq
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("input sequence ends before row {i}")))?,
                InputPolicy::StateFeedback(law) => {
                    let env = Env::state(t as f64, x);
                    law.iter().map(|e| e.eval(&env)).collect::<Result<_>>()?
                }
                InputPolicy::OutputFeedback(c) => c.control(t, &y, w)?,
            };
            if u.len() != sys.k {
                return Err(Error::dim("input", sys.k, u.len()));
            }
            let d = dist.next(sys, i, t, x, &u)?;
            Ok(Row {
                t,
                x: x.to_vec(),
                d,
                u,
                big_y,
                y,
                w: w.to_vec(),
            })
        };
        let row = run(&x, &w, &mut dist).map_err(|e| e.at_step(t))?;
        if i < horizon {
            x = sys
                .step_unchecked(t, &row.x, &row.d, &row.u)
                .map_err(|e| e.at_step(t))?;
            if let InputPolicy::OutputFeedback(c) = upol {
                w = c.advance(&w, &row.y, &row.u);
            }
        }
        rows.push(row);
    }
    Ok(Trajectory {
        t0,
        rows,
        meta: TrajectoryMeta {
            system: sys.name.clone(),
            seed: dpol.seed(),
            disturbance: dpol.describe(),
            input: upol.describe(),
        },
    })
}
