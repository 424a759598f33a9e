use rayon::prelude::*;
use serde::Serialize;

use super::{LyapunovCandidate, Verdict};
use crate::error::{Error, Result};
use crate::sampling::{cartesian, norm};
use crate::system::SystemDef;

/// Which inf-sup condition is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RofsMode {
    /// Infimum over all candidate inputs.
    Plain,
    /// Infimum over candidates that also zero the next stabilized output,
    /// `‖H(t+1, f(t, d, x, u))‖ <= filter_tol` on every fiber sample.
    Strong { filter_tol: f64 },
    /// `u = 0` on the fiber over `y = 0`.
    ZeroFeedback,
}

/// Finitely many states sampled from `h⁻¹(t, y)`.
#[derive(Debug, Clone)]
pub struct Fiber {
    pub t: u64,
    pub y: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Fiber of a coordinate projection: the `fixed` coordinates take the given
/// values, the `free` ones range over the listed samples.
pub fn coordinate_fiber(
    n: usize,
    fixed: &[(usize, f64)],
    free: &[(usize, Vec<f64>)],
) -> Result<Vec<Vec<f64>>> {
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &(i, v) in fixed {
        axes.get_mut(i)
            .ok_or_else(|| Error::dim("fiber coordinate", n, i + 1))?
            .push(v);
    }
    for (i, vs) in free {
        axes.get_mut(*i)
            .ok_or_else(|| Error::dim("fiber coordinate", n, i + 1))?
            .extend(vs);
    }
    if let Some(i) = axes.iter().position(|a| a.is_empty()) {
        return Err(Error::invalid(format!(
            "fiber leaves x{} unspecified",
            i + 1
        )));
    }
    Ok(cartesian(&axes))
}

#[derive(Debug, Clone, Serialize)]
pub struct RofsEntry {
    pub t: u64,
    pub y: Vec<f64>,
    /// `min_u max_{x, d} V(t+1, f(t, d, x, u)) - λ V(t, x)`.
    pub inf_sup: f64,
    pub verdict: Verdict,
    pub best_u: Vec<f64>,
    /// `(x, d)` attaining the sup for `best_u`.
    pub sup_x: Vec<f64>,
    pub sup_d: Vec<f64>,
    pub admissible: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RofsReport {
    pub check: String,
    pub verdict: Verdict,
    pub label: &'static str,
    pub entries: Vec<RofsEntry>,
    pub tol: f64,
}

impl RofsReport {
    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }

    pub fn worst(&self) -> Option<&RofsEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.inf_sup.total_cmp(&b.inf_sup))
    }
}

/// Estimates the static output-feedback inf-sup condition per fiber. A finite
/// input grid can only over-estimate the infimum and a finite fiber can only
/// under-estimate the supremum, so the result is an estimate restricted to
/// the sampled fibers.
pub fn check_rofs_inf_sup(
    sys: &SystemDef,
    cand: &LyapunovCandidate,
    fibers: &[Fiber],
    u_candidates: &[Vec<f64>],
    d_samples: &[Vec<f64>],
    mode: RofsMode,
    tol: f64,
) -> Result<RofsReport> {
    let lambda = cand
        .lambda
        .ok_or_else(|| Error::invalid("candidate has no contraction factor lambda"))?;
    if fibers.is_empty() || d_samples.is_empty() {
        return Err(Error::invalid(
            "need at least one fiber and one disturbance sample",
        ));
    }
    for fiber in fibers {
        if mode == RofsMode::ZeroFeedback && fiber.y.iter().any(|&v| v != 0.0) {
            return Err(Error::invalid("zero-feedback mode uses fibers over y = 0"));
        }
        for x in &fiber.states {
            let y = sys.measure(fiber.t, x)?;
            if y != fiber.y {
                return Err(Error::invalid(format!(
                    "state {x:?} has h = {y:?}, not on the fiber over {:?}",
                    fiber.y
                )));
            }
        }
    }
    let zero_u = vec![vec![0.0; sys.k]];
    let us: &[Vec<f64>] = if mode == RofsMode::ZeroFeedback {
        &zero_u
    } else {
        u_candidates
    };
    if us.is_empty() {
        return Err(Error::invalid("no input candidates"));
    }
    let entries = fibers
        .par_iter()
        .map(|fiber| -> Result<RofsEntry> {
            let t = fiber.t;
            let mut best: Option<(f64, usize, usize, usize)> = None;
            let mut admissible = 0;
            for (ui, u) in us.iter().enumerate() {
                let mut sup = (f64::NEG_INFINITY, 0, 0);
                let mut zeroes_output = true;
                for (xi, x) in fiber.states.iter().enumerate() {
                    let v_now = cand.value(t, x)?;
                    for (di, d) in d_samples.iter().enumerate() {
                        let next = sys.step(t, x, d, u)?;
                        if let RofsMode::Strong { filter_tol } = mode {
                            zeroes_output &= norm(&sys.output(t + 1, &next)?) <= filter_tol;
                        }
                        let val = cand.value(t + 1, &next)? - lambda * v_now;
                        if val > sup.0 {
                            sup = (val, xi, di);
                        }
                    }
                }
                if !zeroes_output {
                    continue;
                }
                admissible += 1;
                if best.is_none_or(|b| sup.0 < b.0) {
                    best = Some((sup.0, ui, sup.1, sup.2));
                }
            }
            Ok(match best {
                Some((inf_sup, ui, xi, di)) => RofsEntry {
                    t,
                    y: fiber.y.clone(),
                    inf_sup,
                    verdict: Verdict::of(inf_sup, 0.0, tol),
                    best_u: us[ui].clone(),
                    sup_x: fiber.states[xi].clone(),
                    sup_d: d_samples[di].clone(),
                    admissible,
                    note: None,
                },
                None => RofsEntry {
                    t,
                    y: fiber.y.clone(),
                    inf_sup: f64::INFINITY,
                    verdict: Verdict::Fail,
                    best_u: Vec::new(),
                    sup_x: Vec::new(),
                    sup_d: Vec::new(),
                    admissible: 0,
                    note: Some("no admissible input found at tolerance".into()),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let verdict = if entries.iter().all(|e| e.verdict.passed()) {
        if entries.iter().any(|e| e.verdict == Verdict::PassTolerance) {
            Verdict::PassTolerance
        } else {
            Verdict::Pass
        }
    } else {
        Verdict::Fail
    };
    let check = match mode {
        RofsMode::Plain => "rofs-inf-sup",
        RofsMode::Strong { .. } => "rofs-inf-sup-strong",
        RofsMode::ZeroFeedback => "rofs-zero-feedback",
    };
    Ok(RofsReport {
        check: check.into(),
        verdict,
        label: "fiber-restricted estimate",
        entries,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::lin_space;

    #[test]
    fn full_observation_has_a_zeroing_input() {
        let sys =
            SystemDef::parse("integrator", 1, 0, 1, vec![], &["x1+u1"], &["x1"], &["x1"]).unwrap();
        let cand = LyapunovCandidate::parse("abs(x1)", 1)
            .unwrap()
            .with_lambda(0.5)
            .unwrap();
        let us: Vec<Vec<f64>> = lin_space(-4.0, 4.0, 33)
            .into_iter()
            .map(|u| vec![u])
            .collect();
        let fibers: Vec<Fiber> = [-4.0, -1.5, 0.0, 0.25, 3.0]
            .iter()
            .flat_map(|&y| {
                (0..3).map(move |t| Fiber {
                    t,
                    y: vec![y],
                    states: vec![vec![y]],
                })
            })
            .collect();
        let rep =
            check_rofs_inf_sup(&sys, &cand, &fibers, &us, &[vec![]], RofsMode::Plain, 0.0).unwrap();
        assert!(rep.passed());
        assert!(rep.entries.iter().all(|e| e.inf_sup <= 0.0));
        let strong = check_rofs_inf_sup(
            &sys,
            &cand,
            &fibers,
            &us,
            &[vec![]],
            RofsMode::Strong { filter_tol: 1e-8 },
            0.0,
        )
        .unwrap();
        assert!(strong
            .entries
            .iter()
            .all(|e| e.admissible == 1 && e.best_u[0] == -e.y[0]));
    }

    #[test]
    fn states_off_the_fiber_are_rejected() {
        let sys =
            SystemDef::parse("integrator", 1, 0, 1, vec![], &["x1+u1"], &["x1"], &["x1"]).unwrap();
        let cand = LyapunovCandidate::parse("abs(x1)", 1)
            .unwrap()
            .with_lambda(0.5)
            .unwrap();
        let fib = Fiber {
            t: 0,
            y: vec![1.0],
            states: vec![vec![2.0]],
        };
        assert!(check_rofs_inf_sup(
            &sys,
            &cand,
            &[fib],
            &[vec![0.0]],
            &[vec![]],
            RofsMode::Plain,
            0.0
        )
        .is_err());
    }

    #[test]
    fn empty_strong_filter_is_reported() {
        let sys = SystemDef::parse("shift", 1, 0, 1, vec![], &["x1+u1"], &["x1"], &["x1"]).unwrap();
        let cand = LyapunovCandidate::parse("abs(x1)", 1)
            .unwrap()
            .with_lambda(0.5)
            .unwrap();
        let fib = Fiber {
            t: 0,
            y: vec![1.0],
            states: vec![vec![1.0]],
        };
        let rep = check_rofs_inf_sup(
            &sys,
            &cand,
            &[fib],
            &[vec![0.0], vec![2.0]],
            &[vec![]],
            RofsMode::Strong { filter_tol: 1e-8 },
            0.0,
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        assert_eq!(
            rep.entries[0].note.as_deref(),
            Some("no admissible input found at tolerance")
        );
    }

    #[test]
    fn coordinate_fiber_product() {
        let f = coordinate_fiber(3, &[(0, 1.0), (2, 0.0)], &[(1, vec![-1.0, 1.0])]).unwrap();
        assert_eq!(f, vec![vec![1.0, -1.0, 0.0], vec![1.0, 1.0, 0.0]]);
        assert!(coordinate_fiber(3, &[(0, 1.0)], &[]).is_err());
    }
}
