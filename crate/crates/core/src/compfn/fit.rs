use rayon::prelude::*;
use serde::Serialize;

use super::{Descriptor, KFn, KLEnvelope, Sigma, TimeGain};
use crate::error::{Error, Result};
use crate::sampling::{box_samples, lin_space, log_space, norm, scale, sphere_directions};
use crate::system::{SystemDef, Trajectory};

/// Which vector of each row is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitTarget {
    Stabilized,
    Measured,
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitPoint {
    pub traj: usize,
    pub t: u64,
    /// `t - t0`
    pub tau: f64,
    /// `β(t0) ‖x0‖`
    pub scale: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitWitness {
    pub traj: usize,
    pub t: u64,
    pub scale: f64,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct EnvelopeFit {
    pub envelope: KLEnvelope,
    /// All observed values were zero; the envelope is the trivial `C = 0`.
    pub degenerate: bool,
    /// Regression estimates before inflation.
    pub fitted_gain: f64,
    pub fitted_rate: f64,
    /// `max (σ - y)` over the batch.
    pub max_slack: f64,
    /// `min (σ - y)` over the batch; never negative after inflation.
    pub min_slack: f64,
    /// The tightest point.
    pub witness: Option<FitWitness>,
    pub points: usize,
}

#[derive(Serialize)]
struct EnvelopeReport<'a> {
    #[serde(rename = "C")]
    gain: f64,
    c: f64,
    beta: Descriptor,
    max_slack: f64,
    witness: &'a Option<FitWitness>,
    degenerate: bool,
}

impl EnvelopeFit {
    pub fn gain_rate(&self) -> (f64, f64) {
        match self.envelope.sigma {
            Sigma::Exponential { gain, rate } => (gain, rate),
            Sigma::Expr(_) => unreachable!("fits are always exponential"),
        }
    }

    pub fn report_json(&self) -> serde_json::Value {
        let (gain, c) = self.gain_rate();
        serde_json::to_value(EnvelopeReport {
            gain,
            c,
            beta: Descriptor::from(&self.envelope.beta),
            max_slack: self.max_slack,
            witness: &self.witness,
            degenerate: self.degenerate,
        })
        .expect("plain data serializes")
    }
}

/// Fits `C s e^{-c τ}` to the points: least squares of `ln(y / s)` on `τ`
/// over positive rows, then `C` is raised until every point is dominated.
pub fn fit_points(points: &[FitPoint], beta: &TimeGain) -> Result<EnvelopeFit> {
    if points.is_empty() {
        return Err(Error::FitFailure("empty batch".into()));
    }
    if points.iter().all(|p| p.value == 0.0) {
        return Ok(EnvelopeFit {
            envelope: KLEnvelope {
                sigma: Sigma::Exponential {
                    gain: 0.0,
                    rate: 0.0,
                },
                beta: beta.clone(),
            },
            degenerate: true,
            fitted_gain: 0.0,
            fitted_rate: 0.0,
            max_slack: 0.0,
            min_slack: 0.0,
            witness: None,
            points: points.len(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.value > 0.0 && p.scale <= 0.0) {
        return Err(Error::FitFailure(format!(
            "trajectory {} has output {} at t = {} from a zero initial scale",
            p.traj, p.value, p.t
        )));
    }
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.value > 0.0)
        .map(|p| (p.tau, (p.value / p.scale).ln()))
        .collect();
    let count = used.len() as f64;
    let mean_tau = used.iter().map(|u| u.0).sum::<f64>() / count;
    let mean_z = used.iter().map(|u| u.1).sum::<f64>() / count;
    let sxx: f64 = used.iter().map(|u| (u.0 - mean_tau).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitFailure(
            "all positive rows share one time offset".into(),
        ));
    }
    let sxz: f64 = used.iter().map(|u| (u.0 - mean_tau) * (u.1 - mean_z)).sum();
    let rate = -sxz / sxx;
    if !(rate > 0.0) {
        return Err(Error::FitFailure(format!(
            "non-decaying data: fitted rate {rate}"
        )));
    }
    let fitted_gain = (mean_z + rate * mean_tau).exp();
    let mut gain = points
        .iter()
        .filter(|p| p.value > 0.0)
        .map(|p| p.value / p.scale * (rate * p.tau).exp())
        .fold(fitted_gain, f64::max);
    let slack = |gain: f64, p: &FitPoint| gain * p.scale * (-rate * p.tau).exp() - p.value;
    // Rounding in the inflation step can leave a point a few ulps above.
    for _ in 0..64 {
        if points.iter().all(|p| slack(gain, p) >= 0.0) {
            break;
        }
        gain *= 1.0 + 4.0 * f64::EPSILON;
    }
    let mut min_slack = f64::INFINITY;
    let mut max_slack = f64::NEG_INFINITY;
    let mut witness = None;
    for p in points {
        let s = slack(gain, p);
        max_slack = max_slack.max(s);
        if s < min_slack {
            min_slack = s;
            witness = Some(FitWitness {
                traj: p.traj,
                t: p.t,
                scale: p.scale,
                value: p.value,
                bound: s + p.value,
            });
        }
    }
    Ok(EnvelopeFit {
        envelope: KLEnvelope {
            sigma: Sigma::Exponential { gain, rate },
            beta: beta.clone(),
        },
        degenerate: false,
        fitted_gain,
        fitted_rate: rate,
        max_slack,
        min_slack,
        witness,
        points: points.len(),
    })
}

pub fn fit_kl_envelope(
    batch: &[Trajectory],
    beta: &TimeGain,
    target: FitTarget,
) -> Result<EnvelopeFit> {
    let per_traj: Vec<Vec<FitPoint>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, tr)| -> Result<Vec<FitPoint>> {
            let scale = beta.eval(tr.t0 as f64)? * norm(tr.x0());
            Ok(tr
                .rows
                .iter()
                .map(|row| FitPoint {
                    traj: i,
                    t: row.t,
                    tau: (row.t - tr.t0) as f64,
                    scale,
                    value: norm(match target {
                        FitTarget::Stabilized => &row.big_y,
                        FitTarget::Measured => &row.y,
                        FitTarget::State => &row.x,
                    }),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let points: Vec<FitPoint> = per_traj.into_iter().flatten().collect();
    fit_points(&points, beta)
}

#[derive(Debug, Clone)]
pub struct DominationGrid {
    pub horizons: Vec<u64>,
    pub s: Vec<f64>,
}

impl Default for DominationGrid {
    fn default() -> Self {
        DominationGrid {
            horizons: (0..=10).collect(),
            s: log_space(1e-3, 1e3, 25),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationReport {
    pub pass: bool,
    /// `max (a - ζ(β(T) s)(1 + tol))`
    pub worst_margin: f64,
    /// `(T, s, a, ζ(β(T) s))` at the worst margin.
    pub witness: Option<(u64, f64, f64, f64)>,
    pub samples: usize,
    pub tol: f64,
}

/// Checks `a(T, s) <= ζ(β(T) s)` on the grid.
pub fn check_domination(
    a: &(dyn Fn(u64, f64) -> Result<f64> + Sync),
    zeta: &KFn,
    beta: &TimeGain,
    grid: &DominationGrid,
    tol: f64,
) -> Result<DominationReport> {
    let cells: Vec<(u64, f64)> = grid
        .horizons
        .iter()
        .flat_map(|&t| grid.s.iter().map(move |&s| (t, s)))
        .collect();
    let evaluated = cells
        .par_iter()
        .map(|&(t, s)| -> Result<(u64, f64, f64, f64)> {
            let bound = zeta.eval(beta.eval(t as f64)? * s)?;
            Ok((t, s, a(t, s)?, bound))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for &(t, s, av, bound) in &evaluated {
        let margin = av - bound * (1.0 + tol);
        if margin > worst {
            worst = margin;
            witness = Some((t, s, av, bound));
        }
    }
    Ok(DominationReport {
        pass: worst <= 0.0,
        worst_margin: worst,
        witness,
        samples: evaluated.len(),
        tol,
    })
}

/// Sampled growth function `a(T, s) = max ‖f(t, d, x, u)‖` over `t <= T`,
/// `‖x‖ <= s`, `‖u‖ <= s` and sampled `d`.
pub struct GrowthSampler<'a> {
    sys: &'a SystemDef,
    dirs: Vec<Vec<f64>>,
    u_dirs: Vec<Vec<f64>>,
    ds: Vec<Vec<f64>>,
    fractions: Vec<f64>,
}

impl<'a> GrowthSampler<'a> {
    pub fn new(sys: &'a SystemDef, directions: usize, seed: u64) -> Self {
        let mut u_dirs = vec![vec![0.0; sys.k]];
        if sys.k > 0 {
            u_dirs.extend(sphere_directions(sys.k, 8, seed ^ 0x75));
        }
        GrowthSampler {
            sys,
            dirs: sphere_directions(sys.n, directions, seed),
            u_dirs,
            ds: box_samples(&sys.d_box, 9, 0, seed),
            fractions: lin_space(0.25, 1.0, 4),
        }
    }

    pub fn a(&self, horizon: u64, s: f64) -> Result<f64> {
        let mut best: f64 = 0.0;
        for t in 0..=horizon {
            for dir in &self.dirs {
                for &fr in &self.fractions {
                    let x = scale(dir, s * fr);
                    for ud in &self.u_dirs {
                        let u = scale(ud, s);
                        for d in &self.ds {
                            best = best.max(norm(&self.sys.step_unchecked(t, &x, d, &u)?));
                        }
                    }
                }
            }
        }
        Ok(best)
    }
}
