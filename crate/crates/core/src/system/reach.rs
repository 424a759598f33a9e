use rayon::prelude::*;
use serde::Serialize;

use super::SystemDef;
use crate::error::Result;
use crate::sampling::{box_samples, norm, scale, sphere_directions};

#[derive(Debug, Clone)]
pub struct ReachConfig {
    /// Random unit directions on top of the axes and sign corners.
    pub directions: usize,
    /// Radii, as fractions of the previous bound, sampled along each direction.
    pub radius_fractions: Vec<f64>,
    pub d_grid: usize,
    pub d_random: usize,
    /// Random input directions (inputs are sampled on `‖u‖ = r` plus `u = 0`).
    pub u_directions: usize,
    pub seed: u64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        ReachConfig {
            directions: 512,
            radius_fractions: vec![1.0, 0.5, 0.25, 0.1, 0.01],
            d_grid: 9,
            d_random: 256,
            u_directions: 16,
            seed: 42,
        }
    }
}

/// Radius estimates `ρ(0..=T)` of the reachable sets. A sampled bound: it
/// under-approximates the true supremum of `‖f‖`.
pub type ReachWitness = (u64, Vec<f64>, Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, Serialize)]
pub struct ReachBound {
    pub label: &'static str,
    pub radii: Vec<f64>,
    /// `(t, x, d, u)` attaining each `ρ(k)`, `k >= 1`.
    pub witnesses: Vec<ReachWitness>,
}

/// `ρ(0) = r`, `ρ(k) = max ‖f(t, d, x, u)‖` over `t <= 2T`, sampled `d`,
/// `‖x‖ <= ρ(k-1)` and `‖u‖ <= r`.
pub fn reachable_bound(
    sys: &SystemDef,
    r: f64,
    horizon: usize,
    cfg: &ReachConfig,
) -> Result<ReachBound> {
    let dirs = sphere_directions(sys.n, cfg.directions, cfg.seed);
    let ds = box_samples(&sys.d_box, cfg.d_grid, cfg.d_random, cfg.seed);
    let mut us = vec![vec![0.0; sys.k]];
    if sys.k > 0 {
        us.extend(
            sphere_directions(sys.k, cfg.u_directions, cfg.seed ^ 0x75)
                .iter()
                .map(|u| scale(u, r)),
        );
    }
    let times: Vec<u64> = (0..=2 * horizon as u64).collect();
    let mut radii = vec![r];
    let mut witnesses = Vec::new();
    for _ in 0..horizon {
        let prev = *radii.last().expect("non-empty");
        let mut states = Vec::new();
        for dir in &dirs {
            for &frac in &cfg.radius_fractions {
                states.push(scale(dir, prev * frac));
            }
        }
        let best = times
            .par_iter()
            .map(|&t| -> Result<(f64, usize)> {
                let mut best = (0.0f64, usize::MAX);
                let mut idx = 0usize;
                for x in &states {
                    for d in &ds {
                        for u in &us {
                            let v = norm(&sys.step_unchecked(t, x, d, u)?);
                            if v > best.0 {
                                best = (v, idx);
                            }
                            idx += 1;
                        }
                    }
                }
                Ok(best)
            })
            .collect::<Result<Vec<_>>>()?;
        let (ti, &(value, idx)) =
            best.iter()
                .enumerate()
                .fold((0, &(0.0, usize::MAX)), |acc, (i, b)| {
                    if b.0 > acc.1 .0 {
                        (i, b)
                    } else {
                        acc
                    }
                });
        radii.push(value);
        if idx != usize::MAX {
            let per_x = ds.len() * us.len();
            let (xi, rest) = (idx / per_x, idx % per_x);
            witnesses.push((
                times[ti],
                states[xi].clone(),
                ds[rest / us.len()].clone(),
                us[rest % us.len()].clone(),
            ));
        }
    }
    Ok(ReachBound {
        label: "sampled bound",
        radii,
        witnesses,
    })
}
