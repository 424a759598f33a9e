//! Deterministic sampling helpers shared by the simulation, certificate and
//! falsification code. Every random stream is a ChaCha8 generator keyed by
//! `(seed, stream)` so parallel workers stay reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `count` points spaced evenly in log scale over `[lo, hi]`, endpoints included.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo);
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == count {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub fn lin_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

/// All `2^m` corners of the box (a single empty vector when `m = 0`).
/// Degenerate intervals contribute one value.
pub fn box_corners(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { vec![lo] } else { vec![lo, hi] })
        .collect();
    cartesian(&axes)
}

/// Product grid with `per_dim` evenly spaced points on every axis.
pub fn box_grid(bounds: &[(f64, f64)], per_dim: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let mut v = lin_space(lo, hi, per_dim.max(1));
            v.dedup();
            v
        })
        .collect();
    cartesian(&axes)
}

pub fn box_uniform(bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect()
}

pub fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Corners, then grid points, then `random` uniform samples; duplicates removed
/// while keeping first occurrence order.
pub fn box_samples(
    bounds: &[(f64, f64)],
    per_dim: usize,
    random: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut out = box_corners(bounds);
    for p in box_grid(bounds, per_dim) {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if !bounds.is_empty() {
        let mut r = rng(seed, 0xd157);
        for _ in 0..random {
            out.push(box_uniform(bounds, &mut r));
        }
    }
    out
}

pub fn gaussian_direction(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm(&v);
        if len > 1e-12 {
            return v.into_iter().map(|a| a / len).collect();
        }
    }
}

/// Unit directions in `R^n`: the `±e_i` axes, the normalized sign corners
/// (when `n <= 6`), then `random` Gaussian directions.
pub fn sphere_directions(n: usize, random: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut v = vec![0.0; n];
            v[i] = s;
            out.push(v);
        }
    }
    if (2..=6).contains(&n) {
        let c = 1.0 / (n as f64).sqrt();
        for corner in box_corners(&vec![(-c, c); n]) {
            out.push(corner);
        }
    }
    let mut r = rng(seed, 0x5fe7e);
    for _ in 0..random {
        out.push(gaussian_direction(n, &mut r));
    }
    out
}

/// A point drawn uniformly from the closed ball of the given radius.
pub fn ball_uniform(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let dir = gaussian_direction(n, rng);
    let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
    dir.into_iter().map(|a| a * r).collect()
}

pub fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|a| a * s).collect()
}
