//! Delay-chain output feedback.
//!
//! An [`ObservabilityChain`] iterates the dynamics `p` steps from `(t, x)`,
//! recording the measured outputs `y_0..y_p` along the way. A
//! [`ReconstructionMap`] `Ψ` recovers a state feedback `k(t + p, F_p)` from
//! that window. The [`DelayChainController`] keeps the last `p` outputs and
//! inputs in its state `w` and applies `Ψ` to them, so after `p` steps its
//! input coincides with the state feedback.
//!
//! `Ψ` is written over auxiliary names. With scalar outputs these are
//! `y0..yp` (oldest first, `yp` the current output) followed by
//! `u0..u{p-1}`; vector outputs use `y{i}_{j}` and vector inputs `u{i}_{j}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{parse_expression, Dims, Env, Expr, Var};
use crate::error::{Error, Result};
use crate::sampling::{box_uniform, rng};
use crate::system::{
    output_names, simulate, DisturbancePolicy, InputPolicy, SystemDef, Trajectory,
};

/// One vector per delay slot.
pub type Blocks = Vec<Vec<f64>>;

pub struct ObservabilityChain<'a> {
    pub sys: &'a SystemDef,
    pub p: usize,
}

/// `F_0..F_p` and `y_0..y_p` from one starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainValues {
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl ChainValues {
    /// `y^{(p)} = (y_0, ..., y_{p-1})`.
    pub fn history(&self) -> &[Vec<f64>] {
        &self.outputs[..self.outputs.len() - 1]
    }

    pub fn current(&self) -> &[f64] {
        self.outputs.last().expect("chain has y_0")
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("chain has F_0")
    }
}

impl<'a> ObservabilityChain<'a> {
    pub fn new(sys: &'a SystemDef, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("chain length p must be at least 1"));
        }
        Ok(ObservabilityChain { sys, p })
    }

    pub fn iterate_maps(
        &self,
        t: u64,
        x: &[f64],
        d_seq: &[Vec<f64>],
        u_seq: &[Vec<f64>],
    ) -> Result<ChainValues> {
        if d_seq.len() != self.p || u_seq.len() != self.p {
            return Err(Error::dim(
                "chain disturbance/input sequence",
                self.p,
                d_seq.len().min(u_seq.len()),
            ));
        }
        let mut states = vec![x.to_vec()];
        let mut outputs = vec![self.sys.measure(t, x)?];
        for i in 0..self.p {
            let ti = t + i as u64;
            let next = self.sys.step(ti, &states[i], &d_seq[i], &u_seq[i])?;
            outputs.push(self.sys.measure(ti + 1, &next)?);
            states.push(next);
        }
        Ok(ChainValues { states, outputs })
    }
}

fn slot_names(prefix: char, count: usize, width: usize) -> Vec<String> {
    (0..count)
        .flat_map(|i| {
            (1..=width).map(move |j| {
                if width == 1 {
                    format!("{prefix}{i}")
                } else {
                    format!("{prefix}{i}_{j}")
                }
            })
        })
        .collect()
}

/// `Ψ(t, y_p, y^{(p)}, u^{(p)})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionMap {
    pub p: usize,
    pub p_y: usize,
    pub k: usize,
    pub psi: Vec<Expr>,
}

impl ReconstructionMap {
    pub fn aux_names(p: usize, p_y: usize, k: usize) -> Vec<String> {
        let mut names = slot_names('y', p + 1, p_y);
        names.extend(slot_names('u', p, k));
        names
    }

    pub fn parse(p: usize, p_y: usize, k: usize, psi: &[&str]) -> Result<Self> {
        let dims = Dims::aux_only(Self::aux_names(p, p_y, k));
        let psi = psi
            .iter()
            .map(|s| parse_expression(s, &dims))
            .collect::<Result<Vec<_>>>()?;
        Self::new(p, p_y, k, psi)
    }

    pub fn new(p: usize, p_y: usize, k: usize, psi: Vec<Expr>) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("chain length p must be at least 1"));
        }
        if psi.len() != k {
            return Err(Error::dim("reconstruction map", k, psi.len()));
        }
        let dims = Dims::aux_only(Self::aux_names(p, p_y, k));
        psi.iter().try_for_each(|e| dims.check(e))?;
        Ok(ReconstructionMap { p, p_y, k, psi })
    }

    /// Evaluates `Ψ` at time `t` on `(y_0, ..., y_p, u_0, ..., u_{p-1})`
    /// given as flat blocks.
    pub fn eval(&self, t: u64, ys: &[&[f64]], us: &[&[f64]]) -> Result<Vec<f64>> {
        let mut aux = Vec::with_capacity((self.p + 1) * self.p_y + self.p * self.k);
        for y in ys {
            aux.extend_from_slice(y);
        }
        for u in us {
            aux.extend_from_slice(u);
        }
        let expected = (self.p + 1) * self.p_y + self.p * self.k;
        if aux.len() != expected {
            return Err(Error::dim(
                "reconstruction map arguments",
                expected,
                aux.len(),
            ));
        }
        let env = Env::aux(t as f64, &aux);
        self.psi.iter().map(|e| e.eval(&env)).collect()
    }

    /// Spot check of `Ψ(t, 0, 0, 0) = k(t, 0)` for `t = 0..=t_max`; returns
    /// the first time where the two differ.
    pub fn check_normalization(
        &self,
        target: &[Expr],
        n: usize,
        t_max: u64,
    ) -> Result<Option<u64>> {
        let zy = vec![0.0; self.p_y];
        let zu = vec![0.0; self.k];
        let ys: Vec<&[f64]> = vec![&zy; self.p + 1];
        let us: Vec<&[f64]> = vec![&zu; self.p];
        let x = vec![0.0; n];
        for t in 0..=t_max {
            let lhs = self.eval(t, &ys, &us)?;
            let env = Env::state(t as f64, &x);
            let rhs: Vec<f64> = target.iter().map(|e| e.eval(&env)).collect::<Result<_>>()?;
            if lhs != rhs {
                return Ok(Some(t));
            }
        }
        Ok(None)
    }
}

/// Map onto the output value set `S`, applied to every stored output.
#[derive(Debug, Clone, PartialEq)]
pub enum Retraction {
    Identity,
    /// Expressions over `y1..y{p_y}`.
    Map(Vec<Expr>),
}

impl Retraction {
    pub fn parse(p_y: usize, exprs: &[&str]) -> Result<Self> {
        let dims = Dims::aux_only(output_names(p_y));
        let map = exprs
            .iter()
            .map(|s| parse_expression(s, &dims))
            .collect::<Result<Vec<_>>>()?;
        if map.len() != p_y {
            return Err(Error::dim("retraction", p_y, map.len()));
        }
        Ok(Retraction::Map(map))
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            Retraction::Identity => Ok(y.to_vec()),
            Retraction::Map(map) => {
                let env = Env::aux(0.0, y);
                map.iter().map(|e| e.eval(&env)).collect()
            }
        }
    }
}

/// The dynamic controller
/// `w_1⁺ = y, w_i⁺ = w_{i-1}, w_{p+1}⁺ = u, w_{p+i}⁺ = w_{p+i-1}` with
/// `u = Ψ(t, y, P_S(w))`. The state is stored flat: `p` output blocks of
/// width `p_y`, then `p` input blocks of width `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayChainController {
    pub p: usize,
    pub p_y: usize,
    pub k: usize,
    pub retraction: Retraction,
    pub psi: ReconstructionMap,
    pub w0: Vec<f64>,
}

impl DelayChainController {
    pub fn state_dim(&self) -> usize {
        self.p * (self.p_y + self.k)
    }

    pub fn check_against(&self, sys: &SystemDef) -> Result<()> {
        if self.p_y != sys.p_meas() {
            return Err(Error::dim(
                "controller output width",
                sys.p_meas(),
                self.p_y,
            ));
        }
        if self.k != sys.k {
            return Err(Error::dim("controller input width", sys.k, self.k));
        }
        if self.w0.len() != self.state_dim() {
            return Err(Error::dim(
                "controller initial state",
                self.state_dim(),
                self.w0.len(),
            ));
        }
        Ok(())
    }

    fn y_block<'w>(&self, w: &'w [f64], i: usize) -> &'w [f64] {
        &w[(i - 1) * self.p_y..i * self.p_y]
    }

    fn u_block<'w>(&self, w: &'w [f64], i: usize) -> &'w [f64] {
        let base = self.p * self.p_y;
        &w[base + (i - 1) * self.k..base + i * self.k]
    }

    /// `P_S(w) = (a(w_p), ..., a(w_1), w_{2p}, ..., w_{p+1})`: outputs and
    /// inputs oldest first.
    pub fn project(&self, w: &[f64]) -> Result<(Blocks, Blocks)> {
        let ys = (1..=self.p)
            .rev()
            .map(|i| self.retraction.apply(self.y_block(w, i)))
            .collect::<Result<_>>()?;
        let us = (1..=self.p)
            .rev()
            .map(|i| self.u_block(w, i).to_vec())
            .collect();
        Ok((ys, us))
    }

    pub fn control(&self, t: u64, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.state_dim() {
            return Err(Error::dim("controller state", self.state_dim(), w.len()));
        }
        let (ys, us) = self.project(w)?;
        let mut yrefs: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        yrefs.push(y);
        let urefs: Vec<&[f64]> = us.iter().map(Vec::as_slice).collect();
        self.psi.eval(t, &yrefs, &urefs)
    }

    pub fn advance(&self, w: &[f64], y: &[f64], u: &[f64]) -> Vec<f64> {
        let (py, k, p) = (self.p_y, self.k, self.p);
        let mut next = Vec::with_capacity(w.len());
        next.extend_from_slice(y);
        next.extend_from_slice(&w[..(p - 1) * py]);
        next.extend_from_slice(u);
        next.extend_from_slice(&w[p * py..p * py + (p - 1) * k]);
        next
    }

    pub fn to_json(&self) -> serde_json::Value {
        let exprs = |v: &[Expr]| -> serde_json::Value {
            if v.len() == 1 {
                v[0].to_string().into()
            } else {
                v.iter().map(ToString::to_string).collect::<Vec<_>>().into()
            }
        };
        serde_json::to_value(ControllerFile {
            p: self.p,
            p_y: self.p_y,
            k: self.k,
            psi: exprs(&self.psi.psi),
            retraction: match &self.retraction {
                Retraction::Identity => "identity".into(),
                Retraction::Map(m) => exprs(m),
            },
            w0: self.w0.clone(),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let file: ControllerFile = serde_json::from_str(doc)?;
        let strings = |v: &serde_json::Value, what: &str| -> Result<Vec<String>> {
            match v {
                serde_json::Value::String(s) => Ok(vec![s.clone()]),
                serde_json::Value::Array(a) => a
                    .iter()
                    .map(|e| {
                        e.as_str().map(str::to_string).ok_or_else(|| {
                            Error::invalid(format!("{what} entries must be strings"))
                        })
                    })
                    .collect(),
                _ => Err(Error::invalid(format!(
                    "{what} must be a string or a list of strings"
                ))),
            }
        };
        let psi = strings(&file.psi, "psi")?;
        let psi: Vec<&str> = psi.iter().map(String::as_str).collect();
        let psi = ReconstructionMap::parse(file.p, file.p_y, file.k, &psi)?;
        let retraction = match &file.retraction {
            serde_json::Value::String(s) if s == "identity" => Retraction::Identity,
            other => {
                let r = strings(other, "retraction")?;
                let r: Vec<&str> = r.iter().map(String::as_str).collect();
                Retraction::parse(file.p_y, &r)?
            }
        };
        let mut ctrl = synthesize_delay_controller(psi, file.p, retraction)?;
        if !file.w0.is_empty() {
            if file.w0.len() != ctrl.state_dim() {
                return Err(Error::dim("w0", ctrl.state_dim(), file.w0.len()));
            }
            ctrl.w0 = file.w0;
        }
        Ok(ctrl)
    }
}

fn one() -> usize {
    1
}

#[derive(Serialize, Deserialize)]
struct ControllerFile {
    p: usize,
    #[serde(default = "one")]
    p_y: usize,
    #[serde(default = "one")]
    k: usize,
    psi: serde_json::Value,
    retraction: serde_json::Value,
    #[serde(default)]
    w0: Vec<f64>,
}

/// A controller with zero initial state.
pub fn synthesize_delay_controller(
    psi: ReconstructionMap,
    p: usize,
    retraction: Retraction,
) -> Result<DelayChainController> {
    if p != psi.p {
        return Err(Error::invalid(format!(
            "reconstruction map is for p = {}, controller asked for p = {p}",
            psi.p
        )));
    }
    if let Retraction::Map(m) = &retraction {
        if m.len() != psi.p_y {
            return Err(Error::dim("retraction", psi.p_y, m.len()));
        }
    }
    let (p_y, k) = (psi.p_y, psi.k);
    Ok(DelayChainController {
        p,
        p_y,
        k,
        retraction,
        psi,
        w0: vec![0.0; p * (p_y + k)],
    })
}

/// Distance between two doubles in units in the last place.
pub fn ulp_distance(a: f64, b: f64) -> u64 {
    if a == b {
        return 0;
    }
    if a.is_nan() || b.is_nan() {
        return u64::MAX;
    }
    let key = |v: f64| -> i64 {
        let bits = v.to_bits() as i64;
        if bits < 0 {
            i64::MIN - bits
        } else {
            bits
        }
    };
    key(a).abs_diff(key(b))
}

#[derive(Debug, Clone)]
pub struct ReconSamples {
    pub count: usize,
    pub t_max: u64,
    /// States drawn uniformly from `[-x_radius, x_radius]^n`.
    pub x_radius: f64,
    pub u_radius: f64,
    pub seed: u64,
}

impl Default for ReconSamples {
    fn default() -> Self {
        ReconSamples {
            count: 10_000,
            t_max: 30,
            x_radius: 10.0,
            u_radius: 10.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconWitness {
    pub t: u64,
    pub x: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconReport {
    pub pass: bool,
    pub worst_abs: f64,
    pub worst_ulps: u64,
    pub witness: Option<ReconWitness>,
    pub samples: usize,
    pub tol: f64,
    pub summary: String,
}

/// Compares `k(t + p, F_p)` against `Ψ(t + p, y_p, y^{(p)}, u^{(p)})` at
/// random samples. Passes when every component satisfies
/// `|lhs - rhs| <= tol (1 + |rhs|)`.
pub fn check_reconstruction(
    chain: &ObservabilityChain<'_>,
    target: &[Expr],
    psi: &ReconstructionMap,
    samples: &ReconSamples,
    tol: f64,
) -> Result<ReconReport> {
    let sys = chain.sys;
    let p = chain.p;
    if psi.p != p || psi.p_y != sys.p_meas() || psi.k != sys.k {
        return Err(Error::invalid(
            "reconstruction map dimensions do not match the chain",
        ));
    }
    if target.len() != sys.k {
        return Err(Error::dim("target feedback", sys.k, target.len()));
    }
    let mut r = rng(samples.seed, 0x4ec0);
    let x_box = vec![(-samples.x_radius, samples.x_radius); sys.n];
    let u_box = vec![(-samples.u_radius, samples.u_radius); sys.k];
    let mut worst_abs: f64 = 0.0;
    let mut worst_ulps = 0u64;
    let mut worst_rel = f64::NEG_INFINITY;
    let mut witness = None;
    let mut pass = true;
    for _ in 0..samples.count {
        let t = r.gen_range(0..=samples.t_max);
        let x = box_uniform(&x_box, &mut r);
        let d: Vec<Vec<f64>> = (0..p).map(|_| box_uniform(&sys.d_box, &mut r)).collect();
        let u: Vec<Vec<f64>> = (0..p).map(|_| box_uniform(&u_box, &mut r)).collect();
        let chain_v = chain.iterate_maps(t, &x, &d, &u)?;
        let tp = t + p as u64;
        let env = Env::state(tp as f64, chain_v.last_state());
        let lhs: Vec<f64> = target.iter().map(|e| e.eval(&env)).collect::<Result<_>>()?;
        let ys: Vec<&[f64]> = chain_v.outputs.iter().map(Vec::as_slice).collect();
        let us: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();
        let rhs = psi.eval(tp, &ys, &us)?;
        let mut rel = f64::NEG_INFINITY;
        for (a, b) in lhs.iter().zip(&rhs) {
            worst_abs = worst_abs.max((a - b).abs());
            worst_ulps = worst_ulps.max(ulp_distance(*a, *b));
            rel = rel.max((a - b).abs() - tol * (1.0 + b.abs()));
        }
        if rel > 0.0 {
            pass = false;
        }
        if rel > worst_rel {
            worst_rel = rel;
            witness = Some(ReconWitness {
                t,
                x,
                d,
                u,
                lhs,
                rhs,
            });
        }
    }
    let summary = if pass {
        format!("no violation found at {} samples", samples.count)
    } else {
        format!("reconstruction identity violated (max ulp distance {worst_ulps})")
    };
    Ok(ReconReport {
        pass,
        worst_abs,
        worst_ulps,
        witness,
        samples: samples.count,
        tol,
        summary,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoincidenceReport {
    pub p: usize,
    pub t0: u64,
    /// `[t0, t0 + p)`: before the delay line is filled.
    pub transient: (u64, u64),
    /// First `t >= t0 + p` where `w_i(t) != y(t - i)` or `w_{p+i}(t) != u(t - i)`.
    pub history_violation: Option<u64>,
    /// Largest `|u - k(t, x)| / (1 + |k(t, x)|)` over `t >= t0 + p`.
    pub max_mismatch: f64,
    pub mismatch_at: Option<u64>,
    /// Earliest `t` from which the input coincides with `k` up to the end.
    pub coincident_from: Option<u64>,
    pub tol: f64,
    pub pass: bool,
}

/// Runs the interconnection of `sys` with the controller and checks the
/// delay-line history and, when given, coincidence with `reference_k`.
#[allow(clippy::too_many_arguments)]
pub fn run_output_feedback(
    sys: &SystemDef,
    ctrl: &DelayChainController,
    t0: u64,
    x0: &[f64],
    w0: Option<&[f64]>,
    dpol: &DisturbancePolicy,
    horizon: usize,
    reference_k: Option<&[Expr]>,
    tol: f64,
) -> Result<(Trajectory, CoincidenceReport)> {
    let mut ctrl = ctrl.clone();
    if let Some(w0) = w0 {
        ctrl.w0 = w0.to_vec();
    }
    let p = ctrl.p;
    let traj = simulate(
        sys,
        t0,
        x0,
        dpol,
        &InputPolicy::OutputFeedback(Box::new(ctrl.clone())),
        horizon,
    )?;
    let mut history_violation = None;
    for (j, row) in traj.rows.iter().enumerate().skip(p) {
        let ok = (1..=p).all(|i| {
            ctrl.y_block(&row.w, i) == traj.rows[j - i].y.as_slice()
                && ctrl.u_block(&row.w, i) == traj.rows[j - i].u.as_slice()
        });
        if !ok {
            history_violation = Some(row.t);
            break;
        }
    }
    let mut max_mismatch: f64 = 0.0;
    let mut mismatch_at = None;
    let mut coincident_from = None;
    if let Some(k) = reference_k {
        let mut flags = Vec::with_capacity(traj.rows.len());
        for row in &traj.rows {
            let env = Env::state(row.t as f64, &row.x);
            let mut worst: f64 = 0.0;
            let mut ok = true;
            for (e, u) in k.iter().zip(&row.u) {
                let kv = e.eval(&env)?;
                let diff = (u - kv).abs();
                worst = worst.max(diff / (1.0 + kv.abs()));
                ok &= diff <= tol * (1.0 + kv.abs());
            }
            if row.t >= t0 + p as u64 && worst > max_mismatch {
                max_mismatch = worst;
                mismatch_at = Some(row.t);
            }
            flags.push(ok);
        }
        let tail = flags.iter().rev().take_while(|&&f| f).count();
        if tail > 0 {
            coincident_from = Some(traj.rows[flags.len() - tail].t);
        }
    }
    let after = t0 + p as u64;
    let coincides = match reference_k {
        None => true,
        Some(_) => {
            traj.rows.last().is_none_or(|r| r.t < after)
                || coincident_from.is_some_and(|c| c <= after)
        }
    };
    let pass = history_violation.is_none() && coincides;
    Ok((
        traj,
        CoincidenceReport {
            p,
            t0,
            transient: (t0, after),
            history_violation,
            max_mismatch,
            mismatch_at,
            coincident_from,
            tol,
            pass,
        },
    ))
}

/// The system with `w_dim` extra states `w⁺ = v` driven by `w_dim` extra
/// inputs, measured output `(h, w)` and the original stabilized output.
pub fn build_extended_system(sys: &SystemDef, w_dim: usize) -> Result<SystemDef> {
    if w_dim == 0 {
        return Err(Error::invalid("extension width must be at least 1"));
    }
    let mut f = sys.f.clone();
    f.extend((0..w_dim).map(|j| Expr::Var(Var::U(sys.k + j))));
    let mut measured = sys.measured.clone();
    measured.extend((0..w_dim).map(|j| Expr::Var(Var::X(sys.n + j))));
    SystemDef::new(
        format!("{} (extended)", sys.name),
        sys.n + w_dim,
        sys.m,
        sys.k + w_dim,
        sys.d_box.clone(),
        f,
        sys.stabilized.clone(),
        measured,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Feedback;

    fn plant_4_7(r: f64) -> SystemDef {
        SystemDef::parse(
            "example_4_7_plant",
            3,
            1,
            1,
            vec![(-r, r)],
            &["x2", "x2^2+u1", "d1*x3+exp(t)*x2"],
            &["x1", "x2", "x3"],
            &["x1"],
        )
        .unwrap()
    }

    fn ctrl_4_7() -> DelayChainController {
        let psi = ReconstructionMap::parse(1, 1, 1, &["-(y1^2+u0)^2"]).unwrap();
        synthesize_delay_controller(psi, 1, Retraction::Identity).unwrap()
    }

    #[test]
    fn chain_first_map_matches_hand_form() {
        let sys = plant_4_7(0.5);
        let chain = ObservabilityChain::new(&sys, 1).unwrap();
        let (t, x, d0, u0) = (2u64, [1.5, -2.0, 0.7], 0.3, -1.25);
        let v = chain.iterate_maps(t, &x, &[vec![d0]], &[vec![u0]]).unwrap();
        assert_eq!(v.states[0], x.to_vec());
        let hand = vec![x[1], x[1].powi(2) + u0, d0 * x[2] + (t as f64).exp() * x[1]];
        assert_eq!(v.states[1], hand);
        assert_eq!(v.outputs, vec![vec![1.5], vec![-2.0]]);
    }

    #[test]
    fn chain_agrees_with_simulation() {
        let sys = SystemDef::parse(
            "sqrt_coupled",
            2,
            1,
            0,
            vec![(-2.0, 2.0)],
            &["d1*x1", "2^(-t)*d1*abs(x1)^0.5"],
            &["x2"],
            &["x2"],
        )
        .unwrap();
        let chain = ObservabilityChain::new(&sys, 2).unwrap();
        let ds = vec![vec![1.3], vec![-2.0], vec![0.0]];
        let v = chain
            .iterate_maps(3, &[0.7, -0.2], &ds[..2], &[vec![], vec![]])
            .unwrap();
        let tr = simulate(
            &sys,
            3,
            &[0.7, -0.2],
            &DisturbancePolicy::Sequence(ds),
            &InputPolicy::Zero,
            2,
        )
        .unwrap();
        assert_eq!(v.last_state(), tr.rows[2].x.as_slice());
    }

    #[test]
    fn example_reconstruction_is_exact_and_sign_flip_fails() {
        let sys = plant_4_7(0.5);
        let chain = ObservabilityChain::new(&sys, 1).unwrap();
        let k = [parse_expression("-x2^2", &Dims::state(3)).unwrap()];
        let samples = ReconSamples {
            count: 500,
            ..ReconSamples::default()
        };
        let good = ReconstructionMap::parse(1, 1, 1, &["-(y1^2+u0)^2"]).unwrap();
        let rep = check_reconstruction(&chain, &k, &good, &samples, 0.0).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.worst_ulps, 0);
        assert_eq!(rep.summary, "no violation found at 500 samples");
        let bad = ReconstructionMap::parse(1, 1, 1, &["(y1^2+u0)^2"]).unwrap();
        assert!(
            !check_reconstruction(&chain, &k, &bad, &samples, 1e-9)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn output_function_is_reconstructed_by_itself() {
        let sys = plant_4_7(0.5);
        let chain = ObservabilityChain::new(&sys, 1).unwrap();
        let k = [parse_expression("exp(-t)*x1^3", &Dims::state(3)).unwrap()];
        let psi = ReconstructionMap::parse(1, 1, 1, &["exp(-t)*y1^3"]).unwrap();
        let k_prev = [parse_expression("exp(-t)*x2^3", &Dims::state(3)).unwrap()];
        let samples = ReconSamples {
            count: 200,
            ..ReconSamples::default()
        };
        // y1 = h(t+1, F_1) = x2, so Ψ = θ(t, y1) recovers θ(t+1, x1(t+1)).
        assert!(
            check_reconstruction(&chain, &k, &psi, &samples, 0.0)
                .unwrap()
                .pass
        );
        assert!(
            !check_reconstruction(&chain, &k_prev, &psi, &samples, 1e-9)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn hand_trace_of_the_delay_loop() {
        let sys = plant_4_7(0.5);
        let ctrl = ctrl_4_7();
        assert_eq!(ctrl.state_dim(), 2);
        let k = [parse_expression("-x2^2", &Dims::state(3)).unwrap()];
        let (tr, rep) = run_output_feedback(
            &sys,
            &ctrl,
            0,
            &[1.0, 2.0, 3.0],
            None,
            &DisturbancePolicy::Constant(vec![0.5]),
            5,
            Some(&k),
            1e-12,
        )
        .unwrap();
        assert_eq!(tr.rows[0].u, vec![-1.0]);
        assert_eq!(tr.rows[1].x, vec![2.0, 3.0, 3.5]);
        assert_eq!(tr.rows[1].w, vec![1.0, -1.0]);
        assert_eq!(tr.rows[1].u, vec![-9.0]);
        assert_eq!(rep.coincident_from, Some(1));
        assert!(rep.pass);
        assert_eq!(rep.transient, (0, 1));
    }

    #[test]
    fn zero_loop_stays_zero() {
        let sys = plant_4_7(0.9);
        let (tr, rep) = run_output_feedback(
            &sys,
            &ctrl_4_7(),
            4,
            &[0.0; 3],
            None,
            &DisturbancePolicy::RandomUniform { seed: 1 },
            10,
            None,
            1e-12,
        )
        .unwrap();
        assert!(tr
            .rows
            .iter()
            .all(|r| r.x.iter().chain(&r.u).chain(&r.w).all(|v| *v == 0.0)));
        assert!(rep.pass);
    }

    #[test]
    fn wrong_retraction_breaks_coincidence() {
        let sys = SystemDef::parse(
            "swap",
            2,
            0,
            1,
            vec![],
            &["x2", "0.5*x1+u1"],
            &["x1", "x2"],
            &["x1"],
        )
        .unwrap();
        let k = [parse_expression("-0.25*x2", &Dims::state(2)).unwrap()];
        let psi = ReconstructionMap::parse(1, 1, 1, &["-0.25*(0.5*y0+u0)"]).unwrap();
        let chain = ObservabilityChain::new(&sys, 1).unwrap();
        let samples = ReconSamples {
            count: 200,
            ..ReconSamples::default()
        };
        assert_eq!(
            check_reconstruction(&chain, &k, &psi, &samples, 0.0)
                .unwrap()
                .worst_ulps,
            0
        );
        let run = |retraction: Retraction| {
            let ctrl = synthesize_delay_controller(psi.clone(), 1, retraction).unwrap();
            run_output_feedback(
                &sys,
                &ctrl,
                0,
                &[1.0, -2.0],
                Some(&[0.3, 0.7]),
                &DisturbancePolicy::Constant(vec![]),
                12,
                Some(&k),
                1e-12,
            )
            .unwrap()
            .1
        };
        assert!(run(Retraction::Identity).pass);
        let bad = run(Retraction::parse(1, &["2*y1"]).unwrap());
        assert!(!bad.pass);
        assert!(bad.history_violation.is_none());
        assert!(bad.max_mismatch > 1e-3);
    }

    #[test]
    fn projection_orders_history_oldest_first() {
        let psi = ReconstructionMap::parse(2, 1, 1, &["y0+10*y1+100*y2+1000*u0+10000*u1"]).unwrap();
        let ctrl = synthesize_delay_controller(psi, 2, Retraction::Identity).unwrap();
        // w = (w1, w2, w3, w4) = (y(t-1), y(t-2), u(t-1), u(t-2))
        let w = [2.0, 1.0, 4.0, 3.0];
        assert_eq!(
            ctrl.control(0, &[5.0], &w).unwrap(),
            vec![1.0 + 20.0 + 500.0 + 3000.0 + 40000.0]
        );
        assert_eq!(ctrl.advance(&w, &[5.0], &[6.0]), vec![5.0, 2.0, 6.0, 4.0]);
    }

    #[test]
    fn controller_json_round_trip() {
        let ctrl = ctrl_4_7();
        let json = ctrl.to_json();
        assert_eq!(json["psi"], "-(y1^2+u0)^2");
        assert_eq!(json["retraction"], "identity");
        let back = DelayChainController::from_json(&json.to_string()).unwrap();
        assert_eq!(back, ctrl);
    }

    #[test]
    fn extended_system_shapes_and_projection() {
        let sys = plant_4_7(0.5);
        let ext = build_extended_system(&sys, 1).unwrap();
        assert_eq!((ext.n, ext.k, ext.p_meas(), ext.p_stab()), (4, 2, 2, 3));
        let dpol = DisturbancePolicy::RandomUniform { seed: 5 };
        let us: Vec<Vec<f64>> = (0..9)
            .map(|i| vec![-(i as f64) * 0.1, 7.0 + i as f64])
            .collect();
        let ext_tr = simulate(
            &ext,
            0,
            &[0.5, -1.0, 2.0, 0.25],
            &dpol,
            &InputPolicy::Sequence(us.clone()),
            8,
        )
        .unwrap();
        let base = simulate(
            &sys,
            0,
            &[0.5, -1.0, 2.0],
            &dpol,
            &InputPolicy::Sequence(us.iter().map(|u| vec![u[0]]).collect()),
            8,
        )
        .unwrap();
        for (a, b) in ext_tr.rows.iter().zip(&base.rows) {
            assert_eq!(&a.x[..3], b.x.as_slice());
            assert_eq!(a.y, vec![a.x[0], a.x[3]]);
        }
        let hold = Feedback::parse_state(4, &["0", "x4"]).unwrap();
        let held = simulate(
            &ext.closed_loop(&hold).unwrap(),
            0,
            &[1.0, 1.0, 1.0, 0.4],
            &dpol,
            &InputPolicy::Zero,
            6,
        )
        .unwrap();
        assert!(held.rows.iter().all(|r| r.x[3] == 0.4));
    }
}
