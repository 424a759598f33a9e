use serde::Serialize;

use super::{KFn, KLEnvelope, Sigma, TimeGain};
use crate::error::Result;
use crate::sampling::log_space;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClassTag {
    K,
    KInf,
    /// Positive time gain.
    KPlus,
    /// Nonnegative time gain that must decay to zero.
    Decaying,
    KL,
}

#[derive(Debug, Clone)]
pub struct GridConfig {
    pub s_lo: f64,
    pub s_hi: f64,
    pub s_count: usize,
    /// Integer times `0..=t_max`.
    pub t_max: u64,
    /// K∞ passes when `v(s_hi) >= kinf_factor * v(1)`.
    pub kinf_factor: f64,
    pub decay_levels: Vec<f64>,
    /// KL: required ratio `σ(s, t_max) / σ(s, 0)` for the decay-to-zero axiom.
    pub kl_decay: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            s_lo: 1e-9,
            s_hi: 1e9,
            s_count: 181,
            t_max: 200,
            kinf_factor: 10.0,
            decay_levels: vec![1e-2, 1e-4, 1e-6],
            kl_decay: 1e-6,
        }
    }
}

impl GridConfig {
    fn s_grid(&self) -> Vec<f64> {
        let mut g = vec![0.0];
        g.extend(log_space(self.s_lo, self.s_hi, self.s_count));
        g
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AxiomResult {
    pub axiom: &'static str,
    pub pass: bool,
    /// `(s, t, value)` at the first failing grid point.
    pub witness: Option<(f64, f64, f64)>,
    /// Grid neighbours with exactly equal values (these fail strictness).
    pub ties: usize,
}

impl AxiomResult {
    fn ok(axiom: &'static str) -> Self {
        AxiomResult {
            axiom,
            pass: true,
            witness: None,
            ties: 0,
        }
    }

    fn fail(axiom: &'static str, witness: (f64, f64, f64)) -> Self {
        AxiomResult {
            axiom,
            pass: false,
            witness: Some(witness),
            ties: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub tag: ClassTag,
    pub pass: bool,
    pub axioms: Vec<AxiomResult>,
}

impl ClassReport {
    fn new(tag: ClassTag, axioms: Vec<AxiomResult>) -> Self {
        ClassReport {
            tag,
            pass: axioms.iter().all(|a| a.pass),
            axioms,
        }
    }

    pub fn failed_axioms(&self) -> Vec<&'static str> {
        self.axioms
            .iter()
            .filter(|a| !a.pass)
            .map(|a| a.axiom)
            .collect()
    }
}

/// The object being validated, with the class it claims.
pub enum Candidate<'a> {
    K(&'a KFn, ClassTag),
    Gain(&'a TimeGain, ClassTag),
    KL(&'a KLEnvelope),
}

fn class_k_axioms(
    grid: &[f64],
    t: f64,
    v: &dyn Fn(f64) -> Result<f64>,
) -> Result<Vec<AxiomResult>> {
    let vals: Vec<f64> = grid.iter().map(|&s| v(s)).collect::<Result<_>>()?;
    let zero = if vals[0] == 0.0 {
        AxiomResult::ok("zero at zero")
    } else {
        AxiomResult::fail("zero at zero", (0.0, t, vals[0]))
    };
    let mut inc = AxiomResult::ok("strictly increasing");
    for i in 1..vals.len() {
        if vals[i] <= vals[i - 1] {
            if vals[i] == vals[i - 1] {
                inc.ties += 1;
            }
            if inc.pass {
                inc.pass = false;
                inc.witness = Some((grid[i], t, vals[i]));
            }
        }
    }
    Ok(vec![zero, inc])
}

pub fn validate_class(candidate: Candidate<'_>, cfg: &GridConfig) -> Result<ClassReport> {
    let grid = cfg.s_grid();
    match candidate {
        Candidate::K(f, tag) => {
            let mut axioms = class_k_axioms(&grid, 0.0, &|s| f.eval(s))?;
            if tag == ClassTag::KInf {
                let (top, unit) = (f.eval(cfg.s_hi)?, f.eval(1.0)?);
                axioms.push(if top >= cfg.kinf_factor * unit {
                    AxiomResult::ok("unbounded")
                } else {
                    AxiomResult::fail("unbounded", (cfg.s_hi, 0.0, top))
                });
            }
            Ok(ClassReport::new(tag, axioms))
        }
        Candidate::Gain(g, tag) => {
            let vals: Vec<f64> = (0..=cfg.t_max)
                .map(|t| g.eval(t as f64))
                .collect::<Result<_>>()?;
            let mut axioms = Vec::new();
            let (name, bad): (&'static str, fn(f64) -> bool) = if tag == ClassTag::Decaying {
                ("nonnegative", |v| !(v >= 0.0))
            } else {
                ("positive", |v| !(v > 0.0))
            };
            axioms.push(match vals.iter().position(|&v| bad(v)) {
                Some(i) => AxiomResult::fail(name, (0.0, i as f64, vals[i])),
                None => AxiomResult::ok(name),
            });
            if tag == ClassTag::Decaying {
                let analytic = match g {
                    TimeGain::Geometric { scale, ratio } => {
                        Some(*scale == 0.0 || (0.0..1.0).contains(ratio))
                    }
                    TimeGain::Const(c) => Some(*c == 0.0),
                    TimeGain::Expr(_) => None,
                };
                let last = *vals.last().expect("t grid non-empty");
                let ok =
                    analytic.unwrap_or_else(|| cfg.decay_levels.iter().all(|&eps| last <= eps));
                axioms.push(if ok {
                    AxiomResult::ok("decays to zero")
                } else {
                    AxiomResult::fail("decays to zero", (0.0, cfg.t_max as f64, last))
                });
            }
            Ok(ClassReport::new(tag, axioms))
        }
        Candidate::KL(env) => {
            let s_grid: Vec<f64> = {
                let mut g = vec![0.0];
                g.extend(log_space(cfg.s_lo, cfg.s_hi, 61));
                g
            };
            let sigma = &env.sigma;
            let mut axioms: Vec<AxiomResult> = Vec::new();
            let mut zero = AxiomResult::ok("zero at zero");
            let mut inc = AxiomResult::ok("strictly increasing in s");
            for t in 0..=cfg.t_max {
                let tf = t as f64;
                let rows = class_k_axioms(&s_grid, tf, &|s| sigma.eval(s, tf))?;
                for (acc, r) in [(&mut zero, &rows[0]), (&mut inc, &rows[1])] {
                    acc.ties += r.ties;
                    if acc.pass && !r.pass {
                        acc.pass = false;
                        acc.witness = r.witness;
                    }
                }
            }
            let mut mono = AxiomResult::ok("non-increasing in t");
            let mut limit = AxiomResult::ok("decays to zero in t");
            for &s in s_grid.iter().skip(1) {
                let mut prev = sigma.eval(s, 0.0)?;
                let first = prev;
                for t in 1..=cfg.t_max {
                    let v = sigma.eval(s, t as f64)?;
                    if v > prev && mono.pass {
                        mono = AxiomResult::fail("non-increasing in t", (s, t as f64, v));
                    }
                    prev = v;
                }
                let analytic = matches!(sigma, Sigma::Exponential { rate, .. } if *rate > 0.0);
                if !analytic && prev > cfg.kl_decay * first && limit.pass {
                    limit = AxiomResult::fail("decays to zero in t", (s, cfg.t_max as f64, prev));
                }
            }
            if let Sigma::Exponential { gain, rate } = sigma {
                if !(*gain > 0.0 && *rate > 0.0) && limit.pass {
                    limit = AxiomResult::fail("decays to zero in t", (1.0, f64::INFINITY, *gain));
                }
            }
            axioms.extend([zero, inc, mono, limit]);
            let beta = validate_class(Candidate::Gain(&env.beta, ClassTag::KPlus), cfg)?;
            for mut a in beta.axioms {
                a.axiom = "beta positive";
                axioms.push(a);
            }
            Ok(ClassReport::new(ClassTag::KL, axioms))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_function_fails_only_unboundedness() {
        let f = KFn::parse("s/(1+s)").unwrap();
        let cfg = GridConfig::default();
        let as_kinf = validate_class(Candidate::K(&f, ClassTag::KInf), &cfg).unwrap();
        assert_eq!(as_kinf.failed_axioms(), vec!["unbounded"]);
        assert!(
            validate_class(Candidate::K(&f, ClassTag::K), &cfg)
                .unwrap()
                .pass
        );
    }

    #[test]
    fn constant_function_reports_ties() {
        let f = KFn::parse("min(s, 1)").unwrap();
        let r = validate_class(Candidate::K(&f, ClassTag::K), &GridConfig::default()).unwrap();
        let inc = &r.axioms[1];
        assert!(!inc.pass);
        assert!(inc.ties > 0);
        assert!(inc.witness.unwrap().0 > 1.0);
    }

    #[test]
    fn failure_witness_survives_refinement() {
        let f = KFn::parse("abs(s - 3)").unwrap();
        let coarse = GridConfig {
            s_lo: 1.0,
            s_hi: 9.0,
            s_count: 3,
            ..GridConfig::default()
        };
        let r = validate_class(Candidate::K(&f, ClassTag::K), &coarse).unwrap();
        let (s, _, _) = r.axioms[1].witness.unwrap();
        for count in [5, 9, 17, 33] {
            let fine = GridConfig {
                s_count: count,
                ..coarse.clone()
            };
            assert!(fine.s_grid().contains(&s));
            assert!(
                !validate_class(Candidate::K(&f, ClassTag::K), &fine)
                    .unwrap()
                    .pass
            );
        }
    }

    #[test]
    fn growing_sigma_fails_kl() {
        let env = KLEnvelope {
            sigma: Sigma::parse("s*exp(t)").unwrap(),
            beta: TimeGain::one(),
        };
        let r = validate_class(Candidate::KL(&env), &GridConfig::default()).unwrap();
        assert!(r.failed_axioms().contains(&"non-increasing in t"));
    }

    #[test]
    fn negative_q_is_rejected() {
        let q = TimeGain::parse("-exp(-t)").unwrap();
        let r = validate_class(
            Candidate::Gain(&q, ClassTag::Decaying),
            &GridConfig::default(),
        )
        .unwrap();
        assert_eq!(r.failed_axioms(), vec!["nonnegative"]);
    }
}
