//! Systems `x(t+1) = f(t, d(t), x(t), u(t))` with a stabilized output
//! `Y = H(t, x)`, a measured output `y = h(t, x)` and disturbances ranging
//! over a compact box `D`.

mod reach;
mod sim;

pub use reach::{reachable_bound, ReachBound, ReachConfig};
pub use sim::{
    simulate, DisturbancePolicy, GreedyObjective, InputPolicy, Row, Trajectory, TrajectoryMeta,
};

use serde::{Deserialize, Serialize};

use crate::dsl::{parse_expression, parse_number, Dims, Env, Expr, Var};
use crate::error::{Error, Result};
use crate::sampling::box_corners;

/// A system definition. Immutable once built; every map is an expression so
/// derived systems (closed loops, transformed systems) are built by
/// substitution and can be printed back to a file.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDef {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d_box: Vec<(f64, f64)>,
    pub f: Vec<Expr>,
    /// `H(t, x)`, the output that must converge.
    pub stabilized: Vec<Expr>,
    /// `h(t, x)`, the output available to a controller.
    pub measured: Vec<Expr>,
}

/// A numeric spot-check failure of the zero-equilibrium conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumWarning {
    pub map: String,
    pub t: u64,
    pub d: Vec<f64>,
    pub value: f64,
}

impl SystemDef {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        k: usize,
        d_box: Vec<(f64, f64)>,
        f: Vec<Expr>,
        stabilized: Vec<Expr>,
        measured: Vec<Expr>,
    ) -> Result<Self> {
        let sys = SystemDef {
            name: name.into(),
            n,
            m,
            k,
            d_box,
            f,
            stabilized,
            measured,
        };
        sys.validate()?;
        Ok(sys)
    }

    /// Builds a system from expression strings. `H` and `h` see only `t` and `x`.
    #[allow(clippy::too_many_arguments)]
    pub fn parse(
        name: &str,
        n: usize,
        m: usize,
        k: usize,
        d_box: Vec<(f64, f64)>,
        f: &[&str],
        stabilized: &[&str],
        measured: &[&str],
    ) -> Result<Self> {
        let fd = Dims::new(n, m, k);
        let hd = Dims::state(n);
        let parse_all = |src: &[&str], dims: &Dims| -> Result<Vec<Expr>> {
            src.iter().map(|s| parse_expression(s, dims)).collect()
        };
        SystemDef::new(
            name,
            n,
            m,
            k,
            d_box,
            parse_all(f, &fd)?,
            parse_all(stabilized, &hd)?,
            parse_all(measured, &hd)?,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.f.len() != self.n {
            return Err(Error::dim("f", self.n, self.f.len()));
        }
        if self.d_box.len() != self.m {
            return Err(Error::dim("d_box", self.m, self.d_box.len()));
        }
        for (i, &(lo, hi)) in self.d_box.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::invalid(format!(
                    "d_box[{i}] = [{lo}, {hi}] is not a finite interval"
                )));
            }
        }
        let fd = Dims::new(self.n, self.m, self.k);
        let hd = Dims::state(self.n);
        self.f.iter().try_for_each(|e| fd.check(e))?;
        self.stabilized.iter().try_for_each(|e| hd.check(e))?;
        self.measured.iter().try_for_each(|e| hd.check(e))?;
        Ok(())
    }

    pub fn p_stab(&self) -> usize {
        self.stabilized.len()
    }

    pub fn p_meas(&self) -> usize {
        self.measured.len()
    }

    pub fn contains_disturbance(&self, d: &[f64]) -> bool {
        d.len() == self.m
            && d.iter()
                .zip(&self.d_box)
                .all(|(v, &(lo, hi))| lo <= *v && *v <= hi)
    }

    /// `f(t, d, x, u)`.
    pub fn step(&self, t: u64, x: &[f64], d: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::dim("state", self.n, x.len()));
        }
        if d.len() != self.m {
            return Err(Error::dim("disturbance", self.m, d.len()));
        }
        if u.len() != self.k {
            return Err(Error::dim("input", self.k, u.len()));
        }
        if !self.contains_disturbance(d) {
            return Err(Error::invalid(format!(
                "disturbance {d:?} lies outside the box {:?}",
                self.d_box
            )));
        }
        self.step_unchecked(t, x, d, u)
    }

    pub(crate) fn step_unchecked(
        &self,
        t: u64,
        x: &[f64],
        d: &[f64],
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let env = Env::new(t as f64, x, d, u);
        self.f.iter().map(|e| e.eval(&env)).collect()
    }

    /// `H(t, x)`.
    pub fn output(&self, t: u64, x: &[f64]) -> Result<Vec<f64>> {
        let env = Env::state(t as f64, x);
        self.stabilized.iter().map(|e| e.eval(&env)).collect()
    }

    /// `h(t, x)`.
    pub fn measure(&self, t: u64, x: &[f64]) -> Result<Vec<f64>> {
        let env = Env::state(t as f64, x);
        self.measured.iter().map(|e| e.eval(&env)).collect()
    }

    /// Spot-checks `f(t,d,0,0) = 0`, `H(t,0) = 0` and `h(t,0) = 0` for
    /// `t in 0..=20` and every corner of `D`.
    pub fn spot_check_equilibrium(&self) -> Vec<EquilibriumWarning> {
        let zero_x = vec![0.0; self.n];
        let zero_u = vec![0.0; self.k];
        let mut out = Vec::new();
        for t in 0..=20u64 {
            for d in box_corners(&self.d_box) {
                let env = Env::new(t as f64, &zero_x, &d, &zero_u);
                let maps = [
                    ("f", &self.f),
                    ("H", &self.stabilized),
                    ("h", &self.measured),
                ];
                for (label, exprs) in maps {
                    for (i, e) in exprs.iter().enumerate() {
                        let value = e.eval(&env).unwrap_or(f64::NAN);
                        if value != 0.0 {
                            out.push(EquilibriumWarning {
                                map: format!("{label}[{}]", i + 1),
                                t,
                                d: d.clone(),
                                value,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// The closed loop with `u = k(t, x)` (state feedback) or
    /// `u = k(t, h(t, x))` (static output feedback). The result has no input.
    pub fn closed_loop(&self, fb: &Feedback) -> Result<SystemDef> {
        let law: Vec<Expr> = match fb {
            Feedback::State(law) => {
                let dims = Dims::state(self.n);
                law.iter().try_for_each(|e| dims.check(e))?;
                law.clone()
            }
            Feedback::Output(law) => {
                let names = output_names(self.p_meas());
                let dims = Dims::aux_only(names.clone());
                law.iter().try_for_each(|e| dims.check(e))?;
                let measured = &self.measured;
                law.iter()
                    .map(|e| {
                        e.substitute(&|v| match v {
                            Var::Aux { index, .. } => Some(measured[*index].clone()),
                            _ => None,
                        })
                    })
                    .collect()
            }
        };
        if law.len() != self.k {
            return Err(Error::dim("feedback law", self.k, law.len()));
        }
        let f = self
            .f
            .iter()
            .map(|e| {
                e.substitute(&|v| match v {
                    Var::U(j) => Some(law[*j].clone()),
                    _ => None,
                })
            })
            .collect();
        let name = if self.k == 0 {
            self.name.clone()
        } else {
            format!("{} (closed loop)", self.name)
        };
        SystemDef::new(
            name,
            self.n,
            self.m,
            0,
            self.d_box.clone(),
            f,
            self.stabilized.clone(),
            self.measured.clone(),
        )
    }

    pub fn to_file(&self) -> SystemFile {
        let show = |v: &[Expr]| v.iter().map(ToString::to_string).collect();
        SystemFile {
            name: self.name.clone(),
            n: self.n,
            m: self.m,
            k: self.k,
            d_box: self
                .d_box
                .iter()
                .map(|&(lo, hi)| [Bound::Num(lo), Bound::Num(hi)])
                .collect(),
            f: show(&self.f),
            big_h: show(&self.stabilized),
            h: show(&self.measured),
        }
    }
}

/// A static feedback law. Output feedback laws are written over `y1..yp`.
#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    State(Vec<Expr>),
    Output(Vec<Expr>),
}

impl Feedback {
    pub fn parse_state(n: usize, law: &[&str]) -> Result<Self> {
        let dims = Dims::state(n);
        Ok(Feedback::State(
            law.iter()
                .map(|s| parse_expression(s, &dims))
                .collect::<Result<_>>()?,
        ))
    }

    pub fn parse_output(p: usize, law: &[&str]) -> Result<Self> {
        let dims = Dims::aux_only(output_names(p));
        Ok(Feedback::Output(
            law.iter()
                .map(|s| parse_expression(s, &dims))
                .collect::<Result<_>>()?,
        ))
    }
}

/// `y1..yp`.
pub fn output_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("y{i}")).collect()
}

/// Interval endpoint in a system file: a number or a closed expression
/// such as `"-(2+e)/(2*e)"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Num(f64),
    Expr(String),
}

impl Bound {
    fn value(&self) -> Result<f64> {
        match self {
            Bound::Num(v) => Ok(*v),
            Bound::Expr(s) => parse_number(s),
        }
    }
}

/// On-disk JSON layout of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub d_box: Vec<[Bound; 2]>,
    pub f: Vec<String>,
    #[serde(rename = "H")]
    pub big_h: Vec<String>,
    pub h: Vec<String>,
}

/// A parsed system file plus any equilibrium spot-check warnings.
#[derive(Debug, Clone)]
pub struct ParsedSystem {
    pub system: SystemDef,
    pub warnings: Vec<EquilibriumWarning>,
}

impl SystemFile {
    pub fn into_system(self) -> Result<ParsedSystem> {
        let d_box = self
            .d_box
            .iter()
            .map(|[lo, hi]| Ok((lo.value()?, hi.value()?)))
            .collect::<Result<Vec<_>>>()?;
        let system = SystemDef::parse(
            &self.name,
            self.n,
            self.m,
            self.k,
            d_box,
            &str_refs(&self.f),
            &str_refs(&self.big_h),
            &str_refs(&self.h),
        )?;
        let warnings = system.spot_check_equilibrium();
        Ok(ParsedSystem { system, warnings })
    }
}

fn str_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Parses a JSON system document.
pub fn parse_system_file(doc: &str) -> Result<ParsedSystem> {
    let file: SystemFile = serde_json::from_str(doc)?;
    file.into_system()
}
