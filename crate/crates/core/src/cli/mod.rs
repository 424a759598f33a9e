//! Command-line front end. [`run_command`] parses an argument vector, runs
//! the command and returns the process exit code: 0 when every check passes,
//! 1 when a check fails or a violation is found, 2 on invalid input.

mod commands;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dsl::parse_number;
use crate::error::Error;

#[derive(Debug, Parser)]
#[command(
    name = "dtstab",
    version,
    about = "Robust stability laboratory for time-varying discrete-time systems",
    after_help = "Numeric flags accept constant expressions such as \"(2+e)/(2*e)\". \
                  Exit codes: 0 pass, 1 check failed or violation found, 2 invalid input."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Relative tolerance of margin checks.
    #[arg(long, global = true, default_value = "1e-9", value_parser = number)]
    pub tol: f64,
    /// Simulation horizon in steps.
    #[arg(long, global = true, default_value_t = 60)]
    pub horizon: usize,
    /// Directory receiving JSON reports and CSV trajectories.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

/// Where the system comes from: a registry example or a JSON system file.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Registry example (see `examples --list`).
    #[arg(long, conflicts_with = "system")]
    pub example: Option<String>,
    /// JSON system file with keys n, m, k, d_box, f, H, h.
    #[arg(long)]
    pub system: Option<PathBuf>,
    /// Disturbance bound of example_4_7, in [0, 1).
    #[arg(long, value_parser = number)]
    pub r: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trajectory and emit it as CSV.
    Simulate(SimulateArgs),
    /// Check a Lyapunov certificate on a sample grid, or evaluate the attainment-time bound.
    Certify(CertifyArgs),
    /// Empirically test stability properties and envelope estimates.
    Verify(VerifyArgs),
    /// Build a delay-chain output-feedback controller and check its reconstruction identity.
    Synthesize(SynthesizeArgs),
    /// Adversarially search for violations of a KL or IOS envelope.
    Falsify(FalsifyArgs),
    /// List the registry or run every bundle through its checks.
    Examples(ExamplesArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Initial state, comma separated (default: all ones).
    #[arg(long, value_parser = number_list)]
    pub x0: Option<std::vec::Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub t0: u64,
    /// greedy, corners, uniform, or const:<d1,d2,..>.
    #[arg(long, default_value = "greedy")]
    pub disturbance: String,
    /// zero, const:<u1,..>, feedback (state feedback of example_4_7) or controller
    /// (its delay-chain output feedback).
    #[arg(long, default_value = "zero")]
    pub input: String,
    /// Print the CSV to stdout instead of the JSON summary.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckArg {
    Sandwich,
    Contraction,
    RelaxedDecrease,
    IosDecrease,
    Tau,
    Rofs,
}

#[derive(Debug, Clone, Args)]
pub struct CandidateArgs {
    /// Candidate V(t, x).
    #[arg(long)]
    pub v: Option<String>,
    /// a1(s) of the sandwich (default s).
    #[arg(long)]
    pub a1: Option<String>,
    /// a2(s) of the sandwich (default s).
    #[arg(long)]
    pub a2: Option<String>,
    /// beta(t) of the sandwich (default 1).
    #[arg(long)]
    pub beta: Option<String>,
    /// Optional mu(t) weighting the state in the lower sandwich bound.
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long, value_parser = number)]
    pub lambda: Option<f64>,
    /// a3(s) of the relaxed or input-gain decrease.
    #[arg(long)]
    pub a3: Option<String>,
    /// q(t) of the relaxed decrease.
    #[arg(long)]
    pub q: Option<String>,
    /// phi(t) of the input-gain decrease.
    #[arg(long)]
    pub phi: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Times 0..=t-max.
    #[arg(long, default_value_t = 30)]
    pub t_max: u64,
    /// States on the grid [-x-max, x-max]^n.
    #[arg(long, default_value = "10", value_parser = number)]
    pub x_max: f64,
    #[arg(long, default_value_t = 9)]
    pub x_points: usize,
    /// Inputs on the grid [-u-max, u-max]^k (input-gain checks only).
    #[arg(long, default_value = "5", value_parser = number)]
    pub u_max: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub check: CheckArg,
    #[command(flatten)]
    pub candidate: CandidateArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// eps of the attainment-time bound.
    #[arg(long, default_value = "1", value_parser = number)]
    pub eps: f64,
    /// Latest initial time T of the attainment-time bound.
    #[arg(long = "T", default_value_t = 0)]
    pub big_t: u64,
    /// Initial-state radius R of the attainment-time bound.
    #[arg(long = "R", default_value = "1", value_parser = number)]
    pub big_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PropertyArg {
    Stability,
    Attractivity,
    KlEstimate,
    IosEstimate,
    Reconstruction,
}

#[derive(Debug, Clone, Args)]
pub struct BudgetArgs {
    /// Trajectories per search.
    #[arg(long, default_value_t = 1000)]
    pub trajectories: usize,
    /// Initial times are drawn from 0..=t0-max.
    #[arg(long, default_value_t = 10)]
    pub t0_max: u64,
    #[arg(long, default_value = "10", value_parser = number)]
    pub x0_radius: f64,
    #[arg(long, default_value = "5", value_parser = number)]
    pub u_max: f64,
    /// Weights of corner, greedy and uniform disturbance strategies.
    #[arg(long, default_value = "1,1,1", value_parser = number_list)]
    pub mix: std::vec::Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EnvelopeArgs {
    /// sigma(s, t); defaults to the example's envelope.
    #[arg(long)]
    pub sigma: Option<String>,
    /// beta(t0) inside sigma (default 1).
    #[arg(long)]
    pub beta: Option<String>,
    /// Multiply sigma by this factor.
    #[arg(long, default_value = "1", value_parser = number)]
    pub scale: f64,
    /// IOS bound form.
    #[arg(long, value_enum, default_value_t = FormArg::Max)]
    pub form: FormArg,
    /// rho(s) of the max form.
    #[arg(long)]
    pub rho: Option<String>,
    /// gamma(t) of the max form.
    #[arg(long)]
    pub gamma: Option<String>,
    /// zeta(s) of the sup form.
    #[arg(long)]
    pub zeta: Option<String>,
    /// delta(t) of the sup form.
    #[arg(long)]
    pub delta: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Max,
    Sup,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_enum)]
    pub property: PropertyArg,
    #[arg(long, default_value = "1", value_parser = number)]
    pub eps: f64,
    #[arg(long = "T", default_value_t = 0)]
    pub big_t: u64,
    #[arg(long = "R", default_value = "1", value_parser = number)]
    pub big_r: f64,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub envelope: EnvelopeArgs,
    #[command(flatten)]
    pub synth: SynthSpecArgs,
    /// Random samples of the reconstruction identity.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthSpecArgs {
    /// Target state feedback k(t, x), one expression per input.
    #[arg(long = "k")]
    pub k: Vec<String>,
    /// Reconstruction map over y0..yp and u0..u(p-1), one per input.
    #[arg(long)]
    pub psi: Vec<String>,
    /// Chain length p.
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    /// Retraction onto the output set, one expression per output over y1..
    #[arg(long)]
    pub retraction: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub synth: SynthSpecArgs,
    /// Random samples of the reconstruction identity.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Also run the closed loop and report coincidence with k.
    #[arg(long)]
    pub simulate: bool,
    #[arg(long, value_parser = number_list)]
    pub x0: Option<std::vec::Vec<f64>>,
    /// Initial controller state (default zeros).
    #[arg(long, value_parser = number_list)]
    pub w0: Option<std::vec::Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub t0: u64,
}

#[derive(Debug, Clone, Args)]
pub struct FalsifyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub envelope: EnvelopeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExamplesArgs {
    #[arg(long, conflicts_with = "self_test")]
    pub list: bool,
    #[arg(long)]
    pub self_test: bool,
}

fn number(s: &str) -> Result<f64, String> {
    parse_number(s).map_err(|e| e.to_string())
}

/// Splits at commas outside parentheses.
pub(crate) fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0usize);
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts
}

fn number_list(s: &str) -> Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    split_top_level(s).into_iter().map(number).collect()
}

/// Outcome of a command: whether its checks passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Unbounded(_) | Error::FitFailure(_) | Error::NoAdmissibleInput { .. } => 1,
        _ => 2,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit code. Reports go to `out`, diagnostics to standard error.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
            } else {
                let _ = e.print();
            }
            return code;
        }
    };
    match commands::dispatch(&cli, out) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Like [`run_command`] but leaves the process streams alone: returns
/// whether the checks passed together with the printed report. Usage errors
/// surface as [`Error::Invalid`].
pub fn run_captured<I, T>(argv: I) -> crate::Result<(bool, String)>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::invalid(e.to_string()))?;
    let mut buf = Vec::new();
    let outcome = commands::dispatch(&cli, &mut buf)?;
    Ok((
        outcome == Outcome::Pass,
        String::from_utf8_lossy(&buf).into_owned(),
    ))
}
