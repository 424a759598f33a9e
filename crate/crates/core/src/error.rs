use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },

    #[error("`{name}` at position {pos} is out of range (declared dimension {limit})")]
    IndexOutOfRange {
        name: String,
        pos: usize,
        limit: usize,
    },

    #[error("domain error in `{expr}`: {reason}")]
    Domain { expr: String, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("step failed at t={t}: {source}")]
    Step {
        t: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("equilibrium spot-check failed for {what} at t={t}, d={d:?}: value {value:e}")]
    Equilibrium {
        what: String,
        t: u64,
        d: Vec<f64>,
        value: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown example `{0}`")]
    UnknownExample(String),

    #[error("envelope fit failed: {0}")]
    FitFailure(String),

    #[error("unbounded: {0}")]
    Unbounded(String),

    #[error("no admissible input found at tolerance for t={t}, y={y:?}")]
    NoAdmissibleInput { t: u64, y: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }

    pub(crate) fn at_step(self, t: u64) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                t,
                source: Box::new(e),
            },
        }
    }
}
