//! Robust stability laboratory for time-varying discrete-time systems
//! `x(t+1) = f(t, d(t), x(t), u(t))` with bounded disturbances.

// Negated float comparisons such as `!(x > 0.0)` are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod cli;
pub mod compfn;
pub mod dsl;
pub mod error;
pub mod registry;
pub mod sampling;
pub mod stability;
pub mod synth;
pub mod system;

pub use error::{Error, Result};
