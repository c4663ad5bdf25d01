//! Ground states of two-population ergodic mean-field games computed by
//! constrained energy minimization, with the diagnostics used to test their
//! existence thresholds and concentration asymptotics.

pub mod asymptotics;
pub mod dual;
pub mod energy;
pub mod error;
pub mod feasible;
pub mod grid;
mod linalg;
pub mod minimizer;
pub mod optim;
mod param;
pub mod reference;
pub mod spectral;

pub use error::{MfgError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
