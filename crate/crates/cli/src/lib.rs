//! Config-driven runs of the mean-field market-making solver: `solve` writes
//! the equilibrium fields as CSV plus a hashed manifest, `simulate` checks them
//! by Monte Carlo, `sweep` repeats a solve along one parameter axis.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run_simulate, run_solve, run_sweep, SimulateOverrides};
pub use config::{AxisSpec, RunConfig};
pub use error::CliError;
