//! Solver and simulator for the major-minor mean-field game of market making
//! with strategic market-takers.
//!
//! The crate computes the equilibrium of the coupled system made of the
//! market-maker HJB equation, the representative market-taker HJB equation and
//! the Fokker-Planck equation of the takers' (inventory, signal) distribution,
//! all on finite grids with explicit Euler time stepping. The resulting value
//! functions are checked against an independent Monte Carlo simulation of the
//! controlled point processes.
//!
//! Module map:
//!
//! * [`model`]: parameters, state grids, intensities, impact functional and the
//!   closed-form quote maps.
//! * [`taker`]: backward solve of the taker HJB and its feedback quotes.
//! * [`fokker_planck`]: forward mass transport and mean-field aggregates.
//! * [`equilibrium`]: damped Picard iteration on the mass flow.
//! * [`maker`]: backward solve of the maker HJB given the equilibrium.
//! * [`montecarlo`]: thinning-based path simulation of both agents.

pub mod equilibrium;
pub mod error;
pub mod field;
pub mod fokker_planck;
pub mod maker;
pub mod model;
pub mod montecarlo;
pub mod taker;

pub use equilibrium::{
    fixed_point_residual, solve_mfg, solve_mfg_auto, EquilibriumSolution, SolverOptions,
};
pub use error::{ModelError, Result};
pub use field::TimeField;
pub use fokker_planck::{InitialMass, MassField, MeanFieldAggregates};
pub use maker::{MakerQuotePolicy, MakerValueField};
pub use model::{MarketParams, StateGrids};
pub use montecarlo::{McReport, McStats, StartState};
pub use taker::{TakerQuotePolicy, TakerValueField};
