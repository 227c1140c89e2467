//! Risk-sensitive safe sets for finite-horizon stochastic control.
//!
//! The risk of a trajectory is the conditional value-at-risk of its worst
//! constraint violation. The solver works on an augmented state `(x, z)`,
//! where `z` carries the running maximum cost, and recovers the optimal risk
//! by a one-dimensional minimization over a dual parameter `s`.

pub mod cli;
pub mod config;
pub mod cvar;
pub mod dp;
pub mod grid;
pub mod io;
pub mod model;
pub mod oracle;
pub mod runtime;
pub mod solver;
pub mod stormwater;

pub use cvar::{Pmf, RiskLevel};
pub use grid::AugmentedGrid;
pub use model::ControlSystem;
pub use stormwater::{Design, Stormwater, StormwaterParams};
