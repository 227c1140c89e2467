//! Finite-horizon stochastic control systems.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cvar::Pmf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter `{name}` must be strictly positive (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{0}")]
    Inconsistent(String),
    #[error("pump flow requested on design {0:?}, which has no pump")]
    NoPump(crate::stormwater::Design),
    #[error("state {0:?} lies outside the state box")]
    OutOfBounds(Vec<f64>),
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    #[inline]
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// A system `x' = f(x, u, w)` with bounded costs, a compact scalar action set
/// and a finite disturbance law that may depend on `(x, u)`.
///
/// Costs must lie in `[0, c_bar]`; `g_lower` is the constant that was
/// subtracted from the raw safety margin to make them nonnegative.
pub trait ControlSystem: Send + Sync {
    fn state_bounds(&self) -> &[Interval];

    fn action_bounds(&self) -> Interval;

    fn horizon(&self) -> usize;

    fn c_bar(&self) -> f64;

    fn g_lower(&self) -> f64 {
        0.0
    }

    fn stage_cost(&self, x: &[f64], u: f64) -> f64;

    fn terminal_cost(&self, x: &[f64]) -> f64;

    fn disturbance(&self, x: &[f64], u: f64) -> Cow<'_, Pmf>;

    /// One step of the dynamics, already projected into the state box.
    fn step(&self, x: &[f64], u: f64, w: f64) -> Vec<f64>;

    fn state_dim(&self) -> usize {
        self.state_bounds().len()
    }

    fn in_bounds(&self, x: &[f64]) -> bool {
        x.len() == self.state_dim() && x.iter().zip(self.state_bounds()).all(|(v, b)| b.contains(*v))
    }
}

/// Running maximum of the stage cost: `max(z, c(x, u))`.
pub fn z_update<M: ControlSystem + ?Sized>(model: &M, z: f64, x: &[f64], u: f64) -> f64 {
    z.max(model.stage_cost(x, u))
}
