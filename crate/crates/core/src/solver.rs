//! Dual-parameter sweep and safe-set extraction.
//!
//! For each `s` on the grid the augmented DP gives `V^s(x) = J_0^s(x, 0)`.
//! Then
//!
//! ```text
//! V*_α(x) = min_{s ∈ [0, c̄]}  s + V^s(x) / α,      W*_α = g̲ + V*_α
//! S_α^r   = { x : W*_α(x) ≤ r }
//! ```

use rayon::prelude::*;
use serde::Serialize;

use crate::cvar::{first_argmin, RiskLevel};
use crate::dp::{DpError, DpSolver};
use crate::grid::AugmentedGrid;
use crate::model::ControlSystem;

/// `V^s` on every state node for every `s` on the dual axis.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSweep {
    pub s_values: Vec<f64>,
    /// `v0[s_index][x_node]`
    pub v0: Vec<Vec<f64>>,
    pub g_lower: f64,
}

impl DualSweep {
    pub fn n_states(&self) -> usize {
        self.v0.first().map_or(0, Vec::len)
    }

    /// Outer objective `s + V^s(x)/α` along the dual axis at one state node.
    pub fn objective(&self, x_node: usize, alpha: RiskLevel) -> Vec<f64> {
        self.s_values
            .iter()
            .zip(&self.v0)
            .map(|(&s, row)| s + row[x_node] / alpha.get())
            .collect()
    }
}

/// Run the DP for every `s` on `grid.s`, in parallel across `s`.
pub fn sweep<M: ControlSystem + ?Sized>(model: &M, grid: &AugmentedGrid) -> Result<DualSweep, DpError> {
    let solver = DpSolver::new(model, grid)?;
    sweep_with(&solver, |_, _| {})
}

/// [`sweep`] reusing a prepared solver; `progress(i, s)` fires as each
/// dual value finishes (in completion order).
pub fn sweep_with<M, F>(solver: &DpSolver<'_, M>, progress: F) -> Result<DualSweep, DpError>
where
    M: ControlSystem + ?Sized,
    F: Fn(usize, f64) + Sync,
{
    let s_values = solver.grid().s.nodes().to_vec();
    let v0 = s_values
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let row = solver.solve_v0(s);
            progress(i, s);
            row
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DualSweep {
        s_values,
        v0,
        g_lower: solver.model().g_lower(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskSurface {
    pub alpha: f64,
    pub v_star: Vec<f64>,
    pub w_star: Vec<f64>,
    pub s_star: Vec<f64>,
}

/// Minimize `s + V^s(x)/α` over the swept dual values at every state node.
/// Ties go to the smallest `s`.
pub fn risk_value(sweep: &DualSweep, alpha: RiskLevel) -> RiskSurface {
    let n = sweep.n_states();
    let mut v_star = Vec::with_capacity(n);
    let mut s_star = Vec::with_capacity(n);
    for x in 0..n {
        let (i, v) = first_argmin(sweep.objective(x, alpha)).expect("dual axis is never empty");
        v_star.push(v);
        s_star.push(sweep.s_values[i]);
    }
    let w_star = v_star.iter().map(|v| v + sweep.g_lower).collect();
    RiskSurface {
        alpha: alpha.get(),
        v_star,
        w_star,
        s_star,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafeSetMask {
    pub alpha: f64,
    pub r: f64,
    pub mask: Vec<bool>,
}

impl SafeSetMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// `true` when every member of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &SafeSetMask) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

/// `{ x : W*_α(x) ≤ r }` on the state nodes.
pub fn extract_safe_set(surface: &RiskSurface, r: f64) -> SafeSetMask {
    SafeSetMask {
        alpha: surface.alpha,
        r,
        mask: surface.w_star.iter().map(|&w| w <= r).collect(),
    }
}
