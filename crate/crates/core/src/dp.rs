//! Augmented-state value iteration for a fixed dual parameter `s`.
//!
//! With `z` the running maximum of the stage cost,
//!
//! ```text
//! J_N(x, z) = max(max(c_N(x), z) − s, 0)
//! J_t(x, z) = min_u  Σ_w p(w | x, u) · J_{t+1}(f(x, u, w), max(z, c(x, u)))
//! ```
//!
//! and `J_0(x, 0)` is the least achievable `E[max(Y − s, 0)]` from `x`.
//! Values between grid nodes are multilinear interpolants over `(x, z)`;
//! the minimization runs over the action grid.

use rayon::prelude::*;
use thiserror::Error;

use crate::cvar::first_argmin;
use crate::grid::{AugmentedGrid, GridError, Stencil};
use crate::model::ControlSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("stage cost {cost} at x = {x:?}, u = {u} outside [0, {c_bar}]")]
    CostOutOfRange { x: Vec<f64>, u: f64, cost: f64, c_bar: f64 },
    #[error("terminal cost {cost} at x = {x:?} outside [0, {c_bar}]")]
    TerminalOutOfRange { x: Vec<f64>, cost: f64, c_bar: f64 },
    #[error("dual parameter {0} is not finite")]
    BadDual(f64),
}

/// `J_t^s` on every `(x, z)` node for `t = 0..=N`.
///
/// `values[t][x_node * n_z + z_node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub s: f64,
    pub n_z: usize,
    pub values: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, t: usize, x_node: usize, z_node: usize) -> f64 {
        self.values[t][x_node * self.n_z + z_node]
    }

    /// `J_0(x_node, z = 0)` for every state node.
    pub fn v0(&self) -> Vec<f64> {
        self.values[0].iter().step_by(self.n_z).copied().collect()
    }

    /// Multilinear interpolant of `J_t` at an arbitrary `(x, z)`.
    pub fn interpolate(&self, grid: &AugmentedGrid, t: usize, x: &[f64], z: f64) -> Result<f64, GridError> {
        let xs = grid.x.stencil(x)?;
        let zs = grid.z.stencil(z)?;
        Ok(interp_layer(&self.values[t], self.n_z, &xs, &zs))
    }
}

/// Selected action `κ_t^s` on every `(x, z)` node for `t = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub s: f64,
    pub n_z: usize,
    pub actions: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn at(&self, t: usize, x_node: usize, z_node: usize) -> f64 {
        self.actions[t][x_node * self.n_z + z_node]
    }

    /// Action stored at the grid node closest to `(x, z)`.
    pub fn nearest(&self, grid: &AugmentedGrid, t: usize, x: &[f64], z: f64) -> f64 {
        self.at(t, grid.x.nearest(x), grid.z.nearest(z))
    }
}

/// `max(max(c_N(x), z) − s, 0)`.
pub fn terminal_value<M: ControlSystem + ?Sized>(model: &M, x: &[f64], z: f64, s: f64) -> f64 {
    terminal_excess(model.terminal_cost(x), z, s)
}

#[inline]
fn terminal_excess(cost: f64, z: f64, s: f64) -> f64 {
    (cost.max(z) - s).max(0.0)
}

#[inline]
fn interp_layer(layer: &[f64], n_z: usize, xs: &[(usize, f64)], zs: &[(usize, f64); 2]) -> f64 {
    let mut acc = 0.0;
    for &(xi, wx) in xs {
        let row = &layer[xi * n_z..(xi + 1) * n_z];
        let mut inner = 0.0;
        for &(zi, wz) in zs {
            if wz != 0.0 {
                inner += wz * row[zi];
            }
        }
        acc += wx * inner;
    }
    acc
}

/// Successor distribution of one `(x, u)` pair: `(probability, x-stencil)`
/// per disturbance atom, plus the stage cost.
#[derive(Debug, Clone)]
struct Outcomes {
    cost: f64,
    next: Vec<(f64, Stencil)>,
}

fn outcomes<M: ControlSystem + ?Sized>(
    model: &M,
    grid: &AugmentedGrid,
    x: &[f64],
    u: f64,
) -> Result<Outcomes, DpError> {
    let cost = model.stage_cost(x, u);
    let c_bar = model.c_bar();
    if !(0.0..=c_bar).contains(&cost) {
        return Err(DpError::CostOutOfRange {
            x: x.to_vec(),
            u,
            cost,
            c_bar,
        });
    }
    let next = model
        .disturbance(x, u)
        .atoms()
        .map(|(w, p)| Ok((p, grid.x.stencil(&model.step(x, u, w))?)))
        .collect::<Result<Vec<_>, GridError>>()?;
    Ok(Outcomes { cost, next })
}

#[inline]
fn expected_next(o: &Outcomes, z: f64, grid: &AugmentedGrid, j_next: &[f64]) -> Result<f64, GridError> {
    let zs = grid.z.stencil(z.max(o.cost))?;
    let n_z = grid.z.len();
    Ok(o.next
        .iter()
        .map(|(p, xs)| p * interp_layer(j_next, n_z, xs, &zs))
        .sum())
}

/// `Σ_w p(w) · Ĵ_{t+1}(f(x, u, w), max(z, c(x, u)))` at an arbitrary point.
pub fn backup_q<M: ControlSystem + ?Sized>(
    model: &M,
    grid: &AugmentedGrid,
    x: &[f64],
    z: f64,
    u: f64,
    j_next: &[f64],
) -> Result<f64, DpError> {
    let o = outcomes(model, grid, x, u)?;
    Ok(expected_next(&o, z, grid, j_next)?)
}

/// Minimum of [`backup_q`] over the action grid and the lowest action
/// attaining it.
pub fn bellman_min<M: ControlSystem + ?Sized>(
    model: &M,
    grid: &AugmentedGrid,
    x: &[f64],
    z: f64,
    j_next: &[f64],
) -> Result<(f64, f64), DpError> {
    let q = grid
        .actions
        .nodes()
        .iter()
        .map(|&u| backup_q(model, grid, x, z, u, j_next))
        .collect::<Result<Vec<_>, _>>()?;
    let (i, v) = first_argmin(q).expect("action axis is never empty");
    Ok((v, grid.actions.nodes()[i]))
}

/// Value iteration with the `(x node, action)` transition stencils cached,
/// so repeated solves for different `s` share the model evaluations.
pub struct DpSolver<'a, M: ControlSystem + ?Sized> {
    model: &'a M,
    grid: &'a AugmentedGrid,
    /// `cache[x_node * n_actions + a]`
    cache: Vec<Outcomes>,
    terminal: Vec<f64>,
}

impl<'a, M: ControlSystem + ?Sized> DpSolver<'a, M> {
    pub fn new(model: &'a M, grid: &'a AugmentedGrid) -> Result<Self, DpError> {
        let n_x = grid.x.len();
        let actions = grid.actions.nodes();
        let cache = (0..n_x * actions.len())
            .into_par_iter()
            .map(|k| {
                let x = grid.x.point(k / actions.len());
                outcomes(model, grid, &x, actions[k % actions.len()])
            })
            .collect::<Result<Vec<_>, _>>()?;
        let c_bar = model.c_bar();
        let terminal = (0..n_x)
            .map(|i| {
                let x = grid.x.point(i);
                let cost = model.terminal_cost(&x);
                if (0.0..=c_bar).contains(&cost) {
                    Ok(cost)
                } else {
                    Err(DpError::TerminalOutOfRange { x, cost, c_bar })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            model,
            grid,
            cache,
            terminal,
        })
    }

    pub fn grid(&self) -> &AugmentedGrid {
        self.grid
    }

    pub fn model(&self) -> &M {
        self.model
    }

    fn terminal_layer(&self, s: f64) -> Vec<f64> {
        let z = self.grid.z.nodes();
        self.terminal
            .iter()
            .flat_map(|&c| z.iter().map(move |&zj| terminal_excess(c, zj, s)))
            .collect()
    }

    /// One backward step: `(J_t, κ_t)` from `J_{t+1}`.
    fn backup_layer(&self, j_next: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let grid = self.grid;
        let n_a = grid.actions.len();
        let n_z = grid.z.len();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.x.len())
            .into_par_iter()
            .map(|xi| {
                let mut vals = Vec::with_capacity(n_z);
                let mut acts = Vec::with_capacity(n_z);
                for &zj in grid.z.nodes() {
                    let q = (0..n_a).map(|a| {
                        expected_next(&self.cache[xi * n_a + a], zj, grid, j_next)
                            .expect("cached stencils and z ≤ c̄ stay on the grid")
                    });
                    let (a, v) = first_argmin(q).expect("action axis is never empty");
                    vals.push(v);
                    acts.push(grid.actions.nodes()[a]);
                }
                (vals, acts)
            })
            .collect();
        let mut values = Vec::with_capacity(grid.augmented_len());
        let mut actions = Vec::with_capacity(grid.augmented_len());
        for (v, a) in rows {
            values.extend(v);
            actions.extend(a);
        }
        (values, actions)
    }

    /// Full tables for dual parameter `s`.
    pub fn solve(&self, s: f64) -> Result<(ValueTable, PolicyTable), DpError> {
        if !s.is_finite() {
            return Err(DpError::BadDual(s));
        }
        let n = self.model.horizon();
        let mut values = vec![Vec::new(); n + 1];
        let mut actions = vec![Vec::new(); n];
        values[n] = self.terminal_layer(s);
        for t in (0..n).rev() {
            let (v, a) = self.backup_layer(&values[t + 1]);
            values[t] = v;
            actions[t] = a;
        }
        let n_z = self.grid.z.len();
        Ok((ValueTable { s, n_z, values }, PolicyTable { s, n_z, actions }))
    }

    /// `J_0^s(x, 0)` on every state node, keeping only two layers in memory.
    pub fn solve_v0(&self, s: f64) -> Result<Vec<f64>, DpError> {
        if !s.is_finite() {
            return Err(DpError::BadDual(s));
        }
        let mut layer = self.terminal_layer(s);
        for _ in 0..self.model.horizon() {
            layer = self.backup_layer(&layer).0;
        }
        Ok(layer.into_iter().step_by(self.grid.z.len()).collect())
    }
}

/// Solve the augmented DP for one dual parameter.
pub fn value_iteration<M: ControlSystem + ?Sized>(
    model: &M,
    grid: &AugmentedGrid,
    s: f64,
) -> Result<(ValueTable, PolicyTable), DpError> {
    DpSolver::new(model, grid)?.solve(s)
}
