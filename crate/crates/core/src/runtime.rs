//! Pre-commitment policy deployment and Monte Carlo evaluation.
//!
//! A policy for `(x0, α)` fixes the dual parameter `s*` at time 0, then acts
//! on the augmented state `(x_t, z_t)` with the selector solved for `s*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cvar::{self, first_argmin, CvarError, Pmf, RiskLevel};
use crate::dp::{bellman_min, DpError, DpSolver, PolicyTable, ValueTable};
use crate::grid::{AugmentedGrid, GridError};
use crate::model::{z_update, ControlSystem};
use crate::solver::DualSweep;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("initial state {0:?} outside the state box")]
    OutOfBounds(Vec<f64>),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cvar(#[from] CvarError),
    #[error("rollout batch is empty")]
    EmptyBatch,
}

/// How the deployed controller turns `(t, x, z)` into an action.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlLookup {
    /// Stored selector at the closest `(x, z)` node.
    #[default]
    Nearest,
    /// Fresh argmin of the one-step backup at the exact `(x, z)`.
    Reoptimize,
}

#[derive(Debug, Clone)]
pub struct PrecommitmentPolicy {
    pub alpha: RiskLevel,
    pub x0: Vec<f64>,
    pub x0_node: usize,
    pub s_star: f64,
    /// `J_0^{s*}(x0, 0)`, the predicted `E[max(Y − s*, 0)]`.
    pub dp_value: f64,
    /// `g̲ + s* + J_0^{s*}(x0, 0)/α`, the predicted optimal CVaR of `Y′`.
    pub dp_risk: f64,
    pub values: ValueTable,
    pub tables: PolicyTable,
}

/// Choose `s*` at the grid node nearest `x` and solve the DP at exactly `s*`.
pub fn synthesize_policy<M: ControlSystem + ?Sized>(
    x: &[f64],
    alpha: RiskLevel,
    sweep: &DualSweep,
    model: &M,
    grid: &AugmentedGrid,
) -> Result<PrecommitmentPolicy, RuntimeError> {
    if !model.in_bounds(x) {
        return Err(RuntimeError::OutOfBounds(x.to_vec()));
    }
    let node = grid.x.nearest(x);
    let (i, _) = first_argmin(sweep.objective(node, alpha)).expect("dual axis is never empty");
    let s_star = sweep.s_values[i];
    let (values, tables) = DpSolver::new(model, grid)?.solve(s_star)?;
    let dp_value = values.interpolate(grid, 0, x, 0.0)?;
    Ok(PrecommitmentPolicy {
        alpha,
        x0: x.to_vec(),
        x0_node: node,
        s_star,
        dp_value,
        dp_risk: model.g_lower() + s_star + dp_value / alpha.get(),
        values,
        tables,
    })
}

/// One simulated path: `x_0..x_N`, `z_0..z_N`, `u_0..u_{N-1}`, `w_0..w_{N-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub seed: u64,
    /// Realized `Y′ = g̲ + max(z_N, c_N(x_N))` per rollout, in rollout order.
    pub y: Vec<f64>,
    /// Full paths, kept only when requested.
    pub trajectories: Option<Vec<Trajectory>>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions {
    pub lookup: ControlLookup,
    pub keep_trajectories: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            lookup: ControlLookup::Nearest,
            keep_trajectories: false,
        }
    }
}

/// Stream `index` of the ChaCha generator seeded with `seed`.
pub fn rollout_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulate `num` independent deployments of `policy`.
///
/// Each rollout draws from its own RNG stream, so the batch is identical
/// for any thread count.
pub fn rollout<M: ControlSystem + ?Sized>(
    policy: &PrecommitmentPolicy,
    num: usize,
    seed: u64,
    model: &M,
    grid: &AugmentedGrid,
    opts: RolloutOptions,
) -> Result<RolloutBatch, RuntimeError> {
    let results = (0..num)
        .into_par_iter()
        .map(|i| simulate(policy, model, grid, &mut rollout_rng(seed, i as u64), opts))
        .collect::<Result<Vec<_>, _>>()?;
    let mut y = Vec::with_capacity(num);
    let mut paths = opts.keep_trajectories.then(|| Vec::with_capacity(num));
    for (yi, path) in results {
        y.push(yi);
        if let (Some(all), Some(p)) = (paths.as_mut(), path) {
            all.push(p);
        }
    }
    Ok(RolloutBatch {
        seed,
        y,
        trajectories: paths,
    })
}

fn simulate<M: ControlSystem + ?Sized>(
    policy: &PrecommitmentPolicy,
    model: &M,
    grid: &AugmentedGrid,
    rng: &mut ChaCha8Rng,
    opts: RolloutOptions,
) -> Result<(f64, Option<Trajectory>), RuntimeError> {
    let n = model.horizon();
    let mut x = policy.x0.clone();
    let mut z = 0.0;
    let mut path = opts.keep_trajectories.then(|| Trajectory {
        x: vec![x.clone()],
        z: vec![z],
        u: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
    });
    for t in 0..n {
        let u = match opts.lookup {
            ControlLookup::Nearest => policy.tables.nearest(grid, t, &x, z),
            ControlLookup::Reoptimize => bellman_min(model, grid, &x, z, &policy.values.values[t + 1])?.1,
        };
        let draw: f64 = rng.random();
        let w = model.disturbance(&x, u).quantile_draw(draw);
        let z_next = z_update(model, z, &x, u);
        x = model.step(&x, u, w);
        z = z_next;
        if let Some(p) = path.as_mut() {
            p.u.push(u);
            p.w.push(w);
            p.x.push(x.clone());
            p.z.push(z);
        }
    }
    let y = model.g_lower() + z.max(model.terminal_cost(&x));
    Ok((y, path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub n: usize,
    pub alpha: f64,
    pub s_star: f64,
    /// Empirical CVaR of `Y′`.
    pub cvar_hat: f64,
    /// Empirical VaR of `Y′`.
    pub var_hat: f64,
    /// Sample mean of `max(Y′ − g̲ − s*, 0)`.
    pub excess_hat: f64,
    /// Standard error of `excess_hat`.
    pub excess_std_err: f64,
    /// Plug-in standard error of `cvar_hat` from its influence function.
    pub cvar_std_err: f64,
}

/// Empirical risk of a batch under level `alpha`, with the excess measured
/// against the policy's dual parameter `s_star`.
pub fn estimate_risk(
    batch: &RolloutBatch,
    alpha: RiskLevel,
    s_star: f64,
    g_lower: f64,
) -> Result<RiskEstimate, RuntimeError> {
    if batch.is_empty() {
        return Err(RuntimeError::EmptyBatch);
    }
    let pmf = Pmf::from_samples(&batch.y)?;
    let (cvar_hat, _) = cvar::cvar_dual_on_atoms(&pmf, alpha);
    let var_hat = cvar::var(&pmf, alpha);
    let n = batch.len() as f64;
    let (excess_hat, excess_std_err) = mean_and_std_err(batch.y.iter().map(|y| (y - g_lower - s_star).max(0.0)), n);
    let (_, tail_se) = mean_and_std_err(batch.y.iter().map(|y| (y - var_hat).max(0.0)), n);
    Ok(RiskEstimate {
        n: batch.len(),
        alpha: alpha.get(),
        s_star,
        cvar_hat,
        var_hat,
        excess_hat,
        excess_std_err,
        cvar_std_err: tail_se / alpha.get(),
    })
}

fn mean_and_std_err(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(y: Vec<f64>) -> RolloutBatch {
        RolloutBatch {
            seed: 0,
            y,
            trajectories: None,
        }
    }

    #[test]
    fn constant_batch() {
        let est = estimate_risk(&batch(vec![0.7; 10]), RiskLevel::new(0.1).unwrap(), 0.0, 0.0).unwrap();
        assert_eq!(est.cvar_hat, 0.7);
        assert_eq!(est.var_hat, 0.7);
        assert!((est.excess_hat - 0.7).abs() < 1e-15);
        assert!(est.excess_std_err < 1e-15);
    }

    #[test]
    fn two_value_batch_delegates() {
        let alpha = RiskLevel::new(0.5).unwrap();
        let est = estimate_risk(&batch(vec![0.0, 2.0, 2.0, 0.0]), alpha, 1.0, 0.0).unwrap();
        let pmf = Pmf::new([(0.0, 0.5), (2.0, 0.5)]).unwrap();
        assert_eq!(est.cvar_hat, cvar::cvar_dual_on_atoms(&pmf, alpha).0);
        assert_eq!(est.var_hat, 0.0);
        assert_eq!(est.excess_hat, 0.5);
    }

    #[test]
    fn empty_batch_is_an_error() {
        assert_eq!(
            estimate_risk(&batch(vec![]), RiskLevel::new(0.5).unwrap(), 0.0, 0.0),
            Err(RuntimeError::EmptyBatch)
        );
    }

    #[test]
    fn rng_streams_are_independent_of_order() {
        let a: Vec<f64> = (0..4).map(|i| rollout_rng(7, i).random()).collect();
        let b: Vec<f64> = (0..4).rev().map(|i| rollout_rng(7, i).random()).collect();
        let b: Vec<f64> = b.into_iter().rev().collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
