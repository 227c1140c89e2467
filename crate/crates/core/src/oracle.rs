//! Exact verification on tiny finite instances.
//!
//! Everything here enumerates: path laws are built atom by atom, optimal
//! CVaR is a minimum over every deterministic `(t, x, z)`-feedback policy,
//! and the per-`s` expectation problem is solved by a memoized recursion on
//! the finite augmented space. None of it goes through the grid solver, so
//! the grid pipeline can be checked against it to round-off.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cvar::{cvar_dual_on_atoms, CvarError, Pmf, RiskLevel};
use crate::dp::{DpError, DpSolver, PolicyTable};
use crate::grid::{AugmentedGrid, Axis, GridError, RectGrid};
use crate::model::{ControlSystem, Interval};
use crate::solver::{risk_value, sweep_with};

/// Largest policy count the brute force will enumerate.
pub const ENUMERATION_BUDGET: f64 = 1e6;

/// Agreement required between independent exact routes.
pub const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("instance `{name}`: {msg}")]
    Invalid { name: String, msg: String },
    #[error("policy has no action for reachable (t = {t}, x = {x}, z = {z})")]
    MissingPolicyEntry { t: usize, x: usize, z: f64 },
    #[error("enumeration needs {count:e} policies, budget is {budget:e}")]
    Budget { count: f64, budget: f64 },
    #[error("exchange identity violated: brute force {brute}, dual route {dual}")]
    ExchangeMismatch { brute: f64, dual: f64 },
    #[error(transparent)]
    Cvar(#[from] CvarError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Finite MDP with explicit tables. States and actions are indices; the
/// disturbance picks one of the listed successors.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub c_bar: f64,
    /// `terminal[x]`
    pub terminal: Vec<f64>,
    /// `stage[x][a]`
    pub stage: Vec<Vec<f64>>,
    /// `outcomes[x][a]`: `(successor, probability)` per disturbance atom.
    pub outcomes: Vec<Vec<Vec<(usize, f64)>>>,
    bounds: [Interval; 1],
    laws: Vec<Vec<Pmf>>,
}

impl TinyInstance {
    pub fn new(
        name: impl Into<String>,
        horizon: usize,
        c_bar: f64,
        terminal: Vec<f64>,
        stage: Vec<Vec<f64>>,
        outcomes: Vec<Vec<Vec<(usize, f64)>>>,
    ) -> Result<Self, OracleError> {
        let name = name.into();
        let invalid = |msg: String| OracleError::Invalid {
            name: name.clone(),
            msg,
        };
        let n_states = terminal.len();
        if n_states == 0 {
            return Err(invalid("needs at least one state".into()));
        }
        if !(1..=3).contains(&horizon) {
            return Err(invalid(format!("horizon {horizon} outside 1..=3")));
        }
        if !(c_bar.is_finite() && c_bar > 0.0) {
            return Err(invalid(format!("c_bar {c_bar} must be positive")));
        }
        let n_actions = stage.first().map_or(0, Vec::len);
        if n_actions == 0 {
            return Err(invalid("needs at least one action".into()));
        }
        if stage.len() != n_states || stage.iter().any(|row| row.len() != n_actions) {
            return Err(invalid("stage cost table has the wrong shape".into()));
        }
        if outcomes.len() != n_states || outcomes.iter().any(|row| row.len() != n_actions) {
            return Err(invalid("outcome table has the wrong shape".into()));
        }
        let in_range = |c: f64| (0.0..=c_bar).contains(&c);
        if let Some(c) = terminal.iter().chain(stage.iter().flatten()).find(|c| !in_range(**c)) {
            return Err(invalid(format!("cost {c} outside [0, {c_bar}]")));
        }
        let mut laws = Vec::with_capacity(n_states);
        for (x, row) in outcomes.iter().enumerate() {
            let mut law_row = Vec::with_capacity(n_actions);
            for (a, atoms) in row.iter().enumerate() {
                if let Some(&(next, _)) = atoms.iter().find(|o| o.0 >= n_states) {
                    return Err(invalid(format!("state {x}, action {a}: successor {next} out of range")));
                }
                let pmf = Pmf::new(atoms.iter().enumerate().map(|(k, &(_, p))| (k as f64, p)))
                    .map_err(|e| invalid(format!("state {x}, action {a}: {e}")))?;
                law_row.push(pmf);
            }
            laws.push(law_row);
        }
        Ok(Self {
            name,
            n_states,
            n_actions,
            horizon,
            c_bar,
            terminal,
            stage,
            outcomes,
            bounds: [Interval::new(0.0, (n_states - 1) as f64)],
            laws,
        })
    }

    #[inline]
    fn state_of(x: &[f64]) -> usize {
        x[0].round() as usize
    }

    /// Distinct running-maximum values: `{0} ∪ {stage costs}`.
    pub fn z_levels(&self) -> Vec<f64> {
        let set: BTreeSet<u64> = std::iter::once(0.0f64)
            .chain(self.stage.iter().flatten().copied())
            .map(f64::to_bits)
            .collect();
        let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Every value `Y` can take, plus 0 and `c̄`.
    pub fn y_support(&self) -> Vec<f64> {
        let mut v: Vec<f64> = std::iter::once(0.0)
            .chain(std::iter::once(self.c_bar))
            .chain(self.stage.iter().flatten().copied())
            .chain(self.terminal.iter().copied())
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Grid whose nodes are the states, the reachable running maxima, the
    /// actions and the possible values of `Y`; no interpolation ever occurs.
    pub fn exact_grid(&self) -> Result<AugmentedGrid, OracleError> {
        let states = Axis::from_nodes((0..self.n_states).map(|i| i as f64).collect())?;
        let mut z = self.z_levels();
        if *z.last().unwrap() < self.c_bar {
            z.push(self.c_bar);
        }
        Ok(AugmentedGrid::new(
            self,
            RectGrid::new(vec![states]),
            Axis::from_nodes(z)?,
            Axis::from_nodes((0..self.n_actions).map(|a| a as f64).collect())?,
            Axis::from_nodes(self.y_support())?,
        )?)
    }

    /// Number of `(t, x, z)` decision points reachable from `x0` under some
    /// policy.
    pub fn reachable_keys(&self, x0: usize) -> usize {
        let mut layer: BTreeSet<(usize, u64)> = BTreeSet::from([(x0, 0.0f64.to_bits())]);
        let mut total = 0;
        for _ in 0..self.horizon {
            total += layer.len();
            let mut next = BTreeSet::new();
            for &(x, zb) in &layer {
                let z = f64::from_bits(zb);
                for a in 0..self.n_actions {
                    let z2 = z.max(self.stage[x][a]);
                    for &(nx, p) in &self.outcomes[x][a] {
                        if p > 0.0 {
                            next.insert((nx, z2.to_bits()));
                        }
                    }
                }
            }
            layer = next;
        }
        total
    }

    /// Upper bound on the number of feedback policies the brute force visits.
    pub fn policy_count(&self, x0: usize) -> f64 {
        (self.n_actions as f64).powi(self.reachable_keys(x0) as i32)
    }
}

impl ControlSystem for TinyInstance {
    fn state_bounds(&self) -> &[Interval] {
        &self.bounds
    }

    fn action_bounds(&self) -> Interval {
        Interval::new(0.0, (self.n_actions - 1) as f64)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn c_bar(&self) -> f64 {
        self.c_bar
    }

    fn stage_cost(&self, x: &[f64], u: f64) -> f64 {
        self.stage[Self::state_of(x)][u.round() as usize]
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.terminal[Self::state_of(x)]
    }

    fn disturbance(&self, x: &[f64], u: f64) -> Cow<'_, Pmf> {
        Cow::Borrowed(&self.laws[Self::state_of(x)][u.round() as usize])
    }

    fn step(&self, x: &[f64], u: f64, w: f64) -> Vec<f64> {
        let next = self.outcomes[Self::state_of(x)][u.round() as usize][w.round() as usize].0;
        vec![next as f64]
    }
}

/// Deterministic policy on the augmented state: `(t, x, z) → action`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentedPolicy {
    actions: BTreeMap<(usize, usize, u64), usize>,
}

impl AugmentedPolicy {
    pub fn insert(&mut self, t: usize, x: usize, z: f64, action: usize) {
        self.actions.insert((t, x, z.to_bits()), action);
    }

    pub fn get(&self, t: usize, x: usize, z: f64) -> Option<usize> {
        self.actions.get(&(t, x, z.to_bits())).copied()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Read the grid selector at every `(t, x, z)` reachable from `x0`.
    pub fn from_tables(inst: &TinyInstance, grid: &AugmentedGrid, tables: &PolicyTable, x0: usize) -> Self {
        let mut policy = Self::default();
        let mut layer: BTreeSet<(usize, u64)> = BTreeSet::from([(x0, 0.0f64.to_bits())]);
        for t in 0..inst.horizon {
            let mut next = BTreeSet::new();
            for &(x, zb) in &layer {
                let z = f64::from_bits(zb);
                let zi = grid.z.nearest(z);
                let a = tables.at(t, x, zi).round() as usize;
                policy.insert(t, x, z, a);
                let z2 = z.max(inst.stage[x][a]);
                for &(nx, p) in &inst.outcomes[x][a] {
                    if p > 0.0 {
                        next.insert((nx, z2.to_bits()));
                    }
                }
            }
            layer = next;
        }
        policy
    }
}

/// Exact law of `Y = max(c_N(x_N), max_t c(x_t, u_t))` from `x0`.
pub fn path_law(inst: &TinyInstance, x0: usize, policy: &AugmentedPolicy) -> Result<Pmf, OracleError> {
    let mut dist: BTreeMap<(usize, u64), f64> = BTreeMap::from([((x0, 0.0f64.to_bits()), 1.0)]);
    for t in 0..inst.horizon {
        let mut next: BTreeMap<(usize, u64), f64> = BTreeMap::new();
        for (&(x, zb), &mass) in &dist {
            let z = f64::from_bits(zb);
            let a = policy.get(t, x, z).ok_or(OracleError::MissingPolicyEntry { t, x, z })?;
            push_successors(inst, x, z, a, mass, &mut next);
        }
        dist = next;
    }
    Ok(terminal_law(inst, &dist)?)
}

fn push_successors(inst: &TinyInstance, x: usize, z: f64, a: usize, mass: f64, into: &mut BTreeMap<(usize, u64), f64>) {
    let z2 = z.max(inst.stage[x][a]);
    for &(nx, p) in &inst.outcomes[x][a] {
        if p > 0.0 {
            *into.entry((nx, z2.to_bits())).or_insert(0.0) += mass * p;
        }
    }
}

fn terminal_law(inst: &TinyInstance, dist: &BTreeMap<(usize, u64), f64>) -> Result<Pmf, CvarError> {
    let atoms: Vec<(f64, f64)> = dist
        .iter()
        .map(|(&(x, zb), &p)| (inst.terminal[x].max(f64::from_bits(zb)), p))
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    // products of rational probabilities drift by a few ulps
    Pmf::new(atoms.into_iter().map(|(v, p)| (v, p / total)))
}

/// Exact CVaR of `Y` under `policy` from `x0`.
pub fn exact_policy_cvar(
    inst: &TinyInstance,
    x0: usize,
    policy: &AugmentedPolicy,
    alpha: RiskLevel,
) -> Result<f64, OracleError> {
    Ok(cvar_dual_on_atoms(&path_law(inst, x0, policy)?, alpha).0)
}

/// `min_π E[max(Y − s, 0)]` from `x0` by memoized recursion over `(t, x, z)`.
pub fn exact_excess_value(inst: &TinyInstance, x0: usize, s: f64) -> f64 {
    fn go(
        inst: &TinyInstance,
        t: usize,
        x: usize,
        z: f64,
        s: f64,
        memo: &mut HashMap<(usize, usize, u64), f64>,
    ) -> f64 {
        if t == inst.horizon {
            return (inst.terminal[x].max(z) - s).max(0.0);
        }
        if let Some(&v) = memo.get(&(t, x, z.to_bits())) {
            return v;
        }
        let mut best = f64::INFINITY;
        for a in 0..inst.n_actions {
            let z2 = z.max(inst.stage[x][a]);
            let q: f64 = inst.outcomes[x][a]
                .iter()
                .map(|&(nx, p)| p * go(inst, t + 1, nx, z2, s, memo))
                .sum();
            best = best.min(q);
        }
        memo.insert((t, x, z.to_bits()), best);
        best
    }
    go(inst, 0, x0, 0.0, s, &mut HashMap::new())
}

/// `min_π E[Y]` from `x0`.
pub fn exact_expected_max(inst: &TinyInstance, x0: usize) -> f64 {
    exact_excess_value(inst, x0, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub alpha: f64,
    /// Minimum CVaR over all deterministic feedback policies.
    pub value: f64,
    pub best_policy: AugmentedPolicy,
    /// `min_s s + (1/α) min_π E[max(Y − s, 0)]` over the support of `Y`.
    pub dual_value: f64,
}

/// Brute-force optimal CVaR for several risk levels at once.
///
/// Fails when the enumeration would exceed [`ENUMERATION_BUDGET`], or when
/// the brute-force minimum and the dual route disagree by more than
/// [`EXACT_TOL`].
pub fn exact_optimal_cvar_multi(
    inst: &TinyInstance,
    x0: usize,
    alphas: &[RiskLevel],
) -> Result<Vec<OracleResult>, OracleError> {
    let count = inst.policy_count(x0);
    if count > ENUMERATION_BUDGET {
        return Err(OracleError::Budget {
            count,
            budget: ENUMERATION_BUDGET,
        });
    }
    let mut best: Vec<(f64, AugmentedPolicy)> = vec![(f64::INFINITY, AugmentedPolicy::default()); alphas.len()];
    let start = BTreeMap::from([((x0, 0.0f64.to_bits()), 1.0)]);
    enumerate_layers(inst, 0, start, &mut AugmentedPolicy::default(), &mut |law, policy| {
        for (k, &alpha) in alphas.iter().enumerate() {
            let v = cvar_dual_on_atoms(law, alpha).0;
            if v < best[k].0 {
                best[k] = (v, policy.clone());
            }
        }
    })?;

    let support = inst.y_support();
    let excess: Vec<f64> = support.iter().map(|&s| exact_excess_value(inst, x0, s)).collect();
    alphas
        .iter()
        .zip(best)
        .map(|(&alpha, (value, best_policy))| {
            let dual_value = support
                .iter()
                .zip(&excess)
                .map(|(s, e)| s + e / alpha.get())
                .fold(f64::INFINITY, f64::min);
            if (dual_value - value).abs() > EXACT_TOL {
                return Err(OracleError::ExchangeMismatch {
                    brute: value,
                    dual: dual_value,
                });
            }
            Ok(OracleResult {
                alpha: alpha.get(),
                value,
                best_policy,
                dual_value,
            })
        })
        .collect()
}

/// Brute-force optimal CVaR from `x0` at level `alpha`.
pub fn exact_optimal_cvar(inst: &TinyInstance, x0: usize, alpha: RiskLevel) -> Result<OracleResult, OracleError> {
    Ok(exact_optimal_cvar_multi(inst, x0, &[alpha])?.remove(0))
}

/// Visit every feedback policy restricted to the points it actually reaches.
fn enumerate_layers(
    inst: &TinyInstance,
    t: usize,
    dist: BTreeMap<(usize, u64), f64>,
    policy: &mut AugmentedPolicy,
    visit: &mut dyn FnMut(&Pmf, &AugmentedPolicy),
) -> Result<(), OracleError> {
    if t == inst.horizon {
        visit(&terminal_law(inst, &dist)?, policy);
        return Ok(());
    }
    let keys: Vec<((usize, u64), f64)> = dist.into_iter().collect();
    let mut choice = vec![0usize; keys.len()];
    loop {
        let mut next = BTreeMap::new();
        for (&((x, zb), mass), &a) in keys.iter().zip(&choice) {
            let z = f64::from_bits(zb);
            policy.insert(t, x, z, a);
            push_successors(inst, x, z, a, mass, &mut next);
        }
        enumerate_layers(inst, t + 1, next, policy, visit)?;
        if !advance(&mut choice, inst.n_actions) {
            break;
        }
    }
    for &((x, zb), _) in &keys {
        policy.actions.remove(&(t, x, zb));
    }
    Ok(())
}

/// Mixed-radix increment; `false` once every combination has been seen.
fn advance(choice: &mut [usize], radix: usize) -> bool {
    for c in choice.iter_mut() {
        *c += 1;
        if *c < radix {
            return true;
        }
        *c = 0;
    }
    false
}

/// Brute-force optimal CVaR over history-dependent deterministic policies
/// (actions may depend on the whole disturbance history).
pub fn exact_optimal_cvar_history(inst: &TinyInstance, x0: usize, alpha: RiskLevel) -> Result<f64, OracleError> {
    // (x, z, mass) per distinct history
    fn go(
        inst: &TinyInstance,
        t: usize,
        paths: Vec<(usize, f64, f64)>,
        alpha: RiskLevel,
        budget: &mut f64,
    ) -> Result<f64, OracleError> {
        if t == inst.horizon {
            let atoms = paths.iter().map(|&(x, z, m)| (inst.terminal[x].max(z), m));
            let total: f64 = paths.iter().map(|p| p.2).sum();
            let law = Pmf::new(atoms.map(|(v, m)| (v, m / total)))?;
            return Ok(cvar_dual_on_atoms(&law, alpha).0);
        }
        *budget -= (inst.n_actions as f64).powi(paths.len() as i32);
        if *budget < 0.0 {
            return Err(OracleError::Budget {
                count: ENUMERATION_BUDGET - *budget,
                budget: ENUMERATION_BUDGET,
            });
        }
        let mut choice = vec![0usize; paths.len()];
        let mut best = f64::INFINITY;
        loop {
            let mut next = Vec::new();
            for (&(x, z, m), &a) in paths.iter().zip(&choice) {
                let z2 = z.max(inst.stage[x][a]);
                for &(nx, p) in &inst.outcomes[x][a] {
                    if p > 0.0 {
                        next.push((nx, z2, m * p));
                    }
                }
            }
            best = best.min(go(inst, t + 1, next, alpha, budget)?);
            if !advance(&mut choice, inst.n_actions) {
                break;
            }
        }
        Ok(best)
    }
    let mut budget = ENUMERATION_BUDGET;
    go(inst, 0, vec![(x0, 0.0, 1.0)], alpha, &mut budget)
}

/// Risk levels every corpus instance is checked at.
pub const CHECK_ALPHAS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    pub name: String,
    /// Largest |grid pipeline − brute force| over initial states and levels.
    pub pipeline_gap: f64,
    /// Largest |dual route − brute force|.
    pub exchange_gap: f64,
    /// Largest |CVaR of the synthesized policy − brute force|.
    pub synthesized_gap: f64,
    /// Largest amount by which a history-dependent policy beat the feedback
    /// optimum (0 when not checked).
    pub history_gain: f64,
    pub history_checked: bool,
    pub passed: bool,
}

/// Compare the grid pipeline against the brute force on every initial state
/// and every level in [`CHECK_ALPHAS`].
pub fn verify_instance(inst: &TinyInstance) -> Result<InstanceReport, OracleError> {
    let alphas: Vec<RiskLevel> = CHECK_ALPHAS
        .iter()
        .map(|&a| RiskLevel::new(a))
        .collect::<Result<_, _>>()?;
    let grid = inst.exact_grid()?;
    let solver = DpSolver::new(inst, &grid)?;
    let sweep = sweep_with(&solver, |_, _| {})?;
    let history_checked = inst.horizon <= 2;
    let mut report = InstanceReport {
        name: inst.name.clone(),
        pipeline_gap: 0.0,
        exchange_gap: 0.0,
        synthesized_gap: 0.0,
        history_gain: 0.0,
        history_checked,
        passed: false,
    };
    for (k, &alpha) in alphas.iter().enumerate() {
        let surface = risk_value(&sweep, alpha);
        for x0 in 0..inst.n_states {
            let exact = match exact_optimal_cvar_multi(inst, x0, &alphas) {
                Ok(mut r) => r.swap_remove(k),
                Err(OracleError::ExchangeMismatch { brute, dual }) => {
                    report.exchange_gap = report.exchange_gap.max((brute - dual).abs());
                    continue;
                }
                Err(e) => return Err(e),
            };
            report.exchange_gap = report.exchange_gap.max((exact.dual_value - exact.value).abs());
            report.pipeline_gap = report.pipeline_gap.max((surface.v_star[x0] - exact.value).abs());

            let (_, tables) = solver.solve(surface.s_star[x0])?;
            let policy = AugmentedPolicy::from_tables(inst, &grid, &tables, x0);
            let achieved = exact_policy_cvar(inst, x0, &policy, alpha)?;
            report.synthesized_gap = report.synthesized_gap.max((achieved - exact.value).abs());

            if history_checked {
                let h = exact_optimal_cvar_history(inst, x0, alpha)?;
                report.history_gain = report.history_gain.max(exact.value - h);
            }
        }
    }
    report.passed = report.pipeline_gap <= EXACT_TOL
        && report.exchange_gap <= EXACT_TOL
        && report.synthesized_gap <= EXACT_TOL
        && report.history_gain <= EXACT_TOL;
    Ok(report)
}

/// Verify every instance in parallel; reports come back in input order.
pub fn verify_corpus(corpus: &[TinyInstance]) -> Vec<Result<InstanceReport, OracleError>> {
    corpus.par_iter().map(verify_instance).collect()
}

/// Generator settings for random corpora.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLimits {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_atoms: usize,
    pub max_horizon: usize,
    /// Cap on [`TinyInstance::policy_count`] for every initial state.
    pub max_policies: f64,
}

impl Default for GeneratorLimits {
    fn default() -> Self {
        Self {
            max_states: 3,
            max_actions: 3,
            max_atoms: 3,
            max_horizon: 3,
            max_policies: ENUMERATION_BUDGET,
        }
    }
}

const COST_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Draw a random instance; draws that exceed the policy cap are rejected
/// and redrawn from the same stream.
pub fn random_instance(rng: &mut ChaCha8Rng, name: &str, limits: GeneratorLimits) -> TinyInstance {
    loop {
        let n = rng.random_range(1..=limits.max_states);
        let m = rng.random_range(1..=limits.max_actions);
        let horizon = rng.random_range(1..=limits.max_horizon);
        let action_dependent = rng.random_bool(0.5);
        let mut level = || COST_LEVELS[rng.random_range(0..COST_LEVELS.len())];
        let terminal: Vec<f64> = (0..n).map(|_| level()).collect();
        let stage: Vec<Vec<f64>> = (0..n)
            .map(|x| {
                if action_dependent {
                    (0..m).map(|_| level()).collect()
                } else {
                    vec![terminal[x]; m]
                }
            })
            .collect();
        let outcomes = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let k = rng.random_range(1..=limits.max_atoms);
                        let weights: Vec<u32> = (0..k).map(|_| rng.random_range(1..=4)).collect();
                        let total: u32 = weights.iter().sum();
                        weights
                            .iter()
                            .map(|&wgt| (rng.random_range(0..n), f64::from(wgt) / f64::from(total)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let inst =
            TinyInstance::new(name, horizon, 1.0, terminal, stage, outcomes).expect("generated tables are well formed");
        if (0..n).all(|x0| inst.policy_count(x0) <= limits.max_policies) {
            return inst;
        }
    }
}

/// `count` random instances from one seeded stream.
pub fn generate_corpus(seed: u64, count: usize, limits: GeneratorLimits) -> Vec<TinyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| random_instance(&mut rng, &format!("tiny-{seed}-{i:03}"), limits))
        .collect()
}

/// Serialize instances in the line-based corpus format read by [`parse_corpus`].
pub fn write_corpus(corpus: &[TinyInstance]) -> String {
    let mut out = String::from(
        "# tiny-instance corpus\n\
         # stage <x> <cost for each action>\n\
         # outcome <x> <a> <successor>:<probability> ...\n",
    );
    for inst in corpus {
        let _ = writeln!(out, "\ninstance {}", inst.name);
        let _ = writeln!(out, "states {}", inst.n_states);
        let _ = writeln!(out, "actions {}", inst.n_actions);
        let _ = writeln!(out, "horizon {}", inst.horizon);
        let _ = writeln!(out, "c_bar {}", inst.c_bar);
        let _ = writeln!(out, "terminal {}", join(&inst.terminal));
        for (x, row) in inst.stage.iter().enumerate() {
            let _ = writeln!(out, "stage {x} {}", join(row));
        }
        for (x, row) in inst.outcomes.iter().enumerate() {
            for (a, atoms) in row.iter().enumerate() {
                let atoms: Vec<String> = atoms.iter().map(|(n, p)| format!("{n}:{p}")).collect();
                let _ = writeln!(out, "outcome {x} {a} {}", atoms.join(" "));
            }
        }
        out.push_str("end\n");
    }
    out
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Default)]
struct Draft {
    name: String,
    start_line: usize,
    states: Option<usize>,
    actions: Option<usize>,
    horizon: Option<usize>,
    c_bar: Option<f64>,
    terminal: Option<Vec<f64>>,
    stage: BTreeMap<usize, Vec<f64>>,
    outcomes: BTreeMap<(usize, usize), Vec<(usize, f64)>>,
}

/// Parse a corpus file. Errors carry the 1-based line number.
pub fn parse_corpus(text: &str) -> Result<Vec<TinyInstance>, OracleError> {
    let mut out = Vec::new();
    let mut draft: Option<Draft> = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let err = |msg: String| OracleError::Parse { line: line_no, msg };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        if key == "instance" {
            if draft.is_some() {
                return Err(err("`instance` before the previous `end`".into()));
            }
            let name = rest.first().ok_or_else(|| err("missing instance name".into()))?;
            draft = Some(Draft {
                name: (*name).to_string(),
                start_line: line_no,
                ..Draft::default()
            });
            continue;
        }
        let d = draft
            .as_mut()
            .ok_or_else(|| err(format!("`{key}` outside an instance block")))?;
        match key {
            "states" => d.states = Some(parse_one(&rest, line_no)?),
            "actions" => d.actions = Some(parse_one(&rest, line_no)?),
            "horizon" => d.horizon = Some(parse_one(&rest, line_no)?),
            "c_bar" => d.c_bar = Some(parse_one(&rest, line_no)?),
            "terminal" => d.terminal = Some(parse_all(&rest, line_no)?),
            "stage" => {
                let (x, costs) = rest.split_first().ok_or_else(|| err("missing state".into()))?;
                let x: usize = parse_tok(x, line_no)?;
                d.stage.insert(x, parse_all(costs, line_no)?);
            }
            "outcome" => {
                if rest.len() < 3 {
                    return Err(err("expected `outcome <x> <a> <next>:<prob> ...`".into()));
                }
                let x: usize = parse_tok(rest[0], line_no)?;
                let a: usize = parse_tok(rest[1], line_no)?;
                let atoms = rest[2..]
                    .iter()
                    .map(|tok| {
                        let (n, p) = tok
                            .split_once(':')
                            .ok_or_else(|| err(format!("atom `{tok}` is not <next>:<prob>")))?;
                        Ok((parse_tok(n, line_no)?, parse_tok(p, line_no)?))
                    })
                    .collect::<Result<Vec<_>, OracleError>>()?;
                d.outcomes.insert((x, a), atoms);
            }
            "end" => {
                let d = draft.take().unwrap();
                out.push(finish(d, line_no)?);
            }
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    if let Some(d) = draft {
        return Err(OracleError::Parse {
            line: last_line,
            msg: format!("instance `{}` (line {}) has no `end`", d.name, d.start_line),
        });
    }
    Ok(out)
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, OracleError> {
    tok.parse().map_err(|_| OracleError::Parse {
        line,
        msg: format!("cannot parse `{tok}`"),
    })
}

fn parse_one<T: std::str::FromStr>(rest: &[&str], line: usize) -> Result<T, OracleError> {
    match rest {
        [tok] => parse_tok(tok, line),
        _ => Err(OracleError::Parse {
            line,
            msg: format!("expected one value, found {}", rest.len()),
        }),
    }
}

fn parse_all(rest: &[&str], line: usize) -> Result<Vec<f64>, OracleError> {
    rest.iter().map(|t| parse_tok(t, line)).collect()
}

fn finish(d: Draft, end_line: usize) -> Result<TinyInstance, OracleError> {
    let err = |msg: String| OracleError::Parse { line: end_line, msg };
    let missing = |what: &str| err(format!("instance `{}` is missing `{what}`", d.name));
    let n = d.states.ok_or_else(|| missing("states"))?;
    let m = d.actions.ok_or_else(|| missing("actions"))?;
    let horizon = d.horizon.ok_or_else(|| missing("horizon"))?;
    let c_bar = d.c_bar.ok_or_else(|| missing("c_bar"))?;
    let terminal = d.terminal.ok_or_else(|| missing("terminal"))?;
    if terminal.len() != n {
        return Err(err(format!("`terminal` has {} entries, expected {n}", terminal.len())));
    }
    let mut stage = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for x in 0..n {
        let row = d.stage.get(&x).ok_or_else(|| missing(&format!("stage {x}")))?;
        if row.len() != m {
            return Err(err(format!("`stage {x}` has {} entries, expected {m}", row.len())));
        }
        stage.push(row.clone());
        let mut orow = Vec::with_capacity(m);
        for a in 0..m {
            orow.push(
                d.outcomes
                    .get(&(x, a))
                    .ok_or_else(|| missing(&format!("outcome {x} {a}")))?
                    .clone(),
            );
        }
        outcomes.push(orow);
    }
    TinyInstance::new(d.name.clone(), horizon, c_bar, terminal, stage, outcomes).map_err(|e| match e {
        OracleError::Invalid { msg, .. } => err(msg),
        other => other,
    })
}
