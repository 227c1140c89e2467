//! Risk functionals on finite real-valued distributions.
//!
//! Everything here works on the induced law of a bounded cost `Y`, held as a
//! [`Pmf`]: sorted, de-duplicated atoms with nonnegative masses summing to one.
//!
//! ```text
//! VaR_α(Y)  = inf { y : P(Y ≤ y) ≥ 1 − α }
//! CVaR_α(Y) = min_s  s + E[max(Y − s, 0)] / α
//! ```
//!
//! For a finite pmf the minimizer of the dual form sits on an atom, so
//! evaluating the dual objective on the atom values is exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ p_i = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Two objective values closer than this (relative) are treated as a tie;
/// the earlier candidate wins.
pub(crate) const TIE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CvarError {
    #[error("risk level {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("pmf has no atoms")]
    EmptyPmf,
    #[error("atom {index}: non-finite value or probability ({value}, {prob})")]
    NonFinite { index: usize, value: f64, prob: f64 },
    #[error("atom {index}: negative probability {prob}")]
    NegativeProb { index: usize, prob: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    BadTotal(f64),
    #[error("dual-parameter grid is empty")]
    EmptyGrid,
    #[error("tail representation requires alpha < 1 (got {0})")]
    TailAtOne(f64),
}

/// `alpha ∈ (0, 1]`: the fraction of worst outcomes CVaR averages over.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(alpha: f64) -> Result<Self, CvarError> {
        if alpha.is_finite() && alpha > 0.0 && alpha <= 1.0 {
            Ok(Self(alpha))
        } else {
            Err(CvarError::InvalidAlpha(alpha))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RiskLevel {
    type Error = CvarError;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<RiskLevel> for f64 {
    fn from(a: RiskLevel) -> f64 {
        a.0
    }
}

/// Finite probability mass function on the real line.
///
/// Construction sorts atoms ascending, merges equal values and drops
/// zero-mass atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, CvarError> {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().collect();
        if atoms.is_empty() {
            return Err(CvarError::EmptyPmf);
        }
        for (index, &(value, prob)) in atoms.iter().enumerate() {
            if !value.is_finite() || !prob.is_finite() {
                return Err(CvarError::NonFinite { index, value, prob });
            }
            if prob < 0.0 {
                return Err(CvarError::NegativeProb { index, prob });
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(CvarError::BadTotal(total));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut probs: Vec<f64> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            if p == 0.0 {
                continue;
            }
            match values.last() {
                Some(&last) if last == v => *probs.last_mut().unwrap() += p,
                _ => {
                    values.push(v);
                    probs.push(p);
                }
            }
        }
        if values.is_empty() {
            return Err(CvarError::EmptyPmf);
        }
        Ok(Self { values, probs })
    }

    /// Point mass at `value`.
    pub fn degenerate(value: f64) -> Self {
        Self {
            values: vec![value],
            probs: vec![1.0],
        }
    }

    /// Empirical law of a sample: each distinct value weighted by its frequency.
    pub fn from_samples(samples: &[f64]) -> Result<Self, CvarError> {
        if samples.is_empty() {
            return Err(CvarError::EmptyPmf);
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut values = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for v in sorted {
            if !v.is_finite() {
                return Err(CvarError::NonFinite {
                    index: values.len(),
                    value: v,
                    prob: 1.0 / n,
                });
            }
            match values.last() {
                Some(&last) if last == v => *counts.last_mut().unwrap() += 1,
                _ => {
                    values.push(v);
                    counts.push(1);
                }
            }
        }
        let probs = counts.into_iter().map(|c| c as f64 / n).collect();
        Ok(Self { values, probs })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_value(&self) -> f64 {
        self.values[0]
    }

    pub fn max_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms().map(|(v, p)| p * (v - m) * (v - m)).sum()
    }

    /// Standardized third central moment.
    pub fn skewness(&self) -> f64 {
        let m = self.mean();
        let var = self.variance();
        let m3: f64 = self.atoms().map(|(v, p)| p * (v - m).powi(3)).sum();
        m3 / var.powf(1.5)
    }

    /// Law of `Y + a`.
    pub fn shifted(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v + a).collect(),
            probs: self.probs.clone(),
        }
    }

    /// Inverse-CDF sampling from a uniform draw `u ∈ [0, 1)`.
    pub fn quantile_draw(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (v, p) in self.atoms() {
            acc += p;
            if u < acc {
                return v;
            }
        }
        self.max_value()
    }
}

/// Left-side `(1 − α)`-quantile.
pub fn var(dist: &Pmf, alpha: RiskLevel) -> f64 {
    let level = 1.0 - alpha.get();
    let mut cdf = 0.0;
    for (v, p) in dist.atoms() {
        cdf += p;
        if cdf >= level - PROB_SUM_TOL {
            return v;
        }
    }
    dist.max_value()
}

/// `E[max(Y − s, 0)]`.
pub fn expected_excess(dist: &Pmf, s: f64) -> f64 {
    dist.atoms().map(|(v, p)| p * (v - s).max(0.0)).sum()
}

/// Dual objective `s + E[max(Y − s, 0)] / α`.
pub fn dual_objective(dist: &Pmf, alpha: RiskLevel, s: f64) -> f64 {
    s + expected_excess(dist, s) / alpha.get()
}

/// Index of the smallest entry; ties (within [`TIE_REL_TOL`]) go to the
/// earliest index.
pub(crate) fn first_argmin(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v < b - TIE_REL_TOL * (1.0 + b.abs()) => best = Some((i, v)),
            _ => {}
        }
    }
    best
}

/// CVaR by scanning the dual objective over `s_grid`.
///
/// Returns `(value, s_star)` with `s_star` the smallest grid point attaining
/// the minimum. Exact for a finite pmf when every atom value is on the grid.
pub fn cvar_dual(dist: &Pmf, alpha: RiskLevel, s_grid: &[f64]) -> Result<(f64, f64), CvarError> {
    let mut grid = s_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let (i, value) = first_argmin(grid.iter().map(|&s| dual_objective(dist, alpha, s))).ok_or(CvarError::EmptyGrid)?;
    Ok((value, grid[i]))
}

/// [`cvar_dual`] with the grid set to the atom values.
pub fn cvar_dual_on_atoms(dist: &Pmf, alpha: RiskLevel) -> (f64, f64) {
    cvar_dual(dist, alpha, dist.values()).expect("pmf is never empty")
}

/// CVaR through the quantile: `VaR + E[max(Y − VaR, 0)] / α`, for `α < 1`.
pub fn cvar_tail(dist: &Pmf, alpha: RiskLevel) -> Result<f64, CvarError> {
    if alpha.get() >= 1.0 {
        return Err(CvarError::TailAtOne(alpha.get()));
    }
    let q = var(dist, alpha);
    Ok(q + expected_excess(dist, q) / alpha.get())
}
