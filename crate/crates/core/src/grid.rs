//! Rectilinear grids and multilinear interpolation stencils.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ControlSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("axis needs at least {min} nodes (got {got})")]
    TooFewNodes { min: usize, got: usize },
    #[error("axis nodes must be finite and strictly increasing")]
    NotIncreasing,
    #[error("uniform axis needs lo < hi (got [{lo}, {hi}])")]
    EmptyRange { lo: f64, hi: f64 },
    #[error("{axis} axis does not match the model: {detail}")]
    Mismatch { axis: &'static str, detail: String },
    #[error("query {value} outside axis range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
}

/// Interpolation weights: `(flat node index, weight)` pairs with nonzero weight.
pub type Stencil = Vec<(usize, f64)>;

/// Sorted one-dimensional node set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    nodes: Vec<f64>,
}

impl Axis {
    /// `count` evenly spaced nodes; the endpoints are exactly `lo` and `hi`.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self, GridError> {
        if count < 2 {
            return Err(GridError::TooFewNodes { min: 2, got: count });
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(GridError::EmptyRange { lo, hi });
        }
        let last = (count - 1) as f64;
        let mut nodes: Vec<f64> = (0..count).map(|i| lo + (hi - lo) * (i as f64 / last)).collect();
        nodes[count - 1] = hi;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, GridError> {
        if nodes.is_empty() {
            return Err(GridError::TooFewNodes { min: 1, got: 0 });
        }
        if nodes.iter().any(|v| !v.is_finite()) || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::NotIncreasing);
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Largest gap between neighbouring nodes (0 for a single node).
    pub fn max_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Linear-interpolation weights for `v`. A query that hits a node exactly
    /// yields that node alone with weight 1.
    pub fn stencil(&self, v: f64) -> Result<[(usize, f64); 2], GridError> {
        let (lo, hi) = (self.lo(), self.hi());
        if !(v >= lo && v <= hi) {
            return Err(GridError::OutOfRange { value: v, lo, hi });
        }
        let n = self.nodes.len();
        if n == 1 {
            return Ok([(0, 1.0), (0, 0.0)]);
        }
        let i = self
            .nodes
            .partition_point(|&node| node <= v)
            .saturating_sub(1)
            .min(n - 2);
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        let t = (v - a) / (b - a);
        Ok([(i, 1.0 - t), (i + 1, t)])
    }

    /// Index of the closest node; ties go to the lower node.
    pub fn nearest(&self, v: f64) -> usize {
        let i = self.nodes.partition_point(|&node| node < v);
        if i == 0 {
            return 0;
        }
        if i == self.nodes.len() {
            return i - 1;
        }
        if v - self.nodes[i - 1] <= self.nodes[i] - v {
            i - 1
        } else {
            i
        }
    }
}

/// Tensor product of axes; flat indices are row-major (first axis slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectGrid {
    axes: Vec<Axis>,
}

impl RectGrid {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % axis.len();
            flat /= axis.len();
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, axis)| axis.nodes()[i])
            .collect()
    }

    pub fn stencil(&self, x: &[f64]) -> Result<Stencil, GridError> {
        let mut out: Stencil = vec![(0, 1.0)];
        for (axis, &v) in self.axes.iter().zip(x) {
            let corners = axis.stencil(v)?;
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(flat, w) in &out {
                for &(i, wi) in &corners {
                    if wi != 0.0 {
                        next.push((flat * axis.len() + i, w * wi));
                    }
                }
            }
            out = next;
        }
        Ok(out)
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = self.axes.iter().zip(x).map(|(a, &v)| a.nearest(v)).collect();
        self.flat_index(&idx)
    }
}

/// Discretization of the augmented space `S × [0, c̄]`, the action set and
/// the dual parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedGrid {
    pub x: RectGrid,
    pub z: Axis,
    pub actions: Axis,
    pub s: Axis,
}

impl AugmentedGrid {
    /// Uniform axes spanning the model bounds, `[0, c̄]` for `z` and `s`.
    pub fn uniform<M: ControlSystem + ?Sized>(
        model: &M,
        x_counts: &[usize],
        z_count: usize,
        action_count: usize,
        s_count: usize,
    ) -> Result<Self, GridError> {
        if x_counts.len() != model.state_dim() {
            return Err(GridError::Mismatch {
                axis: "x",
                detail: format!(
                    "{} counts for a {}-dimensional state",
                    x_counts.len(),
                    model.state_dim()
                ),
            });
        }
        let x_axes = model
            .state_bounds()
            .iter()
            .zip(x_counts)
            .map(|(b, &n)| Axis::uniform(b.lo, b.hi, n))
            .collect::<Result<Vec<_>, _>>()?;
        let a = model.action_bounds();
        Self::new(
            model,
            RectGrid::new(x_axes),
            Axis::uniform(0.0, model.c_bar(), z_count)?,
            Axis::uniform(a.lo, a.hi, action_count)?,
            Axis::uniform(0.0, model.c_bar(), s_count)?,
        )
    }

    /// Checks that the axes fit the model: `x` spans the state box, `z`
    /// spans `[0, c̄]`, actions and `s` stay inside their ranges.
    pub fn new<M: ControlSystem + ?Sized>(
        model: &M,
        x: RectGrid,
        z: Axis,
        actions: Axis,
        s: Axis,
    ) -> Result<Self, GridError> {
        let bounds = model.state_bounds();
        if x.dim() != bounds.len() {
            return Err(GridError::Mismatch {
                axis: "x",
                detail: format!("{} axes for {} state dimensions", x.dim(), bounds.len()),
            });
        }
        for (k, (axis, b)) in x.axes().iter().zip(bounds).enumerate() {
            if axis.lo() != b.lo || axis.hi() != b.hi {
                return Err(GridError::Mismatch {
                    axis: "x",
                    detail: format!(
                        "dimension {k} spans [{}, {}], state bounds are [{}, {}]",
                        axis.lo(),
                        axis.hi(),
                        b.lo,
                        b.hi
                    ),
                });
            }
        }
        let c_bar = model.c_bar();
        if z.lo() != 0.0 || z.hi() != c_bar {
            return Err(GridError::Mismatch {
                axis: "z",
                detail: format!("must span [0, {c_bar}] exactly"),
            });
        }
        let a = model.action_bounds();
        if actions.lo() < a.lo || actions.hi() > a.hi {
            return Err(GridError::Mismatch {
                axis: "action",
                detail: format!("nodes must lie in [{}, {}]", a.lo, a.hi),
            });
        }
        if s.lo() < 0.0 || s.hi() > c_bar {
            return Err(GridError::Mismatch {
                axis: "s",
                detail: format!("nodes must lie in [0, {c_bar}]"),
            });
        }
        Ok(Self { x, z, actions, s })
    }

    /// Number of `(x, z)` nodes.
    pub fn augmented_len(&self) -> usize {
        self.x.len() * self.z.len()
    }
}
