//! Helpers shared by the integration test targets. Nothing here calls into
//! the crate's grid or DP code.

#![allow(dead_code)]

use std::f64::consts::PI;

use cvar_safety::model::ControlSystem;
use cvar_safety::stormwater::{moment_matched_runoff, Design, Stormwater, StormwaterParams};
use cvar_safety::Pmf;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random pmf with 1–8 atoms; about a third of the draws sit on a coarse
/// lattice so ties and repeated values show up.
pub fn random_pmf(rng: &mut ChaCha8Rng) -> Pmf {
    let k = rng.random_range(1..=8);
    let lattice = rng.random_bool(0.35);
    let atoms: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            let v = if lattice {
                f64::from(rng.random_range(-8..=8)) * 0.5
            } else {
                rng.random_range(-5.0..5.0)
            };
            (v, rng.random_range(0.01..1.0))
        })
        .collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    Pmf::new(atoms.into_iter().map(|(v, p)| (v, p / total))).unwrap()
}

/// Bracketing index and upper weight of `v` on sorted `nodes`.
fn bracket(nodes: &[f64], v: f64) -> (usize, f64) {
    if nodes.len() == 1 {
        return (0, 0.0);
    }
    let hi = nodes.partition_point(|&n| n < v).clamp(1, nodes.len() - 1);
    let lo = hi - 1;
    if v == nodes[hi] {
        return (lo, 1.0);
    }
    (lo, ((v - nodes[lo]) / (nodes[hi] - nodes[lo])).clamp(0.0, 1.0))
}

/// Tensor-product table over `axes`, last axis fastest.
pub struct Table<'a> {
    pub axes: &'a [Vec<f64>],
    pub data: Vec<f64>,
}

impl Table<'_> {
    fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.axes).fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    /// Multilinear interpolation by summing over the 2^d corners.
    pub fn eval(&self, p: &[f64]) -> f64 {
        let br: Vec<(usize, f64)> = p.iter().zip(self.axes).map(|(&v, a)| bracket(a, v)).collect();
        let d = br.len();
        let mut total = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = Vec::with_capacity(d);
            for (k, &(lo, t)) in br.iter().enumerate() {
                let up = corner >> k & 1 == 1;
                let n = self.axes[k].len();
                if up && n == 1 {
                    w = 0.0;
                    break;
                }
                w *= if up { t } else { 1.0 - t };
                idx.push(if up { lo + 1 } else { lo });
            }
            if w != 0.0 {
                total += w * self.data[self.offset(&idx)];
            }
        }
        total
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts = vec![Vec::new()];
    for a in axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                a.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

/// `min_π E[max_t c]` on the tensor grid `x_axes × z_nodes` with a finite
/// action list, returning the value at `z = 0` for every state node
/// (row-major, first state axis slowest). Written from scratch: plain loops,
/// its own interpolation and no caching.
pub fn expectation_dp(model: &dyn ControlSystem, x_axes: &[Vec<f64>], z_nodes: &[f64], actions: &[f64]) -> Vec<f64> {
    let mut axes: Vec<Vec<f64>> = x_axes.to_vec();
    axes.push(z_nodes.to_vec());
    let states = cartesian(x_axes);
    let mut data = Vec::with_capacity(states.len() * z_nodes.len());
    for x in &states {
        for &z in z_nodes {
            data.push(model.terminal_cost(x).max(z));
        }
    }
    let mut next = Table { axes: &axes, data };
    for _ in 0..model.horizon() {
        let mut data = Vec::with_capacity(next.data.len());
        for x in &states {
            for &z in z_nodes {
                let mut best = f64::INFINITY;
                for &u in actions {
                    let z2 = z.max(model.stage_cost(x, u));
                    let mut q = 0.0;
                    for (w, p) in model.disturbance(x, u).atoms() {
                        let mut pt = model.step(x, u, w);
                        pt.push(z2);
                        q += p * next.eval(&pt);
                    }
                    best = best.min(q);
                }
                data.push(best);
            }
        }
        next = Table { axes: &axes, data };
    }
    let nz = z_nodes.len();
    (0..states.len()).map(|i| next.data[i * nz]).collect()
}

pub fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Pump flow for design b computed from the piecewise description of the
/// start-up ramp, independent of either crate routine.
pub fn pump_reference(p: &StormwaterParams, x: &[f64], u: f64) -> f64 {
    let pump = p.pump.unwrap();
    let ramp = |level: f64| {
        if level < pump.z_p - pump.eps {
            0.0
        } else if level > pump.z_p + pump.eps {
            1.0
        } else {
            (level - (pump.z_p - pump.eps)) / (2.0 * pump.eps)
        }
    };
    if u < 0.0 {
        -u * pump.q_pump_max * ramp(x[0])
    } else {
        -u * pump.q_pump_max * ramp(x[1])
    }
}

/// Torricelli outflow through a circular orifice of radius `r` at head `h`.
pub fn orifice(c_d: f64, g: f64, r: f64, h: f64) -> f64 {
    c_d * PI * r * r * (2.0 * g * h.max(0.0)).sqrt()
}

pub fn model(design: Design) -> Stormwater {
    Stormwater::new(StormwaterParams::for_design(design), design, moment_matched_runoff()).unwrap()
}
