//! Artifact files. Every CSV starts with `# key=value` comment lines that
//! carry the config hash; numbers are written in shortest round-trip form so
//! a file read back reproduces the values bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::dp::{PolicyTable, ValueTable};
use crate::grid::AugmentedGrid;
use crate::runtime::RolloutBatch;
use crate::solver::{DualSweep, RiskSurface, SafeSetMask};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
}

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<(), ArtifactError> {
    let io = |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

pub fn read_file(path: &Path) -> Result<String, ArtifactError> {
    fs::read_to_string(path).map_err(|source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact structs serialize");
    text.push('\n');
    write_file(path, &text)
}

/// Level formatted for file names: `0.05`, `1`, `5e-5` stays `0.00005`.
pub fn level_tag(v: f64) -> String {
    format!("{v}")
}

pub fn surface_file(alpha: f64) -> String {
    format!("surface_alpha={}.csv", level_tag(alpha))
}

pub fn mask_file(alpha: f64, r: f64) -> String {
    format!("mask_alpha={}_r={}.csv", level_tag(alpha), level_tag(r))
}

fn preamble(meta: &[(&str, &str)]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k}={v}");
    }
    out
}

fn coord_header(dim: usize) -> String {
    (1..=dim).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

fn coords(grid: &AugmentedGrid, node: usize) -> String {
    grid.x
        .point(node)
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// One row per swept `s`: `s, V^s(node 0), V^s(node 1), …` with nodes in
/// row-major order (first state coordinate slowest).
pub fn sweep_csv(sweep: &DualSweep, config_hash: &str, problem_hash: &str) -> String {
    let mut out = preamble(&[("config_hash", config_hash), ("problem_hash", problem_hash)]);
    out.push('s');
    for i in 0..sweep.n_states() {
        let _ = write!(out, ",n{i}");
    }
    out.push('\n');
    for (s, row) in sweep.s_values.iter().zip(&sweep.v0) {
        out.push_str(&s.to_string());
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// A sweep file read back, with the hashes found in its preamble.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSweep {
    pub s_values: Vec<f64>,
    pub v0: Vec<Vec<f64>>,
    pub config_hash: Option<String>,
    pub problem_hash: Option<String>,
}

impl LoadedSweep {
    pub fn into_sweep(self, g_lower: f64) -> DualSweep {
        DualSweep {
            s_values: self.s_values,
            v0: self.v0,
            g_lower,
        }
    }
}

pub fn parse_sweep_csv(path: &Path, text: &str) -> Result<LoadedSweep, ArtifactError> {
    let err = |line: usize, msg: String| ArtifactError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut loaded = LoadedSweep {
        s_values: Vec::new(),
        v0: Vec::new(),
        config_hash: None,
        problem_hash: None,
    };
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(meta) = line.strip_prefix("# ") {
            match meta.split_once('=') {
                Some(("config_hash", v)) => loaded.config_hash = Some(v.to_string()),
                Some(("problem_hash", v)) => loaded.problem_hash = Some(v.to_string()),
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if width.is_none() {
            if !line.starts_with("s,") {
                return Err(err(line_no, "expected the `s,n0,…` header".into()));
            }
            width = Some(line.split(',').count());
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if Some(fields.len()) != width {
            return Err(err(
                line_no,
                format!("expected {} fields, found {}", width.unwrap(), fields.len()),
            ));
        }
        let nums = fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| err(line_no, format!("cannot parse `{f}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        loaded.s_values.push(nums[0]);
        loaded.v0.push(nums[1..].to_vec());
    }
    if loaded.s_values.is_empty() {
        return Err(err(text.lines().count(), "no sweep rows".into()));
    }
    Ok(loaded)
}

/// `x1, …, v_star, w_star, s_star` per state node.
pub fn surface_csv(grid: &AugmentedGrid, surface: &RiskSurface, config_hash: &str) -> String {
    let alpha = surface.alpha.to_string();
    let mut out = preamble(&[("config_hash", config_hash), ("alpha", &alpha)]);
    let _ = writeln!(out, "{},v_star,w_star,s_star", coord_header(grid.x.dim()));
    for node in 0..grid.x.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            coords(grid, node),
            surface.v_star[node],
            surface.w_star[node],
            surface.s_star[node]
        );
    }
    out
}

/// `x1, …, in_set` per state node.
pub fn mask_csv(grid: &AugmentedGrid, mask: &SafeSetMask, config_hash: &str) -> String {
    let (alpha, r) = (mask.alpha.to_string(), mask.r.to_string());
    let mut out = preamble(&[("config_hash", config_hash), ("alpha", &alpha), ("r", &r)]);
    let _ = writeln!(out, "{},in_set", coord_header(grid.x.dim()));
    for node in 0..grid.x.len() {
        let _ = writeln!(out, "{},{}", coords(grid, node), u8::from(mask.mask[node]));
    }
    out
}

fn index_header(dim: usize) -> String {
    (1..=dim).map(|i| format!("i{i}")).collect::<Vec<_>>().join(",")
}

fn table_csv(grid: &AugmentedGrid, s: f64, n_z: usize, layers: &[Vec<f64>], column: &str, config_hash: &str) -> String {
    let s = s.to_string();
    let mut out = preamble(&[("config_hash", config_hash), ("s", &s)]);
    let _ = writeln!(out, "t,{},z_index,{column}", index_header(grid.x.dim()));
    for (t, layer) in layers.iter().enumerate() {
        for (flat, v) in layer.iter().enumerate() {
            let (node, zi) = (flat / n_z, flat % n_z);
            let idx: Vec<String> = grid.x.multi_index(node).iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{t},{},{zi},{v}", idx.join(","));
        }
    }
    out
}

/// `t, i1, …, z_index, value` for `t = 0..=N`; indices refer to the grid axes.
pub fn value_table_csv(grid: &AugmentedGrid, table: &ValueTable, config_hash: &str) -> String {
    table_csv(grid, table.s, table.n_z, &table.values, "value", config_hash)
}

/// `t, i1, …, z_index, action` for `t = 0..N−1`.
pub fn policy_table_csv(grid: &AugmentedGrid, table: &PolicyTable, config_hash: &str) -> String {
    table_csv(grid, table.s, table.n_z, &table.actions, "action", config_hash)
}

/// `rollout_id, t, x1, …, z, u, w`; the final row of each rollout has empty
/// `u` and `w`.
pub fn rollouts_csv(batch: &RolloutBatch, dim: usize, config_hash: &str) -> String {
    let seed = batch.seed.to_string();
    let mut out = preamble(&[("config_hash", config_hash), ("seed", &seed)]);
    let _ = writeln!(out, "rollout_id,t,{},z,u,w", coord_header(dim));
    for (id, path) in batch.trajectories.iter().flatten().enumerate() {
        for t in 0..path.x.len() {
            let x: Vec<String> = path.x[t].iter().map(f64::to_string).collect();
            let (u, w) = match (path.u.get(t), path.w.get(t)) {
                (Some(u), Some(w)) => (u.to_string(), w.to_string()),
                _ => (String::new(), String::new()),
            };
            let _ = writeln!(out, "{id},{t},{},{},{u},{w}", x.join(","), path.z[t]);
        }
    }
    out
}

/// Grid description embedded in JSON summaries.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub x_nodes: Vec<usize>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub z_nodes: usize,
    pub action_nodes: usize,
    pub action_lo: f64,
    pub action_hi: f64,
    pub s_values: Vec<f64>,
}

impl GridSpec {
    pub fn of(grid: &AugmentedGrid) -> Self {
        let axes = grid.x.axes();
        Self {
            x_nodes: axes.iter().map(|a| a.len()).collect(),
            x_lo: axes.iter().map(|a| a.lo()).collect(),
            x_hi: axes.iter().map(|a| a.hi()).collect(),
            z_nodes: grid.z.len(),
            action_nodes: grid.actions.len(),
            action_lo: grid.actions.lo(),
            action_hi: grid.actions.hi(),
            s_values: grid.s.nodes().to_vec(),
        }
    }
}
