//! Run configuration: a nested TOML file whose defaults reproduce the
//! baseline two-tank problem.
//!
//! ```toml
//! [model]
//! design = "b"              # a | b | c | d
//! [model.params]            # any subset of the physical parameters
//! a2 = 11000.0
//! [disturbance]
//! kind = "custom"           # moment-matched | smoke | custom
//! atoms = [[10.0, 0.5], [14.4, 0.5]]
//! [grid]
//! x = [25, 25]
//! z = 11
//! actions = 11
//! s = 21
//! [run]
//! alpha = [0.99, 0.05]
//! r = [1.0]
//! ```
//!
//! Parameters left out of `[model.params]` take the defaults of the chosen
//! design, so an empty file is the baseline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cvar::{Pmf, RiskLevel};
use crate::grid::{AugmentedGrid, GridError};
use crate::model::{ControlSystem, ModelError};
use crate::oracle::{parse_corpus, write_corpus, TinyInstance};
use crate::runtime::ControlLookup;
use crate::stormwater::{moment_matched_runoff, smoke_runoff, Design, Stormwater, StormwaterParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Invalid { path: String, msg: String },
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

fn invalid(path: impl Into<String>, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        msg: msg.to_string(),
    }
}

/// A finite instance taken from a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyRef {
    pub corpus: PathBuf,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub design: Design,
    pub params: StormwaterParams,
    /// Replaces the two-tank model when present.
    pub tiny: Option<TinyRef>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            design: Design::A,
            params: StormwaterParams::default(),
            tiny: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    #[default]
    MomentMatched,
    Smoke,
    /// `(value, probability)` pairs in cfs.
    Custom {
        atoms: Vec<[f64; 2]>,
    },
}

impl DisturbanceSpec {
    pub fn pmf(&self) -> Result<Pmf, ConfigError> {
        match self {
            Self::MomentMatched => Ok(moment_matched_runoff()),
            Self::Smoke => Ok(smoke_runoff()),
            Self::Custom { atoms } => {
                Pmf::new(atoms.iter().map(|a| (a[0], a[1]))).map_err(|e| invalid("disturbance.atoms", e))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub x: Vec<usize>,
    pub z: usize,
    pub actions: usize,
    pub s: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            x: vec![25, 25],
            z: 11,
            actions: 11,
            s: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub alpha: Vec<f64>,
    pub r: Vec<f64>,
    pub seed: u64,
    pub rollouts: usize,
    pub x0: Option<Vec<f64>>,
    pub lookup: ControlLookup,
    /// Write the value and policy tables of deployed policies.
    pub persist_tables: bool,
    /// Write every rollout path, not just the summary.
    pub write_trajectories: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            alpha: vec![0.99, 0.05, 0.005],
            r: vec![0.2, 1.0, 1.8],
            seed: 0,
            rollouts: 1000,
            x0: None,
            lookup: ControlLookup::Nearest,
            persist_tables: false,
            write_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub designs: Vec<Design>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            designs: Design::ALL.to_vec(),
        }
    }
}

/// Settings that never change results; kept out of the hash and artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecSection {
    /// Worker threads; 0 picks one per core.
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for ExecSection {
    fn default() -> Self {
        Self {
            threads: 0,
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub disturbance: DisturbanceSpec,
    pub grid: GridSection,
    pub run: RunSection,
    pub compare: CompareSection,
    #[serde(skip_serializing)]
    pub exec: ExecSection,
}

impl RunConfig {
    /// Parse TOML text. Relative corpus paths are kept as written.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| invalid("<toml>", e.message()))?;
        Self::from_table(raw, None)
    }

    /// Read a config file; relative corpus paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(tiny) = cfg.model.tiny.as_mut() {
            if tiny.corpus.is_relative() {
                if let Some(dir) = path.parent() {
                    tiny.corpus = dir.join(&tiny.corpus);
                }
            }
        }
        Ok(cfg)
    }

    fn from_table(mut raw: toml::Table, design_override: Option<Design>) -> Result<Self, ConfigError> {
        let model = raw
            .entry("model")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let model = model
            .as_table_mut()
            .ok_or_else(|| invalid("model", "expected a table"))?;
        let design = match design_override {
            Some(d) => d,
            None => match model.get("design") {
                None => Design::A,
                Some(v) => v
                    .clone()
                    .try_into()
                    .map_err(|e: toml::de::Error| invalid("model.design", e.message()))?,
            },
        };
        model.insert("design".into(), toml::Value::String(design.label().to_string()));
        let mut params =
            toml::Table::try_from(StormwaterParams::for_design(design)).expect("parameters serialize to a table");
        match model.remove("params") {
            None => {}
            Some(toml::Value::Table(user)) => merge(&mut params, user),
            Some(_) => return Err(invalid("model.params", "expected a table")),
        }
        model.insert("params".into(), toml::Value::Table(params));
        serde_path_to_error::deserialize(toml::Value::Table(raw)).map_err(|e| {
            let path = e.path().to_string();
            invalid(path, e.into_inner().message())
        })
    }

    /// The same configuration with a different design and that design's
    /// defaults under the user's overrides.
    pub fn with_design(&self, design: Design) -> Result<Self, ConfigError> {
        let mut raw = toml::Table::try_from(self).expect("config serializes to a table");
        // drop resolved parameters equal to the current design's defaults so
        // the new design's defaults show through
        if let Some(toml::Value::Table(model)) = raw.get_mut("model") {
            if let Some(toml::Value::Table(params)) = model.get_mut("params") {
                let defaults = toml::Table::try_from(StormwaterParams::for_design(self.model.design))
                    .expect("parameters serialize to a table");
                params.retain(|k, v| defaults.get(k) != Some(v));
                if design != Design::B {
                    params.remove("pump");
                }
            }
        }
        let mut cfg = Self::from_table(raw, Some(design))?;
        cfg.exec = self.exec.clone();
        Ok(cfg)
    }

    /// Build the model and check every section against it.
    pub fn resolve(&self) -> Result<Problem, ConfigError> {
        let problem = match &self.model.tiny {
            Some(t) => {
                let text = std::fs::read_to_string(&t.corpus).map_err(|source| ConfigError::Io {
                    path: t.corpus.clone(),
                    source,
                })?;
                let inst = parse_corpus(&text)
                    .map_err(|e| invalid("model.tiny.corpus", e))?
                    .into_iter()
                    .find(|i| i.name == t.name)
                    .ok_or_else(|| invalid("model.tiny.name", format!("no instance `{}` in corpus", t.name)))?;
                Problem::Tiny(inst)
            }
            None => {
                let design = self.model.design;
                self.model.params.validate(design).map_err(|e| match e {
                    ModelError::NonPositive { name, .. } => invalid(format!("model.params.{name}"), e),
                    ModelError::NoPump(_) => invalid("model.params.pump", e),
                    other => invalid("model.params", other),
                })?;
                let pmf = self.disturbance.pmf()?;
                let storm =
                    Stormwater::new(self.model.params.clone(), design, pmf).map_err(|e| invalid("model.params", e))?;
                Problem::Storm(storm)
            }
        };
        let sys = problem.system();
        if problem.tiny().is_none() {
            if self.grid.x.len() != sys.state_dim() {
                return Err(invalid(
                    "grid.x",
                    format!("expected {} counts, got {}", sys.state_dim(), self.grid.x.len()),
                ));
            }
            for (i, &n) in self.grid.x.iter().enumerate() {
                if n < 2 {
                    return Err(invalid(format!("grid.x[{i}]"), "needs at least 2 nodes"));
                }
            }
            for (name, n) in [
                ("grid.z", self.grid.z),
                ("grid.actions", self.grid.actions),
                ("grid.s", self.grid.s),
            ] {
                if n < 2 {
                    return Err(invalid(name, "needs at least 2 nodes"));
                }
            }
        }
        if self.run.alpha.is_empty() {
            return Err(invalid("run.alpha", "needs at least one level"));
        }
        for (i, &a) in self.run.alpha.iter().enumerate() {
            RiskLevel::new(a).map_err(|e| invalid(format!("run.alpha[{i}]"), e))?;
        }
        let (lo, hi) = (sys.g_lower(), sys.g_lower() + sys.c_bar());
        for (i, &r) in self.run.r.iter().enumerate() {
            if !(lo..=hi).contains(&r) {
                return Err(invalid(format!("run.r[{i}]"), format!("{r} outside [{lo}, {hi}]")));
            }
        }
        if let Some(x0) = &self.run.x0 {
            if x0.len() != sys.state_dim() || !sys.in_bounds(x0) {
                return Err(invalid("run.x0", format!("{x0:?} outside the state box")));
            }
        }
        if self.compare.designs.is_empty() {
            return Err(invalid("compare.designs", "needs at least one design"));
        }
        Ok(problem)
    }

    pub fn alphas(&self) -> Vec<RiskLevel> {
        self.run
            .alpha
            .iter()
            .map(|&a| RiskLevel::new(a).expect("validated"))
            .collect()
    }

    /// SHA-256 of the resolved configuration (and the instance tables for a
    /// finite model), excluding thread count and output directory.
    pub fn config_hash(&self, problem: &Problem) -> String {
        digest(&serde_json::json!({
            "config": self,
            "instance": problem.tiny().map(|t| write_corpus(std::slice::from_ref(t))),
        }))
    }

    /// Hash of everything a sweep depends on: model, disturbance and grid.
    pub fn problem_hash(&self, problem: &Problem) -> String {
        digest(&serde_json::json!({
            "model": self.model,
            "disturbance": self.disturbance,
            "grid": if problem.tiny().is_some() { None } else { Some(&self.grid) },
            "instance": problem.tiny().map(|t| write_corpus(std::slice::from_ref(t))),
        }))
    }
}

fn digest(v: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(v).expect("json values serialize");
    hex::encode(Sha256::digest(&bytes))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// The model a run operates on.
#[derive(Debug, Clone)]
pub enum Problem {
    Storm(Stormwater),
    Tiny(TinyInstance),
}

impl Problem {
    pub fn system(&self) -> &dyn ControlSystem {
        match self {
            Self::Storm(m) => m,
            Self::Tiny(t) => t,
        }
    }

    pub fn tiny(&self) -> Option<&TinyInstance> {
        match self {
            Self::Tiny(t) => Some(t),
            Self::Storm(_) => None,
        }
    }

    /// Uniform grid for the two-tank model, the exact node set for a finite one.
    pub fn grid(&self, g: &GridSection) -> Result<AugmentedGrid, GridError> {
        match self {
            Self::Storm(m) => AugmentedGrid::uniform(m, &g.x, g.z, g.actions, g.s),
            Self::Tiny(t) => t.exact_grid().map_err(|e| match e {
                crate::oracle::OracleError::Grid(g) => g,
                other => GridError::Mismatch {
                    axis: "x",
                    detail: other.to_string(),
                },
            }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Storm(m) => format!("stormwater-{}", m.design().label()),
            Self::Tiny(t) => format!("tiny-{}", t.name),
        }
    }
}
