//! Commands behind the `cvar-safety` binary. Each writes its artifacts into
//! the configured output directory and returns a short report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, Problem, RunConfig};
use crate::dp::{DpError, DpSolver};
use crate::grid::GridError;
use crate::io::{self, ArtifactError, GridSpec, SCHEMA_VERSION};
use crate::oracle::{parse_corpus, verify_corpus, InstanceReport, OracleError};
use crate::runtime::{estimate_risk, rollout, synthesize_policy, RiskEstimate, RolloutOptions, RuntimeError};
use crate::solver::{extract_safe_set, risk_value, sweep_with, DualSweep};
use crate::stormwater::Design;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{}: {msg}", path.display())]
    Sweep { path: PathBuf, msg: String },
    #[error("{0}")]
    Usage(String),
}

fn progress_line(label: &str, i: usize, s: f64) {
    eprintln!("[{label}] s[{i}] = {s} done");
}

fn run_sweep(cfg: &RunConfig, problem: &Problem, label: &str) -> Result<DualSweep, CliError> {
    let grid = problem.grid(&cfg.grid)?;
    let solver = DpSolver::new(problem.system(), &grid)?;
    Ok(sweep_with(&solver, |i, s| progress_line(label, i, s))?)
}

#[derive(Debug, Serialize)]
struct SweepMeta {
    schema_version: u32,
    config_hash: String,
    problem_hash: String,
    model: String,
    grid: GridSpec,
}

/// Solve the DP for every `s` and write `sweep.csv` and `sweep.json`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let problem = cfg.resolve()?;
    let grid = problem.grid(&cfg.grid)?;
    let sweep = run_sweep(cfg, &problem, "sweep")?;
    let (hash, phash) = (cfg.config_hash(&problem), cfg.problem_hash(&problem));
    let out = &cfg.exec.out;
    let path = out.join("sweep.csv");
    io::write_file(&path, &io::sweep_csv(&sweep, &hash, &phash))?;
    io::write_json(
        &out.join("sweep.json"),
        &SweepMeta {
            schema_version: SCHEMA_VERSION,
            config_hash: hash,
            problem_hash: phash,
            model: problem.label(),
            grid: GridSpec::of(&grid),
        },
    )?;
    eprintln!("sweep finished in {:.2} s", started.elapsed().as_secs_f64());
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct CellCount {
    pub alpha: f64,
    pub r: f64,
    pub count: usize,
    pub total: usize,
}

#[derive(Debug, Serialize)]
pub struct SafeSetSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub model: String,
    pub grid: GridSpec,
    pub alpha: Vec<f64>,
    pub r: Vec<f64>,
    pub counts: Vec<CellCount>,
    pub config: RunConfig,
}

fn load_sweep(path: &Path, cfg: &RunConfig, problem: &Problem) -> Result<DualSweep, CliError> {
    let loaded = io::parse_sweep_csv(path, &io::read_file(path)?)?;
    let expected = cfg.problem_hash(problem);
    if loaded.problem_hash.as_deref() != Some(expected.as_str()) {
        return Err(CliError::Sweep {
            path: path.to_path_buf(),
            msg: "sweep was computed for a different model, disturbance or grid".into(),
        });
    }
    let grid = problem.grid(&cfg.grid)?;
    if loaded.s_values != grid.s.nodes() || loaded.v0.iter().any(|r| r.len() != grid.x.len()) {
        return Err(CliError::Sweep {
            path: path.to_path_buf(),
            msg: "sweep shape does not match the configured grid".into(),
        });
    }
    Ok(loaded.into_sweep(problem.system().g_lower()))
}

fn count_cells(sweep: &DualSweep, cfg: &RunConfig) -> Vec<CellCount> {
    let mut counts = Vec::new();
    for alpha in cfg.alphas() {
        let surface = risk_value(sweep, alpha);
        for &r in &cfg.run.r {
            let mask = extract_safe_set(&surface, r);
            counts.push(CellCount {
                alpha: alpha.get(),
                r,
                count: mask.count(),
                total: mask.mask.len(),
            });
        }
    }
    counts
}

/// Risk surfaces and safe-set masks for every configured `(α, r)`, from a
/// sweep file (default `<out>/sweep.csv`).
pub fn cmd_safe_sets(cfg: &RunConfig, sweep_path: Option<&Path>) -> Result<SafeSetSummary, CliError> {
    let problem = cfg.resolve()?;
    let grid = problem.grid(&cfg.grid)?;
    let out = &cfg.exec.out;
    let default_path = out.join("sweep.csv");
    let sweep = load_sweep(sweep_path.unwrap_or(&default_path), cfg, &problem)?;
    let hash = cfg.config_hash(&problem);
    for alpha in cfg.alphas() {
        let surface = risk_value(&sweep, alpha);
        io::write_file(
            &out.join(io::surface_file(alpha.get())),
            &io::surface_csv(&grid, &surface, &hash),
        )?;
        for &r in &cfg.run.r {
            let mask = extract_safe_set(&surface, r);
            io::write_file(
                &out.join(io::mask_file(alpha.get(), r)),
                &io::mask_csv(&grid, &mask, &hash),
            )?;
        }
    }
    let summary = SafeSetSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        model: problem.label(),
        grid: GridSpec::of(&grid),
        alpha: cfg.run.alpha.clone(),
        r: cfg.run.r.clone(),
        counts: count_cells(&sweep, cfg),
        config: cfg.clone(),
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct DeploySummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub model: String,
    pub x0: Vec<f64>,
    pub x0_node: Vec<f64>,
    pub alpha: f64,
    pub s_star: f64,
    /// Predicted `E[max(Y − s*, 0)]`.
    pub dp_value: f64,
    /// Predicted optimal CVaR of `Y′`.
    pub dp_risk: f64,
    pub seed: u64,
    pub num_rollouts: usize,
    pub lookup: crate::runtime::ControlLookup,
    pub estimate: Option<RiskEstimate>,
    /// `|excess_hat − dp_value|`.
    pub excess_gap: Option<f64>,
    /// `excess_gap` in units of the standard error.
    pub excess_gap_std_errs: Option<f64>,
}

/// Synthesize the policy for `run.x0` at the first configured level and
/// simulate `run.rollouts` deployments.
pub fn cmd_deploy(cfg: &RunConfig) -> Result<DeploySummary, CliError> {
    let started = Instant::now();
    let problem = cfg.resolve()?;
    let x0 = cfg
        .run
        .x0
        .clone()
        .ok_or_else(|| CliError::Usage("run.x0: deploy needs an initial state (--x0)".into()))?;
    let alpha = cfg.alphas()[0];
    let sys = problem.system();
    let grid = problem.grid(&cfg.grid)?;
    let sweep = run_sweep(cfg, &problem, "deploy")?;
    let policy = synthesize_policy(&x0, alpha, &sweep, sys, &grid)?;
    let hash = cfg.config_hash(&problem);
    let out = &cfg.exec.out;
    let opts = RolloutOptions {
        lookup: cfg.run.lookup,
        keep_trajectories: cfg.run.write_trajectories,
    };
    let (estimate, gap, gap_se) = if cfg.run.rollouts == 0 {
        (None, None, None)
    } else {
        let batch = rollout(&policy, cfg.run.rollouts, cfg.run.seed, sys, &grid, opts)?;
        if cfg.run.write_trajectories {
            io::write_file(
                &out.join("rollouts.csv"),
                &io::rollouts_csv(&batch, sys.state_dim(), &hash),
            )?;
        }
        let est = estimate_risk(&batch, alpha, policy.s_star, sys.g_lower())?;
        let gap = (est.excess_hat - policy.dp_value).abs();
        let se = (est.excess_std_err > 0.0).then(|| gap / est.excess_std_err);
        (Some(est), Some(gap), se)
    };
    if cfg.run.persist_tables {
        io::write_file(
            &out.join("value_table.csv"),
            &io::value_table_csv(&grid, &policy.values, &hash),
        )?;
        io::write_file(
            &out.join("policy_table.csv"),
            &io::policy_table_csv(&grid, &policy.tables, &hash),
        )?;
    }
    let summary = DeploySummary {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        model: problem.label(),
        x0,
        x0_node: grid.x.point(policy.x0_node),
        alpha: alpha.get(),
        s_star: policy.s_star,
        dp_value: policy.dp_value,
        dp_risk: policy.dp_risk,
        seed: cfg.run.seed,
        num_rollouts: cfg.run.rollouts,
        lookup: cfg.run.lookup,
        estimate,
        excess_gap: gap,
        excess_gap_std_errs: gap_se,
    };
    io::write_json(&out.join("deploy.json"), &summary)?;
    eprintln!("deploy finished in {:.2} s", started.elapsed().as_secs_f64());
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct OracleSummary {
    pub schema_version: u32,
    pub corpus: String,
    pub instances: usize,
    pub passed: usize,
    pub reports: Vec<InstanceReport>,
    pub errors: Vec<String>,
}

impl OracleSummary {
    pub fn all_passed(&self) -> bool {
        self.errors.is_empty() && self.passed == self.instances
    }
}

/// Check every corpus instance against the brute-force oracle. Writes
/// `oracle_report.json` when `out` is given.
pub fn cmd_oracle(corpus_path: &Path, out: Option<&Path>) -> Result<OracleSummary, CliError> {
    let text = io::read_file(corpus_path)?;
    let corpus = parse_corpus(&text).map_err(|e| match e {
        OracleError::Parse { line, msg } => CliError::Artifact(ArtifactError::Parse {
            path: corpus_path.to_path_buf(),
            line,
            msg,
        }),
        other => CliError::Oracle(other),
    })?;
    if corpus.is_empty() {
        eprintln!("warning: corpus {} contains no instances", corpus_path.display());
    }
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (inst, res) in corpus.iter().zip(verify_corpus(&corpus)) {
        match res {
            Ok(r) => reports.push(r),
            Err(e) => errors.push(format!("{}: {e}", inst.name)),
        }
    }
    let summary = OracleSummary {
        schema_version: SCHEMA_VERSION,
        corpus: corpus_path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        instances: corpus.len(),
        passed: reports.iter().filter(|r| r.passed).count(),
        reports,
        errors,
    };
    if let Some(dir) = out {
        io::write_json(&dir.join("oracle_report.json"), &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignRow {
    pub design: Design,
    pub alpha: f64,
    pub r: f64,
    pub count: usize,
    pub total: usize,
    /// `count / count of the first design − 1`; absent when that count is 0.
    pub change_vs_first: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CompareSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub grid: GridSpec,
    pub rows: Vec<DesignRow>,
}

/// Safe-set sizes of each configured design at every `(α, r)`.
pub fn cmd_compare_designs(cfg: &RunConfig) -> Result<CompareSummary, CliError> {
    let started = Instant::now();
    let base_problem = cfg.resolve()?;
    if base_problem.tiny().is_some() {
        return Err(CliError::Usage("compare-designs needs the two-tank model".into()));
    }
    let mut per_design = Vec::new();
    for &design in &cfg.compare.designs {
        let dcfg = cfg.with_design(design)?;
        let problem = dcfg.resolve()?;
        let sweep = run_sweep(&dcfg, &problem, design.label())?;
        per_design.push((design, count_cells(&sweep, &dcfg)));
    }
    let mut rows = Vec::new();
    let first = per_design[0].1.clone();
    for (design, counts) in &per_design {
        for (c, base) in counts.iter().zip(&first) {
            rows.push(DesignRow {
                design: *design,
                alpha: c.alpha,
                r: c.r,
                count: c.count,
                total: c.total,
                change_vs_first: (base.count > 0).then(|| c.count as f64 / base.count as f64 - 1.0),
            });
        }
    }
    let hash = cfg.config_hash(&base_problem);
    let mut csv = format!("# config_hash={hash}\ndesign,alpha,r,count,total,change_vs_first\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.design.label(),
            row.alpha,
            row.r,
            row.count,
            row.total,
            row.change_vs_first.map_or_else(String::new, |v| v.to_string())
        ));
    }
    let out = &cfg.exec.out;
    io::write_file(&out.join("compare.csv"), &csv)?;
    let summary = CompareSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: hash,
        grid: GridSpec::of(&base_problem.grid(&cfg.grid)?),
        rows,
    };
    io::write_json(&out.join("compare.json"), &summary)?;
    eprintln!("compare-designs finished in {:.2} s", started.elapsed().as_secs_f64());
    Ok(summary)
}
