use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cvar_safety::cli::{self, CliError};
use cvar_safety::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cvar-safety",
    version,
    about = "Risk-sensitive safe sets via augmented-state dynamic programming"
)]
struct Args {
    /// TOML run configuration (defaults reproduce the baseline model).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rollout seed (overrides run.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated risk levels in (0, 1].
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    alpha: Option<Vec<f64>>,
    /// Comma-separated risk thresholds.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    r: Option<Vec<f64>>,
    /// Comma-separated initial state for deploy.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the augmented DP for every dual value.
    Sweep,
    /// Risk surfaces and safe-set masks from a sweep.
    SafeSets {
        /// Sweep file (default: <out>/sweep.csv).
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Synthesize a pre-commitment policy and simulate it.
    Deploy {
        /// Number of rollouts (overrides run.rollouts).
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Check a corpus of finite instances against exact enumeration.
    Oracle { corpus: PathBuf },
    /// Safe-set sizes for each design variant.
    CompareDesigns,
}

fn load(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &args.out {
        cfg.exec.out = o.clone();
    }
    if let Some(t) = args.threads {
        cfg.exec.threads = t;
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(a) = &args.alpha {
        cfg.run.alpha = a.clone();
    }
    if let Some(r) = &args.r {
        cfg.run.r = r.clone();
    }
    if let Some(x) = &args.x0 {
        cfg.run.x0 = Some(x.clone());
    }
    Ok(cfg)
}

fn run(args: Args) -> Result<bool, CliError> {
    let mut cfg = load(&args)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.exec.threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match args.command {
        Command::Sweep => {
            let path = cli::cmd_sweep(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::SafeSets { sweep } => {
            let summary = cli::cmd_safe_sets(&cfg, sweep.as_deref())?;
            println!("{:>10} {:>6} {:>8} {:>8}", "alpha", "r", "cells", "of");
            for c in &summary.counts {
                println!("{:>10} {:>6} {:>8} {:>8}", c.alpha, c.r, c.count, c.total);
            }
        }
        Command::Deploy { rollouts } => {
            if let Some(n) = rollouts {
                cfg.run.rollouts = n;
            }
            let s = cli::cmd_deploy(&cfg)?;
            println!("s* = {}  dp_value = {}  dp_risk = {}", s.s_star, s.dp_value, s.dp_risk);
            if let (Some(e), Some(gap)) = (&s.estimate, s.excess_gap) {
                println!(
                    "cvar_hat = {} (se {})  excess_hat = {} (se {})  |gap| = {}",
                    e.cvar_hat, e.cvar_std_err, e.excess_hat, e.excess_std_err, gap
                );
            }
        }
        Command::Oracle { corpus } => {
            let out = args.out.as_deref();
            let summary = cli::cmd_oracle(&corpus, out)?;
            for r in &summary.reports {
                println!(
                    "{} {}  pipeline {:.1e}  exchange {:.1e}  policy {:.1e}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.pipeline_gap,
                    r.exchange_gap,
                    r.synthesized_gap
                );
            }
            for e in &summary.errors {
                println!("FAIL {e}");
            }
            println!("{}/{} instances passed", summary.passed, summary.instances);
            return Ok(summary.all_passed());
        }
        Command::CompareDesigns => {
            let s = cli::cmd_compare_designs(&cfg)?;
            println!(
                "{:>6} {:>8} {:>6} {:>8} {:>10}",
                "design", "alpha", "r", "cells", "change"
            );
            for row in &s.rows {
                let change = row.change_vs_first.map_or_else(|| "-".into(), |v| format!("{v:+.3}"));
                println!(
                    "{:>6} {:>8} {:>6} {:>8} {:>10}",
                    row.design.label(),
                    row.alpha,
                    row.r,
                    row.count,
                    change
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
