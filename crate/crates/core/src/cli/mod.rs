//! Command-line front end: `train`, `verify`, `eval` and `sweep`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_sweep, cmd_train, cmd_verify, Check, CheckOutcome, EvalWhat, TrainSummary,
};
pub use config::{load_config, parse_config, LoadedConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "hrrl",
    version,
    about = "Concept- and example-robust training with bound verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.mode=ERM`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, env = "HRRL_OUT_DIR", default_value = "runs")]
    pub out_dir: PathBuf,
    /// Shorthand for `--set train.seed=N` (`verify.seed` for verify).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model.
    Train(Common),
    /// Certify the example- and concept-level bounds numerically.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of t1, t2, t3, prop1, variance, or `all`.
        #[arg(long, default_value = "all")]
        which: String,
    },
    /// Evaluate a saved model on the held-out data.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Parameter snapshot written by `train`.
        #[arg(long)]
        params: PathBuf,
        /// profile, sweep or probe.
        #[arg(long, default_value = "profile")]
        what: String,
    },
    /// Train over a hyperparameter grid and tabulate the results.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `lambda`, `gamma` or `tau`, optionally with explicit values
        /// (`lambda=0.01,0.1,1`). Repeat to form a product grid.
        #[arg(long = "grid", required = true)]
        grid: Vec<String>,
    },
}

fn load(common: &Common, seed_key: &str) -> crate::Result<LoadedConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(s) = common.seed {
        overrides.push(format!("{seed_key}={s}"));
    }
    load_config(common.config.as_deref(), &overrides)
}

/// Exit status: 0 on success, 1 when a selected check fails, 2 on errors.
pub fn run(cli: Cli) -> ExitCode {
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> crate::Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common, "train.seed")?;
            let s = cmd_train(&cfg, &common.out_dir)?;
            println!(
                "mode={} iterations={} seed={} final_loss={:.6} eval_accuracy={:.4} worst_concept={:.4} spread={:.4}",
                s.mode, s.iterations, s.seed, s.final_mean_loss, s.eval_accuracy, s.eval_worst_concept, s.eval_spread
            );
            println!("config_hash={}", s.config_hash);
            Ok(true)
        }
        Command::Verify { common, which } => {
            let cfg = load(&common, "verify.seed")?;
            let checks = Check::parse_list(&which)?;
            let outcomes = cmd_verify(&cfg, &checks, &common.out_dir)?;
            for o in &outcomes {
                println!(
                    "{:<9} {}  {}",
                    o.check,
                    if o.holds { "PASS" } else { "FAIL" },
                    o.detail
                );
            }
            Ok(outcomes.iter().all(|o| o.holds))
        }
        Command::Eval {
            common,
            params,
            what,
        } => {
            let cfg = load(&common, "train.seed")?;
            let summary = cmd_eval(&cfg, &params, what.parse()?, &common.out_dir)?;
            println!("{summary}");
            Ok(true)
        }
        Command::Sweep { common, grid } => {
            let mut cfg = load(&common, "train.seed")?;
            if let Some(s) = common.seed {
                cfg.config.eval.seeds = vec![s];
            }
            let grid = commands::parse_grid(&grid, &cfg)?;
            let seeds = cfg.config.eval.seeds.clone();
            let cells = cmd_sweep(&cfg, &grid, &seeds, &common.out_dir)?;
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            println!(
                "{} cells, {failed} failed; table in {}",
                cells.len(),
                common.out_dir.join("sweep.csv").display()
            );
            Ok(true)
        }
    }
}
