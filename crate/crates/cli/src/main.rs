use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use elfis_cli::config::{ConfigError, PipelineConfig};
use elfis_cli::stages;
use elfis_core::gradsuite::run_suite;

#[derive(Parser)]
#[command(name = "elfis", version, about = "Train and evaluate subset-expert classifiers")]
struct Cli {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or copy in) the dataset.
    GenData,
    /// Train the single-head baseline.
    TrainBaseline,
    /// Write the baseline's validation confusion matrix.
    ExportConfusion {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Cluster classes from the confusion matrix and name embeddings.
    Cluster {
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Train the subset-expert model on a cluster file.
    TrainElfis {
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Report test accuracy; two checkpoints are also compared.
    Evaluate {
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
    },
    /// Run every stage in order.
    Pipeline,
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn report(written: Vec<PathBuf>) {
    for p in written {
        println!("wrote {}", p.display());
    }
}

fn gradcheck(instances: usize, seed: u64) -> Result<bool> {
    let reports = run_suite(instances, seed)?;
    for r in &reports {
        let status = if r.passed { "ok" } else { "FAILED" };
        println!("{:<18} max_rel_err={:.3e} tol={:.0e} {status}", r.op_name, r.max_relative_error, r.tolerance);
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    let dir: &Path = &cfg.output.dir.clone();
    match cli.command {
        Command::GenData => report(stages::cmd_gen_data(&cfg, dir)?),
        Command::TrainBaseline => report(stages::cmd_train_baseline(&cfg, dir)?),
        Command::ExportConfusion { checkpoint } => {
            report(stages::cmd_export_confusion(&cfg, dir, checkpoint.as_deref())?)
        }
        Command::Cluster { confusion } => report(stages::cmd_cluster(&cfg, dir, confusion.as_deref())?),
        Command::TrainElfis { clusters } => report(stages::cmd_train_elfis(&cfg, dir, clusters.as_deref())?),
        Command::Evaluate { checkpoints } => report(stages::cmd_evaluate(&cfg, dir, &checkpoints)?),
        Command::Gradcheck { instances } => {
            if !gradcheck(instances, cfg.seed)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Pipeline => report(stages::cmd_pipeline(&cfg, dir)?),
        Command::PrintConfig => print!("{}", cfg.to_toml()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
