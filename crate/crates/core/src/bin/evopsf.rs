//! Command-line front end: pretraining, experiment grids, ablations,
//! report rendering, trace replay and model inspection.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use evopsf_core::harness::{
    replay_verify, report, ExperimentConfig, Runner,
};
use evopsf_core::model::ModelParameters;

#[derive(Parser)]
#[command(name = "evopsf", about = "Online-evolution laboratory for a toy driving model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain checkpoints for every profile the configured suite needs.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Retrain even if a checkpoint already exists.
        #[arg(long)]
        force: bool,
    },
    /// Run the configured (suite x strategy x seed) grid; writes
    /// metrics.csv and one trace per cell.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the four-variant ablation grid; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render mean +/- std comparison tables from metrics CSV files.
    Report {
        /// One or more metrics/ablation CSV paths.
        paths: Vec<PathBuf>,
    },
    /// Re-verify the invariants of recorded trace files.
    ReplayTrace {
        paths: Vec<PathBuf>,
    },
    /// Print parameter counts per sub-module.
    ModelInfo {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inspect an existing checkpoint instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> evopsf_core::Result<()> {
    match Cli::parse().command {
        Command::Pretrain { config, force } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            let trained = runner.ensure_checkpoints(force)?;
            for (name, profile) in &trained {
                println!(
                    "checkpoint {name}: {} params, resolved tau {:.4}",
                    profile.params.params.scalar_count(),
                    profile.resolved_tau
                );
            }
            println!("wrote checkpoints to {}", runner.cfg.out_dir().display());
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            let results = runner.run()?;
            let csv_path = runner.persist(&results, "metrics.csv")?;
            println!("wrote {} ({} rows)", csv_path.display(), results.len());
            let rows = report::read_csv(&csv_path)?;
            print!("{}", report::render_table(&report::aggregate_rows(&rows)));
        }
        Command::Ablate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runner = Runner::new(cfg)?;
            let results = runner.ablate()?;
            let csv_path = runner.persist(&results, "ablation.csv")?;
            println!("wrote {}", csv_path.display());
            let rows = report::read_csv(&csv_path)?;
            let aggs = report::aggregate_rows(&rows);
            let order = ["evopsf", "evopsf_no_trigger", "evopsf_no_topk", "evopsf_no_conf"];
            println!("ID  variant            (aggregated over splits and seeds)");
            for (i, name) in order.iter().enumerate() {
                let grp: Vec<&report::AggregateRow> =
                    aggs.iter().filter(|a| a.strategy == *name).collect();
                if grp.is_empty() {
                    continue;
                }
                let mean = |f: &dyn Fn(&report::AggregateRow) -> f64| -> f64 {
                    grp.iter().map(|a| f(a)).sum::<f64>() / grp.len() as f64
                };
                println!(
                    "{:<3} {:<18} ade {:.4}  col_rate {:.4}  updates {:.1}",
                    i + 1,
                    name,
                    mean(&|a| a.ade.0),
                    mean(&|a| a.collision_rate.0),
                    mean(&|a| a.update_count.0),
                );
            }
            print!("{}", report::render_table(&aggs));
        }
        Command::Report { paths } => {
            if paths.is_empty() {
                return Err(evopsf_core::Error::Config("report needs at least one csv path".into()));
            }
            let mut rows = Vec::new();
            for p in &paths {
                rows.extend(report::read_csv(p)?);
            }
            print!("{}", report::render_table(&report::aggregate_rows(&rows)));
        }
        Command::ReplayTrace { paths } => {
            if paths.is_empty() {
                return Err(evopsf_core::Error::Config("replay-trace needs at least one path".into()));
            }
            for p in &paths {
                let summary = replay_verify(p)?;
                println!(
                    "{}: {} records, {} fired, {} updates, invariants ok",
                    p.display(),
                    summary.records,
                    summary.fired,
                    summary.updates
                );
            }
        }
        Command::ModelInfo { config, checkpoint } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            let params = match checkpoint {
                Some(p) => ModelParameters::load(&p, cfg.model)?,
                None => ModelParameters::init(cfg.model, cfg.train.seed)?,
            };
            let counts = params.submodule_counts();
            let total: usize = counts.iter().map(|(_, c)| c).sum();
            for (name, count) in &counts {
                println!("{name:<18} {count:>8}");
            }
            println!("{:<18} {total:>8}", "total");
        }
    }
    Ok(())
}
