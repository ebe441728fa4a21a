use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use modah_cli::bench::{cmd_bench, BenchArgs};
use modah_cli::eval::{cmd_eval, EvalArgs, LabelsSource};
use modah_cli::exit;
use modah_cli::fit::{cmd_fit, FitArgs};
use modah_cli::simulate::{cmd_simulate, SimulateArgs};
use modah_cli::snr::{cmd_snr, SnrArgs};
use modah_core::init::{InitStrategy, DEFAULT_NEIGHBORS, DEFAULT_RESOLUTION};
use modah_core::metrics::ReportConfig;

#[derive(Parser)]
#[command(name = "modah", version, about = "Mixture-model batch correction for multi-batch embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-batch dataset with ground truth.
    Simulate {
        /// JSON simulation config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output prefix for `.csv`, `.truth.json` and `.manifest.json`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the model and write batch-corrected data.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Number of clusters.
        #[arg(long, conflicts_with = "estimate_k")]
        k: Option<usize>,
        /// Estimate K by Leiden clustering of the pooled kNN graph.
        #[arg(long)]
        estimate_k: bool,
        #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
        neighbors: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: f64,
        /// Initialization: `kmeans` (pooled) or `perbatch`.
        #[arg(long, default_value_t = InitStrategy::Kmeans)]
        init: InitStrategy,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score corrected data with the integration metrics and, given truth, the loss.
    Eval {
        #[arg(long)]
        corrected: PathBuf,
        /// Uncorrected dataset CSV with true labels.
        #[arg(long)]
        truth_data: Option<PathBuf>,
        /// True parameters JSON.
        #[arg(long)]
        truth_params: Option<PathBuf>,
        /// Fit log with the estimated assignment.
        #[arg(long)]
        fit_log: Option<PathBuf>,
        /// Cell-type labels from `auto`, `column` or `truth`.
        #[arg(long, default_value = "auto")]
        labels: LabelsSource,
        #[arg(long, default_value_t = 90)]
        lisi_k: usize,
        #[arg(long, default_value_t = 50)]
        kbet_k: usize,
        #[arg(long, default_value_t = 0.05)]
        kbet_alpha: f64,
        #[arg(long, default_value_t = 15)]
        graph_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix for `.json`, `.txt` and `.manifest.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Signal-to-noise ratio and regularity quantities of a parameter set.
    Snr {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix for `.json` and `.manifest.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a seeded simulation sweep.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        /// Per-replicate results CSV; summary, runtime and manifest files are written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MODAH_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("MODAH_THREADS must be a positive integer, got {v:?}"))?;
        anyhow::ensure!(n > 0, "MODAH_THREADS must be a positive integer, got {v:?}");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let o = cmd_simulate(&SimulateArgs { config, seed, out })?;
            println!("wrote {}", o.dataset.display());
        }
        Command::Fit {
            input,
            k,
            estimate_k,
            neighbors,
            resolution,
            init,
            max_iter,
            seed,
            out,
        } => {
            let o = cmd_fit(&FitArgs {
                input,
                k,
                estimate_k,
                neighbors,
                resolution,
                init,
                max_iter,
                seed,
                out,
            })?;
            println!("wrote {}", o.corrected.display());
        }
        Command::Eval {
            corrected,
            truth_data,
            truth_params,
            fit_log,
            labels,
            lisi_k,
            kbet_k,
            kbet_alpha,
            graph_k,
            seed,
            out,
        } => {
            let knn = ReportConfig {
                lisi_k,
                kbet_k,
                kbet_alpha,
                graph_k,
                ..ReportConfig::default()
            };
            let report = cmd_eval(&EvalArgs {
                corrected,
                truth_data,
                truth_params,
                fit_log,
                labels,
                knn,
                seed,
                out,
            })?;
            print!("{}", modah_core::metrics::scorecard(&report.metrics));
        }
        Command::Snr { params, seed, out } => {
            let r = cmd_snr(&SnrArgs { params, seed, out })?;
            println!("SNR = {}", r.snr);
        }
        Command::Bench { spec, out, seed } => {
            let o = cmd_bench(&BenchArgs { spec, seed, out })?;
            println!("wrote {}", o.rows.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e) as u8)
        }
    }
}
