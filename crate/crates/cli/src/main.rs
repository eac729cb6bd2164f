use std::path::PathBuf;
use std::process::ExitCode;

use calbench::metrics::MetricId;
use calbench::stats::{GroupBy, BOOTSTRAP_REPLICATES};
use calbench_cli::{cmd_report, cmd_run, cmd_synth, CliError, Miscalibration, ReportConfig, RunConfig, SynthConfig, MANIFEST_FILE};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "calbench", version, about = "Benchmark post-hoc calibration methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark with a known miscalibration.
    Synth {
        #[arg(long)]
        benchmark: String,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        datasets: usize,
        #[arg(long, default_value_t = 2)]
        models: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        n_cal: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        /// overconfident, underconfident or affine_shift
        #[arg(long, default_value = "overconfident")]
        miscal: Miscalibration,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit and score calibrators on every experiment of a benchmark.
    Run {
        #[arg(long)]
        benchmark: String,
        /// Calibrator name; repeat for several, or pass `all`.
        #[arg(long = "calibrator", default_value = "all")]
        calibrators: Vec<String>,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Results CSV path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated metric names; defaults to all metrics that apply to the task.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<MetricId>,
        /// Record fit and predict wall-clock times (makes the output non-reproducible).
        #[arg(long)]
        timings: bool,
    },
    /// Build the leaderboard, critical-difference data and chart from a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// With --data-dir, locates the manifest used for dataset grouping.
        #[arg(long)]
        benchmark: Option<String>,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        group_by: Option<GroupBy>,
        #[arg(long, default_value = "brier")]
        metric: MetricId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = BOOTSTRAP_REPLICATES)]
        replicates: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { benchmark, data_dir, datasets, models, classes, n_cal, n_test, miscal, seed } => {
            let rows = cmd_synth(&SynthConfig {
                out: data_dir.join(&benchmark),
                n_datasets: datasets,
                models_per_dataset: models,
                k: classes,
                n_cal,
                n_test,
                miscal,
                seed,
            })?;
            eprintln!("wrote {} experiments to {}", rows.len(), data_dir.join(&benchmark).display());
            Ok(())
        }
        Command::Run { benchmark, calibrators, data_dir, out, seed, jobs, metrics, timings } => {
            let metrics = if metrics.is_empty() { MetricId::ALL.to_vec() } else { metrics };
            let cfg = RunConfig { benchmark, calibrators, data_dir, out, seed, jobs, metrics, timings };
            let summary = cmd_run(&cfg)?;
            eprintln!(
                "{} experiments, {} rows, {} fallbacks -> {}",
                summary.experiments,
                summary.rows,
                summary.fallbacks,
                cfg.out.display()
            );
            if summary.unloadable > 0 {
                return Err(CliError::IncompleteResults(format!(
                    "{} experiments could not be loaded",
                    summary.unloadable
                )));
            }
            Ok(())
        }
        Command::Report { results, benchmark, data_dir, out, group_by, metric, seed, replicates, alpha } => {
            let manifest = benchmark.map(|b| data_dir.join(b).join(MANIFEST_FILE));
            let cfg = ReportConfig { results, manifest, out, group_by, metric, seed, replicates, alpha };
            let outputs = cmd_report(&cfg)?;
            eprintln!("grouped by {}; wrote {}", outputs.group_by, cfg.out.display());
            Ok(())
        }
    }
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
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("calbench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
