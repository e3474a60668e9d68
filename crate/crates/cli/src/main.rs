//! Experiment runner for penalized FTRL under time-varying constraints.
//!
//! `pftrl run <config.json>` executes the configured run matrix and writes
//! one CSV trace per run plus a JSON report with certificates, condition
//! checks and benchmark data. `pftrl verify <config.json>` runs only the
//! constraint-stream checkers. Exit codes: 0 ok, 1 run failure, 2 config
//! error.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use runner::{
    condition_reports, digest_hex, run_experiment, write_report, ExperimentReport, RunnerOptions,
};

#[derive(Parser)]
#[command(
    name = "pftrl",
    version,
    about = "Online learning with time-varying constraints: experiment runner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the experiment config (JSON).
    config: PathBuf,
    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replace the config's horizon list with a single horizon.
    #[arg(long)]
    horizon_override: Option<usize>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid resolution override (points per axis).
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the run matrix and emit CSV traces plus a JSON report.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Validate the config and print the planned run matrix only.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run the constraint-stream condition checkers without any learner.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn load(common: &CommonArgs) -> Result<(ExperimentConfig, String, RunnerOptions), String> {
    let (mut config, raw) = ExperimentConfig::load(&common.config).map_err(|e| e.to_string())?;
    if let Some(seed) = common.seed_override {
        config.seeds = vec![seed];
    }
    if let Some(horizon) = common.horizon_override {
        config.horizons = vec![horizon];
    }
    if let Some(grid) = common.grid {
        config.grid_points = grid;
    }
    config.validate().map_err(|e| e.to_string())?;
    let options = RunnerOptions {
        output_dir: common
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(&config.output_dir)),
        grid_points: config.grid_points,
        dry_run: false,
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok((config, raw, options))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, dry_run } => {
            let (config, raw, mut options) = match load(&common) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            options.dry_run = dry_run;
            match run_experiment(&config, &raw, &options) {
                Ok(report) => {
                    if dry_run {
                        return ExitCode::SUCCESS;
                    }
                    let path = options
                        .output_dir
                        .join(format!("{}_report.json", config.experiment));
                    if let Err(e) = write_report(&report, &path) {
                        eprintln!("run error: {e}");
                        return ExitCode::from(1);
                    }
                    println!(
                        "ok: {} runs, report at {} (config digest {})",
                        report.runs.len(),
                        path.display(),
                        report.config_digest
                    );
                    ExitCode::SUCCESS
                }
                Err(errors) => {
                    for e in errors {
                        eprintln!("run error: {e}");
                    }
                    ExitCode::from(1)
                }
            }
        }
        Command::Verify { common } => {
            let (config, raw, options) = match load(&common) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            match condition_reports(&config, &options) {
                Ok(conditions) => {
                    for c in &conditions {
                        let cond3: Vec<String> = c
                            .report
                            .condition3
                            .iter()
                            .enumerate()
                            .map(|(j, r)| match r {
                                Some(r) => format!(
                                    "stream {j}: cond3 {} (margin {:.3})",
                                    if r.verdict { "pass" } else { "fail" },
                                    r.margin
                                ),
                                None => format!("stream {j}: cond3 n/a"),
                            })
                            .collect();
                        println!(
                            "c={} seed={}: cond2 {} (eta {:.4}, beta {:.4}); {}; P+ {:?} P- {:?}",
                            c.c_label,
                            c.seed,
                            if c.report.condition2.verdict {
                                "pass"
                            } else {
                                "fail"
                            },
                            c.report.condition2.eta,
                            c.report.condition2.beta,
                            cond3.join("; "),
                            c.report.partition.p_plus,
                            c.report.partition.p_minus,
                        );
                    }
                    if let Err(e) = std::fs::create_dir_all(&options.output_dir) {
                        eprintln!(
                            "run error: cannot create {}: {e}",
                            options.output_dir.display()
                        );
                        return ExitCode::from(1);
                    }
                    let report = ExperimentReport {
                        experiment: config.experiment.clone(),
                        config_digest: digest_hex(raw.as_bytes()),
                        grid_points: options.grid_points,
                        runs: Vec::new(),
                        certificates: Vec::new(),
                        conditions,
                    };
                    let path = options
                        .output_dir
                        .join(format!("{}_verify.json", config.experiment));
                    if let Err(e) = write_report(&report, &path) {
                        eprintln!("run error: {e}");
                        return ExitCode::from(1);
                    }
                    println!("ok: verify report at {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(errors) => {
                    for e in errors {
                        eprintln!("run error: {e}");
                    }
                    ExitCode::from(1)
                }
            }
        }
    }
}
