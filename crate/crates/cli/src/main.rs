use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mixconf::experiment::{
    run_calibration, run_lambda_diagnostics, run_ssl, run_threshold_sweep, ExperimentConfig,
    ExperimentKind,
};

#[derive(Parser)]
#[command(name = "mixconf", version, about = "MixConf experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibration study: ECE and error per augmentor and training-set size.
    Calibrate(RunArgs),
    /// Semi-supervised training against its supervised baseline.
    Ssl(RunArgs),
    /// Test error and training loss across confidence thresholds.
    SweepThreshold(RunArgs),
    /// Histogram of sampled mixing ratios against the analytic density.
    LambdaDiag(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; omitted keys take the subcommand defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (JSON, or CSV for lambda-diag).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
}

impl RunArgs {
    fn load(&self, kind: ExperimentKind) -> anyhow::Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text, Some(kind))
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default_for(kind),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = Some(out.clone());
        }
        if let Some(repeats) = self.repeats {
            config.repeats = repeats;
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    let summary = match cli.command {
        Command::Calibrate(args) => {
            let study = run_calibration(&args.load(ExperimentKind::Calibrate)?)?;
            let cells: Vec<_> = study
                .cells
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "proportion": c.proportion,
                        "arm": c.arm,
                        "ece_mean": c.ece.mean,
                        "ece_sd": c.ece.sd,
                        "error_mean": c.error.mean,
                    })
                })
                .collect();
            serde_json::json!({ "seed": study.seed, "cells": cells })
        }
        Command::Ssl(args) => {
            let study = run_ssl(&args.load(ExperimentKind::Ssl)?)?;
            serde_json::json!({
                "seed": study.seed,
                "ssl_error": study.ssl.error,
                "baseline_error": study.baseline.error,
            })
        }
        Command::SweepThreshold(args) => {
            let sweep = run_threshold_sweep(&args.load(ExperimentKind::ThresholdSweep)?)?;
            let rows: Vec<_> = sweep
                .rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "c_thr": r.c_thr,
                        "test_error": r.test_error.mean,
                        "final_training_loss": r.final_training_loss.mean,
                    })
                })
                .collect();
            serde_json::json!({ "seed": sweep.seed, "rows": rows })
        }
        Command::LambdaDiag(args) => {
            let diag = run_lambda_diagnostics(&args.load(ExperimentKind::LambdaDiagnostics)?)?;
            if diag.config.out.is_none() {
                diag.write_csv(std::io::stdout().lock())?;
            }
            serde_json::json!({
                "seed": diag.seed,
                "bins": diag.rows.len(),
                "max_bin_deviation": diag.max_bin_deviation(),
            })
        }
    };
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}
