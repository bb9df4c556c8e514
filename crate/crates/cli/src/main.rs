use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use divrank::experiment::{Experiment, ExperimentConfig, Stage};
use serde_json::json;

#[derive(Parser)]
#[command(name = "divrank", version, about = "Diversification re-ranking experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(short, long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load, filter, normalize and split the dataset.
    Prepare,
    /// Fit the matrix-factorization baseline.
    Train,
    /// Write per-user candidate lists.
    Candidates,
    /// Choose the candidate-list length from greedy re-ranking depth.
    CalibrateM,
    /// Fetch one-sentence item descriptions.
    DescribeItems,
    /// Produce recommendation lists for every configured re-ranker.
    Rerank,
    /// Score every run.
    Evaluate,
    /// Write summary tables.
    Report,
    /// All stages in order.
    Run,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Prepare => Stage::Prepare,
            Command::Train => Stage::Train,
            Command::Candidates => Stage::Candidates,
            Command::CalibrateM => Stage::CalibrateM,
            Command::DescribeItems => Stage::DescribeItems,
            Command::Rerank => Stage::Rerank,
            Command::Evaluate => Stage::Evaluate,
            Command::Report => Stage::Report,
            Command::Run => return None,
        })
    }

    fn name(self) -> &'static str {
        self.stage().map_or("run", Stage::name)
    }
}

fn error_chain(err: &dyn std::error::Error) -> Vec<String> {
    let mut chain = vec![err.to_string()];
    let mut cur = err.source();
    while let Some(e) = cur {
        chain.push(e.to_string());
        cur = e.source();
    }
    chain
}

/// Writes `failure.json` into the output directory, or to stderr when there is none.
fn report_failure(output_dir: Option<&Path>, command: &str, err: &dyn std::error::Error) {
    let manifest = json!({
        "status": "failed",
        "command": command,
        "error": err.to_string(),
        "causes": error_chain(err)[1..].to_vec(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("json value serializes");
    log::error!("{command} failed: {err}");
    if let Some(dir) = output_dir {
        if std::fs::create_dir_all(dir).is_ok() && std::fs::write(dir.join("failure.json"), &text).is_ok() {
            eprintln!("failure manifest written to {}", dir.join("failure.json").display());
            return;
        }
    }
    eprintln!("{text}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command = cli.command;

    let mut config = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            report_failure(cli.output_dir.as_deref(), command.name(), &e);
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = cli.output_dir {
        config.output_dir = dir;
    }
    let output_dir = config.output_dir.clone();
    let _ = std::fs::remove_file(output_dir.join("failure.json"));

    let mut experiment = match Experiment::new(config) {
        Ok(e) => e,
        Err(e) => {
            report_failure(Some(&output_dir), command.name(), &e);
            return ExitCode::from(2);
        }
    };
    let result = match command.stage() {
        Some(stage) => experiment.run_stage(stage),
        None => experiment.run().map(|summary| {
            println!(
                "m = {}; {} runs evaluated; {} failed user re-rankings; cost ${:.2}; output in {}",
                summary.m,
                summary.reports.len(),
                summary.failures.rerank.len(),
                summary.telemetry.cost.total,
                summary.output_dir.display()
            );
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_failure(Some(&output_dir), command.name(), &e);
            ExitCode::FAILURE
        }
    }
}
