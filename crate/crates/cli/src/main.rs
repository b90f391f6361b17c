//! `ics`: offline jobs, the HTTP service, and a client for a running
//! service. Every subcommand prints a JSON report on stdout.

mod jobs;
mod remote;

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Parser, Subcommand};
use ics_core::data_prep::SyntheticConfig;
use ics_core::service::ServeConfig;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "ics", version, about = "Customer-service scenario recognition")]
struct Cli {
    /// Also write the JSON report to this file.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic catalog, session logs and replay set.
    GenerateSynthetic {
        #[arg(long)]
        out: PathBuf,
        /// TOML overriding the generator defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Turn session logs into triplet splits, word vectors and idf weights.
    PrepareData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune one bundled teacher.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the student against a teacher panel.
    Distill {
        #[arg(long)]
        config: PathBuf,
    },
    /// Two-stage training of the aspect-fused model.
    TrainHybrid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Classification metrics of a checkpoint.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Single-pair latency of a checkpoint.
    BenchLatency {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve the HTTP API until Ctrl-C.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a labelled replay set through the serving pipeline.
    ReplayEvaluate {
        /// Serving config naming the models and catalog.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        replay: PathBuf,
    },
    /// Talk to a running service.
    Client {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        command: remote::ClientCommand,
    },
}

fn emit(report: &Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    println!("{text}");
    if let Some(p) = path {
        std::fs::write(p, text + "\n")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let report = match &cli.command {
        Command::GenerateSynthetic { out, config } => {
            let config: SyntheticConfig = match config {
                Some(p) => jobs::read_toml(p)?,
                None => SyntheticConfig::default(),
            };
            jobs::generate_synthetic(&config, out)?
        }
        Command::PrepareData { config } => jobs::prepare_data(&jobs::read_toml(config)?)?,
        Command::TrainTeacher { config } => jobs::train_teacher_job(&jobs::read_toml(config)?)?,
        Command::Distill { config } => jobs::distill_job(&jobs::read_toml(config)?)?,
        Command::TrainHybrid { config } => jobs::train_hybrid_job(&jobs::read_toml(config)?)?,
        Command::Evaluate { config } => jobs::evaluate_job(&jobs::read_toml(config)?)?,
        Command::BenchLatency { config } => jobs::bench_job(&jobs::read_toml(config)?)?,
        Command::Serve { config } => {
            let config: ServeConfig = ics_server::load_config(config)?;
            tokio::runtime::Runtime::new()?.block_on(ics_server::run(&config))?;
            return Ok(());
        }
        Command::ReplayEvaluate { config, replay } => jobs::replay_job(&ics_server::load_config(config)?, replay)?,
        Command::Client { url, command } => tokio::runtime::Runtime::new()?.block_on(remote::run(url, command))?,
    };
    emit(&report, cli.report.as_deref())
}
