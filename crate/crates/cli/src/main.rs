//! `esbench`: generate data, build indexes, train models, serve the
//! pipeline, drive load, and report — one binary for the whole benchmark.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "esbench",
    about = "End-to-end online-service benchmark: catalog search with \
             recommendation, tiered retrieval, ranking, and scheduled retraining.",
    version
)]
struct Cli {
    /// TOML run configuration; desk-scale defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the command's output directory or file.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Override the profile's RNG seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Role {
    All,
    Planer,
    Recommender,
    Searcher,
    Ranker,
    Trainer,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the product catalog, users, query logs, and tier labels.
    Datagen,
    /// Build the tiered index snapshot from the generated corpus.
    Index,
    /// Train both models on the corpus and write version-1 artifacts.
    Train,
    /// Boot services and run until interrupted.
    Serve {
        /// Which role to run; `all` boots the whole pipeline in-process.
        #[arg(long, value_enum, default_value_t = Role::All)]
        role: Role,
    },
    /// Run the closed-loop load benchmark and write samples plus report.
    Bench,
    /// Rebuild the report from a samples CSV.
    Report {
        /// Samples file written by `bench`.
        samples: PathBuf,
    },
    /// Time one serving kernel.
    Micro {
        /// dense, relu, sigmoid, softmax, or elementwise_multiply.
        kernel: String,
        /// Operand shape as MxKxN, e.g. 64x256x256.
        shape: String,
        /// Invocations to time.
        #[arg(default_value_t = 1000)]
        reps: usize,
    },
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_target(false)
        .init();

    let cli = Cli::parse();
    let config = RunConfig::load(cli.config.as_deref())?;

    match cli.command {
        Command::Datagen => commands::cmd_datagen(&config, cli.out.as_deref(), cli.seed),
        Command::Index => commands::cmd_index(&config, cli.out.as_deref()),
        Command::Train => commands::cmd_train(&config, cli.out.as_deref(), cli.seed),
        Command::Serve { role } => commands::cmd_serve(&config, role).await,
        Command::Bench => commands::cmd_bench(&config, cli.out.as_deref(), cli.seed).await,
        Command::Report { samples } => commands::cmd_report(&config, &samples, cli.out.as_deref()),
        Command::Micro {
            kernel,
            shape,
            reps,
        } => commands::cmd_micro(&kernel, &shape, reps),
    }
}
