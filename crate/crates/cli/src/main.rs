//! `mta`: build journeys, train the attribution model, and use its credit
//! for evaluation, budget replay and user segmentation.
//!
//! Log verbosity follows `RUST_LOG` (default `info`).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mta", version, about = "Multi-touch attribution pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// TOML run configuration. Missing keys take their defaults; unknown keys
    /// are an error. [default: built-in defaults]
    #[arg(long, short)]
    config: Option<PathBuf>,
}

/// Which partition of the split manifest to operate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a confounded synthetic dataset with known per-touchpoint credit.
    ///
    /// Writes journeys.jsonl, ground_truth.json, vocab.json and split.json.
    Synth {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory. [default: <output_dir>/synth from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build encoded journeys from an impression log.
    ///
    /// Writes journeys.jsonl, vocab.json, split.json and ingest_report.json.
    Ingest {
        /// Delimited impression log. [default: data.log from the config]
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory. [default: <output_dir>/ingest from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the train split, selecting by validation loss; runs a grid
    /// search when the config has a [train.grid] table.
    ///
    /// Writes model.ckpt, training_report.json and training_history.csv.
    Train {
        /// Dataset directory produced by `synth` or `ingest`.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Model directory. [default: <output_dir>/train from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score conversion and click predictions (log-losses, AUC).
    ///
    /// Writes metrics.json and metrics.csv.
    Eval {
        /// Model directory produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Partition to score.
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[command(flatten)]
        config: ConfigArg,
        /// Report directory. [default: <output_dir>/eval from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-touchpoint credit from the model or a baseline.
    Attribute {
        /// Model directory produced by `train`; required unless --baseline is given.
        #[arg(long, required_unless_present = "baseline")]
        model: Option<PathBuf>,
        /// Use a reference method instead of the model: first, last, linear or
        /// lr (logistic regression fitted on the train split).
        #[arg(long)]
        baseline: Option<String>,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Partition to attribute.
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[command(flatten)]
        config: ConfigArg,
        /// Attribution file. [default: <output_dir>/attribute/attribution.jsonl from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Allocate budget by attributed ROI and replay the impressions under it.
    ///
    /// Writes budget_report.json and budget_sweep.csv.
    Budget {
        /// Attribution file from `attribute`.
        #[arg(long)]
        attrib: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Partition to replay.
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// Comma-separated shares of the total scaled cost to allocate.
        /// [default: budget.fractions from the config, 0.2,0.4,0.6,0.8,1.0]
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Multiplier on raw impression costs. [default: budget.cost_scale from the config, 1000]
        #[arg(long)]
        cost_scale: Option<f64>,
        /// Value of one conversion in the ROI numerator. [default: budget.value from the config, 1]
        #[arg(long)]
        value: Option<f64>,
        /// Lift every channel budget so no journey is ever blacklisted.
        #[arg(long)]
        uncapped: bool,
        #[command(flatten)]
        config: ConfigArg,
        /// Report directory. [default: <output_dir>/budget from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split users into low/medium/high return groups and summarize their
    /// channel affinity. Needs model attributions (with conversion probabilities).
    ///
    /// Writes segments.json, user_groups.csv and affinity.csv.
    Segment {
        /// Attribution file from `attribute`.
        #[arg(long)]
        attrib: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Partition to segment.
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        /// k-means seed. [default: segment.seed from the config, 2020]
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArg,
        /// Report directory. [default: <output_dir>/segment from the config]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of the full loss on a
    /// small model; fails if the max relative error reaches the tolerance.
    Gradcheck {
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        /// Maximum accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Parameter initialization seed.
        #[arg(long, default_value_t = 21)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out } => commands::synth(config.config.as_deref(), out),
        Command::Ingest { log, config, out } => commands::ingest(config.config.as_deref(), log, out),
        Command::Train { data, config, out } => commands::train(config.config.as_deref(), &data, out),
        Command::Eval {
            model,
            data,
            split,
            config,
            out,
        } => commands::eval(config.config.as_deref(), &model, &data, split, out),
        Command::Attribute {
            model,
            baseline,
            data,
            split,
            config,
            out,
        } => commands::attribute(config.config.as_deref(), model.as_deref(), baseline.as_deref(), &data, split, out),
        Command::Budget {
            attrib,
            data,
            split,
            fractions,
            cost_scale,
            value,
            uncapped,
            config,
            out,
        } => commands::budget(
            config.config.as_deref(),
            &attrib,
            &data,
            split,
            commands::BudgetFlags {
                fractions,
                cost_scale,
                value,
                uncapped,
            },
            out,
        ),
        Command::Segment {
            attrib,
            data,
            split,
            seed,
            config,
            out,
        } => commands::segment(config.config.as_deref(), &attrib, &data, split, seed, out),
        Command::Gradcheck { step, tolerance, seed } => commands::gradcheck(step, tolerance, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
