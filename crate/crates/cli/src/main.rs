//! `synopsis`: generate synthetic engagement data, train the built-in toy
//! policy, orchestrate remote rollout scoring, and inspect the results.
//!
//! Exit codes: 0 success, 2 config, 3 I/O, 4 backend, 5 validation.

mod commands;
mod config;
mod error;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use commands::{EvalArgs, TrainToyFlags};
use synopsis_core::trainer::SMOOTHING_WINDOW;

#[derive(Parser)]
#[command(name = "synopsis", version, about = "Reward-driven synopsis training harness")]
struct Cli {
    /// TOML config file; command line flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic engagement logs and the four derived sample files.
    GenData {
        /// Run directory for logs, samples, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override [gen].seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override [gen].member_count.
        #[arg(long)]
        members: Option<usize>,
    },
    /// Train the built-in softmax policy against the toy reward oracle.
    TrainToy {
        /// Run directory for checkpoint, metrics, and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override [train].max_steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override [train].learning_rate.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override [train].lambda (length penalty weight).
        #[arg(long)]
        lambda: Option<f64>,
        /// Override [train].length_budget.
        #[arg(long)]
        length_budget: Option<usize>,
        /// Override [train].format_penalty_on.
        #[arg(long)]
        format_penalty: Option<bool>,
        /// Toy reward oracle: presence, per_occurrence, or listwise.
        #[arg(long)]
        reward_mode: Option<String>,
        /// Override [seeds].sampling.
        #[arg(long)]
        sampling_seed: Option<u64>,
    },
    /// Sample synopses from the actor backend, score them with the reward
    /// backend, and export advantage-annotated batches as JSONL.
    ExportBatches {
        /// Sample file (pointwise or listwise JSONL, per the reward mode).
        #[arg(long)]
        samples: PathBuf,
        /// Run directory for batches.jsonl and the manifest.
        #[arg(long)]
        out: PathBuf,
        /// Override [train].reward_mode: pointwise_string,
        /// pointwise_logprob, or listwise.
        #[arg(long)]
        mode: Option<String>,
        /// Answer actor requests from a scripted response file instead of
        /// [backend.actor].
        #[arg(long)]
        mock_actor_script: Option<PathBuf>,
        /// Answer reward requests from a scripted response file instead of
        /// [backend.reward].
        #[arg(long)]
        mock_reward_script: Option<PathBuf>,
    },
    /// Score pre-written summaries against aligned samples and write one
    /// reward breakdown per pair.
    Score {
        /// Summaries file: one JSON string per line.
        #[arg(long)]
        summaries: PathBuf,
        /// Sample file aligned line for line with the summaries.
        #[arg(long)]
        samples: PathBuf,
        /// Output JSONL of reward breakdowns.
        #[arg(long)]
        out: PathBuf,
        /// Override [train].reward_mode.
        #[arg(long)]
        mode: Option<String>,
        /// Answer reward requests from a scripted response file.
        #[arg(long)]
        mock_reward_script: Option<PathBuf>,
    },
    /// Report mean reward with a bootstrap standard error, either for a toy
    /// checkpoint or against remote backends.
    Eval {
        /// Toy policy checkpoint to evaluate.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Validation sample file (remote mode).
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Rollouts to draw in toy mode.
        #[arg(long, default_value_t = 256)]
        rollouts: usize,
        /// Bootstrap resamples behind the reported standard error.
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        /// Seed for the bootstrap resampling.
        #[arg(long, default_value_t = 17)]
        bootstrap_seed: u64,
        /// Override [train].reward_mode (remote mode).
        #[arg(long)]
        mode: Option<String>,
        /// Answer actor requests from a scripted response file.
        #[arg(long)]
        mock_actor_script: Option<PathBuf>,
        /// Answer reward requests from a scripted response file.
        #[arg(long)]
        mock_reward_script: Option<PathBuf>,
    },
    /// Trailing-window smooth one metrics column into a CSV.
    SmoothMetrics {
        /// metrics.jsonl produced by train-toy.
        #[arg(long = "in")]
        input: PathBuf,
        /// Trailing window size in steps.
        #[arg(long, default_value_t = SMOOTHING_WINDOW)]
        window: usize,
        /// Which column to smooth.
        #[arg(long, default_value = "train_reward")]
        field: String,
        /// Output CSV path; omit to print to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), error::CliError> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::GenData { out, seed, members } => {
            commands::cmd_gen_data(config, &out, seed, members)
        }
        Command::TrainToy {
            out,
            steps,
            learning_rate,
            lambda,
            length_budget,
            format_penalty,
            reward_mode,
            sampling_seed,
        } => commands::cmd_train_toy(
            config,
            &out,
            TrainToyFlags {
                steps,
                learning_rate,
                lambda,
                length_budget,
                format_penalty,
                reward_kind: reward_mode,
                sampling_seed,
            },
        ),
        Command::ExportBatches {
            samples,
            out,
            mode,
            mock_actor_script,
            mock_reward_script,
        } => commands::cmd_export_batches(
            config,
            &samples,
            &out,
            mode.as_deref(),
            mock_actor_script.as_deref(),
            mock_reward_script.as_deref(),
        ),
        Command::Score {
            summaries,
            samples,
            out,
            mode,
            mock_reward_script,
        } => commands::cmd_score(
            config,
            &summaries,
            &samples,
            &out,
            mode.as_deref(),
            mock_reward_script.as_deref(),
        ),
        Command::Eval {
            checkpoint,
            samples,
            rollouts,
            resamples,
            bootstrap_seed,
            mode,
            mock_actor_script,
            mock_reward_script,
        } => commands::cmd_eval(
            config,
            EvalArgs {
                checkpoint,
                samples,
                rollouts,
                resamples,
                bootstrap_seed,
                mode,
                mock_actor: mock_actor_script,
                mock_reward: mock_reward_script,
            },
        ),
        Command::SmoothMetrics {
            input,
            window,
            field,
            out,
        } => commands::cmd_smooth_metrics(&input, window, &field, out.as_deref()),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
