//! `mbgm`: train, inspect and apply the motion-based generator model.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime failure.
//! The effective configuration and results go to stdout as JSON lines;
//! progress goes to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;

const THREADS_ENV: &str = "MBGM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mbgm", version, about = "Motion-based generator model for dynamic patterns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration file plus dotted `key=value` overrides.
#[derive(Debug, Clone, Default, Args)]
struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Configuration override, e.g. `--set train.lambda1=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// How latents are inferred for a video.
#[derive(Debug, Clone, Args)]
struct InferArgs {
    /// Langevin steps run on the video.
    #[arg(long, default_value_t = 150)]
    steps: usize,
    /// Start from zero latents instead of the stored chain.
    #[arg(long)]
    cold: bool,
    /// Stored chain used as the warm start.
    #[arg(long, default_value_t = 0)]
    chain: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a model from one or more frame directories.
    Train {
        /// Frame directory; repeat for multi-sequence training.
        #[arg(long, required = true, value_name = "DIR")]
        video: Vec<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint written at the end and every `checkpoint_every` epochs.
        #[arg(long, value_name = "CKPT")]
        out: PathBuf,
        /// Disable the residual generator.
        #[arg(long)]
        trackable_only: bool,
        /// Continue from a checkpoint.
        #[arg(long, value_name = "CKPT")]
        resume: Option<PathBuf>,
        /// Training log CSV [default: <out>.log.csv].
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Sample a new video from the prior.
    Synthesize {
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        /// Number of transitions; the video has length + 1 frames.
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Split a video into appearance, flows, trackable and residual frames.
    Decompose {
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        video: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        infer: InferArgs,
    },
    /// Animate a still image with the flows of a stored chain.
    Transfer {
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[arg(long, value_name = "IMG")]
        appearance: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        chain: usize,
    },
    /// Swap the motion of two trained models.
    Exchange {
        #[arg(long, value_name = "CKPT")]
        ckpt_a: PathBuf,
        #[arg(long, value_name = "CKPT")]
        ckpt_b: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score how much of a video motion fails to explain.
    Intrackability {
        #[arg(long, value_name = "CKPT")]
        ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        video: PathBuf,
        /// JSON report; a per-frame CSV is written next to it.
        #[arg(long, value_name = "FILE", default_value = "intrackability.json")]
        report: PathBuf,
        #[command(flatten)]
        infer: InferArgs,
    },
    /// Fit and sample the linear dynamic system baseline.
    Lds {
        #[arg(long, value_name = "DIR")]
        video: PathBuf,
        /// State dimension.
        #[arg(long)]
        dim: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Synthesized transitions [default: frames - 1].
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fit without subtracting the temporal mean.
        #[arg(long)]
        no_center: bool,
    },
    /// Color-code a raw flow file.
    Flowviz {
        #[arg(long, value_name = "FILE")]
        flow: PathBuf,
        #[arg(long, value_name = "IMG")]
        out: PathBuf,
        /// Normalizing magnitude [default: the largest in the field].
        #[arg(long)]
        max: Option<f64>,
    },
    /// Finite-difference check of every gradient on the toy configuration.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        /// Problem seed; repeatable.
        #[arg(long = "seed", default_values_t = [1u64, 2, 3])]
        seeds: Vec<u64>,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Err(message) = configure_threads() {
        eprintln!("error: {message}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
