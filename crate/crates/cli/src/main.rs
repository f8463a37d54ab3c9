//! `lbanp`: train, evaluate, play the wheel bandit and benchmark neural processes.

mod commands;
mod config_file;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "lbanp", version, about = "Latent-bottlenecked attention neural processes")]
pub struct Cli {
    /// Flat `key = value` file; names match the flags and flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Meta-train one model and write its checkpoint and learning curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint on fresh tasks.
    Eval(EvalArgs),
    /// Play the wheel bandit with a checkpoint and the uniform baseline.
    Bandit(BanditArgs),
    /// FLOP counts, timings and fitted scaling exponents.
    Bench(BenchArgs),
    /// Train one LBANP per latent count and record its log-likelihood.
    SweepLatents(SweepArgs),
}

#[derive(Clone, Debug, Args)]
pub struct DataArgs {
    /// Directory of PGM images; synthetic images are used without it.
    #[arg(long)]
    pub image_dir: Option<PathBuf>,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 256)]
    pub images: usize,
    /// Seed of the synthetic image set.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "lbanp")]
    pub model: String,
    #[arg(long, default_value = "diag")]
    pub head: String,
    /// gp-rbf, gp-matern52, image or wheel.
    #[arg(long, default_value = "gp-rbf")]
    pub task: String,
    #[arg(long)]
    pub latents: Option<usize>,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1000)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 64)]
    pub eval_tasks: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub d_ff: usize,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to the task the checkpoint was trained on.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 128)]
    pub eval_tasks: usize,
    /// First evaluation seed.
    #[arg(long, default_value_t = commands::EVAL_SEED)]
    pub eval_seed: u64,
    /// Results file; rows are appended. Defaults to `eval.csv` beside the checkpoint.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Clone, Debug, Args)]
pub struct BanditArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.7")]
    pub delta: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ucb_c: f64,
    #[arg(long, default_value = "bandit")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "tnp-d,eqtnp,lbanp")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096,8192,16384,32768")]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub latents: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    /// Timed repetitions per point; 0 counts FLOPs only.
    #[arg(long, default_value_t = 0)]
    pub reps: usize,
    #[arg(long, default_value = "bench")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256")]
    pub latents_grid: Vec<usize>,
    /// Evaluation seeds per trained model.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

/// Command-line failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<lbanp_core::NpError> for Failure {
    fn from(e: lbanp_core::NpError) -> Self {
        Failure {
            code: if e.is_numeric() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn parse_args(args: Vec<OsString>) -> Result<Cli, clap::Error> {
    let matches = Cli::command().try_get_matches_from(&args)?;
    let Some(path) = matches.get_one::<PathBuf>("config").cloned() else {
        return Cli::from_arg_matches(&matches);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Cli::command().error(
            clap::error::ErrorKind::Io,
            format!("cannot read config {}: {e}", path.display()),
        )
    })?;
    let entries = config_file::parse(&text, &path)
        .map_err(|m| Cli::command().error(clap::error::ErrorKind::InvalidValue, m))?;
    let Some((name, sub)) = matches.subcommand() else {
        return Cli::from_arg_matches(&matches);
    };
    let cmd = Cli::command();
    let known = cmd.find_subcommand(name).expect("parsed subcommand exists");
    if let Some((key, _)) = entries
        .iter()
        .find(|(k, _)| !known.get_arguments().any(|a| a.get_long() == Some(k.as_str())))
    {
        return Err(Cli::command().error(
            clap::error::ErrorKind::UnknownArgument,
            format!("{}: unknown key '{key}' for {name}", path.display()),
        ));
    }
    let mut merged = args;
    merged.extend(config_file::file_args(&entries, sub));
    let matches = Cli::command().try_get_matches_from(&merged)?;
    Cli::from_arg_matches(&matches)
}

fn main() -> ExitCode {
    let cli = match parse_args(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
