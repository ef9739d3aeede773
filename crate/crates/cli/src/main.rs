use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Low-light image enhancement with a structure-guided diffusion transformer.
#[derive(Parser)]
#[command(name = "sdtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a paired low/high dataset by darkening source images.
    SynthData(SynthArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Enhance every image in a directory with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Compute PSNR/SSIM of predictions against references.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Directory of source (well-lit) images.
    #[arg(long)]
    pub src: PathBuf,
    /// Output root; `low/` and `high/` are created inside.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.03)]
    pub sigma: f64,
    /// Use at most this many source images.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output format: ppm or png.
    #[arg(long, default_value = "ppm")]
    pub format: String,
}

#[derive(Args)]
pub struct TrainArgs {
    /// `key = value` config file; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root with `low/` and `high/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset root whose first pair is evaluated at checkpoints.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Config override, `key=value`; may be repeated and wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// DDIM steps; defaults to the checkpoint's `ddim_steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// CSV report path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of random seeds per check.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Corrupt the named check's analytic gradient (harness self-test).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => commands::train(a),
        Command::Enhance(a) => commands::enhance(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
