use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Probabilistic warp-consistency experiments on a synthetic matching corpus.
#[derive(Parser, Debug)]
#[command(name = "pwarpc", version)]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic corpus to a directory with a manifest.
    MakeDataset(MakeDatasetArgs),
    /// Train an encoder and write checkpoints and a loss log.
    Train(TrainArgs),
    /// Evaluate checkpoints: PCK, dense transfer PCK and sparsification.
    Eval(EvalArgs),
    /// Finite-difference check of every op, loss and composite objective.
    Gradcheck(GradcheckArgs),
    /// Draw training warps and write them with warped images.
    SampleWarps(SampleWarpsArgs),
}

#[derive(Args, Debug)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `data.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `make-dataset`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// weak, strong, warp_sup_only, pw_bipath_only, max_score or min_entropy
    /// (overrides `train.objective`).
    #[arg(long)]
    pub objective: Option<String>,
    /// Continue from a checkpoint; without a path, the latest one in
    /// `<out>/checkpoints`.
    #[arg(long, num_args = 0..=1)]
    pub resume: Option<Option<PathBuf>>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint file; repeat to evaluate several.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val or test (default: `eval.split`).
    #[arg(long)]
    pub split: Option<String>,
    /// Experiment directory; results go to `<out>/eval`.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the `config.echo` next to the first checkpoint's directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SampleWarpsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage errors are contract errors; exit code 2 is reserved for I/O.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::MakeDataset(a) => commands::make_dataset(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::SampleWarps(a) => commands::sample_warps(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
