use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod report;

#[derive(Parser)]
#[command(name = "modicf", version, about = "Missing-modality completion and debiased multimodal recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset directory.
    Synth(SynthArgs),
    /// Hide a fraction of item-modality cells.
    Mask(MaskArgs),
    /// Run the diffusion pretraining stage and save a checkpoint.
    Pretrain(TrainArgs),
    /// Train to completion (or resume) and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes report.json, report.csv and manifest.json.
    Eval(EvalArgs),
    /// Export completed feature matrices.
    Impute(ImputeArgs),
    /// Print top-K recommendations as TSV.
    Recommend(RecommendArgs),
    /// Aggregate manifests across seeds into Markdown and CSV tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    groups: usize,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MaskArgs {
    /// Complete dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Preset name (desk, baby, tiktok, allrecipes) or a JSON config file.
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many epochs and stage transitions.
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    k: Vec<usize>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Users to list; all users when omitted.
    #[arg(long, value_delimiter = ',')]
    user: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long, default_value = "full")]
    baseline: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::check_threads().and_then(|_| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Mask(a) => commands::mask(a),
        Command::Pretrain(a) => commands::train(a, true),
        Command::Train(a) => commands::train(a, false),
        Command::Eval(a) => commands::eval(a),
        Command::Impute(a) => commands::impute(a),
        Command::Recommend(a) => commands::recommend(a),
        Command::Report(a) => report::run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, class) = commands::classify(&e);
            eprintln!("modicf: {class}: {e:#}");
            ExitCode::from(code)
        }
    }
}
