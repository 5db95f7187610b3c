use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use expanet_cli::{run, CliError, Command, PipelineConfig};

#[derive(Parser)]
#[command(name = "expanet", version, about = "EEG graph classification and mask-based explanation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON pipeline configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Work directory for stage outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding recordings.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Subjects to synthesise (even).
    #[arg(long, global = true)]
    n_subjects: Option<usize>,
    /// Train and explain with labels permuted across segments.
    #[arg(long, global = true)]
    shuffle_labels: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write a synthetic two-class dataset into the data directory.
    Synth,
    /// Filter and epoch every recording.
    Preprocess,
    /// Per-channel features for every epoch.
    Featurize,
    /// Phase-locking graphs with top-k sparsification.
    Graph,
    /// Subject-wise cross-validation and a full-data model.
    Train,
    /// Optimise explanation masks with the trained model.
    Explain,
    /// Tables and charts from the explanations.
    Report,
    /// preprocess, featurize, graph, train, explain and report in order.
    Run,
}

fn config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.work_dir = out.clone();
    }
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    if let Some(n) = cli.n_subjects {
        cfg.n_subjects = n;
    }
    if cli.shuffle_labels {
        cfg.shuffle_labels = true;
    }
    cfg.resolve()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Synth => Command::Synth,
        Cmd::Preprocess => Command::Preprocess,
        Cmd::Featurize => Command::Featurize,
        Cmd::Graph => Command::Graph,
        Cmd::Train => Command::Train,
        Cmd::Explain => Command::Explain,
        Cmd::Report => Command::Report,
        Cmd::Run => Command::Run,
    };
    match config(&cli).and_then(|cfg| run(command, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
