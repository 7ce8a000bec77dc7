use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protgo::Namespace;

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "protgo", version, about = "Predict top-level GO terms from protein sequence")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate an OBO file, print term counts and top-level dictionaries.
    InspectOntology(InspectArgs),
    /// Build a dataset from an ontology, an annotation table and a FASTA file.
    BuildDataset(BuildArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Predict top-level terms for FASTA sequences.
    Predict(PredictArgs),
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub obo: PathBuf,
    /// BP, CC or MF; all three when omitted.
    #[arg(long)]
    pub namespace: Option<Namespace>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long)]
    pub obo: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub fasta: PathBuf,
    #[arg(long)]
    pub namespace: Namespace,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.manifest.toml`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Comma-separated evidence codes to keep.
    #[arg(long, value_delimiter = ',')]
    pub evidence: Option<Vec<String>>,
    #[arg(long)]
    pub protein_column: Option<String>,
    #[arg(long)]
    pub term_column: Option<String>,
    #[arg(long)]
    pub evidence_column: Option<String>,
    #[arg(long)]
    pub qualifier_column: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint path; the log and resolved config are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub conv_filters: Option<usize>,
    #[arg(long)]
    pub gru_hidden: Option<usize>,
    #[arg(long)]
    pub dense_hidden: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// One or more thresholds, comma-separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub threshold: Option<Vec<f64>>,
    /// Report path; with several thresholds one file per threshold is written
    /// as `<stem>.t<threshold>.<ext>`. Printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-label table as `<report>.tsv`.
    #[arg(long)]
    pub tsv: bool,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub fasta: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Emit the most probable term when none clears the threshold.
    #[arg(long)]
    pub min_one: bool,
    /// JSON output instead of tab-separated lines.
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn resolve_config(cli: &Cli) -> protgo::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= cli.deterministic;
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> protgo::Result<()> {
    let cfg = resolve_config(&cli)?;
    let threads = if cfg.deterministic { Some(1) } else { cfg.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| protgo::Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::InspectOntology(a) => commands::inspect_ontology(&a),
        Command::BuildDataset(a) => commands::build_dataset(&a, cfg),
        Command::Train(a) => commands::train(&a, cfg),
        Command::Evaluate(a) => commands::evaluate(&a, &cfg),
        Command::Predict(a) => commands::predict(&a, &cfg),
    }
}

/// 0 success, 2 input or validation error, 3 numerical failure.
fn exit_code(e: &protgo::Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
