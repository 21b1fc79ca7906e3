use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

/// Acronym disambiguation by candidate ranking.
#[derive(Debug, Parser)]
#[command(name = "acrodis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus statistics and histogram charts.
    Stats(StatsArgs),
    /// Masked-LM pretraining of the encoder on the task corpus.
    Tapt(TaptArgs),
    /// Train the pair classifier.
    Train(TrainArgs),
    /// Pseudo-label unlabelled samples with a trained model and retrain.
    Pseudo(PseudoArgs),
    /// Score every candidate and pick the best expansion.
    Predict(PredictArgs),
    /// Macro metrics for a predictions file, or for the most-frequent baseline.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// Config file plus one override flag per field.
#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    #[arg(long)]
    lr_head: Option<f64>,
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    #[arg(long)]
    lr_min: Option<f64>,
    #[arg(long)]
    negatives_per_batch: Option<usize>,
    #[arg(long)]
    adversarial_epsilon: Option<f64>,
    #[arg(long)]
    pseudo_threshold: Option<f64>,
    #[arg(long)]
    pseudo_rounds: Option<usize>,
    #[arg(long)]
    mask_rate: Option<f64>,
    #[arg(long)]
    tapt_epochs: Option<usize>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    vocab_min_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    attention_heads: Option<usize>,
    #[arg(long)]
    feedforward_dim: Option<usize>,
    #[arg(long)]
    max_positions: Option<usize>,
}

#[derive(Debug, Args)]
struct StrategyArgs {
    /// Balance every batch with dynamically selected negatives (default).
    #[arg(long, overrides_with = "no_dynamic_negatives")]
    dynamic_negatives: bool,
    /// Train on every pair instance instead.
    #[arg(long)]
    no_dynamic_negatives: bool,
    /// Add the embedding-space adversarial pass.
    #[arg(long)]
    adversarial: bool,
    /// Encoder checkpoint written by `tapt`.
    #[arg(long)]
    from_tapt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TaptArgs {
    /// Sample files forming the pretraining corpus; repeat for several.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    strategies: StrategyArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PseudoArgs {
    /// Classifier checkpoint that produces the pseudo labels.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    unlabeled: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    strategies: StrategyArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Predictions file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    /// Most frequent training expansion per acronym.
    Mf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Gold-labelled samples.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, required_unless_present = "baseline")]
    predictions: Option<PathBuf>,
    #[arg(long, requires_all = ["train", "dict"], conflicts_with = "predictions")]
    baseline: Option<Baseline>,
    /// Training samples for the baseline.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Metrics file.
    #[arg(long)]
    out: PathBuf,
    /// Directory for a sampled misclassification report.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    error_sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Input file that does not exist.
#[derive(Debug)]
pub struct MissingArtifact(pub PathBuf);

impl std::fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing artifact: {}", self.0.display())
    }
}

impl std::error::Error for MissingArtifact {}

pub fn require(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingArtifact(path.to_path_buf()).into())
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use acrodis_core::Error as E;
    if err.downcast_ref::<MissingArtifact>().is_some() {
        return 3;
    }
    match err.downcast_ref::<E>() {
        Some(E::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 3,
        Some(E::Io { .. }) => 1,
        Some(E::Divergence { .. } | E::NonFinite(_)) => 4,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(a) => commands::stats(a),
        Command::Tapt(a) => commands::tapt(a),
        Command::Train(a) => commands::train(a),
        Command::Pseudo(a) => commands::pseudo(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
