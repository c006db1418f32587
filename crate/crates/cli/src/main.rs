use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Flag rare alarming responses under a fixed human-review budget.
#[derive(Parser, Debug)]
#[command(name = "alertnet", version, about)]
struct Cli {
    /// Root seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run single-threaded. Outputs are identical either way; this only
    /// removes scheduling from the picture.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert an XML export or JSONL file into a cleaned JSONL corpus.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train a skip-gram embedding on one or more corpora.
    EmbedTrain(EmbedArgs),
    /// Train a preset (or the baseline) and write the model and its manifest.
    Train(TrainArgs),
    /// Score every response of a corpus.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = SourceArg::Threshold)]
        source: SourceArg,
    },
    /// Print the score thresholds for review fractions of a scored corpus.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        /// Review fractions in percent.
        #[arg(long, default_value = "0.1,0.3,0.5,1,2,4")]
        fractions: String,
    },
    /// Catch rates of one or more models on held-out alerts.
    Evaluate(EvaluateArgs),
    /// Attribute effects from catch-rate reports covering the 16-model grid.
    Effects {
        /// Report files written by `evaluate`.
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = FormulaArg::PooledRatio)]
        formula: FormulaArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    responses: usize,
    #[arg(long, default_value_t = 85.0)]
    alerts_per_million: f64,
    /// Emit this many alert-only records instead of a mixed corpus.
    #[arg(long)]
    alerts_only: Option<usize>,
    #[arg(long)]
    typo_rate: Option<f64>,
    #[arg(long)]
    hyperbole_rate: Option<f64>,
    #[arg(long, default_value = "r")]
    id_prefix: String,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 200)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embedding: PathBuf,
    /// Preset name, e.g. `stacked-lstm-attention` or `baseline`.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON file with `preset` and optional `settings`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    alert_weight: Option<f64>,
    #[arg(long)]
    width_scale: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    trainable_embedding: bool,
    #[arg(long)]
    attention_tanh: bool,
    /// LSA rank for the baseline.
    #[arg(long)]
    lsa_rank: Option<usize>,
    /// L2 strength for the baseline's logistic regression.
    #[arg(long)]
    l2: Option<f64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long)]
    threshold: PathBuf,
    /// Review fractions in percent.
    #[arg(long, default_value = "0.1,0.3,0.5,1,2,4")]
    fractions: String,
    /// JSON report path.
    #[arg(long)]
    output: PathBuf,
    /// Also write the text table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SourceArg {
    Threshold,
    HeldoutAlerts,
    Training,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormulaArg {
    PooledRatio,
    PairedRelativeMean,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
