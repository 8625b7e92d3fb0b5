//! `restyle` — command-line driver for the formality transfer toolkit.
//!
//! Training-flavoured subcommands all read the same TOML config file
//! (`--config`) with the documented key set (model, lr, batch_size, patience,
//! max_epochs, seed, lambda_cls, lambda_bleu, source_reward, fraction,
//! domain_tags, warmup_epochs, and the `paths` table); every flag overrides
//! its config key. Exit codes: 0 on success, 2 for usage or configuration
//! mistakes, 1 for runtime failures. Errors print a single
//! `restyle: <category> error: <detail>` line on stderr.

mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use restyle_core::Error;

#[derive(Parser)]
#[command(
    name = "restyle",
    version,
    about = "Formality style transfer: corpus generation, training, transfer, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus and write it as a data directory
    GenCorpus(GenCorpusArgs),
    /// Train the binary style classifier and save its checkpoint
    TrainClassifier(TrainClassifierArgs),
    /// Pretrain a language model on the unpaired text of both styles
    Pretrain(PretrainArgs),
    /// Fine-tune a model on parallel pairs, optionally with sequence rewards
    Finetune(FinetuneArgs),
    /// Rewrite text in the opposite style, one sentence per line
    Transfer(TransferArgs),
    /// Score a model checkpoint on an evaluation split
    Evaluate(EvaluateArgs),
    /// Run the data-fraction x reward-variant sweep from a spec file
    Ablate(AblateArgs),
}

/// Config file plus per-key override flags, shared by every subcommand that
/// runs a model.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; flags below override their keys
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model kind: causal, seq2seq, or seq2seq-scratch
    #[arg(long)]
    model: Option<String>,
    /// Learning rate (default depends on the model kind and phase)
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    patience: Option<usize>,
    /// Epoch budget
    #[arg(long)]
    max_epochs: Option<usize>,
    /// RNG seed for this run
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated rewards to enable: sc, bleu, source — or none
    #[arg(long)]
    rewards: Option<String>,
    /// Fraction of the parallel training data to use, in (0, 1]
    #[arg(long)]
    fraction: Option<f64>,
    /// Reward-free epochs before policy-gradient terms switch on
    #[arg(long)]
    warmup_epochs: Option<usize>,
    /// Prepend the domain tag to every model input
    #[arg(long)]
    domain_tags: bool,
    /// Corpus directory (train/, valid/, test/, unpaired/)
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Style classifier checkpoint
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
    /// Model checkpoint to start from
    #[arg(long, value_name = "FILE")]
    model_in: Option<PathBuf>,
    /// Where to write the trained model checkpoint
    #[arg(long, value_name = "FILE")]
    model_out: Option<PathBuf>,
    /// Where to write the metrics log
    #[arg(long, value_name = "FILE")]
    metrics: Option<PathBuf>,
}

/// Architecture sizes for freshly initialized models. Ignored when the model
/// comes from a checkpoint, which carries its own dimensions.
#[derive(Args)]
struct DimsArgs {
    /// Embedding width
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    /// Attention heads
    #[arg(long, default_value_t = 4)]
    n_heads: usize,
    /// Transformer blocks per stack
    #[arg(long, default_value_t = 2)]
    n_layers: usize,
    /// Feed-forward hidden width
    #[arg(long, default_value_t = 256)]
    d_ff: usize,
    /// Maximum sequence length
    #[arg(long, default_value_t = 128)]
    context: usize,
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output corpus directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Aligned training pairs
    #[arg(long, default_value_t = 400)]
    train_pairs: usize,
    /// Evaluation items per direction, per split
    #[arg(long, default_value_t = 40)]
    eval_items: usize,
    /// Unpaired sentences per style
    #[arg(long, default_value_t = 600)]
    unpaired: usize,
}

#[derive(Args)]
struct TrainClassifierArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Word-embedding width
    #[arg(long, default_value_t = 64)]
    d_emb: usize,
    /// Filters per convolution width
    #[arg(long, default_value_t = 100)]
    n_filters: usize,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Pretraining objective; defaults to the one matching the model kind
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    #[command(flatten)]
    dims: DimsArgs,
    /// Token mask rate (denoising objective only)
    #[arg(long, default_value_t = 0.15)]
    mask: f64,
    /// Token delete rate (denoising objective only)
    #[arg(long, default_value_t = 0.10)]
    delete: f64,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Sizes for the scratch model (seq2seq-scratch only)
    #[command(flatten)]
    dims: DimsArgs,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Transfer direction: 0to1 = informal to formal, 1to0 = the reverse
    #[arg(long, value_enum, default_value_t = Direction::InformalToFormal)]
    direction: Direction,
    /// Input file, one sentence per line (default: stdin)
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Output file (default: stdout)
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Evaluation split
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
    /// Also write the machine-readable report here
    #[arg(long, value_name = "FILE")]
    tsv: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Sweep spec TOML (keys: fractions, variants, seeds)
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// CSV results table; existing rows are kept and the sweep resumes
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional mean-HM curve file (variant, fraction, hm)
    #[arg(long, value_name = "FILE")]
    curve: Option<PathBuf>,
    /// Sizes for the scratch model (seq2seq-scratch only)
    #[command(flatten)]
    dims: DimsArgs,
}

#[derive(ValueEnum, Clone, Copy)]
enum Objective {
    /// Next-token language modelling (causal models)
    Causal,
    /// Denoising reconstruction (encoder-decoder models)
    Denoise,
}

#[derive(ValueEnum, Clone, Copy)]
enum Direction {
    #[value(name = "0to1")]
    InformalToFormal,
    #[value(name = "1to0")]
    FormalToInformal,
}

#[derive(ValueEnum, Clone, Copy)]
enum Split {
    Valid,
    Test,
}

fn main() -> ExitCode {
    match ops::run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("restyle: {e}");
            if matches!(e, Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn arg_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn dims_flag_defaults_match_the_model_defaults() {
        let d = restyle_core::ModelDims::default();
        let parsed = Cli::try_parse_from(["restyle", "pretrain"]);
        // `pretrain` has required context coming from the config file, not
        // clap, so parsing bare flags must succeed.
        let cli = parsed.expect("bare pretrain parses");
        let Command::Pretrain(args) = cli.command else {
            panic!("parsed a different subcommand");
        };
        assert_eq!(
            (
                args.dims.d_model,
                args.dims.n_heads,
                args.dims.n_layers,
                args.dims.d_ff,
                args.dims.context
            ),
            (d.d_model, d.n_heads, d.n_layers, d.d_ff, d.context)
        );
    }
}
