//! Formality style transfer at desk scale: miniature pre-trained sequence
//! generators fine-tuned with policy-gradient rewards (style classifier and
//! self-critical BLEU), plus the evaluation stack (multi-reference BLEU,
//! style accuracy, harmonic mean) and a synthetic parallel corpus generator.
//!
//! Everything is 64-bit floats on a hand-rolled reverse-mode autodiff tape;
//! all randomness flows through a single seeded generator per run, so every
//! artifact (metrics logs, checkpoints) is byte-reproducible.

pub mod classifier;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod params;
pub mod rewards;
pub mod rng;
pub mod tensor;
pub mod train;

pub use classifier::{train_textcnn, ClassifierHyper, TextCnn};
pub use error::{Error, Result};
pub use eval::{evaluate_system, score_outputs};
pub use models::{CausalLm, Model, ModelDims, Seq2SeqLm};
pub use params::{Param, ParamSet};
pub use rewards::{total_objective, RewardConfig, RewardSample};
pub use rng::RunRng;
pub use tensor::{Tape, Tensor, TensorId};
pub use train::{early_stopping_check, finetune, FinetuneOutcome, MetricsLog, ModelKind, TrainConfig};
