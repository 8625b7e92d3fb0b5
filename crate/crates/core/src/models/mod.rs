//! Transformer sequence models for style transfer: a causal LM that
//! concatenates source and target around a separator, and an
//! encoder–decoder that conditions a causal decoder on a bidirectionally
//! encoded source.
//!
//! Both families share a vocabulary-aware interface: build a differentiable
//! training loss on a tape, decode greedily or by sampling, and score an
//! arbitrary candidate's log-probability either on-tape (differentiable) or
//! as a plain number.

pub mod blocks;
pub mod causal;
pub mod pretrain;
pub mod seq2seq;

use std::collections::HashMap;

use crate::corpus::vocab::Vocabulary;
use crate::corpus::{ParallelPair, Sentence, Style};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::RunRng;
use crate::tensor::{Tape, TensorId};

pub use causal::CausalLm;
pub use pretrain::{pretrain_causal, pretrain_denoising, NoiseSpec, PretrainHyper, PretrainLog};
pub use seq2seq::Seq2SeqLm;

/// Architecture sizes shared by both model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Maximum sequence length either stream may reach.
    pub context: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims { d_model: 64, n_heads: 4, n_layers: 2, d_ff: 256, context: 128 }
    }
}

impl ModelDims {
    /// Tiny configuration for fast tests.
    pub fn tiny() -> Self {
        ModelDims { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 16, context: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 || self.context == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Compact textual form, hashed into checkpoints to detect shape drift.
    pub fn signature(&self) -> String {
        format!(
            "d{}h{}l{}f{}c{}",
            self.d_model, self.n_heads, self.n_layers, self.d_ff, self.context
        )
    }
}

/// Decoding strategy for [`generate`](Model::generate_transfer).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GenerationMode {
    /// Pick the highest-probability token each step (ties → lowest id).
    Greedy,
    /// Draw each token from the model distribution (after temperature).
    Sample,
}

/// Decoding controls. `max_len_override` replaces the default output length
/// budget of ceil(1.5 · source_len) + 5; the hard cap is always the model
/// context window.
#[derive(Debug, Clone, Copy)]
pub struct GenerationConfig {
    pub mode: GenerationMode,
    pub max_len_override: Option<usize>,
    pub temperature: f64,
}

impl GenerationConfig {
    pub fn greedy() -> Self {
        GenerationConfig { mode: GenerationMode::Greedy, max_len_override: None, temperature: 1.0 }
    }

    pub fn sample() -> Self {
        GenerationConfig { mode: GenerationMode::Sample, max_len_override: None, temperature: 1.0 }
    }

    /// Output token budget for a source of `n_src` tokens (stop token
    /// included in the count).
    pub fn budget(&self, n_src: usize) -> usize {
        match self.max_len_override {
            Some(m) => m,
            None => (3 * n_src).div_ceil(2) + 5,
        }
    }
}

/// One decoded continuation: emitted ids (including the stop token when one
/// was produced), the model log-probability of each emitted id, and whether
/// decoding ended by emitting the stop token rather than hitting the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub ids: Vec<usize>,
    pub step_logprobs: Vec<f64>,
    pub stopped: bool,
}

impl Generated {
    pub fn logprob(&self) -> f64 {
        self.step_logprobs.iter().sum()
    }

    /// Emitted ids with the trailing stop token removed (if present).
    pub fn body(&self, stop: usize) -> &[usize] {
        match self.ids.last() {
            Some(&last) if last == stop => &self.ids[..self.ids.len() - 1],
            _ => &self.ids,
        }
    }
}

/// Model family discriminant, also stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Causal,
    Seq2Seq,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Causal => "causal",
            Family::Seq2Seq => "seq2seq",
        }
    }
}

/// Either model family behind one training/decoding interface.
#[derive(Debug, Clone)]
pub enum Model {
    Causal(CausalLm),
    Seq2Seq(Seq2SeqLm),
}

impl Model {
    pub fn family(&self) -> Family {
        match self {
            Model::Causal(_) => Family::Causal,
            Model::Seq2Seq(_) => Family::Seq2Seq,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        match self {
            Model::Causal(m) => &m.vocab,
            Model::Seq2Seq(m) => &m.vocab,
        }
    }

    pub fn dims(&self) -> ModelDims {
        match self {
            Model::Causal(m) => m.dims,
            Model::Seq2Seq(m) => m.dims,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Causal(m) => &m.params,
            Model::Seq2Seq(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Causal(m) => &mut m.params,
            Model::Seq2Seq(m) => &mut m.params,
        }
    }

    /// Supervised per-token loss for one source→target pair, built on `tape`
    /// from the staged parameters.
    pub fn pair_loss_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        pair: &ParallelPair,
    ) -> Result<TensorId> {
        match self {
            Model::Causal(m) => m.pair_loss_on(tape, staged, pair),
            Model::Seq2Seq(m) => m.pair_loss_on(tape, staged, pair),
        }
    }

    /// Differentiable log-probability of emitting `candidate` (stop token
    /// included as its final id) for the given source.
    pub fn transfer_logprob_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        source: &[String],
        source_style: Style,
        tag: Option<&str>,
        candidate: &[usize],
    ) -> Result<TensorId> {
        match self {
            Model::Causal(m) => m.transfer_logprob_on(tape, staged, source, source_style, tag, candidate),
            Model::Seq2Seq(m) => m.transfer_logprob_on(tape, staged, source, tag, candidate),
        }
    }

    /// Decode a rewrite of `source`. The returned ids cover the target
    /// segment only (stop token included when emitted).
    pub fn generate_transfer(
        &self,
        source: &[String],
        source_style: Style,
        tag: Option<&str>,
        config: &GenerationConfig,
        rng: Option<&mut RunRng>,
    ) -> Result<Generated> {
        match self {
            Model::Causal(m) => m.generate_transfer(source, source_style, tag, config, rng),
            Model::Seq2Seq(m) => m.generate_transfer(source, tag, config, rng),
        }
    }

    /// Decode a rewrite and render it as tokens (specials stripped).
    pub fn transfer(
        &self,
        source: &[String],
        source_style: Style,
        tag: Option<&str>,
        config: &GenerationConfig,
        rng: Option<&mut RunRng>,
    ) -> Result<Sentence> {
        let gen = self.generate_transfer(source, source_style, tag, config, rng)?;
        Ok(self.vocab().decode_text(&gen.ids))
    }
}

/// Convenience: plain-number log-probability of a candidate (runs a private
/// tape forward pass; no gradients kept).
pub fn transfer_logprob(
    model: &Model,
    source: &[String],
    source_style: Style,
    tag: Option<&str>,
    candidate: &[usize],
) -> Result<f64> {
    let mut tape = Tape::new();
    let staged = model.params().stage(&mut tape)?;
    let lp = model.transfer_logprob_on(&mut tape, &staged, source, source_style, tag, candidate)?;
    Ok(tape.value_scalar(lp))
}
