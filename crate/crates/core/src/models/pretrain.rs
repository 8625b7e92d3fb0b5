//! Pretraining on unpaired text: next-token prediction for the causal LM,
//! denoising reconstruction for the encoder–decoder. Both hold out a tenth
//! of the corpus, stop early when held-out perplexity stalls, and restore
//! the best weights seen.

use crate::corpus::vocab::{BOS, EOS, UNK};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::optim::{adam_step, collect_grads, AdamState};
use crate::params::ParamSet;
use crate::rng::RunRng;
use crate::tensor::Tape;

use super::{CausalLm, Seq2SeqLm};

/// Optimization settings. Draw order per run: holdout split shuffle, then
/// per epoch one order shuffle followed by (denoising only) one uniform draw
/// per token of each training sentence in that order.
#[derive(Debug, Clone, Copy)]
pub struct PretrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for PretrainHyper {
    fn default() -> Self {
        PretrainHyper { lr: 1e-3, batch_size: 32, max_epochs: 30, patience: 3, seed: 0 }
    }
}

/// Per-token corruption rates for denoising pretraining. One uniform draw
/// decides each token's fate: u < mask → `[UNK]`, u < mask+delete → dropped,
/// otherwise kept.
#[derive(Debug, Clone, Copy)]
pub struct NoiseSpec {
    pub mask: f64,
    pub delete: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { mask: 0.15, delete: 0.10 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mask < 0.0 || self.delete < 0.0 || self.mask + self.delete > 1.0 {
            return Err(Error::Config(format!(
                "noise rates mask={} delete={} must be non-negative and sum to at most 1",
                self.mask, self.delete
            )));
        }
        Ok(())
    }

    pub fn apply(&self, ids: &[usize], rng: &mut RunRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            let u = rng.uniform();
            if u < self.mask {
                out.push(UNK);
            } else if u < self.mask + self.delete {
                // dropped
            } else {
                out.push(id);
            }
        }
        out
    }
}

/// Training history: held-out perplexity after each epoch and the epoch
/// whose weights were kept.
#[derive(Debug, Clone)]
pub struct PretrainLog {
    pub holdout_ppl: Vec<f64>,
    pub best_epoch: usize,
}

impl PretrainLog {
    pub fn best_ppl(&self) -> f64 {
        self.holdout_ppl[self.best_epoch]
    }
}

/// Split `n` items into (train, holdout) index lists: a seeded shuffle, then
/// the last max(1, n/10) indices held out.
fn holdout_split(n: usize, rng: &mut RunRng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_hold = (n / 10).max(1);
    let hold = idx.split_off(n - n_hold);
    (idx, hold)
}

/// `[BOS] s [EOS]`, truncated to fit the context window.
fn lm_ids(model_context: usize, vocab_ids: Vec<usize>) -> Vec<usize> {
    let mut ids = vec![BOS];
    let room = model_context - 2;
    ids.extend(vocab_ids.into_iter().take(room));
    ids.push(EOS);
    ids
}

/// Generic early-stopped epoch loop shared by both objectives. `train_epoch`
/// performs one pass and returns nothing; `holdout_ppl` measures the model.
fn epoch_loop<T, E, H>(
    params: &mut T,
    hyper: &PretrainHyper,
    rng: &mut RunRng,
    mut train_epoch: E,
    mut holdout_ppl: H,
) -> Result<PretrainLog>
where
    T: GetParams,
    E: FnMut(&mut T, &mut RunRng) -> Result<()>,
    H: FnMut(&T) -> Result<f64>,
{
    if hyper.batch_size == 0 || hyper.max_epochs == 0 {
        return Err(Error::Config("batch size and epoch budget must be positive".into()));
    }
    let mut log = PretrainLog { holdout_ppl: Vec::new(), best_epoch: 0 };
    let mut best = f64::INFINITY;
    let mut best_snap = params.params().snapshot();
    for epoch in 0..hyper.max_epochs {
        train_epoch(params, rng)?;
        let ppl = holdout_ppl(params)?;
        if !ppl.is_finite() {
            return Err(Error::Numerics(format!("held-out perplexity diverged at epoch {epoch}")));
        }
        log.holdout_ppl.push(ppl);
        if ppl < best {
            best = ppl;
            log.best_epoch = epoch;
            best_snap = params.params().snapshot();
        } else if epoch - log.best_epoch >= hyper.patience {
            break;
        }
    }
    params.params_mut().restore(&best_snap);
    Ok(log)
}

trait GetParams {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

impl GetParams for CausalLm {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

impl GetParams for Seq2SeqLm {
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Next-token pretraining of the causal LM on unpaired sentences of both
/// styles. Returns the per-epoch held-out perplexity curve; the model keeps
/// its best-epoch weights.
pub fn pretrain_causal(
    model: &mut CausalLm,
    sentences: &[Sentence],
    hyper: &PretrainHyper,
) -> Result<PretrainLog> {
    if sentences.is_empty() {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| lm_ids(model.dims.context, model.vocab.encode(s)))
        .collect();
    let mut rng = RunRng::new(hyper.seed);
    let (train_idx, hold_idx) = holdout_split(encoded.len(), &mut rng);
    let mut state = AdamState::new(hyper.lr);
    let bs = hyper.batch_size;

    let train_epoch = |m: &mut CausalLm, rng: &mut RunRng| -> Result<()> {
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        for chunk in order.chunks(bs) {
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape)?;
            let mut total = None;
            for &i in chunk {
                let ids = &encoded[i];
                let mask = vec![1.0; ids.len() - 1];
                let loss = m.loss_on(&mut tape, &staged, ids, &mask)?;
                total = Some(match total {
                    None => loss,
                    Some(t) => tape.add(t, loss)?,
                });
            }
            let total = total.expect("chunks are non-empty");
            let mean = tape.scale(total, 1.0 / chunk.len() as f64)?;
            tape.backward(mean)?;
            let grads = collect_grads(&tape, &staged)?;
            adam_step(&mut m.params, &grads, &mut state)?;
        }
        Ok(())
    };

    let holdout = |m: &CausalLm| -> Result<f64> {
        let mut sum = 0.0;
        for &i in &hold_idx {
            let ids = &encoded[i];
            let mask = vec![1.0; ids.len() - 1];
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape)?;
            let loss = m.loss_on(&mut tape, &staged, ids, &mask)?;
            sum += tape.value_scalar(loss);
        }
        Ok((sum / hold_idx.len() as f64).exp())
    };

    epoch_loop(model, hyper, &mut rng, train_epoch, holdout)
}

/// Denoising pretraining of the encoder–decoder: the encoder reads a noised
/// sentence, the decoder reconstructs the original. Noise is redrawn every
/// epoch; held-out perplexity is measured on the clean copy task so the
/// stopping signal is deterministic.
pub fn pretrain_denoising(
    model: &mut Seq2SeqLm,
    sentences: &[Sentence],
    hyper: &PretrainHyper,
    noise: &NoiseSpec,
) -> Result<PretrainLog> {
    if sentences.is_empty() {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    noise.validate()?;
    // Clip to leave room for [BOS]/[EOS] framing on both streams.
    let room = model.dims.context - 2;
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| model.vocab.encode(s).into_iter().take(room).collect())
        .collect();
    let mut rng = RunRng::new(hyper.seed);
    let (train_idx, hold_idx) = holdout_split(encoded.len(), &mut rng);
    let mut state = AdamState::new(hyper.lr);
    let bs = hyper.batch_size;
    let noise = *noise;

    let train_epoch = |m: &mut Seq2SeqLm, rng: &mut RunRng| -> Result<()> {
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        // Noise for the whole epoch is drawn up front in shuffled order so
        // the per-token draw sequence is well defined.
        let noised: Vec<Vec<usize>> = order.iter().map(|&i| noise.apply(&encoded[i], rng)).collect();
        for (chunk_idx, chunk) in order.chunks(bs).enumerate() {
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape)?;
            let mut total = None;
            for (j, &i) in chunk.iter().enumerate() {
                let (enc, dec_in, dec_tgt) = denoise_streams(&noised[chunk_idx * bs + j], &encoded[i]);
                let loss = m.loss_on(&mut tape, &staged, &enc, &dec_in, &dec_tgt)?;
                total = Some(match total {
                    None => loss,
                    Some(t) => tape.add(t, loss)?,
                });
            }
            let total = total.expect("chunks are non-empty");
            let mean = tape.scale(total, 1.0 / chunk.len() as f64)?;
            tape.backward(mean)?;
            let grads = collect_grads(&tape, &staged)?;
            adam_step(&mut m.params, &grads, &mut state)?;
        }
        Ok(())
    };

    let holdout = |m: &Seq2SeqLm| -> Result<f64> {
        let mut sum = 0.0;
        for &i in &hold_idx {
            let (enc, dec_in, dec_tgt) = denoise_streams(&encoded[i], &encoded[i]);
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape)?;
            let loss = m.loss_on(&mut tape, &staged, &enc, &dec_in, &dec_tgt)?;
            sum += tape.value_scalar(loss);
        }
        Ok((sum / hold_idx.len() as f64).exp())
    };

    epoch_loop(model, hyper, &mut rng, train_epoch, holdout)
}

/// Frame a (noised, original) id pair for the encoder/decoder streams.
fn denoise_streams(noised: &[usize], original: &[usize]) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut enc = vec![BOS];
    enc.extend_from_slice(noised);
    enc.push(EOS);
    let mut dec_in = vec![BOS];
    dec_in.extend_from_slice(original);
    let mut dec_tgt = original.to_vec();
    dec_tgt.push(EOS);
    (enc, dec_in, dec_tgt)
}

/// Fraction of held-out sentences' tokens (terminator included) that a
/// greedy clean-input reconstruction reproduces exactly, position by
/// position.
pub fn reconstruction_accuracy(model: &Seq2SeqLm, sentences: &[Sentence]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::Data("nothing to reconstruct".into()));
    }
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in sentences {
        let ids = model.vocab.encode(s);
        let mut want = ids.clone();
        want.push(EOS);
        let config = super::GenerationConfig {
            mode: super::GenerationMode::Greedy,
            max_len_override: Some(want.len() + 2),
            temperature: 1.0,
        };
        let out = model.generate_transfer(s, None, &config, None)?;
        total += want.len();
        hit += want
            .iter()
            .zip(out.ids.iter())
            .filter(|(w, g)| w == g)
            .count();
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_sentence;
    use crate::models::testutil::{tiny_dims, tiny_vocab};
    use crate::models::ModelDims;
    use crate::rng::RunRng;

    /// Small unpaired corpus over the tiny vocabulary: short patterned
    /// sentences so a tiny model can make quick progress.
    fn unpaired(n: usize) -> Vec<Sentence> {
        let stock = [
            "please watch it .",
            "please watch the movie .",
            "u r great",
            "plz watch it !!!",
            "thank you for the movie .",
            "thx for the book lol",
            "the movie it great .",
            "you watch the book .",
        ];
        (0..n).map(|i| parse_sentence(stock[i % stock.len()])).collect()
    }

    #[test]
    fn causal_pretraining_beats_uniform_and_improves() {
        let mut m = crate::models::CausalLm::new(tiny_vocab(), tiny_dims(), 0).unwrap();
        let hyper = PretrainHyper { max_epochs: 6, ..Default::default() };
        let log = pretrain_causal(&mut m, &unpaired(48), &hyper).unwrap();
        let v = m.vocab.len() as f64;
        assert!(log.best_ppl() < v, "ppl {} vs |V| {v}", log.best_ppl());
        assert!(
            log.best_ppl() < log.holdout_ppl[0],
            "no improvement over the first epoch: {:?}",
            log.holdout_ppl
        );
    }

    #[test]
    fn causal_pretraining_is_deterministic() {
        let run = || {
            let mut m = crate::models::CausalLm::new(tiny_vocab(), tiny_dims(), 1).unwrap();
            let hyper = PretrainHyper { max_epochs: 3, ..Default::default() };
            pretrain_causal(&mut m, &unpaired(24), &hyper).unwrap();
            m.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let mut m = crate::models::CausalLm::new(tiny_vocab(), tiny_dims(), 2).unwrap();
        assert!(matches!(
            pretrain_causal(&mut m, &[], &PretrainHyper::default()),
            Err(Error::Data(_))
        ));
        let mut s = crate::models::Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 2).unwrap();
        assert!(matches!(
            pretrain_denoising(&mut s, &[], &PretrainHyper::default(), &NoiseSpec::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn noise_application_is_seed_deterministic() {
        let noise = NoiseSpec::default();
        let ids: Vec<usize> = (5..25).collect();
        let a = noise.apply(&ids, &mut RunRng::new(4));
        let b = noise.apply(&ids, &mut RunRng::new(4));
        assert_eq!(a, b);
        // Masked tokens become UNK; deletions shorten the sequence.
        assert!(a.len() <= ids.len());
    }

    #[test]
    fn invalid_noise_rates_are_rejected() {
        let mut m = crate::models::Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 3).unwrap();
        let bad = NoiseSpec { mask: 0.8, delete: 0.4 };
        assert!(matches!(
            pretrain_denoising(&mut m, &unpaired(8), &PretrainHyper::default(), &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_noise_reduces_to_an_autoencoder() {
        // With no corruption the task is pure copying; a tiny model should
        // drive the training loss toward zero. Sentences repeat so the
        // holdout split sees the same material as training.
        let dims = ModelDims { d_model: 12, n_heads: 2, n_layers: 1, d_ff: 24, context: 16 };
        let mut m = crate::models::Seq2SeqLm::new(tiny_vocab(), dims, 4).unwrap();
        let sentences = unpaired(24);
        let hyper = PretrainHyper {
            max_epochs: 120,
            patience: 120,
            lr: 3e-3,
            batch_size: 8,
            ..Default::default()
        };
        pretrain_denoising(&mut m, &sentences, &hyper, &NoiseSpec { mask: 0.0, delete: 0.0 }).unwrap();
        let mut total = 0.0;
        for s in &sentences {
            let ids = m.vocab.encode(s);
            let (enc, dec_in, dec_tgt) = denoise_streams(&ids, &ids);
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape).unwrap();
            let loss = m.loss_on(&mut tape, &staged, &enc, &dec_in, &dec_tgt).unwrap();
            total += tape.value_scalar(loss);
        }
        let mean = total / sentences.len() as f64;
        assert!(mean < 0.1, "autoencoder loss {mean}");
    }

    #[test]
    fn denoising_reconstructs_held_out_sentences() {
        let dims = ModelDims { d_model: 16, n_heads: 2, n_layers: 1, d_ff: 32, context: 16 };
        let mut m = crate::models::Seq2SeqLm::new(tiny_vocab(), dims, 0).unwrap();
        let sentences = unpaired(48);
        let hyper = PretrainHyper { max_epochs: 60, lr: 3e-3, ..Default::default() };
        pretrain_denoising(&mut m, &sentences, &hyper, &NoiseSpec::default()).unwrap();
        // The stock sentences repeat, so any 8 of them stand in for a
        // held-out sample from the same distribution.
        let acc = reconstruction_accuracy(&m, &sentences[..8]).unwrap();
        assert!(acc > 0.8, "reconstruction accuracy {acc}");
    }
}
