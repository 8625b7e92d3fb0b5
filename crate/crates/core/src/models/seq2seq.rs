//! Encoder–decoder model. A bidirectional encoder reads
//! `[BOS] (tag?) src [EOS]`; a causal decoder with cross-attention writes
//! the target, `[BOS]`-shifted on input and `[EOS]`-terminated on output.
//! Token embeddings are shared between the two streams; position tables are
//! separate.

use std::collections::HashMap;

use crate::corpus::vocab::{Vocabulary, BOS, EOS};
use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::RunRng;
use crate::tensor::{Tape, TensorId};

use super::blocks::{self, EMB_STD, W_STD};
use super::causal::{argmax, sampling_probs};
use super::{Generated, GenerationConfig, GenerationMode, ModelDims};

#[derive(Debug, Clone)]
pub struct Seq2SeqLm {
    pub vocab: Vocabulary,
    pub dims: ModelDims,
    pub params: ParamSet,
}

impl Seq2SeqLm {
    /// Fresh model; registration order (= checkpoint payload order) is
    /// shared embedding, position tables, encoder layers, encoder norm,
    /// decoder layers, decoder norm, output head.
    pub fn new(vocab: Vocabulary, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = RunRng::new(seed);
        let mut params = ParamSet::new();
        let v = vocab.len();
        params.register_normal("tok_emb", &[v, dims.d_model], EMB_STD, &mut rng)?;
        params.register_normal("enc_pos", &[dims.context, dims.d_model], EMB_STD, &mut rng)?;
        params.register_normal("dec_pos", &[dims.context, dims.d_model], EMB_STD, &mut rng)?;
        for i in 0..dims.n_layers {
            blocks::register_layer(&mut params, &format!("e{i}"), dims.d_model, dims.d_ff, &mut rng)?;
        }
        blocks::register_ln(&mut params, "enc_ln_f", dims.d_model)?;
        for i in 0..dims.n_layers {
            blocks::register_ln(&mut params, &format!("d{i}.ln1"), dims.d_model)?;
            blocks::register_attention(&mut params, &format!("d{i}.attn"), dims.d_model, &mut rng)?;
            blocks::register_ln(&mut params, &format!("d{i}.ln2"), dims.d_model)?;
            blocks::register_attention(&mut params, &format!("d{i}.cross"), dims.d_model, &mut rng)?;
            blocks::register_ln(&mut params, &format!("d{i}.ln3"), dims.d_model)?;
            blocks::register_ffn(&mut params, &format!("d{i}.ff"), dims.d_model, dims.d_ff, &mut rng)?;
        }
        blocks::register_ln(&mut params, "dec_ln_f", dims.d_model)?;
        params.register_normal("lm_head", &[dims.d_model, v], W_STD, &mut rng)?;
        params.register_const("lm_head_b", &[v], 0.0)?;
        Ok(Seq2SeqLm { vocab, dims, params })
    }

    fn check_len(&self, label: &str, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::Length(format!("{label} sequence is empty")));
        }
        if len > self.dims.context {
            return Err(Error::Length(format!(
                "{label} sequence of {len} tokens exceeds the {}-token context",
                self.dims.context
            )));
        }
        Ok(())
    }

    /// Bidirectional encoder states for the source ids.
    pub fn encode_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        enc_ids: &[usize],
    ) -> Result<TensorId> {
        self.check_len("encoder", enc_ids.len())?;
        let mut x = blocks::embed_sequence(tape, staged, "tok_emb", "enc_pos", enc_ids)?;
        for i in 0..self.dims.n_layers {
            x = blocks::transformer_layer(tape, staged, &format!("e{i}"), x, self.dims.n_heads, false)?;
        }
        blocks::layer_norm(tape, staged, "enc_ln_f", x)
    }

    /// Next-token logits for each decoder position, attending causally over
    /// the decoder prefix and freely over the encoder states.
    pub fn decode_logits_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        enc_h: TensorId,
        dec_in: &[usize],
    ) -> Result<TensorId> {
        self.check_len("decoder", dec_in.len())?;
        let mut x = blocks::embed_sequence(tape, staged, "tok_emb", "dec_pos", dec_in)?;
        for i in 0..self.dims.n_layers {
            let a_in = blocks::layer_norm(tape, staged, &format!("d{i}.ln1"), x)?;
            let a = blocks::multi_head_attention(
                tape,
                staged,
                &format!("d{i}.attn"),
                a_in,
                a_in,
                self.dims.n_heads,
                true,
            )?;
            x = tape.add(x, a)?;
            let c_in = blocks::layer_norm(tape, staged, &format!("d{i}.ln2"), x)?;
            let c = blocks::multi_head_attention(
                tape,
                staged,
                &format!("d{i}.cross"),
                c_in,
                enc_h,
                self.dims.n_heads,
                false,
            )?;
            x = tape.add(x, c)?;
            let f_in = blocks::layer_norm(tape, staged, &format!("d{i}.ln3"), x)?;
            let f = blocks::feed_forward(tape, staged, &format!("d{i}.ff"), f_in)?;
            x = tape.add(x, f)?;
        }
        let x = blocks::layer_norm(tape, staged, "dec_ln_f", x)?;
        let w = blocks::staged(staged, "lm_head")?;
        let b = blocks::staged(staged, "lm_head_b")?;
        let logits = tape.matmul(x, w)?;
        tape.add(logits, b)
    }

    /// Mean next-token cross-entropy of `dec_tgt` given the encoded source.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        enc_ids: &[usize],
        dec_in: &[usize],
        dec_tgt: &[usize],
    ) -> Result<TensorId> {
        if dec_in.len() != dec_tgt.len() {
            return Err(Error::Shape(format!(
                "decoder input ({}) and target ({}) lengths differ",
                dec_in.len(),
                dec_tgt.len()
            )));
        }
        let enc_h = self.encode_on(tape, staged, enc_ids)?;
        let logits = self.decode_logits_on(tape, staged, enc_h, dec_in)?;
        let mask = vec![1.0; dec_tgt.len()];
        tape.cross_entropy(logits, dec_tgt, &mask)
    }

    /// Supervised loss for a pair in the encoder/decoder layout.
    pub fn pair_loss_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        pair: &ParallelPair,
    ) -> Result<TensorId> {
        let (enc, dec_in, dec_tgt) = crate::corpus::vocab::encode_s2s_pair(pair, &self.vocab)?;
        self.loss_on(tape, staged, &enc, &dec_in, &dec_tgt)
    }

    /// Encoder-side ids for a transfer source: `[BOS] (tag?) src [EOS]`.
    pub fn encoder_ids(&self, source: &[String], tag: Option<&str>) -> Result<Vec<usize>> {
        if source.is_empty() {
            return Err(Error::EmptySentence("cannot encode an empty source".into()));
        }
        let mut enc = vec![BOS];
        if let Some(tag) = tag {
            enc.push(self.vocab.tag_id(tag)?);
        }
        enc.extend(self.vocab.encode(source));
        enc.push(EOS);
        Ok(enc)
    }

    /// Decode a target for `source` until `[EOS]` or the length budget.
    pub fn generate_transfer(
        &self,
        source: &[String],
        tag: Option<&str>,
        config: &GenerationConfig,
        mut rng: Option<&mut RunRng>,
    ) -> Result<Generated> {
        if config.mode == GenerationMode::Sample && rng.is_none() {
            return Err(Error::Config("sampling requires a random source".into()));
        }
        if config.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let enc_ids = self.encoder_ids(source, tag)?;
        self.check_len("encoder", enc_ids.len())?;
        let budget = config.budget(source.len());
        let mut out = Generated { ids: Vec::new(), step_logprobs: Vec::new(), stopped: false };
        let mut dec_in = vec![BOS];
        while out.ids.len() < budget && dec_in.len() < self.dims.context {
            let mut tape = Tape::new();
            let staged = self.params.stage(&mut tape)?;
            let enc_h = self.encode_on(&mut tape, &staged, &enc_ids)?;
            let logits = self.decode_logits_on(&mut tape, &staged, enc_h, &dec_in)?;
            let last = tape.slice_rows(logits, dec_in.len() - 1, dec_in.len())?;
            let ls = tape.log_softmax(last)?;
            let ls = tape.values(ls);
            let token = match config.mode {
                GenerationMode::Greedy => argmax(&ls),
                GenerationMode::Sample => {
                    let probs = sampling_probs(&ls, config.temperature);
                    rng.as_deref_mut().expect("checked above").categorical(&probs)
                }
            };
            out.ids.push(token);
            out.step_logprobs.push(ls[token]);
            dec_in.push(token);
            if token == EOS {
                out.stopped = true;
                break;
            }
        }
        Ok(out)
    }

    /// Differentiable log P(candidate | source) under teacher forcing; the
    /// candidate carries its own `[EOS]` when the stopping step should count.
    pub fn transfer_logprob_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        source: &[String],
        tag: Option<&str>,
        candidate: &[usize],
    ) -> Result<TensorId> {
        if candidate.is_empty() {
            return Err(Error::Data("cannot score an empty candidate".into()));
        }
        let enc_ids = self.encoder_ids(source, tag)?;
        let mut dec_in = vec![BOS];
        dec_in.extend_from_slice(&candidate[..candidate.len() - 1]);
        let enc_h = self.encode_on(tape, staged, &enc_ids)?;
        let logits = self.decode_logits_on(tape, staged, enc_h, &dec_in)?;
        let ls = tape.log_softmax(logits)?;
        let picked = tape.row_gather(ls, candidate)?;
        tape.sum(picked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_sentence;
    use crate::gradcheck::check_gradients;
    use crate::models::testutil::{sample_pair, tiny_dims, tiny_vocab};

    #[test]
    fn zero_model_scores_uniformly() {
        let mut m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 0).unwrap();
        for p in m.params.iter_mut() {
            for v in &mut p.values {
                *v = 0.0;
            }
        }
        for name in ["e0.ln1.g", "e0.ln2.g", "enc_ln_f.g", "d0.ln1.g", "d0.ln2.g", "d0.ln3.g", "dec_ln_f.g"] {
            for v in &mut m.params.get_mut(name).unwrap().values {
                *v = 1.0;
            }
        }
        let v = m.vocab.len() as f64;
        let mut tape = Tape::new();
        let staged = m.params.stage(&mut tape).unwrap();
        let loss = m
            .loss_on(&mut tape, &staged, &[BOS, 7, EOS], &[BOS, 8, 9], &[8, 9, EOS])
            .unwrap();
        assert!((tape.value_scalar(loss) - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn pair_loss_matches_hand_computed_nll() {
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 1).unwrap();
        let pair = sample_pair();
        let (enc, dec_in, dec_tgt) = crate::corpus::vocab::encode_s2s_pair(&pair, &m.vocab).unwrap();

        let mut tape = Tape::new();
        let staged = m.params.stage(&mut tape).unwrap();
        let loss = m.pair_loss_on(&mut tape, &staged, &pair).unwrap();
        let got = tape.value_scalar(loss);

        let mut tape2 = Tape::new();
        let staged2 = m.params.stage(&mut tape2).unwrap();
        let enc_h = m.encode_on(&mut tape2, &staged2, &enc).unwrap();
        let logits = m.decode_logits_on(&mut tape2, &staged2, enc_h, &dec_in).unwrap();
        let lv = tape2.values(logits);
        let v = m.vocab.len();
        let mut nll = 0.0;
        for (row, &target) in dec_tgt.iter().enumerate() {
            let row_vals = &lv[row * v..(row + 1) * v];
            let mx = row_vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row_vals.iter().map(|&z| (z - mx).exp()).sum::<f64>().ln();
            nll += lse - row_vals[target];
        }
        assert!((got - nll / dec_tgt.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn generated_ids_score_back_to_their_own_logprob() {
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 2).unwrap();
        let source = parse_sentence("plz watch it !!!");
        let greedy = m
            .generate_transfer(&source, None, &GenerationConfig::greedy(), None)
            .unwrap();
        assert!(!greedy.ids.is_empty());
        let mut tape = Tape::new();
        let staged = m.params.stage(&mut tape).unwrap();
        let lp = m
            .transfer_logprob_on(&mut tape, &staged, &source, None, &greedy.ids)
            .unwrap();
        assert!((tape.value_scalar(lp) - greedy.logprob()).abs() < 1e-9);

        let mut rng = RunRng::new(21);
        let sampled = m
            .generate_transfer(&source, None, &GenerationConfig::sample(), Some(&mut rng))
            .unwrap();
        let mut tape = Tape::new();
        let staged = m.params.stage(&mut tape).unwrap();
        let lp = m
            .transfer_logprob_on(&mut tape, &staged, &source, None, &sampled.ids)
            .unwrap();
        assert!((tape.value_scalar(lp) - sampled.logprob()).abs() < 1e-9);
    }

    #[test]
    fn decoder_prefix_rows_ignore_later_tokens() {
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 3).unwrap();
        let enc = [BOS, 5, 6, EOS];
        let dec = [BOS, 7, 8, 9, 10, 11];
        let mut modified = dec;
        modified[4] = 12;
        let run = |dec_in: &[usize]| {
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape).unwrap();
            let enc_h = m.encode_on(&mut tape, &staged, &enc).unwrap();
            let logits = m.decode_logits_on(&mut tape, &staged, enc_h, dec_in).unwrap();
            tape.values(logits).to_vec()
        };
        let a = run(&dec);
        let b = run(&modified);
        let v = m.vocab.len();
        assert_eq!(a[..4 * v], b[..4 * v]);
        assert_ne!(a[4 * v..5 * v], b[4 * v..5 * v]);
    }

    #[test]
    fn encoder_positions_see_the_whole_source() {
        // The encoder is bidirectional: perturbing a *later* source token
        // changes the encoding of earlier positions too.
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 4).unwrap();
        let run = |enc_ids: &[usize]| {
            let mut tape = Tape::new();
            let staged = m.params.stage(&mut tape).unwrap();
            let enc_h = m.encode_on(&mut tape, &staged, enc_ids).unwrap();
            tape.values(enc_h).to_vec()
        };
        let a = run(&[BOS, 5, 6, 7, EOS]);
        let b = run(&[BOS, 5, 6, 8, EOS]);
        let d = m.dims.d_model;
        assert_ne!(a[..d], b[..d], "first row should depend on later tokens");
    }

    #[test]
    fn budget_caps_generation() {
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 5).unwrap();
        let source = parse_sentence("plz watch it");
        let config = GenerationConfig { max_len_override: Some(4), ..GenerationConfig::greedy() };
        let out = m.generate_transfer(&source, None, &config, None).unwrap();
        assert!(out.ids.len() <= 4);
    }

    #[test]
    fn oversized_source_is_rejected() {
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 6).unwrap();
        let long: Vec<String> = (0..30).map(|_| "movie".to_string()).collect();
        assert!(matches!(
            m.generate_transfer(&long, None, &GenerationConfig::greedy(), None),
            Err(Error::Length(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let m = Seq2SeqLm::new(tiny_vocab(), tiny_dims(), 7).unwrap();
        let source = parse_sentence("thank you for the movie");
        let sample = |seed: u64| {
            let mut rng = RunRng::new(seed);
            m.generate_transfer(&source, None, &GenerationConfig::sample(), Some(&mut rng))
                .unwrap()
        };
        assert_eq!(sample(9), sample(9));
        let g1 = m.generate_transfer(&source, None, &GenerationConfig::greedy(), None).unwrap();
        let g2 = m.generate_transfer(&source, None, &GenerationConfig::greedy(), None).unwrap();
        assert_eq!(g1, g2);
    }

    #[test]
    fn pair_loss_passes_finite_difference_checks() {
        let dims = ModelDims { d_model: 4, n_heads: 2, n_layers: 1, d_ff: 8, context: 16 };
        let m = Seq2SeqLm::new(tiny_vocab(), dims, 8).unwrap();
        let pair = sample_pair();
        let report = check_gradients(
            |tape, staged| m.pair_loss_on(tape, staged, &pair),
            &m.params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.is_ok(), "worst rel error {}", report.worst());
    }
}
