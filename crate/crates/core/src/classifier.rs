//! Binary style classifier: a convolutional text model (embedding, parallel
//! filter banks of several widths, max-over-time pooling, linear output).
//! Trained once on labeled sentences, then frozen — it serves as the style
//! oracle both for rewards during generator fine-tuning and for evaluation.

use std::collections::HashMap;

use crate::corpus::vocab::{Vocabulary, PAD};
use crate::corpus::{Sentence, Style};
use crate::error::{Error, Result};
use crate::optim::{adam_step, collect_grads, AdamState};
use crate::params::ParamSet;
use crate::rng::RunRng;
use crate::tensor::{Tape, TensorId};

/// Architecture and optimization settings. The output projection starts at
/// zero, which makes an untrained classifier exactly uncommitted (0.5, 0.5)
/// and makes label-flipped training an exact mirror image.
#[derive(Debug, Clone)]
pub struct ClassifierHyper {
    pub d_emb: usize,
    pub n_filters: usize,
    pub widths: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        ClassifierHyper {
            d_emb: 64,
            n_filters: 100,
            widths: vec![3, 4, 5],
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 3,
            seed: 0,
        }
    }
}

impl ClassifierHyper {
    /// Shrunk dimensions for fast tests. The higher learning rate and small
    /// batches compensate for the handful of steps a tiny dataset yields.
    pub fn tiny(seed: u64) -> Self {
        ClassifierHyper {
            d_emb: 12,
            n_filters: 8,
            widths: vec![2, 3],
            lr: 1e-2,
            batch_size: 8,
            max_epochs: 40,
            patience: 10,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.n_filters == 0 || self.widths.is_empty() {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("filter widths must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch budget must be positive".into()));
        }
        Ok(())
    }
}

/// The trained classifier: its own vocabulary (embeddings are not shared
/// with the generators, so freezing it is trivially airtight) plus weights.
#[derive(Debug, Clone)]
pub struct TextCnn {
    pub vocab: Vocabulary,
    pub d_emb: usize,
    pub n_filters: usize,
    pub widths: Vec<usize>,
    pub params: ParamSet,
}

impl TextCnn {
    /// Fresh classifier. Embedding and filters are Gaussian; the output
    /// projection and all biases start at zero. Registration order (also the
    /// checkpoint payload order): embedding, each width's filters+bias in
    /// ascending width order, output weights, output bias.
    pub fn new(vocab: Vocabulary, hyper: &ClassifierHyper) -> Result<Self> {
        hyper.validate()?;
        let mut rng = RunRng::new(hyper.seed);
        let mut params = ParamSet::new();
        let v = vocab.len();
        params.register_normal("emb", &[v, hyper.d_emb], 0.1, &mut rng)?;
        for &w in &hyper.widths {
            params.register_normal(&format!("conv{w}.w"), &[w * hyper.d_emb, hyper.n_filters], 0.05, &mut rng)?;
            params.register_const(&format!("conv{w}.b"), &[hyper.n_filters], 0.0)?;
        }
        let pooled = hyper.widths.len() * hyper.n_filters;
        params.register_const("out.w", &[pooled, 2], 0.0)?;
        params.register_const("out.b", &[2], 0.0)?;
        Ok(TextCnn {
            vocab,
            d_emb: hyper.d_emb,
            n_filters: hyper.n_filters,
            widths: hyper.widths.clone(),
            params,
        })
    }

    fn widest(&self) -> usize {
        *self.widths.iter().max().expect("widths non-empty")
    }

    /// Class logits for a token-id sequence, built on `tape`. Input shorter
    /// than the widest filter is PAD-extended; pooling only spans windows of
    /// real tokens (or the single all-there-is window when the sentence is
    /// shorter than a filter), so trailing PADs can never change the output.
    pub fn logits_on(
        &self,
        tape: &mut Tape,
        staged: &HashMap<String, TensorId>,
        ids: &[usize],
    ) -> Result<TensorId> {
        // Trailing PADs are padding by definition, never content.
        let n_real = ids.len() - ids.iter().rev().take_while(|&&i| i == PAD).count();
        if n_real == 0 {
            return Err(Error::EmptySentence("cannot classify an empty sentence".into()));
        }
        let mut padded = ids[..n_real].to_vec();
        while padded.len() < self.widest() {
            padded.push(PAD);
        }
        let emb = staged
            .get("emb")
            .copied()
            .ok_or_else(|| Error::Config("classifier embedding not staged".into()))?;
        let x = tape.embedding(emb, &padded)?;
        let mut pooled = Vec::with_capacity(self.widths.len());
        for &w in &self.widths {
            let wid = staged
                .get(&format!("conv{w}.w"))
                .copied()
                .ok_or_else(|| Error::Config(format!("conv{w}.w not staged")))?;
            let bid = staged
                .get(&format!("conv{w}.b"))
                .copied()
                .ok_or_else(|| Error::Config(format!("conv{w}.b not staged")))?;
            let h = tape.conv1d(x, wid, bid, w)?;
            let h = tape.relu(h)?;
            let valid = n_real.max(w) - w + 1;
            let p = tape.max_rows(h, valid)?;
            pooled.push(tape.reshape(p, &[1, self.n_filters])?);
        }
        let features = tape.concat_cols(&pooled)?;
        let ow = staged
            .get("out.w")
            .copied()
            .ok_or_else(|| Error::Config("out.w not staged".into()))?;
        let ob = staged
            .get("out.b")
            .copied()
            .ok_or_else(|| Error::Config("out.b not staged".into()))?;
        let z = tape.matmul(features, ow)?;
        tape.add(z, ob)
    }

    /// (p(informal), p(formal)) for a sentence; the pair sums to 1.
    pub fn confidence(&self, sentence: &[String]) -> Result<(f64, f64)> {
        if sentence.is_empty() {
            return Err(Error::EmptySentence("cannot classify an empty sentence".into()));
        }
        let ids = self.vocab.encode(sentence);
        self.confidence_ids(&ids)
    }

    /// `confidence` on pre-encoded ids (used by rewards to score sampled id
    /// sequences without a detour through text).
    pub fn confidence_ids(&self, ids: &[usize]) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let staged = self.params.stage(&mut tape)?;
        let z = self.logits_on(&mut tape, &staged, ids)?;
        let p = tape.softmax(z)?;
        let pv = tape.values(p);
        Ok((pv[0], pv[1]))
    }

    /// Hard label: argmax of confidence, exact ties resolving to
    /// [`Style::Informal`] (label 0).
    pub fn predict(&self, sentence: &[String]) -> Result<Style> {
        let (p0, p1) = self.confidence(sentence)?;
        Ok(if p1 > p0 { Style::Formal } else { Style::Informal })
    }

    /// Probability assigned to `style`.
    pub fn prob_of(&self, sentence: &[String], style: Style) -> Result<f64> {
        let (p0, p1) = self.confidence(sentence)?;
        Ok(match style {
            Style::Informal => p0,
            Style::Formal => p1,
        })
    }
}

/// Train a classifier on labeled sentences. A tenth of the data (at least
/// one item) is held out after a seeded shuffle; training stops when
/// held-out accuracy hasn't improved for `patience` epochs and the
/// best-epoch weights are returned together with that accuracy.
///
/// Draw order per run: model init, holdout shuffle, then one order shuffle
/// per epoch.
pub fn train_textcnn(data: &[(Sentence, Style)], hyper: &ClassifierHyper) -> Result<(TextCnn, f64)> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no labeled sentences".into()));
    }
    if data.iter().any(|(s, _)| s.is_empty()) {
        return Err(Error::EmptySentence("labeled sentence is empty".into()));
    }
    let has = |style: Style| data.iter().any(|(_, l)| *l == style);
    if !has(Style::Informal) || !has(Style::Formal) {
        return Err(Error::Data("training data must contain both styles".into()));
    }

    let vocab = Vocabulary::build(data.iter().map(|(s, _)| s), &[]);
    let mut model = TextCnn::new(vocab, hyper)?;
    let encoded: Vec<(Vec<usize>, usize)> = data
        .iter()
        .map(|(s, l)| (model.vocab.encode(s), l.index()))
        .collect();

    let mut rng = RunRng::new(hyper.seed);
    // The constructor consumed its own RunRng(seed); reuse the seed here for
    // the data shuffles — the two streams are independent by construction.
    let mut idx: Vec<usize> = (0..encoded.len()).collect();
    rng.shuffle(&mut idx);
    let n_hold = (encoded.len() / 10).max(1);
    let hold_idx = idx.split_off(encoded.len() - n_hold);
    let train_idx = idx;
    if train_idx.is_empty() {
        return Err(Error::Data("not enough data to split off a holdout".into()));
    }

    // (accuracy, mean cross-entropy) on the holdout. Accuracy drives early
    // stopping; the loss breaks accuracy ties so training keeps improving
    // calibration after a small holdout saturates.
    let holdout_metrics = |m: &TextCnn| -> Result<(f64, f64)> {
        let mut hits = 0usize;
        let mut nll = 0.0;
        for &i in &hold_idx {
            let (ids, label) = &encoded[i];
            let (p0, p1) = m.confidence_ids(ids)?;
            let pred = if p1 > p0 { 1 } else { 0 };
            if pred == *label {
                hits += 1;
            }
            let p = if *label == 0 { p0 } else { p1 };
            nll -= p.max(1e-300).ln();
        }
        Ok((hits as f64 / hold_idx.len() as f64, nll / hold_idx.len() as f64))
    };

    let mut state = AdamState::new(hyper.lr);
    let mut best_acc = -1.0;
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = model.params.snapshot();
    for epoch in 0..hyper.max_epochs {
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        for chunk in order.chunks(hyper.batch_size) {
            let mut tape = Tape::new();
            let staged = model.params.stage(&mut tape)?;
            let mut total = None;
            for &i in chunk {
                let (ids, label) = &encoded[i];
                let z = model.logits_on(&mut tape, &staged, ids)?;
                let loss = tape.cross_entropy(z, &[*label], &[1.0])?;
                total = Some(match total {
                    None => loss,
                    Some(t) => tape.add(t, loss)?,
                });
            }
            let total = total.expect("chunks are non-empty");
            let mean = tape.scale(total, 1.0 / chunk.len() as f64)?;
            tape.backward(mean)?;
            let grads = collect_grads(&tape, &staged)?;
            adam_step(&mut model.params, &grads, &mut state)?;
        }
        let (acc, loss) = holdout_metrics(&model)?;
        if acc > best_acc || (acc == best_acc && loss < best_loss) {
            best_acc = acc;
            best_loss = loss;
            best_epoch = epoch;
            best_snap = model.params.snapshot();
        } else if epoch - best_epoch >= hyper.patience {
            break;
        }
    }
    model.params.restore(&best_snap);
    Ok((model, best_acc))
}
