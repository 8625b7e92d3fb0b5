//! Fine-tuning: the epoch loop joining the supervised loss with the
//! configured reward terms, validation-HM early stopping with best-epoch
//! snapshot restore, a deterministic metrics log, checkpoint files, and the
//! data-fraction ablation runner.

pub mod ablation;
pub mod checkpoint;
pub mod config;

use std::fmt::Display;
use std::path::Path;

use crate::classifier::TextCnn;
use crate::corpus::{EvalItem, ParallelPair};
use crate::error::{Error, Result};
use crate::eval::evaluate_system;
use crate::models::Model;
use crate::optim::{adam_step, collect_grads, AdamState};
use crate::rewards::{draw_samples, objective_with_samples};
use crate::rng::RunRng;
use crate::tensor::Tape;

pub use ablation::{curve_data, run_ablation, AblationRow, AblationSpec, RewardVariant, ABLATION_HEADER};
pub use checkpoint::{load_classifier, load_model, save_classifier, save_model, CheckpointKind, CheckpointMeta};
pub use config::{ModelKind, Paths, TrainConfig};

/// Domain tag stamped on every instance of a single-domain run when domain
/// tags are enabled. Multi-domain corpora keep their per-pair tags; this is
/// the fallback for pairs that carry none, and the tag validation decoding
/// uses.
pub const DOMAIN_TAG: &str = "formality";

/// Ordered `key<TAB>value` records. Rendering is deterministic, so two runs
/// with the same seed, config, and corpus produce byte-identical logs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsLog {
    lines: Vec<String>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("{key}\t{value}"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    /// Value of the last record with this key.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines
            .iter()
            .rev()
            .find_map(|l| l.strip_prefix(key).and_then(|rest| rest.strip_prefix('\t')))
    }

    /// One record per line, trailing newline included.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Six-decimal rendering used for every metric value in logs and tables.
pub(crate) fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Decide whether training should stop, given the validation metric after
/// each completed epoch (oldest first, higher is better, epochs counted from
/// zero). Returns the best epoch's index once the most recent `patience`
/// epochs have all failed to improve on it — improvement means strictly
/// greater — and `None` while training should continue.
pub fn early_stopping_check(history: &[f64], patience: usize) -> Option<usize> {
    if history.is_empty() {
        return None;
    }
    let mut best = 0;
    for (i, &v) in history.iter().enumerate() {
        if v > history[best] {
            best = i;
        }
    }
    if history.len() - 1 - best >= patience {
        Some(best)
    } else {
        None
    }
}

/// A finished fine-tuning run: the model restored to its best-validation
/// epoch, the metrics log, and the headline numbers.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub model: Model,
    pub log: MetricsLog,
    /// Epoch (from zero) whose weights the returned model carries.
    pub best_epoch: usize,
    pub best_hm: f64,
    pub epochs_run: usize,
}

/// Fine-tune `model` on parallel pairs, each used in both transfer
/// directions. Every batch minimizes the mean of the per-instance objective
/// (supervised loss plus whichever reward terms the config enables — weights
/// of zero add nothing, so such a run is bit-identical to plain supervised
/// fine-tuning). After each epoch the model greedy-decodes the validation
/// items; training stops when the overall harmonic mean fails to improve for
/// `patience` consecutive epochs, and the best epoch's weights are returned.
///
/// One seeded RNG drives the whole run: the per-epoch shuffle, then each
/// instance's sampling draws in batch order. Reward terms stay off during the
/// configured warm-up epochs.
pub fn finetune(
    mut model: Model,
    train_pairs: &[ParallelPair],
    valid_items: &[EvalItem],
    classifier: &TextCnn,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let kind = config.kind()?;
    if kind.family() != model.family() {
        return Err(Error::Config(format!(
            "config expects a {} model, got {}",
            kind.family().name(),
            model.family().name()
        )));
    }
    if train_pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    if valid_items.is_empty() {
        return Err(Error::Data("no validation items".into()));
    }
    let rewards = config.reward_config();
    rewards.validate(model.family())?;

    // Each pair trains both directions. With domain tags enabled, pairs keep
    // their own tag and untagged ones get the single-domain default; with
    // tags disabled any stored tag is ignored.
    let mut instances = Vec::with_capacity(train_pairs.len() * 2);
    for p in train_pairs {
        for mut inst in [p.clone(), p.reversed()] {
            inst.domain_tag = if config.domain_tags {
                inst.domain_tag.or_else(|| Some(DOMAIN_TAG.to_string()))
            } else {
                None
            };
            instances.push(inst);
        }
    }
    let eval_tag = if config.domain_tags { Some(DOMAIN_TAG) } else { None };

    let lr = config.effective_lr()?;
    let mut rng = RunRng::new(config.seed);
    let mut adam = AdamState::new(lr);

    let mut log = MetricsLog::new();
    log.push("model", kind.name());
    log.push("seed", config.seed);
    log.push("lr", lr);
    log.push("batch_size", config.batch_size);
    log.push("patience", config.patience);
    log.push("max_epochs", config.max_epochs);
    log.push("lambda_cls", config.lambda_cls);
    log.push("lambda_bleu", config.lambda_bleu);
    log.push("source_reward", config.source_reward);
    log.push("warmup_epochs", config.warmup_epochs);
    log.push("domain_tags", config.domain_tags);
    log.push("train_instances", instances.len());
    log.push("valid_items", valid_items.len());

    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut history: Vec<f64> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_hm = f64::NEG_INFINITY;
    let mut best_snap = model.params().snapshot();
    let mut epochs_run = 0usize;
    let mut step: u64 = 0;

    for epoch in 0..config.max_epochs {
        epochs_run = epoch + 1;
        rng.shuffle(&mut order);
        let rewards_on = rewards.any_enabled() && epoch >= config.warmup_epochs;
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;

        for chunk in order.chunks(config.batch_size) {
            // Any numerics failure inside the step — non-finite parameters at
            // staging, a non-finite reward or sample log-probability, or a
            // non-finite batch loss — is divergence, reported with its step.
            let step_result = (|| {
                let mut tape = Tape::new();
                let staged = model.params().stage(&mut tape)?;
                let mut total = None;
                for &i in chunk {
                    let pair = &instances[i];
                    let sample = if rewards_on {
                        draw_samples(&model, classifier, pair, &rewards, &mut rng)?
                    } else {
                        None
                    };
                    let term = objective_with_samples(&mut tape, &staged, &model, pair, sample.as_ref())?;
                    total = Some(match total {
                        Some(t) => tape.add(t, term)?,
                        None => term,
                    });
                }
                let sum = total.expect("chunks are non-empty");
                let loss = tape.scale(sum, 1.0 / chunk.len() as f64)?;
                let loss_value = tape.value_scalar(loss);
                if !loss_value.is_finite() {
                    return Err(Error::Numerics(format!("non-finite training loss {loss_value}")));
                }
                tape.backward(loss)?;
                let grads = collect_grads(&tape, &staged)?;
                Ok((loss_value, grads))
            })();
            let (loss_value, grads) = step_result.map_err(|e| match e {
                Error::Numerics(msg) => {
                    Error::Numerics(format!("{msg} at step {step} (epoch {epoch})"))
                }
                other => other,
            })?;
            adam_step(model.params_mut(), &grads, &mut adam)?;
            step += 1;
            loss_sum += loss_value;
            n_batches += 1;
        }

        let report = evaluate_system(&model, valid_items, classifier, eval_tag, Vec::new())?;
        let hm = report.overall.hm;
        log.push(&format!("epoch.{epoch}.train_loss"), fmt6(loss_sum / n_batches as f64));
        log.push(&format!("epoch.{epoch}.rewards"), if rewards_on { "on" } else { "off" });
        log.push(&format!("epoch.{epoch}.val_bleu"), fmt6(report.overall.bleu));
        log.push(&format!("epoch.{epoch}.val_acc"), fmt6(report.overall.acc));
        log.push(&format!("epoch.{epoch}.val_hm"), fmt6(hm));

        history.push(hm);
        if hm > best_hm {
            best_hm = hm;
            best_epoch = epoch;
            best_snap = model.params().snapshot();
        }
        if early_stopping_check(&history, config.patience).is_some() {
            break;
        }
    }

    model.params_mut().restore(&best_snap);
    log.push("epochs_run", epochs_run);
    log.push("stopped_early", epochs_run < config.max_epochs);
    log.push("best_epoch", best_epoch);
    log.push("best_val_hm", fmt6(best_hm));

    Ok(FinetuneOutcome { model, log, best_epoch, best_hm, epochs_run })
}
