//! Policy-gradient rewards layered on the supervised loss: a style-classifier
//! term, a self-critical BLEU term, and — for the decoder-only family — a
//! style term on a model-sampled source segment.
//!
//! Rewards are plain scalars computed against frozen snapshots; no gradient
//! flows into the classifier or the reward values. Each reward R enters the
//! minimized objective as the surrogate −R·log P(y^s|x), whose gradient is
//! the single-sample policy-gradient estimate. Sampling (which consumes
//! randomness and runs its own decode tapes) is split from objective
//! construction (pure given the drawn samples), so the objective itself is a
//! deterministic function of the parameters and can be gradient-checked.

use std::collections::HashMap;

use crate::classifier::TextCnn;
use crate::corpus::vocab::BOS;
use crate::corpus::{ParallelPair, Style};
use crate::error::{Error, Result};
use crate::metrics::sentence_bleu_smoothed;
use crate::models::{Family, GenerationConfig, Model};
use crate::rng::RunRng;
use crate::tensor::{Tape, TensorId};

/// Reward weights. A term is active exactly when its weight is positive, so
/// a weight of zero is bit-identical to the term not existing (no random
/// draws, no tape nodes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Style-classifier reward weight.
    pub lambda_cls: f64,
    /// Self-critical BLEU reward weight.
    pub lambda_bleu: f64,
    /// Also reward the style of a sampled source segment (decoder-only
    /// family; the encoder-decoder never generates the source).
    pub source_reward: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { lambda_cls: 1.0, lambda_bleu: 0.2, source_reward: false }
    }
}

impl RewardConfig {
    /// Plain supervised fine-tuning: every reward disabled.
    pub fn off() -> Self {
        RewardConfig { lambda_cls: 0.0, lambda_bleu: 0.0, source_reward: false }
    }

    pub fn style_enabled(&self) -> bool {
        self.lambda_cls > 0.0
    }

    pub fn bleu_enabled(&self) -> bool {
        self.lambda_bleu > 0.0
    }

    pub fn any_enabled(&self) -> bool {
        self.style_enabled() || self.bleu_enabled()
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        for (name, lambda) in [("lambda_cls", self.lambda_cls), ("lambda_bleu", self.lambda_bleu)] {
            if !lambda.is_finite() || lambda < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {lambda}")));
            }
        }
        if self.source_reward && family == Family::Seq2Seq {
            return Err(Error::Config(
                "the source-segment reward applies only to the decoder-only family".into(),
            ));
        }
        Ok(())
    }
}

/// Everything drawn for one training pair before the differentiable pass:
/// the greedy baseline y′, the sampled sequence y^s, and the scalar rewards.
/// Ids include the stop token when one was emitted. `sampled_logprob` is the
/// log-probability recorded while sampling; the differentiable version is
/// rebuilt on the training tape by teacher-forcing the same ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSample {
    pub sampled: Vec<usize>,
    pub greedy: Vec<usize>,
    pub sampled_logprob: f64,
    pub r_cls: f64,
    pub r_bleu: f64,
    /// Sampled source segment (decoder-only with the source reward on).
    pub source_sampled: Option<Vec<usize>>,
    pub r_cls_source: f64,
}

/// Style reward for a transferred sentence: λ·[p(target) − p(source-style)].
/// Positive when the classifier leans toward the target style.
pub fn style_reward_target(
    sentence: &[String],
    target_style: Style,
    classifier: &TextCnn,
    lambda_cls: f64,
) -> Result<f64> {
    let (p0, p1) = classifier.confidence(sentence)?;
    let (p_target, p_other) = match target_style {
        Style::Informal => (p0, p1),
        Style::Formal => (p1, p0),
    };
    Ok(lambda_cls * (p_target - p_other))
}

/// Style reward for a sampled source segment: λ·[p(source-style) − p(other)].
/// The sign is reversed versus the target reward — the regenerated source
/// should keep its original style.
pub fn style_reward_source(
    family: Family,
    sentence: &[String],
    source_style: Style,
    classifier: &TextCnn,
    lambda_cls: f64,
) -> Result<f64> {
    if family == Family::Seq2Seq {
        return Err(Error::Config(
            "the source-segment reward applies only to the decoder-only family".into(),
        ));
    }
    style_reward_target(sentence, source_style, classifier, lambda_cls)
}

/// Self-critical BLEU reward: λ·[bleu(y′, y) − bleu(y^s, y)]. Positive when
/// the greedy baseline beats the sample, zero when they tie.
pub fn bleu_reward(
    greedy: &[String],
    sampled: &[String],
    reference: &[String],
    lambda_bleu: f64,
) -> Result<f64> {
    let baseline = sentence_bleu_smoothed(greedy, reference)?;
    let sampled_score = sentence_bleu_smoothed(sampled, reference)?;
    Ok(lambda_bleu * (baseline - sampled_score))
}

/// Surrogate loss contribution −R·ℓ for one reward and the differentiable
/// log-probability ℓ of its sampled sequence. Minimizing it ascends the
/// expected reward; R is a constant, so no gradient reaches the reward.
pub fn policy_gradient_term(tape: &mut Tape, reward: f64, logprob: TensorId) -> Result<TensorId> {
    if !reward.is_finite() {
        return Err(Error::Numerics(format!("non-finite reward {reward}")));
    }
    let value = tape.value_scalar(logprob);
    if !value.is_finite() {
        return Err(Error::Numerics(format!("non-finite sample log-probability {value}")));
    }
    tape.scale(logprob, -reward)
}

/// Draw everything the reward terms need for one pair: a greedy baseline, a
/// sampled transfer, and (decoder-only, when configured) a sampled source
/// segment, each scored against the frozen classifier or the gold target.
/// Returns `None` — consuming no randomness — when no reward is active, so a
/// rewards-off run is bit-identical to plain fine-tuning.
///
/// A sample that decodes to no real words cannot be classified; its style
/// reward is 0 (no signal) rather than an error, since degenerate samples
/// are a normal early-training event.
pub fn draw_samples(
    model: &Model,
    classifier: &TextCnn,
    pair: &ParallelPair,
    config: &RewardConfig,
    rng: &mut RunRng,
) -> Result<Option<RewardSample>> {
    config.validate(model.family())?;
    if !config.any_enabled() {
        return Ok(None);
    }
    let tag = pair.domain_tag.as_deref();
    let greedy = model.generate_transfer(&pair.source, pair.source_style, tag, &GenerationConfig::greedy(), None)?;
    let sampled =
        model.generate_transfer(&pair.source, pair.source_style, tag, &GenerationConfig::sample(), Some(rng))?;
    let sampled_words = model.vocab().decode_text(&sampled.ids);

    let r_cls = if config.style_enabled() && !sampled_words.is_empty() {
        style_reward_target(&sampled_words, pair.target_style(), classifier, config.lambda_cls)?
    } else {
        0.0
    };
    let r_bleu = if config.bleu_enabled() {
        let greedy_words = model.vocab().decode_text(&greedy.ids);
        bleu_reward(&greedy_words, &sampled_words, &pair.target, config.lambda_bleu)?
    } else {
        0.0
    };

    let (source_sampled, r_cls_source) = if config.source_reward && config.style_enabled() {
        let causal = match model {
            Model::Causal(m) => m,
            // validate() above already rejected this combination.
            Model::Seq2Seq(_) => unreachable!("source reward validated against the family"),
        };
        let budget = GenerationConfig::sample().budget(pair.source.len());
        let source = causal.sample_source(tag, budget, rng)?;
        let words = causal.vocab.decode_text(&source.ids);
        let r = if words.is_empty() {
            0.0
        } else {
            style_reward_source(Family::Causal, &words, pair.source_style, classifier, config.lambda_cls)?
        };
        (Some(source.ids), r)
    } else {
        (None, 0.0)
    };

    Ok(Some(RewardSample {
        sampled_logprob: sampled.logprob(),
        sampled: sampled.ids,
        greedy: greedy.ids,
        r_cls,
        r_bleu,
        source_sampled,
        r_cls_source,
    }))
}

/// Build the full training objective for one pair on `tape`: the supervised
/// loss plus the surrogate terms for whichever rewards the sample carries.
/// Both target-segment rewards multiply the same sampled log-probability, so
/// they enter as one term with reward r_cls + r_bleu; the source term scores
/// its own segment. Zero rewards add no tape nodes — the objective is then
/// bitwise the supervised loss.
pub fn objective_with_samples(
    tape: &mut Tape,
    staged: &HashMap<String, TensorId>,
    model: &Model,
    pair: &ParallelPair,
    sample: Option<&RewardSample>,
) -> Result<TensorId> {
    let mut total = model.pair_loss_on(tape, staged, pair)?;
    let Some(sample) = sample else {
        return Ok(total);
    };
    let tag = pair.domain_tag.as_deref();
    let r_target = sample.r_cls + sample.r_bleu;
    if r_target != 0.0 {
        let logprob =
            model.transfer_logprob_on(tape, staged, &pair.source, pair.source_style, tag, &sample.sampled)?;
        let term = policy_gradient_term(tape, r_target, logprob)?;
        total = tape.add(total, term)?;
    }
    if sample.r_cls_source != 0.0 {
        let ids = sample.source_sampled.as_ref().ok_or_else(|| {
            Error::Config("sample carries a source reward but no source segment".into())
        })?;
        let causal = match model {
            Model::Causal(m) => m,
            Model::Seq2Seq(_) => {
                return Err(Error::Config(
                    "the source-segment reward applies only to the decoder-only family".into(),
                ))
            }
        };
        let mut prompt = vec![BOS];
        if let Some(tag) = tag {
            prompt.push(causal.vocab.tag_id(tag)?);
        }
        let logprob = causal.continuation_logprob_on(tape, staged, &prompt, ids)?;
        let term = policy_gradient_term(tape, sample.r_cls_source, logprob)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Draw samples and build the objective in one call. Returns the loss node
/// and the drawn sample (`None` with rewards off).
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    tape: &mut Tape,
    staged: &HashMap<String, TensorId>,
    model: &Model,
    classifier: &TextCnn,
    pair: &ParallelPair,
    config: &RewardConfig,
    rng: &mut RunRng,
) -> Result<(TensorId, Option<RewardSample>)> {
    let sample = draw_samples(model, classifier, pair, config, rng)?;
    let loss = objective_with_samples(tape, staged, model, pair, sample.as_ref())?;
    Ok((loss, sample))
}
