//! Evaluation metrics: multi-reference corpus BLEU, smoothed sentence BLEU
//! for the training-time reward, style accuracy, harmonic mean, and report
//! assembly.
//!
//! Corpus BLEU follows the reference moses `multi-bleu.perl` exactly:
//! case-sensitive whitespace tokens, modified n-gram precision with
//! per-reference max clipping for n = 1..4, geometric mean, brevity penalty
//! exp(1 − r/c) when c ≤ r (else 1), per-segment reference length chosen as
//! the closest to the hypothesis length with ties broken toward the shorter,
//! and corpus BLEU = 0 outright if any corpus-level match count is zero.
//! Scores are reported in [0, 1].

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::{Sentence, Style};
use crate::error::{Error, Result};

/// Additive sufficient statistics for corpus BLEU: clipped match counts and
/// candidate n-gram totals for n = 1..4, plus cumulative candidate length c
/// and reference length r. Corpus stats are the sum of segment stats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    /// Statistics for one hypothesis against its reference set.
    pub fn from_segment(hypothesis: &[String], references: &[Sentence]) -> Result<BleuStats> {
        if references.is_empty() {
            return Err(Error::Data("segment with no references".into()));
        }
        let mut stats = BleuStats {
            hyp_len: hypothesis.len() as u64,
            ref_len: closest_ref_len(hypothesis.len(), references) as u64,
            ..BleuStats::default()
        };
        for n in 1..=4usize {
            if hypothesis.len() < n {
                break;
            }
            let hyp_counts = ngram_counts(hypothesis, n);
            stats.totals[n - 1] = (hypothesis.len() - n + 1) as u64;
            let mut ref_counts: HashMap<&[String], u64> = HashMap::new();
            for r in references {
                for (gram, count) in ngram_counts(r, n) {
                    let e = ref_counts.entry(gram).or_insert(0);
                    *e = (*e).max(count);
                }
            }
            stats.matches[n - 1] = hyp_counts
                .iter()
                .map(|(gram, &count)| count.min(ref_counts.get(gram).copied().unwrap_or(0)))
                .sum();
        }
        Ok(stats)
    }

    pub fn merge(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// Final BLEU in [0, 1]. Zero if any n-gram level has zero matches.
    pub fn score(&self) -> f64 {
        if self.matches.iter().any(|&m| m == 0) {
            return 0.0;
        }
        let mut log_precision = 0.0;
        for n in 0..4 {
            log_precision += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        let bp = brevity_penalty(self.hyp_len, self.ref_len);
        bp * (log_precision / 4.0).exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Reference length closest to the hypothesis length; ties break toward the
/// shorter reference.
fn closest_ref_len(hyp_len: usize, references: &[Sentence]) -> usize {
    let mut best = references[0].len();
    for r in &references[1..] {
        let len = r.len();
        let (d_new, d_best) = (hyp_len.abs_diff(len), hyp_len.abs_diff(best));
        if d_new < d_best || (d_new == d_best && len < best) {
            best = len;
        }
    }
    best
}

fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Multi-reference corpus BLEU over aligned hypothesis/reference-set lists.
pub fn corpus_bleu(hypotheses: &[Sentence], reference_sets: &[Vec<Sentence>]) -> Result<f64> {
    if hypotheses.len() != reference_sets.len() {
        return Err(Error::Alignment(format!(
            "{} hypotheses vs {} reference sets",
            hypotheses.len(),
            reference_sets.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (hyp, refs) in hypotheses.iter().zip(reference_sets) {
        stats.merge(&BleuStats::from_segment(hyp, refs)?);
    }
    Ok(stats.score())
}

/// Single-segment, single-reference BLEU with +1 smoothing on the numerator
/// and denominator of the n ≥ 2 precisions (unigram precision unsmoothed).
/// Used as the training-time reward scorer. An empty hypothesis scores 0 —
/// degenerate samples are legal inputs, not errors.
pub fn sentence_bleu_smoothed(hypothesis: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Data("empty reference sentence".into()));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let refs = [reference.to_vec()];
    let stats = BleuStats::from_segment(hypothesis, &refs)?;
    if stats.matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_precision = (stats.matches[0] as f64 / stats.totals[0] as f64).ln();
    for n in 1..4 {
        log_precision += ((stats.matches[n] + 1) as f64 / (stats.totals[n] + 1) as f64).ln();
    }
    Ok(brevity_penalty(stats.hyp_len, stats.ref_len) * (log_precision / 4.0).exp())
}

/// Fraction of outputs classified as their target style. `classify` is the
/// frozen classifier's label function.
pub fn style_accuracy<F>(outputs: &[Sentence], target_styles: &[Style], mut classify: F) -> Result<f64>
where
    F: FnMut(&[String]) -> Result<Style>,
{
    if outputs.is_empty() {
        return Err(Error::Data("no outputs to score".into()));
    }
    if outputs.len() != target_styles.len() {
        return Err(Error::Alignment(format!(
            "{} outputs vs {} target styles",
            outputs.len(),
            target_styles.len()
        )));
    }
    let mut hits = 0usize;
    for (out, &target) in outputs.iter().zip(target_styles) {
        if classify(out)? == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / outputs.len() as f64)
}

/// Harmonic mean 2ab/(a+b), defined as 0 when a + b = 0. Both inputs must be
/// in [0, 1].
pub fn harmonic_mean(acc: f64, bleu: f64) -> Result<f64> {
    for (name, v) in [("accuracy", acc), ("bleu", bleu)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Range(format!("{name} {v} outside [0, 1]")));
        }
    }
    if acc + bleu == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * acc * bleu / (acc + bleu))
}

/// Scores for one transfer direction (or the pooled total).
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionScores {
    pub label: String,
    pub count: usize,
    pub bleu: f64,
    pub acc: f64,
    pub hm: f64,
}

/// Full evaluation report: per-direction scores, the micro-average over the
/// pooled items of both directions, and an echo of the run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub directions: Vec<DirectionScores>,
    pub overall: DirectionScores,
    pub config_echo: Vec<(String, String)>,
}

impl EvalReport {
    /// Human-readable table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(
            out,
            "{:<22} {:>6} {:>8} {:>8} {:>8}",
            "direction", "n", "BLEU", "ACC", "HM"
        );
        for d in self.directions.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(
                out,
                "{:<22} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                d.label, d.count, d.bleu, d.acc, d.hm
            );
        }
        out
    }

    /// Line-oriented machine format: one `key<TAB>value` per metric.
    pub fn render_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config_echo {
            let _ = writeln!(out, "config.{k}\t{v}");
        }
        for d in self.directions.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(out, "count.{}\t{}", d.label, d.count);
            let _ = writeln!(out, "bleu.{}\t{:.6}", d.label, d.bleu);
            let _ = writeln!(out, "acc.{}\t{:.6}", d.label, d.acc);
            let _ = writeln!(out, "hm.{}\t{:.6}", d.label, d.hm);
        }
        out
    }
}
