//! Corpus types, synthetic data generation, GYAFC-format I/O, and encoding.
//!
//! A corpus is built from whitespace-tokenized sentences over a closed
//! vocabulary. Parallel pairs are always cross-style (the target style is the
//! flip of the source style); evaluation items carry exactly four references
//! in the target style.

pub mod gyafc;
pub mod synth;
pub mod vocab;

use crate::error::{Error, Result};
use crate::rng::RunRng;

/// Whitespace tokens of one sentence. Tokens never contain whitespace;
/// training and evaluation sentences are nonempty (degenerate empty outputs
/// can still appear as model samples and are handled by the metrics).
pub type Sentence = Vec<String>;

/// Parse a line into tokens. Collapses runs of whitespace.
pub fn parse_sentence(line: &str) -> Sentence {
    line.split_whitespace().map(str::to_string).collect()
}

/// Join tokens with single spaces (inverse of `parse_sentence` for
/// well-formed tokens).
pub fn render_sentence(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Binary style label: 0 = informal, 1 = formal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Style {
    Informal,
    Formal,
}

impl Style {
    pub fn flip(self) -> Style {
        match self {
            Style::Informal => Style::Formal,
            Style::Formal => Style::Informal,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Style::Informal => 0,
            Style::Formal => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Style> {
        match i {
            0 => Ok(Style::Informal),
            1 => Ok(Style::Formal),
            other => Err(Error::Range(format!("style index {other} not in {{0, 1}}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Style::Informal => "informal",
            Style::Formal => "formal",
        }
    }
}

/// One aligned transfer instance. The target style is always
/// `source_style.flip()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: Sentence,
    pub target: Sentence,
    pub source_style: Style,
    pub domain_tag: Option<String>,
}

impl ParallelPair {
    pub fn new(source: Sentence, target: Sentence, source_style: Style) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::EmptySentence(
                "parallel pair with an empty side".into(),
            ));
        }
        Ok(ParallelPair {
            source,
            target,
            source_style,
            domain_tag: None,
        })
    }

    pub fn target_style(&self) -> Style {
        self.source_style.flip()
    }

    /// The same aligned sentences viewed in the opposite transfer direction.
    pub fn reversed(&self) -> ParallelPair {
        ParallelPair {
            source: self.target.clone(),
            target: self.source.clone(),
            source_style: self.source_style.flip(),
            domain_tag: self.domain_tag.clone(),
        }
    }
}

/// One evaluation unit: a source sentence plus exactly four references in the
/// target style.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalItem {
    pub source: Sentence,
    pub source_style: Style,
    pub references: [Sentence; 4],
}

impl EvalItem {
    pub fn target_style(&self) -> Style {
        self.source_style.flip()
    }
}

/// A full corpus: aligned training pairs, evaluation items for both
/// directions, and unpaired single-style text for pretraining.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<ParallelPair>,
    pub valid: Vec<EvalItem>,
    pub test: Vec<EvalItem>,
    pub unpaired_informal: Vec<Sentence>,
    pub unpaired_formal: Vec<Sentence>,
}

impl Corpus {
    /// Evaluation items of one split filtered to a single source style, in
    /// stored order.
    pub fn eval_items(&self, split: &[EvalItem], source_style: Style) -> Vec<EvalItem> {
        split
            .iter()
            .filter(|it| it.source_style == source_style)
            .cloned()
            .collect()
    }
}

/// Uniform sample without replacement of ⌈fraction·N⌉ pairs, returned in
/// original corpus order. `fraction = 1` is the identity. Deterministic for a
/// given seed.
pub fn subset_fraction(pairs: &[ParallelPair], fraction: f64, seed: u64) -> Result<Vec<ParallelPair>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} not in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(pairs.to_vec());
    }
    let n = pairs.len();
    let k = (fraction * n as f64).ceil() as usize;
    let mut rng = RunRng::new(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut indices);
    let mut keep: Vec<usize> = indices.into_iter().take(k).collect();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| pairs[i].clone()).collect())
}
