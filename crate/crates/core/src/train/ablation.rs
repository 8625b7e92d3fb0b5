//! Data-fraction × reward-variant sweep: fine-tune one cell per
//! (fraction, variant, seed), score it on the test items, and append the
//! result to a CSV table. Rows are flushed as they finish and existing rows
//! are skipped on rerun, so an interrupted sweep loses at most one cell.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::TextCnn;
use crate::corpus::{subset_fraction, EvalItem, ParallelPair};
use crate::error::{Error, Result};
use crate::eval::evaluate_system;
use crate::models::Model;
use crate::train::{finetune, fmt6, TrainConfig, DOMAIN_TAG};

/// Which reward terms a sweep cell trains with. `Sc` is the style-classifier
/// reward, `Bleu` the self-critical BLEU reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardVariant {
    Base,
    Sc,
    Bleu,
    ScBleu,
}

impl RewardVariant {
    pub const ALL: [RewardVariant; 4] =
        [RewardVariant::Base, RewardVariant::Sc, RewardVariant::Bleu, RewardVariant::ScBleu];

    pub fn name(self) -> &'static str {
        match self {
            RewardVariant::Base => "base",
            RewardVariant::Sc => "sc",
            RewardVariant::Bleu => "bleu",
            RewardVariant::ScBleu => "sc-bleu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        RewardVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown reward variant {s:?}")))
    }

    /// (style weight, BLEU weight) for this variant.
    pub fn lambdas(self) -> (f64, f64) {
        match self {
            RewardVariant::Base => (0.0, 0.0),
            RewardVariant::Sc => (1.0, 0.0),
            RewardVariant::Bleu => (0.0, 0.2),
            RewardVariant::ScBleu => (1.0, 0.2),
        }
    }
}

/// The sweep grid. Defaults to the 10%/50%/100% fractions over all four
/// reward variants at seed 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<RewardVariant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}
fn default_variants() -> Vec<RewardVariant> {
    RewardVariant::ALL.to_vec()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            fractions: default_fractions(),
            variants: default_variants(),
            seeds: default_seeds(),
        }
    }
}

impl AblationSpec {
    pub fn from_toml_str(text: &str) -> Result<AblationSpec> {
        let spec: AblationSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("ablation spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation spec must list fractions, variants, and seeds".into()));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("fraction {f} not in (0, 1]")));
            }
        }
        if !self.fractions.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("fractions must be sorted ascending without duplicates".into()));
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return Err(Error::Config(format!("duplicate variant {}", v.name())));
            }
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("duplicate seed {s}")));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.fractions.len() * self.variants.len() * self.seeds.len()
    }
}

pub const ABLATION_HEADER: &str = "fraction,variant,seed,bleu,acc,hm";

/// One finished sweep cell (test-set overall scores).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fraction: f64,
    pub variant: RewardVariant,
    pub seed: u64,
    pub bleu: f64,
    pub acc: f64,
    pub hm: f64,
}

impl AblationRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.fraction,
            self.variant.name(),
            self.seed,
            fmt6(self.bleu),
            fmt6(self.acc),
            fmt6(self.hm)
        )
    }

    fn parse(line: &str) -> Result<AblationRow> {
        let bad = || Error::Format(format!("malformed ablation row {line:?}"));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(bad());
        }
        Ok(AblationRow {
            fraction: fields[0].parse().map_err(|_| bad())?,
            variant: RewardVariant::parse(fields[1])?,
            seed: fields[2].parse().map_err(|_| bad())?,
            bleu: fields[3].parse().map_err(|_| bad())?,
            acc: fields[4].parse().map_err(|_| bad())?,
            hm: fields[5].parse().map_err(|_| bad())?,
        })
    }

    fn key(&self) -> (u64, RewardVariant, u64) {
        (self.fraction.to_bits(), self.variant, self.seed)
    }
}

/// Read rows already present in a partially written table.
fn existing_rows(path: &Path) -> Result<HashMap<(u64, RewardVariant, u64), AblationRow>> {
    let mut rows = HashMap::new();
    if !path.exists() {
        return Ok(rows);
    }
    let text = std::fs::read_to_string(path)?;
    if text.is_empty() {
        return Ok(rows);
    }
    let mut lines = text.lines();
    match lines.next() {
        Some(ABLATION_HEADER) => {}
        Some(other) => {
            return Err(Error::Format(format!(
                "existing ablation table has header {other:?}, expected {ABLATION_HEADER:?}"
            )))
        }
        None => return Ok(rows),
    }
    for line in lines {
        let row = AblationRow::parse(line)?;
        rows.insert(row.key(), row);
    }
    Ok(rows)
}

/// Run the sweep. Every cell clones `base_model`, subsets the parallel data
/// by (fraction, seed), fine-tunes with the variant's reward weights on top
/// of `template` (which supplies learning rate, batch size, patience, epoch
/// budget, warm-up, and the domain-tag flag), and scores the result on the
/// test items. Results append to the CSV at `csv_path` — header written when
/// the file is new, each row flushed as it completes, rows already in the
/// file reused instead of recomputed — and come back in grid order
/// (fractions outermost, then variants, then seeds).
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    spec: &AblationSpec,
    base_model: &Model,
    train: &[ParallelPair],
    valid: &[EvalItem],
    test: &[EvalItem],
    classifier: &TextCnn,
    template: &TrainConfig,
    csv_path: &Path,
) -> Result<Vec<AblationRow>> {
    spec.validate()?;
    template.validate()?;
    let done = existing_rows(csv_path)?;
    let fresh = done.is_empty();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(csv_path)?;
    if fresh {
        // Rewrite from scratch so an empty or headerless file gets its header.
        file.set_len(0)?;
        writeln!(file, "{ABLATION_HEADER}")?;
        file.flush()?;
    }

    let mut results = Vec::with_capacity(spec.n_cells());
    for &fraction in &spec.fractions {
        for &variant in &spec.variants {
            for &seed in &spec.seeds {
                let key = (fraction.to_bits(), variant, seed);
                if let Some(row) = done.get(&key) {
                    results.push(row.clone());
                    continue;
                }
                let subset = subset_fraction(train, fraction, seed)?;
                let mut config = template.clone();
                config.seed = seed;
                config.fraction = fraction;
                (config.lambda_cls, config.lambda_bleu) = variant.lambdas();
                let outcome = finetune(base_model.clone(), &subset, valid, classifier, &config)?;
                let tag = if config.domain_tags { Some(DOMAIN_TAG) } else { None };
                let report = evaluate_system(&outcome.model, test, classifier, tag, Vec::new())?;
                let row = AblationRow {
                    fraction,
                    variant,
                    seed,
                    bleu: report.overall.bleu,
                    acc: report.overall.acc,
                    hm: report.overall.hm,
                };
                writeln!(file, "{}", row.csv_line())?;
                file.flush()?;
                results.push(row);
            }
        }
    }
    Ok(results)
}

/// Plot-ready summary: per (variant, fraction), the harmonic mean averaged
/// over seeds, as tab-separated lines in grid order.
pub fn curve_data(spec: &AblationSpec, rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tfraction\thm\n");
    for &variant in &spec.variants {
        for &fraction in &spec.fractions {
            let hms: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == variant && r.fraction == fraction)
                .map(|r| r.hm)
                .collect();
            if hms.is_empty() {
                continue;
            }
            let mean = hms.iter().sum::<f64>() / hms.len() as f64;
            out.push_str(&format!("{}\t{}\t{}\n", variant.name(), fraction, fmt6(mean)));
        }
    }
    out
}
