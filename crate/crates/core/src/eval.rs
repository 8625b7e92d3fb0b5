//! End-to-end system evaluation: greedy-decode every evaluation item, score
//! each transfer direction with multi-reference BLEU, classifier accuracy,
//! and their harmonic mean, then pool both directions into a micro-average
//! (BLEU statistics and classification counts accumulated over the
//! concatenated items, not an average of the per-direction scores).

use crate::classifier::TextCnn;
use crate::corpus::{EvalItem, Sentence, Style};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, harmonic_mean, DirectionScores, EvalReport};
use crate::models::{GenerationConfig, Model};

/// Decode and score. Greedy decoding draws no randomness, so the report is a
/// pure function of the model, items, and classifier.
pub fn evaluate_system(
    model: &Model,
    items: &[EvalItem],
    classifier: &TextCnn,
    tag: Option<&str>,
    config_echo: Vec<(String, String)>,
) -> Result<EvalReport> {
    let mut outputs = Vec::with_capacity(items.len());
    for item in items {
        outputs.push(model.transfer(
            &item.source,
            item.source_style,
            tag,
            &GenerationConfig::greedy(),
            None,
        )?);
    }
    score_outputs(items, &outputs, classifier, config_echo)
}

/// Score already-decoded outputs against their items. Split out so baselines
/// (copy the source, emit a reference) can run through the identical scoring
/// path without a model.
///
/// An output with no real words cannot match the target style; it counts as
/// a classification miss without consulting the classifier (which rejects
/// empty sentences), and contributes zero n-gram matches to BLEU.
pub fn score_outputs(
    items: &[EvalItem],
    outputs: &[Sentence],
    classifier: &TextCnn,
    config_echo: Vec<(String, String)>,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Data("no evaluation items".into()));
    }
    if items.len() != outputs.len() {
        return Err(Error::Alignment(format!(
            "{} items vs {} outputs",
            items.len(),
            outputs.len()
        )));
    }
    let mut directions = Vec::new();
    for style in [Style::Informal, Style::Formal] {
        let picked: Vec<usize> =
            (0..items.len()).filter(|&i| items[i].source_style == style).collect();
        if picked.is_empty() {
            continue;
        }
        directions.push(score_direction(
            &format!("{}_to_{}", style.name(), style.flip().name()),
            &picked,
            items,
            outputs,
            classifier,
        )?);
    }
    let all: Vec<usize> = (0..items.len()).collect();
    let overall = score_direction("overall", &all, items, outputs, classifier)?;
    Ok(EvalReport { directions, overall, config_echo })
}

fn score_direction(
    label: &str,
    picked: &[usize],
    items: &[EvalItem],
    outputs: &[Sentence],
    classifier: &TextCnn,
) -> Result<DirectionScores> {
    let hyps: Vec<Sentence> = picked.iter().map(|&i| outputs[i].clone()).collect();
    let refsets: Vec<Vec<Sentence>> =
        picked.iter().map(|&i| items[i].references.to_vec()).collect();
    let bleu = corpus_bleu(&hyps, &refsets)?;
    let mut hits = 0usize;
    for &i in picked {
        if !outputs[i].is_empty() && classifier.predict(&outputs[i])? == items[i].target_style() {
            hits += 1;
        }
    }
    let acc = hits as f64 / picked.len() as f64;
    Ok(DirectionScores { label: label.to_string(), count: picked.len(), bleu, acc, hm: harmonic_mean(acc, bleu)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierHyper;
    use crate::corpus::parse_sentence;
    use crate::corpus::vocab::Vocabulary;
    use crate::models::testutil::{tiny_dims, tiny_vocab};
    use crate::models::CausalLm;

    fn items() -> Vec<EvalItem> {
        let mk = |src: &str, style, refs: [&str; 4]| EvalItem {
            source: parse_sentence(src),
            source_style: style,
            references: refs.map(parse_sentence),
        };
        vec![
            mk(
                "plz watch it !!!",
                Style::Informal,
                ["please watch it .", "please watch it", "do watch it .", "watch it please ."],
            ),
            mk(
                "u r great",
                Style::Informal,
                ["you are great .", "you are very great .", "you are great", "how great you are ."],
            ),
            mk(
                "thank you for the movie .",
                Style::Formal,
                ["thx for the movie", "thx 4 the movie", "thanks lol", "thx !!!"],
            ),
        ]
    }

    /// Classifier whose output weights are seeded but deterministic; no
    /// training, just a fixed labeling function.
    fn fixed_classifier() -> TextCnn {
        let sents: Vec<Sentence> = items()
            .iter()
            .flat_map(|it| it.references.iter().cloned().chain([it.source.clone()]))
            .collect();
        let vocab = Vocabulary::build(sents.iter(), &[]);
        let mut clf = TextCnn::new(vocab, &ClassifierHyper::tiny(0)).unwrap();
        for (i, v) in clf.params.get_mut("out.w").unwrap().values.iter_mut().enumerate() {
            *v = (0.3 * (i + 1) as f64).cos();
        }
        clf
    }

    #[test]
    fn copying_the_source_scores_the_copy_baseline() {
        let items = items();
        let clf = fixed_classifier();
        let outputs: Vec<Sentence> = items.iter().map(|it| it.source.clone()).collect();
        let report = score_outputs(&items, &outputs, &clf, Vec::new()).unwrap();

        let refsets: Vec<Vec<Sentence>> = items.iter().map(|it| it.references.to_vec()).collect();
        let baseline = corpus_bleu(&outputs, &refsets).unwrap();
        assert_eq!(report.overall.bleu, baseline);

        // A copy is classified exactly like its source, so accuracy is the
        // rate at which sources are labeled with the opposite style.
        let mut flips = 0usize;
        for it in &items {
            if clf.predict(&it.source).unwrap() == it.target_style() {
                flips += 1;
            }
        }
        assert_eq!(report.overall.acc, flips as f64 / items.len() as f64);
    }

    #[test]
    fn emitting_a_reference_scores_perfect_bleu() {
        let items = items();
        let clf = fixed_classifier();
        let outputs: Vec<Sentence> = items.iter().map(|it| it.references[0].clone()).collect();
        let report = score_outputs(&items, &outputs, &clf, Vec::new()).unwrap();
        assert_eq!(report.overall.bleu, 1.0);
        for d in &report.directions {
            assert_eq!(d.bleu, 1.0, "direction {}", d.label);
        }
    }

    #[test]
    fn directions_are_split_and_pooled() {
        let items = items();
        let clf = fixed_classifier();
        let outputs: Vec<Sentence> = items.iter().map(|it| it.references[1].clone()).collect();
        let report = score_outputs(&items, &outputs, &clf, Vec::new()).unwrap();
        assert_eq!(report.directions.len(), 2);
        assert_eq!(report.directions[0].label, "informal_to_formal");
        assert_eq!(report.directions[0].count, 2);
        assert_eq!(report.directions[1].label, "formal_to_informal");
        assert_eq!(report.directions[1].count, 1);
        assert_eq!(report.overall.count, 3);

        // With a single direction present, the pooled scores are that
        // direction's scores exactly.
        let informal_only: Vec<EvalItem> =
            items.iter().filter(|it| it.source_style == Style::Informal).cloned().collect();
        let outs: Vec<Sentence> = informal_only.iter().map(|it| it.references[1].clone()).collect();
        let solo = score_outputs(&informal_only, &outs, &clf, Vec::new()).unwrap();
        assert_eq!(solo.directions.len(), 1);
        assert_eq!(solo.directions[0].bleu, solo.overall.bleu);
        assert_eq!(solo.directions[0].acc, solo.overall.acc);
    }

    #[test]
    fn empty_outputs_count_as_misses() {
        let items = items();
        let clf = fixed_classifier();
        let mut outputs: Vec<Sentence> = items.iter().map(|it| it.references[0].clone()).collect();
        let with_all = score_outputs(&items, &outputs, &clf, Vec::new()).unwrap();
        outputs[0] = Vec::new();
        let with_empty = score_outputs(&items, &outputs, &clf, Vec::new()).unwrap();
        assert!(with_empty.overall.bleu < with_all.overall.bleu);
        assert!(with_empty.overall.acc <= with_all.overall.acc);
    }

    #[test]
    fn no_items_is_an_error() {
        let clf = fixed_classifier();
        assert!(matches!(score_outputs(&[], &[], &clf, Vec::new()), Err(Error::Data(_))));
    }

    #[test]
    fn misaligned_outputs_are_rejected() {
        let clf = fixed_classifier();
        assert!(matches!(
            score_outputs(&items(), &[], &clf, Vec::new()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn model_evaluation_is_deterministic() {
        let model = Model::Causal(CausalLm::new(tiny_vocab(), tiny_dims(), 6).unwrap());
        let clf = fixed_classifier();
        let items: Vec<EvalItem> = items()
            .into_iter()
            .map(|mut it| {
                // Shorten sources so they fit the tiny context window.
                it.source.truncate(4);
                it
            })
            .collect();
        let echo = vec![("model".to_string(), "causal".to_string())];
        let a = evaluate_system(&model, &items, &clf, None, echo.clone()).unwrap();
        let b = evaluate_system(&model, &items, &clf, None, echo).unwrap();
        assert_eq!(a.render_tsv(), b.render_tsv());
        assert_eq!(a.render_text(), b.render_text());
        assert!(a.render_tsv().contains("config.model\tcausal"));
    }
}
