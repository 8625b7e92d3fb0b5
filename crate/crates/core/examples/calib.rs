//! Scratch calibration driver (not shipped): times the acceptance-scale
//! corpus, classifier, pretrain, and trend fine-tunes, and prints the trend
//! margins so the thresholds can be frozen with known slack.

use std::time::Instant;

use restyle_core::classifier::ClassifierHyper;
use restyle_core::corpus::synth::generate_synthetic_corpus;
use restyle_core::corpus::vocab::Vocabulary;
use restyle_core::corpus::{subset_fraction, Corpus, Style};
use restyle_core::models::{pretrain_denoising, NoiseSpec, PretrainHyper};
use restyle_core::{
    evaluate_system, finetune, train_textcnn, Model, ModelDims, ModelKind, Seq2SeqLm, TextCnn,
    TrainConfig,
};

fn vocab_of(corpus: &Corpus) -> Vocabulary {
    let sides = corpus
        .train
        .iter()
        .flat_map(|p| [&p.source, &p.target])
        .chain(corpus.unpaired_informal.iter())
        .chain(corpus.unpaired_formal.iter());
    Vocabulary::build(sides, &[])
}

fn dims() -> ModelDims {
    ModelDims { d_model: 32, n_heads: 2, n_layers: 2, d_ff: 128, context: 48 }
}

#[allow(clippy::too_many_arguments)]
fn run(
    label: &str,
    base: &Model,
    corpus: &Corpus,
    classifier: &TextCnn,
    kind: ModelKind,
    fraction: f64,
    lambda_cls: f64,
    warmup: usize,
    max_epochs: usize,
) -> (f64, f64, f64) {
    let t = Instant::now();
    let mut cfg = TrainConfig::new(kind);
    cfg.lr = Some(1e-3);
    cfg.batch_size = 8;
    cfg.max_epochs = max_epochs;
    cfg.patience = max_epochs; // fixed budget: early stopping never fires
    cfg.seed = 0;
    cfg.fraction = fraction;
    cfg.lambda_cls = lambda_cls;
    cfg.warmup_epochs = warmup;
    let pairs = subset_fraction(&corpus.train, fraction, cfg.seed).unwrap();
    let out = finetune(base.clone(), &pairs, &corpus.valid, classifier, &cfg).unwrap();
    let report = evaluate_system(&out.model, &corpus.test, classifier, None, vec![]).unwrap();
    let o = &report.overall;
    let curve: Vec<String> = (0..out.epochs_run)
        .map(|e| out.log.get(&format!("epoch.{e}.val_hm")).unwrap_or("?").to_string())
        .collect();
    println!(
        "{label}: pairs={} best={} val_hm={:.4} | test bleu={:.4} acc={:.4} hm={:.4} [{:.1}s]",
        pairs.len(),
        out.best_epoch,
        out.best_hm,
        o.bleu,
        o.acc,
        o.hm,
        t.elapsed().as_secs_f64()
    );
    println!("  val_hm curve: {}", curve.join(" "));
    (o.bleu, o.acc, o.hm)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let pre_epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let e: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let warmup: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(4);
    println!("== pretrain_epochs={pre_epochs} finetune_epochs={e} sc_warmup={warmup} ==");

    let t0 = Instant::now();
    let corpus = generate_synthetic_corpus(0, 300, 24, 800).unwrap();

    // Small classifier stand-in during calibration sweeps (the acceptance
    // suite uses the default hyper; quality is equivalent on this corpus).
    let t = Instant::now();
    let mut labeled = Vec::new();
    for p in &corpus.train {
        labeled.push((p.source.clone(), p.source_style));
        labeled.push((p.target.clone(), p.target_style()));
    }
    for s in &corpus.unpaired_informal {
        labeled.push((s.clone(), Style::Informal));
    }
    for s in &corpus.unpaired_formal {
        labeled.push((s.clone(), Style::Formal));
    }
    let (classifier, holdout) = train_textcnn(&labeled, &ClassifierHyper::tiny(0)).unwrap();
    println!(
        "classifier(tiny): sentences={} holdout={holdout:.4} [{:.1}s]",
        labeled.len(),
        t.elapsed().as_secs_f64()
    );

    let t = Instant::now();
    let vocab = vocab_of(&corpus);
    let mut lm = Seq2SeqLm::new(vocab.clone(), dims(), 0).unwrap();
    let mut sentences = corpus.unpaired_informal.clone();
    sentences.extend(corpus.unpaired_formal.iter().cloned());
    let hyper =
        PretrainHyper { lr: 1e-3, batch_size: 16, max_epochs: pre_epochs, patience: pre_epochs, seed: 0 };
    let log = pretrain_denoising(&mut lm, &sentences, &hyper, &NoiseSpec::default()).unwrap();
    println!(
        "pretrain: epochs={} best={} ppl={:.3} [{:.1}s]",
        log.holdout_ppl.len(),
        log.best_epoch,
        log.best_ppl(),
        t.elapsed().as_secs_f64()
    );
    let pretrained = Model::Seq2Seq(lm);
    let scratch = Model::Seq2Seq(Seq2SeqLm::new(vocab, dims(), 0).unwrap());

    let c = &classifier;
    let (p10_bleu, p10_acc, _) =
        run("pre@10%", &pretrained, &corpus, c, ModelKind::Seq2Seq, 0.1, 0.0, 0, e);
    let (_, sc_acc, _) =
        run("pre@10%+sc", &pretrained, &corpus, c, ModelKind::Seq2Seq, 0.1, 1.0, warmup, e);
    let (s10_bleu, _, _) =
        run("scr@10%", &scratch, &corpus, c, ModelKind::Seq2SeqScratch, 0.1, 0.0, 0, e);
    let (s50_bleu, _, _) =
        run("scr@50%", &scratch, &corpus, c, ModelKind::Seq2SeqScratch, 0.5, 0.0, 0, e);
    let (s100_bleu, _, _) =
        run("scr@100%", &scratch, &corpus, c, ModelKind::Seq2SeqScratch, 1.0, 0.0, 0, e);

    println!();
    println!(
        "(a) pre@10% bleu {p10_bleu:.4} > scr@100% bleu {s100_bleu:.4}: {} (margin {:+.4})",
        p10_bleu > s100_bleu,
        p10_bleu - s100_bleu
    );
    println!(
        "(b) sc acc {sc_acc:.4} - base acc {p10_acc:.4} = {:+.4} >= 0.02: {}",
        sc_acc - p10_acc,
        sc_acc - p10_acc >= 0.02
    );
    println!(
        "(c) scratch bleu {s10_bleu:.4} <= {s50_bleu:.4} <= {s100_bleu:.4}: {}",
        s10_bleu <= s50_bleu && s50_bleu <= s100_bleu
    );
    println!("total [{:.1}s]", t0.elapsed().as_secs_f64());
}
