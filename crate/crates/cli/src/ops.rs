//! Implementations behind the subcommands: config resolution with
//! flag-over-key precedence, artifact loading, and the operations themselves.
//!
//! Every handler prints a short `key<TAB>value` summary on stdout (except
//! `transfer` and `evaluate`, whose stdout is the payload itself).

use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::{Path, PathBuf};

use restyle_core::classifier::ClassifierHyper;
use restyle_core::corpus::gyafc::{load_gyafc_dir, write_gyafc_dir};
use restyle_core::corpus::synth::generate_synthetic_corpus;
use restyle_core::corpus::vocab::Vocabulary;
use restyle_core::corpus::{
    parse_sentence, render_sentence, subset_fraction, Corpus, Sentence, Style,
};
use restyle_core::models::{
    pretrain_causal, pretrain_denoising, Family, GenerationConfig, NoiseSpec, PretrainHyper,
    PretrainLog,
};
use restyle_core::train::{
    curve_data, load_classifier, load_model, run_ablation, save_classifier, save_model,
    AblationSpec, DOMAIN_TAG,
};
use restyle_core::{
    evaluate_system, train_textcnn, CausalLm, Error, MetricsLog, Model, ModelDims, ModelKind,
    Result, Seq2SeqLm, TrainConfig,
};

use crate::{
    AblateArgs, Command, ConfigArgs, DimsArgs, Direction, EvaluateArgs, FinetuneArgs,
    GenCorpusArgs, Objective, PretrainArgs, Split, TrainClassifierArgs, TransferArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::TrainClassifier(a) => train_classifier(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Finetune(a) => finetune(&a),
        Command::Transfer(a) => transfer(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Ablate(a) => ablate(&a),
    }
}

impl ConfigArgs {
    /// The effective run configuration: the config file (or a fresh default
    /// config of `default_model` when no file is given) with every present
    /// flag overriding its key, then validated.
    fn resolve(&self, default_model: ModelKind) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_toml_path(path)?,
            None => TrainConfig::new(default_model),
        };
        if let Some(name) = &self.model {
            ModelKind::parse(name)?;
            cfg.model = name.clone();
        }
        if let Some(v) = self.lr {
            cfg.lr = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.fraction {
            cfg.fraction = v;
        }
        if let Some(v) = self.warmup_epochs {
            cfg.warmup_epochs = v;
        }
        if self.domain_tags {
            cfg.domain_tags = true;
        }
        if let Some(list) = &self.rewards {
            apply_rewards(&mut cfg, list)?;
        }
        if let Some(p) = &self.data_dir {
            cfg.paths.data_dir = Some(p.clone());
        }
        if let Some(p) = &self.classifier {
            cfg.paths.classifier = Some(p.clone());
        }
        if let Some(p) = &self.model_in {
            cfg.paths.model_in = Some(p.clone());
        }
        if let Some(p) = &self.model_out {
            cfg.paths.model_out = Some(p.clone());
        }
        if let Some(p) = &self.metrics {
            cfg.paths.metrics = Some(p.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `--rewards sc,bleu,source` enables the named terms at their standard
/// weights (sc: λ_cls = 1.0, bleu: λ_bleu = 0.2) and disables everything
/// unlisted; `--rewards none` turns all terms off.
fn apply_rewards(cfg: &mut TrainConfig, list: &str) -> Result<()> {
    cfg.lambda_cls = 0.0;
    cfg.lambda_bleu = 0.0;
    cfg.source_reward = false;
    let parts: Vec<&str> = list
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    if parts == ["none"] {
        return Ok(());
    }
    for part in parts {
        match part {
            "sc" => cfg.lambda_cls = 1.0,
            "bleu" => cfg.lambda_bleu = 0.2,
            "source" => cfg.source_reward = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown reward {other:?} (expected sc, bleu, source, or none)"
                )))
            }
        }
    }
    Ok(())
}

impl DimsArgs {
    fn dims(&self) -> ModelDims {
        ModelDims {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            context: self.context,
        }
    }
}

/// A required path, with the config key and matching flag in the diagnostic.
fn need<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "missing path: set `paths.{key}` in the config or pass --{}",
            key.replace('_', "-")
        ))
    })
}

fn load_corpus(cfg: &TrainConfig) -> Result<Corpus> {
    load_gyafc_dir(need(&cfg.paths.data_dir, "data_dir")?)
}

/// Model vocabulary: every token of the aligned training pairs plus the
/// unpaired pretraining text. Evaluation text contributes nothing, so eval
/// tokens unseen in training map to the unknown symbol.
fn build_vocab(corpus: &Corpus, domain_tags: bool) -> Vocabulary {
    let sentences = corpus
        .train
        .iter()
        .flat_map(|p| [&p.source, &p.target])
        .chain(corpus.unpaired_informal.iter())
        .chain(corpus.unpaired_formal.iter());
    let tags: Vec<String> = if domain_tags {
        vec![DOMAIN_TAG.to_string()]
    } else {
        Vec::new()
    };
    Vocabulary::build(sentences, &tags)
}

/// When the run uses domain tags, the model's stored vocabulary must already
/// contain the tag token.
fn check_tag(model: &Model, cfg: &TrainConfig) -> Result<()> {
    if cfg.domain_tags && model.vocab().tag_id(DOMAIN_TAG).is_err() {
        return Err(Error::Config(
            "config enables domain_tags but the model checkpoint has no domain-tag token; \
             rebuild the model with --domain-tags"
                .into(),
        ));
    }
    Ok(())
}

fn gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let corpus =
        generate_synthetic_corpus(args.seed, args.train_pairs, args.eval_items, args.unpaired)?;
    write_gyafc_dir(&corpus, &args.out)?;
    println!("out\t{}", args.out.display());
    println!("train_pairs\t{}", corpus.train.len());
    println!("valid_items\t{}", corpus.valid.len());
    println!("test_items\t{}", corpus.test.len());
    println!(
        "unpaired\t{}",
        corpus.unpaired_informal.len() + corpus.unpaired_formal.len()
    );
    Ok(())
}

fn train_classifier(args: &TrainClassifierArgs) -> Result<()> {
    let cfg = args.config.resolve(ModelKind::Causal)?;
    let corpus = load_corpus(&cfg)?;
    let out = need(&cfg.paths.classifier, "classifier")?;
    let mut data: Vec<(Sentence, Style)> = Vec::new();
    for pair in &corpus.train {
        data.push((pair.source.clone(), pair.source_style));
        data.push((pair.target.clone(), pair.target_style()));
    }
    for s in &corpus.unpaired_informal {
        data.push((s.clone(), Style::Informal));
    }
    for s in &corpus.unpaired_formal {
        data.push((s.clone(), Style::Formal));
    }
    let hyper = ClassifierHyper {
        d_emb: args.d_emb,
        n_filters: args.n_filters,
        lr: cfg.lr.unwrap_or(ClassifierHyper::default().lr),
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: cfg.seed,
        ..ClassifierHyper::default()
    };
    let (clf, holdout_acc) = train_textcnn(&data, &hyper)?;
    save_classifier(&clf, 0, cfg.seed, out)?;
    println!("labeled_sentences\t{}", data.len());
    println!("holdout_acc\t{holdout_acc:.6}");
    println!("classifier\t{}", out.display());
    Ok(())
}

fn pretrain(args: &PretrainArgs) -> Result<()> {
    let cfg = args.config.resolve(ModelKind::Causal)?;
    let kind = cfg.kind()?;
    let objective = args.objective.unwrap_or(match kind.family() {
        Family::Causal => Objective::Causal,
        Family::Seq2Seq => Objective::Denoise,
    });
    let objective_family = match objective {
        Objective::Causal => Family::Causal,
        Objective::Denoise => Family::Seq2Seq,
    };
    if objective_family != kind.family() {
        return Err(Error::Config(format!(
            "the {} objective does not apply to a {} model",
            match objective {
                Objective::Causal => "causal",
                Objective::Denoise => "denoise",
            },
            kind.name()
        )));
    }
    let corpus = load_corpus(&cfg)?;
    let out = need(&cfg.paths.model_out, "model_out")?;
    let vocab = build_vocab(&corpus, cfg.domain_tags);
    let mut sentences: Vec<Sentence> = corpus.unpaired_informal.clone();
    sentences.extend(corpus.unpaired_formal.iter().cloned());
    let hyper = PretrainHyper {
        lr: cfg.lr.unwrap_or(PretrainHyper::default().lr),
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: cfg.seed,
    };
    let (model, log) = match objective {
        Objective::Causal => {
            let mut m = CausalLm::new(vocab, args.dims.dims(), cfg.seed)?;
            let log = pretrain_causal(&mut m, &sentences, &hyper)?;
            (Model::Causal(m), log)
        }
        Objective::Denoise => {
            let noise = NoiseSpec {
                mask: args.mask,
                delete: args.delete,
            };
            let mut m = Seq2SeqLm::new(vocab, args.dims.dims(), cfg.seed)?;
            let log = pretrain_denoising(&mut m, &sentences, &hyper, &noise)?;
            (Model::Seq2Seq(m), log)
        }
    };
    save_model(&model, log.holdout_ppl.len() as u64, cfg.seed, out)?;
    if let Some(metrics_path) = &cfg.paths.metrics {
        pretrain_metrics(&cfg, &log).write_to(metrics_path)?;
    }
    println!("epochs\t{}", log.holdout_ppl.len());
    println!("best_epoch\t{}", log.best_epoch);
    println!("best_holdout_ppl\t{:.6}", log.best_ppl());
    println!("model_out\t{}", out.display());
    Ok(())
}

fn pretrain_metrics(cfg: &TrainConfig, log: &PretrainLog) -> MetricsLog {
    let mut m = MetricsLog::new();
    m.push("model", &cfg.model);
    m.push("seed", cfg.seed);
    for (epoch, ppl) in log.holdout_ppl.iter().enumerate() {
        m.push(&format!("epoch.{epoch}.holdout_ppl"), format!("{ppl:.6}"));
    }
    m.push("best_epoch", log.best_epoch);
    m.push("best_holdout_ppl", format!("{:.6}", log.best_ppl()));
    m
}

fn finetune(args: &FinetuneArgs) -> Result<()> {
    let cfg = args.config.resolve(ModelKind::Causal)?;
    let corpus = load_corpus(&cfg)?;
    let out = need(&cfg.paths.model_out, "model_out")?;
    let (classifier, _) = load_classifier(need(&cfg.paths.classifier, "classifier")?)?;
    let base = match cfg.kind()? {
        ModelKind::Seq2SeqScratch => Model::Seq2Seq(Seq2SeqLm::new(
            build_vocab(&corpus, cfg.domain_tags),
            args.dims.dims(),
            cfg.seed,
        )?),
        _ => load_model(need(&cfg.paths.model_in, "model_in")?)?.0,
    };
    check_tag(&base, &cfg)?;
    let train = subset_fraction(&corpus.train, cfg.fraction, cfg.seed)?;
    let outcome = restyle_core::finetune(base, &train, &corpus.valid, &classifier, &cfg)?;
    save_model(&outcome.model, outcome.epochs_run as u64, cfg.seed, out)?;
    if let Some(metrics_path) = &cfg.paths.metrics {
        outcome.log.write_to(metrics_path)?;
    }
    println!("train_pairs\t{}", train.len());
    println!("epochs_run\t{}", outcome.epochs_run);
    println!("best_epoch\t{}", outcome.best_epoch);
    println!("best_val_hm\t{:.6}", outcome.best_hm);
    println!("model_out\t{}", out.display());
    Ok(())
}

fn transfer(args: &TransferArgs) -> Result<()> {
    let cfg = args.config.resolve(ModelKind::Causal)?;
    let (model, _) = load_model(need(&cfg.paths.model_in, "model_in")?)?;
    check_tag(&model, &cfg)?;
    let source_style = match args.direction {
        Direction::InformalToFormal => Style::Informal,
        Direction::FormalToInformal => Style::Formal,
    };
    let text = match &args.input {
        Some(path) => fs::read_to_string(path)?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let tag = if cfg.domain_tags { Some(DOMAIN_TAG) } else { None };
    let greedy = GenerationConfig::greedy();
    let mut rendered = String::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = parse_sentence(line);
        if tokens.is_empty() {
            return Err(Error::EmptySentence(format!("input line {} is empty", i + 1)));
        }
        let rewritten = model.transfer(&tokens, source_style, tag, &greedy, None)?;
        rendered.push_str(&render_sentence(&rewritten));
        rendered.push('\n');
    }
    match &args.output {
        Some(path) => fs::write(path, rendered)?,
        None => io::stdout().write_all(rendered.as_bytes())?,
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.config.resolve(ModelKind::Causal)?;
    let corpus = load_corpus(&cfg)?;
    let model_path = need(&cfg.paths.model_in, "model_in")?;
    let (model, _) = load_model(model_path)?;
    check_tag(&model, &cfg)?;
    let (classifier, _) = load_classifier(need(&cfg.paths.classifier, "classifier")?)?;
    let (split_name, items) = match args.split {
        Split::Valid => ("valid", &corpus.valid),
        Split::Test => ("test", &corpus.test),
    };
    let tag = if cfg.domain_tags { Some(DOMAIN_TAG) } else { None };
    let echo = vec![
        ("model".to_string(), model_path.display().to_string()),
        ("split".to_string(), split_name.to_string()),
        ("items".to_string(), items.len().to_string()),
        ("domain_tags".to_string(), cfg.domain_tags.to_string()),
    ];
    let report = evaluate_system(&model, items, &classifier, tag, echo)?;
    print!("{}", report.render_text());
    if let Some(path) = &args.tsv {
        fs::write(path, report.render_tsv())?;
    }
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.resolve(ModelKind::Causal)?;
    let spec = AblationSpec::from_toml_str(&fs::read_to_string(&args.spec)?)?;
    let corpus = load_corpus(&cfg)?;
    let (classifier, _) = load_classifier(need(&cfg.paths.classifier, "classifier")?)?;
    let base = match cfg.kind()? {
        ModelKind::Seq2SeqScratch => Model::Seq2Seq(Seq2SeqLm::new(
            build_vocab(&corpus, cfg.domain_tags),
            args.dims.dims(),
            cfg.seed,
        )?),
        _ => load_model(need(&cfg.paths.model_in, "model_in")?)?.0,
    };
    check_tag(&base, &cfg)?;
    let rows = run_ablation(
        &spec,
        &base,
        &corpus.train,
        &corpus.valid,
        &corpus.test,
        &classifier,
        &cfg,
        &args.out,
    )?;
    if let Some(curve_path) = &args.curve {
        fs::write(curve_path, curve_data(&spec, &rows))?;
    }
    println!("cells\t{}", rows.len());
    println!("out\t{}", args.out.display());
    Ok(())
}
