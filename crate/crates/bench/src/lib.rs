//! Shared fixtures for the benchmark suite: a small deterministic corpus and
//! models sized so one iteration stays in the microsecond-to-millisecond
//! range while still exercising multi-head attention and both stacks.

use restyle_core::corpus::synth::generate_synthetic_corpus;
use restyle_core::corpus::vocab::Vocabulary;
use restyle_core::corpus::Corpus;
use restyle_core::{CausalLm, Model, ModelDims, Seq2SeqLm};

pub fn corpus() -> Corpus {
    generate_synthetic_corpus(0, 64, 16, 64).expect("benchmark corpus")
}

pub fn vocabulary(corpus: &Corpus) -> Vocabulary {
    let sentences = corpus
        .train
        .iter()
        .flat_map(|p| [&p.source, &p.target])
        .chain(corpus.unpaired_informal.iter())
        .chain(corpus.unpaired_formal.iter());
    Vocabulary::build(sentences, &[])
}

pub fn bench_dims() -> ModelDims {
    ModelDims {
        d_model: 32,
        n_heads: 2,
        n_layers: 2,
        d_ff: 128,
        context: 64,
    }
}

pub fn causal(vocab: Vocabulary) -> Model {
    Model::Causal(CausalLm::new(vocab, bench_dims(), 0).expect("causal model"))
}

pub fn seq2seq(vocab: Vocabulary) -> Model {
    Model::Seq2Seq(Seq2SeqLm::new(vocab, bench_dims(), 0).expect("seq2seq model"))
}
