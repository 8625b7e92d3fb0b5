//! Binary checkpoints for generators and the classifier.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   b"RSTY"
//! version      u32       1
//! kind         u8        0 = causal LM, 1 = encoder-decoder, 2 = classifier
//! step         u64       training progress counter (informational)
//! seed         u64       run seed (informational)
//! config hash  u64       FNV-1a over every byte after this field
//! body:
//!   dims block           kind 0/1: d_model, n_heads, n_layers, d_ff, context (u64 each)
//!                        kind 2:   d_emb, n_filters, width count, widths (u64 each)
//!   vocabulary           tag count, token count, then length-prefixed UTF-8 tokens
//!   shape table          param count, then per param: length-prefixed name, rank, dims
//!   payload              f64 values, parameters in registration order, row-major
//! ```
//!
//! The hash binds the header to the body, so truncation, corruption, or a
//! config that drifted since the save are all rejected on load. A load
//! rebuilds the model from the stored dims/vocabulary and requires the shape
//! table to match that architecture exactly — a checkpoint can never smuggle
//! weights into the wrong slot.

use std::path::Path;

use crate::classifier::{ClassifierHyper, TextCnn};
use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::models::{CausalLm, Model, ModelDims, Seq2SeqLm};
use crate::params::ParamSet;

pub const MAGIC: [u8; 4] = *b"RSTY";
pub const VERSION: u32 = 1;

/// What a checkpoint file contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    CausalLm,
    Seq2SeqLm,
    Classifier,
}

impl CheckpointKind {
    fn to_byte(self) -> u8 {
        match self {
            CheckpointKind::CausalLm => 0,
            CheckpointKind::Seq2SeqLm => 1,
            CheckpointKind::Classifier => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(CheckpointKind::CausalLm),
            1 => Ok(CheckpointKind::Seq2SeqLm),
            2 => Ok(CheckpointKind::Classifier),
            other => Err(Error::Format(format!("unknown checkpoint kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CheckpointKind::CausalLm => "causal",
            CheckpointKind::Seq2SeqLm => "seq2seq",
            CheckpointKind::Classifier => "classifier",
        }
    }
}

/// Header fields returned alongside the loaded weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub version: u32,
    pub kind: CheckpointKind,
    pub step: u64,
    pub seed: u64,
    pub config_hash: u64,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// ---- body writers ----------------------------------------------------------

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn push_vocab(out: &mut Vec<u8>, vocab: &Vocabulary) {
    push_u64(out, vocab.n_tags() as u64);
    push_u64(out, vocab.len() as u64);
    for tok in vocab.tokens() {
        push_str(out, tok);
    }
}

fn push_params(out: &mut Vec<u8>, params: &ParamSet) {
    push_u64(out, params.len() as u64);
    for p in params.iter() {
        push_str(out, &p.name);
        push_u64(out, p.shape.len() as u64);
        for &d in &p.shape {
            push_u64(out, d as u64);
        }
    }
    for p in params.iter() {
        for &v in &p.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn write_file(kind: CheckpointKind, step: u64, seed: u64, body: Vec<u8>, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(29 + body.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind.to_byte());
    push_u64(&mut out, step);
    push_u64(&mut out, seed);
    push_u64(&mut out, fnv1a64(&body));
    out.extend_from_slice(&body);
    std::fs::write(path, out)?;
    Ok(())
}

// ---- body reader -----------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() - self.pos {
            return Err(Error::Format(format!(
                "checkpoint truncated: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// u64 that must fit a sane in-memory count.
    fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        if v > u32::MAX as u64 {
            return Err(Error::Format(format!("implausible {what} count {v}")));
        }
        Ok(v as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.count(what)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn read_header<'a>(bytes: &'a [u8], path: &Path) -> Result<(CheckpointMeta, Reader<'a>)> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint file (bad magic)", path.display())));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let kind = CheckpointKind::from_byte(r.u8()?)?;
    let step = r.u64()?;
    let seed = r.u64()?;
    let config_hash = r.u64()?;
    let actual = fnv1a64(&bytes[r.pos..]);
    if actual != config_hash {
        return Err(Error::Format(format!(
            "checkpoint config hash mismatch (stored {config_hash:#018x}, content {actual:#018x})"
        )));
    }
    Ok((CheckpointMeta { version, kind, step, seed, config_hash }, r))
}

fn read_vocab(r: &mut Reader) -> Result<Vocabulary> {
    let n_tags = r.count("tag")?;
    let n_tokens = r.count("token")?;
    let mut tokens = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        tokens.push(r.string("token")?);
    }
    Vocabulary::from_tokens(tokens, n_tags)
}

/// Read the shape table and payload into `params`, which must already hold
/// the architecture's parameters (names, shapes, registration order).
fn read_params_into(r: &mut Reader, params: &mut ParamSet) -> Result<()> {
    let n = r.count("parameter")?;
    if n != params.len() {
        return Err(Error::Format(format!(
            "shape table has {n} parameters, architecture has {}",
            params.len()
        )));
    }
    for p in params.iter() {
        let name = r.string("parameter name")?;
        let rank = r.count("dimension")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.count("dimension")?);
        }
        if name != p.name || shape != p.shape {
            return Err(Error::Format(format!(
                "shape table entry {name} {shape:?} does not match architecture parameter {} {:?}",
                p.name, p.shape
            )));
        }
    }
    for p in params.iter_mut() {
        for v in p.values.iter_mut() {
            *v = r.f64()?;
        }
    }
    Ok(())
}

// ---- public API -------------------------------------------------------------

/// Write a generator checkpoint.
pub fn save_model(model: &Model, step: u64, seed: u64, path: &Path) -> Result<()> {
    let (kind, dims) = match model {
        Model::Causal(m) => (CheckpointKind::CausalLm, m.dims),
        Model::Seq2Seq(m) => (CheckpointKind::Seq2SeqLm, m.dims),
    };
    let mut body = Vec::new();
    for d in [dims.d_model, dims.n_heads, dims.n_layers, dims.d_ff, dims.context] {
        push_u64(&mut body, d as u64);
    }
    push_vocab(&mut body, model.vocab());
    push_params(&mut body, model.params());
    write_file(kind, step, seed, body, path)
}

/// Load a generator checkpoint, rejecting anything else.
pub fn load_model(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let (meta, mut r) = read_header(&bytes, path)?;
    if meta.kind == CheckpointKind::Classifier {
        return Err(Error::Format("checkpoint holds a classifier, expected a generator".into()));
    }
    let dims = ModelDims {
        d_model: r.count("dimension")?,
        n_heads: r.count("dimension")?,
        n_layers: r.count("dimension")?,
        d_ff: r.count("dimension")?,
        context: r.count("dimension")?,
    };
    let vocab = read_vocab(&mut r)?;
    let mut model = match meta.kind {
        CheckpointKind::CausalLm => Model::Causal(CausalLm::new(vocab, dims, 0)?),
        CheckpointKind::Seq2SeqLm => Model::Seq2Seq(Seq2SeqLm::new(vocab, dims, 0)?),
        CheckpointKind::Classifier => unreachable!("rejected above"),
    };
    read_params_into(&mut r, model.params_mut())?;
    r.done()?;
    Ok((model, meta))
}

/// Write a classifier checkpoint.
pub fn save_classifier(clf: &TextCnn, step: u64, seed: u64, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    push_u64(&mut body, clf.d_emb as u64);
    push_u64(&mut body, clf.n_filters as u64);
    push_u64(&mut body, clf.widths.len() as u64);
    for &w in &clf.widths {
        push_u64(&mut body, w as u64);
    }
    push_vocab(&mut body, &clf.vocab);
    push_params(&mut body, &clf.params);
    write_file(CheckpointKind::Classifier, step, seed, body, path)
}

/// Load a classifier checkpoint, rejecting anything else.
pub fn load_classifier(path: &Path) -> Result<(TextCnn, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let (meta, mut r) = read_header(&bytes, path)?;
    if meta.kind != CheckpointKind::Classifier {
        return Err(Error::Format(format!(
            "checkpoint holds a {} generator, expected a classifier",
            meta.kind.name()
        )));
    }
    let d_emb = r.count("dimension")?;
    let n_filters = r.count("dimension")?;
    let n_widths = r.count("width")?;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(r.count("width")?);
    }
    let vocab = read_vocab(&mut r)?;
    let hyper = ClassifierHyper { d_emb, n_filters, widths, ..Default::default() };
    let mut clf = TextCnn::new(vocab, &hyper)?;
    read_params_into(&mut r, &mut clf.params)?;
    r.done()?;
    Ok((clf, meta))
}
