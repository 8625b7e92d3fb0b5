//! Shared transformer building blocks: multi-head attention, feed-forward,
//! and pre-norm residual layers, assembled from tape primitives so every
//! block is gradient-checkable.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::rng::RunRng;
use crate::tensor::{Tape, TensorId};

pub const LN_EPS: f64 = 1e-5;

/// Weight init scales: projections and embeddings are small Gaussians; layer
/// norms start at identity.
pub const W_STD: f64 = 0.05;
pub const EMB_STD: f64 = 0.1;

pub fn staged<'a>(ids: &'a HashMap<String, TensorId>, name: &str) -> Result<TensorId> {
    ids.get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("parameter {name} not staged")))
}

/// Register the parameters of one attention block under `prefix`
/// (wq/bq, wk/bk, wv/bv, wo/bo).
pub fn register_attention(params: &mut ParamSet, prefix: &str, d: usize, rng: &mut RunRng) -> Result<()> {
    for w in ["wq", "wk", "wv", "wo"] {
        params.register_normal(&format!("{prefix}.{w}"), &[d, d], W_STD, rng)?;
    }
    for b in ["bq", "bk", "bv", "bo"] {
        params.register_const(&format!("{prefix}.{b}"), &[d], 0.0)?;
    }
    Ok(())
}

/// Register a feed-forward block (w1/b1, w2/b2) under `prefix`.
pub fn register_ffn(params: &mut ParamSet, prefix: &str, d: usize, d_ff: usize, rng: &mut RunRng) -> Result<()> {
    params.register_normal(&format!("{prefix}.w1"), &[d, d_ff], W_STD, rng)?;
    params.register_const(&format!("{prefix}.b1"), &[d_ff], 0.0)?;
    params.register_normal(&format!("{prefix}.w2"), &[d_ff, d], W_STD, rng)?;
    params.register_const(&format!("{prefix}.b2"), &[d], 0.0)?;
    Ok(())
}

/// Register a layer norm (g, b) under `prefix`.
pub fn register_ln(params: &mut ParamSet, prefix: &str, d: usize) -> Result<()> {
    params.register_const(&format!("{prefix}.g"), &[d], 1.0)?;
    params.register_const(&format!("{prefix}.b"), &[d], 0.0)?;
    Ok(())
}

pub fn layer_norm(tape: &mut Tape, ids: &HashMap<String, TensorId>, prefix: &str, x: TensorId) -> Result<TensorId> {
    let g = staged(ids, &format!("{prefix}.g"))?;
    let b = staged(ids, &format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

fn project(
    tape: &mut Tape,
    ids: &HashMap<String, TensorId>,
    prefix: &str,
    w: &str,
    b: &str,
    x: TensorId,
) -> Result<TensorId> {
    let wid = staged(ids, &format!("{prefix}.{w}"))?;
    let bid = staged(ids, &format!("{prefix}.{b}"))?;
    let h = tape.matmul(x, wid)?;
    tape.add(h, bid)
}

/// Multi-head scaled dot-product attention. Queries come from `x_q`,
/// keys/values from `x_kv` (equal to `x_q` for self-attention). With
/// `causal`, query i attends only to key positions ≤ i.
pub fn multi_head_attention(
    tape: &mut Tape,
    ids: &HashMap<String, TensorId>,
    prefix: &str,
    x_q: TensorId,
    x_kv: TensorId,
    n_heads: usize,
    causal: bool,
) -> Result<TensorId> {
    let d = *tape
        .shape(x_q)
        .last()
        .ok_or_else(|| Error::Shape("attention input must be 2-D".into()))?;
    if d % n_heads != 0 {
        return Err(Error::Shape(format!("model dim {d} not divisible by {n_heads} heads")));
    }
    let d_head = d / n_heads;
    let q = project(tape, ids, prefix, "wq", "bq", x_q)?;
    let k = project(tape, ids, prefix, "wk", "bk", x_kv)?;
    let v = project(tape, ids, prefix, "wv", "bv", x_kv)?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * d_head, (h + 1) * d_head);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        heads.push(tape.attention(qh, kh, vh, causal)?);
    }
    let merged = tape.concat_cols(&heads)?;
    project(tape, ids, prefix, "wo", "bo", merged)
}

/// Position-wise feed-forward: w2·gelu(w1·x + b1) + b2.
pub fn feed_forward(tape: &mut Tape, ids: &HashMap<String, TensorId>, prefix: &str, x: TensorId) -> Result<TensorId> {
    let h = project(tape, ids, prefix, "w1", "b1", x)?;
    let h = tape.gelu(h)?;
    project(tape, ids, prefix, "w2", "b2", h)
}

/// One pre-norm residual self-attention + feed-forward layer (decoder-style
/// when `causal`, encoder-style otherwise). Parameter names under `prefix`:
/// ln1/attn and ln2/ff.
pub fn transformer_layer(
    tape: &mut Tape,
    ids: &HashMap<String, TensorId>,
    prefix: &str,
    x: TensorId,
    n_heads: usize,
    causal: bool,
) -> Result<TensorId> {
    let a_in = layer_norm(tape, ids, &format!("{prefix}.ln1"), x)?;
    let a = multi_head_attention(tape, ids, &format!("{prefix}.attn"), a_in, a_in, n_heads, causal)?;
    let x = tape.add(x, a)?;
    let f_in = layer_norm(tape, ids, &format!("{prefix}.ln2"), x)?;
    let f = feed_forward(tape, ids, &format!("{prefix}.ff"), f_in)?;
    tape.add(x, f)
}

/// Register one self-attention transformer layer's parameters.
pub fn register_layer(params: &mut ParamSet, prefix: &str, d: usize, d_ff: usize, rng: &mut RunRng) -> Result<()> {
    register_ln(params, &format!("{prefix}.ln1"), d)?;
    register_attention(params, &format!("{prefix}.attn"), d, rng)?;
    register_ln(params, &format!("{prefix}.ln2"), d)?;
    register_ffn(params, &format!("{prefix}.ff"), d, d_ff, rng)
}

/// Embed token ids plus learned positions: rows of `tok_emb` gathered by id
/// plus rows 0..T of `pos_emb`.
pub fn embed_sequence(
    tape: &mut Tape,
    ids: &HashMap<String, TensorId>,
    tok_name: &str,
    pos_name: &str,
    sequence: &[usize],
) -> Result<TensorId> {
    let tok = staged(ids, tok_name)?;
    let pos = staged(ids, pos_name)?;
    let te = tape.embedding(tok, sequence)?;
    let positions: Vec<usize> = (0..sequence.len()).collect();
    let pe = tape.embedding(pos, &positions)?;
    tape.add(te, pe)
}
