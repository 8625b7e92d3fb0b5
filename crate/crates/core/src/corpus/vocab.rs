//! Token↔id vocabulary with fixed special symbols, and the sequence layouts
//! consumed by the two model families.

use std::collections::HashMap;

use crate::corpus::{ParallelPair, Sentence};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const SEP: usize = 3;
pub const EOS: usize = 4;

pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[BOS]", "[SEP]", "[EOS]"];

/// Surface form of a domain tag token.
pub fn tag_token(tag: &str) -> String {
    format!("<{tag}>")
}

/// Dense token↔id map. Ids 0–4 are the special symbols, domain tags follow,
/// then corpus tokens ordered by (frequency descending, token ascending) so
/// the same corpus always yields the same vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
    n_tags: usize,
}

impl Vocabulary {
    /// Build from a token stream plus the configured domain tags.
    pub fn build<'a, I>(sentences: I, domain_tags: &[String]) -> Vocabulary
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for s in sentences {
            for tok in s {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for tag in domain_tags {
            id_to_token.push(tag_token(tag));
        }
        for (tok, _) in ranked {
            if !id_to_token.iter().any(|t| t == tok) {
                id_to_token.push(tok.to_string());
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
            n_tags: domain_tags.len(),
        }
    }

    /// Rebuild from a stored token list (checkpoint loading).
    pub fn from_tokens(id_to_token: Vec<String>, n_tags: usize) -> Result<Vocabulary> {
        if id_to_token.len() < SPECIALS.len() + n_tags {
            return Err(Error::Format(format!(
                "vocabulary of {} tokens cannot hold {} specials + {n_tags} tags",
                id_to_token.len(),
                SPECIALS.len()
            )));
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if id_to_token[i] != *s {
                return Err(Error::Format(format!(
                    "vocabulary slot {i} is {:?}, expected {s:?}",
                    id_to_token[i]
                )));
            }
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
            n_tags,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn n_tags(&self) -> usize {
        self.n_tags
    }

    /// Id for a token; unknown tokens map to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Id of a domain tag's token; the tag must have been configured at
    /// build time.
    pub fn tag_id(&self, tag: &str) -> Result<usize> {
        let tok = tag_token(tag);
        match self.token_to_id.get(&tok) {
            Some(&id) if id >= SPECIALS.len() && id < SPECIALS.len() + self.n_tags => Ok(id),
            _ => Err(Error::Config(format!("domain tag {tag:?} not in vocabulary"))),
        }
    }

    pub fn encode(&self, sentence: &[String]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t)).collect()
    }

    /// Tokens for a slice of ids (includes special tokens verbatim).
    pub fn decode(&self, ids: &[usize]) -> Sentence {
        ids.iter().map(|&i| self.id_to_token[i].clone()).collect()
    }

    /// Decode ids into a plain sentence, dropping special and tag tokens.
    pub fn decode_text(&self, ids: &[usize]) -> Sentence {
        ids.iter()
            .filter(|&&i| i >= SPECIALS.len() + self.n_tags)
            .map(|&i| self.id_to_token[i].clone())
            .collect()
    }
}

/// Single-sequence layout for the causal LM:
/// `[BOS] (tag?) src [SEP] tgt [EOS]`.
///
/// Returns the ids plus a loss mask aligned with the *prediction targets*
/// (`ids[1..]`): position i is weighted iff `ids[i+1]` is a real token —
/// separator and tag targets are excluded, `[EOS]` is included so the model
/// learns to stop.
pub fn encode_lm_sequence(pair: &ParallelPair, vocab: &Vocabulary) -> Result<(Vec<usize>, Vec<f64>)> {
    if pair.source.is_empty() || pair.target.is_empty() {
        return Err(Error::EmptySentence("cannot encode an empty side".into()));
    }
    let mut ids = vec![BOS];
    if let Some(tag) = &pair.domain_tag {
        ids.push(vocab.tag_id(tag)?);
    }
    ids.extend(vocab.encode(&pair.source));
    ids.push(SEP);
    ids.extend(vocab.encode(&pair.target));
    ids.push(EOS);

    let n_specials_prefix = SPECIALS.len() + vocab.n_tags;
    let mask: Vec<f64> = ids[1..]
        .iter()
        .map(|&t| {
            let real = t == EOS || t == UNK || t >= n_specials_prefix;
            if real {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok((ids, mask))
}

/// Encoder/decoder layout for the seq2seq model: encoder sees
/// `[BOS] (tag?) src [EOS]`, decoder input is the `[BOS]`-shifted target,
/// decoder targets end with `[EOS]`.
pub fn encode_s2s_pair(
    pair: &ParallelPair,
    vocab: &Vocabulary,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if pair.source.is_empty() || pair.target.is_empty() {
        return Err(Error::EmptySentence("cannot encode an empty side".into()));
    }
    let mut enc = vec![BOS];
    if let Some(tag) = &pair.domain_tag {
        enc.push(vocab.tag_id(tag)?);
    }
    enc.extend(vocab.encode(&pair.source));
    enc.push(EOS);

    let tgt = vocab.encode(&pair.target);
    let mut dec_in = vec![BOS];
    dec_in.extend(&tgt);
    let mut dec_tgt = tgt;
    dec_tgt.push(EOS);
    Ok((enc, dec_in, dec_tgt))
}
