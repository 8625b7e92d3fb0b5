//! Synthetic formality corpus: a closed-vocabulary template grammar for the
//! formal register, a fixed rule transducer that informalizes it, synonym
//! rotation for multi-reference evaluation sets, and the corpus generator.
//!
//! The transducer's rule table:
//!   R1 abbreviate (case-insensitive): you→u are→r to→2 for→4 please→plz
//!      thanks→thx really→rly because→cuz people→ppl
//!   R2 lowercase every token
//!   R3 terminal "." becomes "!!!" (oracle) or a draw from {"!!","!!!","..."}
//!   R4 with probability 0.5, prepend one of {lol, omg, hey} (stochastic only)
//!   R5 delete the politeness tokens {indeed, certainly}
//!
//! Stochastic draw order per sentence: the R3 terminal choice (only when the
//! sentence ends in "."), then the R4 coin, then the R4 prefix choice (only
//! when the coin fires).

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{render_sentence, Corpus, EvalItem, ParallelPair, Sentence, Style};
use crate::error::{Error, Result};
use crate::rng::RunRng;

const ABBREV: [(&str, &str); 9] = [
    ("you", "u"),
    ("are", "r"),
    ("to", "2"),
    ("for", "4"),
    ("please", "plz"),
    ("thanks", "thx"),
    ("really", "rly"),
    ("because", "cuz"),
    ("people", "ppl"),
];

const POLITENESS: [&str; 2] = ["indeed", "certainly"];
const TERMINALS: [&str; 3] = ["!!", "!!!", "..."];
const PREFIXES: [&str; 3] = ["lol", "omg", "hey"];

/// Synonym table: each row holds four same-register variants. Reference j of
/// a formal sentence replaces every row word by the variant j places along
/// its row, so reference 0 is the sentence itself.
pub const SYNONYM_ROWS: &[[&str; 4]] = &[
    // adjectives
    ["excellent", "wonderful", "impressive", "delightful"],
    ["terrible", "awful", "dreadful", "unpleasant"],
    ["interesting", "engaging", "compelling", "fascinating"],
    ["boring", "tedious", "dull", "monotonous"],
    // nouns
    ["film", "movie", "picture", "documentary"],
    ["book", "novel", "story", "manuscript"],
    ["song", "melody", "tune", "recording"],
    ["lecture", "presentation", "speech", "seminar"],
    // opinion verbs
    ["believe", "think", "feel", "suppose"],
    ["recommend", "suggest", "propose", "advise"],
    // imperative verbs
    ["watch", "view", "see", "observe"],
    ["read", "examine", "review", "study"],
    // appreciation verbs
    ["enjoy", "appreciate", "admire", "cherish"],
    // intensifiers
    ["really", "truly", "genuinely", "sincerely"],
    // determiners
    ["the", "this", "that", "every"],
];

const ADJ_ROWS: std::ops::Range<usize> = 0..4;
const NOUN_ROWS: std::ops::Range<usize> = 4..8;
const VOPIN_ROWS: std::ops::Range<usize> = 8..10;
const VIMP_ROWS: std::ops::Range<usize> = 10..12;
const VLIKE_ROW: usize = 12;
const INT_ROW: usize = 13;
const DET_ROW: usize = 14;

/// Words that appear in templates outside the synonym rows.
const FIXED_WORDS: [&str; 21] = [
    "Please", "I", "Thank", "you", "You", "are", "welcome", "to", "for", "Many", "people", "It",
    "is", "it", "that", "because", "am", "certainly", "indeed", "grateful", ".",
];

/// Every token the grammar or the transducer can produce, in both original
/// and lowercased forms. `informalize` inputs must stay inside this set.
pub fn grammar_vocabulary() -> BTreeSet<String> {
    let mut v = BTreeSet::new();
    for row in SYNONYM_ROWS {
        for w in row {
            v.insert(w.to_string());
        }
    }
    for w in FIXED_WORDS {
        v.insert(w.to_string());
        v.insert(w.to_lowercase());
    }
    for (_, abbr) in ABBREV {
        v.insert(abbr.to_string());
    }
    for t in TERMINALS {
        v.insert(t.to_string());
    }
    for p in PREFIXES {
        v.insert(p.to_string());
    }
    v
}

fn abbrev_map() -> HashMap<&'static str, &'static str> {
    ABBREV.iter().copied().collect()
}

/// Core transducer with the stochastic outcomes pinned: R1+R2 per token,
/// R5 deletion, then the chosen terminal for R3 and optional R4 prefix.
fn transduce(sentence: &[String], terminal: &str, prefix: Option<&str>) -> Result<Sentence> {
    let vocab = grammar_vocabulary();
    for tok in sentence {
        if !vocab.contains(tok) {
            return Err(Error::UnknownToken(format!(
                "{tok:?} is outside the grammar vocabulary"
            )));
        }
    }
    let map = abbrev_map();
    let ends_in_period = sentence.last().map(|t| t == ".").unwrap_or(false);
    let mut out: Vec<String> = Vec::with_capacity(sentence.len() + 1);
    for tok in sentence {
        let lower = tok.to_lowercase();
        let replaced = map.get(lower.as_str()).map(|r| r.to_string()).unwrap_or(lower);
        if POLITENESS.contains(&replaced.as_str()) {
            continue;
        }
        out.push(replaced);
    }
    if ends_in_period {
        let last = out.len() - 1;
        out[last] = terminal.to_string();
    }
    if let Some(p) = prefix {
        out.insert(0, p.to_string());
    }
    Ok(out)
}

/// Deterministic informalization: R1/R2/R5 plus terminal "." → "!!!".
pub fn informalize_oracle(sentence: &[String]) -> Result<Sentence> {
    transduce(sentence, "!!!", None)
}

/// Seeded stochastic informalization; draw order is documented in the module
/// header.
pub fn informalize_stochastic(sentence: &[String], rng: &mut RunRng) -> Result<Sentence> {
    let terminal = if sentence.last().map(|t| t == ".").unwrap_or(false) {
        TERMINALS[rng.below(TERMINALS.len())]
    } else {
        "!!!" // unused: R3 only rewrites a terminal "."
    };
    let prefix = if rng.uniform() < 0.5 {
        Some(PREFIXES[rng.below(PREFIXES.len())])
    } else {
        None
    };
    transduce(sentence, terminal, prefix)
}

fn synonym_index() -> HashMap<&'static str, (usize, usize)> {
    let mut m = HashMap::new();
    for (r, row) in SYNONYM_ROWS.iter().enumerate() {
        for (p, w) in row.iter().enumerate() {
            m.insert(*w, (r, p));
        }
    }
    m
}

/// Replace every synonym-row word by the variant `j` places along its row.
pub fn rotate_synonyms(sentence: &[String], j: usize) -> Sentence {
    let idx = synonym_index();
    sentence
        .iter()
        .map(|tok| match idx.get(tok.as_str()) {
            Some(&(r, p)) => SYNONYM_ROWS[r][(p + j) % 4].to_string(),
            None => tok.clone(),
        })
        .collect()
}

/// Four formal references for an informal source whose underlying formal
/// sentence is `formal`: reference 0 is `formal` itself, references 1–3
/// rotate the synonym choices.
pub fn formal_references(formal: &[String]) -> [Sentence; 4] {
    [
        rotate_synonyms(formal, 0),
        rotate_synonyms(formal, 1),
        rotate_synonyms(formal, 2),
        rotate_synonyms(formal, 3),
    ]
}

/// Four informal references for a formal source: the transducer's oracle
/// output plus the alternative terminals and one prefixed variant.
pub fn informal_references(formal: &[String]) -> Result<[Sentence; 4]> {
    Ok([
        transduce(formal, "!!!", None)?,
        transduce(formal, "!!", None)?,
        transduce(formal, "...", None)?,
        transduce(formal, "!!!", Some("lol"))?,
    ])
}

fn pick(rng: &mut RunRng, rows: std::ops::Range<usize>) -> String {
    let row = rows.start + rng.below(rows.end - rows.start);
    SYNONYM_ROWS[row][rng.below(4)].to_string()
}

fn pick_row(rng: &mut RunRng, row: usize) -> String {
    SYNONYM_ROWS[row][rng.below(4)].to_string()
}

/// Draw one formal sentence from the template grammar.
fn sample_formal(rng: &mut RunRng) -> Sentence {
    let mut s: Vec<String> = Vec::new();
    let push = |s: &mut Vec<String>, w: &str| s.push(w.to_string());
    match rng.below(7) {
        0 => {
            // Please watch it|the film because it is excellent .
            push(&mut s, "Please");
            s.push(pick(rng, VIMP_ROWS));
            if rng.below(2) == 0 {
                push(&mut s, "it");
            } else {
                s.push(pick_row(rng, DET_ROW));
                s.push(pick(rng, NOUN_ROWS));
            }
            if rng.below(2) == 0 {
                push(&mut s, "because");
                push(&mut s, "it");
                push(&mut s, "is");
                s.push(pick(rng, ADJ_ROWS));
            }
        }
        1 => {
            // I (really) believe that the film is excellent .
            push(&mut s, "I");
            if rng.below(2) == 0 {
                s.push(pick_row(rng, INT_ROW));
            }
            s.push(pick(rng, VOPIN_ROWS));
            push(&mut s, "that");
            s.push(pick_row(rng, DET_ROW));
            s.push(pick(rng, NOUN_ROWS));
            push(&mut s, "is");
            s.push(pick(rng, ADJ_ROWS));
        }
        2 => {
            // Thank you for the excellent film .
            push(&mut s, "Thank");
            push(&mut s, "you");
            push(&mut s, "for");
            s.push(pick_row(rng, DET_ROW));
            s.push(pick(rng, ADJ_ROWS));
            s.push(pick(rng, NOUN_ROWS));
        }
        3 => {
            // You are welcome to watch the film .
            push(&mut s, "You");
            push(&mut s, "are");
            push(&mut s, "welcome");
            push(&mut s, "to");
            s.push(pick(rng, VIMP_ROWS));
            s.push(pick_row(rng, DET_ROW));
            s.push(pick(rng, NOUN_ROWS));
        }
        4 => {
            // Many people enjoy the excellent film .
            push(&mut s, "Many");
            push(&mut s, "people");
            s.push(pick_row(rng, VLIKE_ROW));
            s.push(pick_row(rng, DET_ROW));
            s.push(pick(rng, ADJ_ROWS));
            s.push(pick(rng, NOUN_ROWS));
        }
        5 => {
            // It is indeed excellent to watch the film .
            push(&mut s, "It");
            push(&mut s, "is");
            push(&mut s, "indeed");
            s.push(pick(rng, ADJ_ROWS));
            push(&mut s, "to");
            s.push(pick(rng, VIMP_ROWS));
            s.push(pick_row(rng, DET_ROW));
            s.push(pick(rng, NOUN_ROWS));
        }
        _ => {
            // I am certainly grateful for the film .
            push(&mut s, "I");
            push(&mut s, "am");
            push(&mut s, "certainly");
            push(&mut s, "grateful");
            push(&mut s, "for");
            s.push(pick_row(rng, DET_ROW));
            s.push(pick(rng, NOUN_ROWS));
        }
    }
    push(&mut s, ".");
    s
}

/// Draw a formal sentence not seen before in this generation run.
fn fresh_formal(rng: &mut RunRng, seen: &mut BTreeSet<String>) -> Result<Sentence> {
    for _ in 0..100_000 {
        let s = sample_formal(rng);
        if seen.insert(render_sentence(&s)) {
            return Ok(s);
        }
    }
    Err(Error::Data(
        "template grammar exhausted; requested corpus too large".into(),
    ))
}

/// Generate a full synthetic corpus. All formal base sentences across train,
/// eval, and unpaired splits are pairwise distinct, so unpaired text never
/// overlaps the parallel pairs. Generation order (and therefore the RNG draw
/// order) is: train pairs, valid items (informal-source block, then
/// formal-source block), test items (same order), unpaired formal text,
/// unpaired informal text.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_train_pairs: usize,
    n_eval_items: usize,
    n_unpaired: usize,
) -> Result<Corpus> {
    if n_train_pairs == 0 || n_eval_items == 0 || n_unpaired == 0 {
        return Err(Error::Config("corpus sizes must be at least 1".into()));
    }
    let mut rng = RunRng::new(seed);
    let mut seen = BTreeSet::new();
    let mut train_text = BTreeSet::new();

    let mut train = Vec::with_capacity(n_train_pairs);
    for _ in 0..n_train_pairs {
        let formal = fresh_formal(&mut rng, &mut seen)?;
        let informal = informalize_stochastic(&formal, &mut rng)?;
        train_text.insert(render_sentence(&informal));
        train_text.insert(render_sentence(&formal));
        train.push(ParallelPair::new(informal, formal, Style::Informal)?);
    }

    let eval_split = |rng: &mut RunRng, seen: &mut BTreeSet<String>| -> Result<Vec<EvalItem>> {
        let mut items = Vec::with_capacity(2 * n_eval_items);
        for _ in 0..n_eval_items {
            let formal = fresh_formal(rng, seen)?;
            let source = informalize_stochastic(&formal, rng)?;
            items.push(EvalItem {
                source,
                source_style: Style::Informal,
                references: formal_references(&formal),
            });
        }
        for _ in 0..n_eval_items {
            let formal = fresh_formal(rng, seen)?;
            items.push(EvalItem {
                references: informal_references(&formal)?,
                source: formal,
                source_style: Style::Formal,
            });
        }
        Ok(items)
    };
    let valid = eval_split(&mut rng, &mut seen)?;
    let test = eval_split(&mut rng, &mut seen)?;

    let mut unpaired_formal = Vec::with_capacity(n_unpaired);
    for _ in 0..n_unpaired {
        unpaired_formal.push(fresh_formal(&mut rng, &mut seen)?);
    }
    let mut unpaired_informal = Vec::with_capacity(n_unpaired);
    while unpaired_informal.len() < n_unpaired {
        let formal = fresh_formal(&mut rng, &mut seen)?;
        let informal = informalize_stochastic(&formal, &mut rng)?;
        // Belt-and-braces: politeness deletion can collapse two distinct
        // formal sentences onto one informal surface form.
        if !train_text.contains(&render_sentence(&informal)) {
            unpaired_informal.push(informal);
        }
    }

    Ok(Corpus {
        train,
        valid,
        test,
        unpaired_informal,
        unpaired_formal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_sentence;

    #[test]
    fn oracle_matches_documented_example() {
        let formal = parse_sentence("Please watch it because it is excellent .");
        let out = informalize_oracle(&formal).unwrap();
        assert_eq!(render_sentence(&out), "plz watch it cuz it is excellent !!!");
    }

    #[test]
    fn only_lowercase_and_terminal_fire_without_eligible_tokens() {
        let formal = parse_sentence("It is wonderful .");
        let out = informalize_oracle(&formal).unwrap();
        assert_eq!(render_sentence(&out), "it is wonderful !!!");
    }

    #[test]
    fn politeness_tokens_are_deleted() {
        let formal = parse_sentence("It is indeed excellent to watch the film .");
        let out = informalize_oracle(&formal).unwrap();
        assert_eq!(render_sentence(&out), "it is excellent 2 watch the film !!!");
    }

    #[test]
    fn stochastic_mode_is_seed_deterministic() {
        let formal = parse_sentence("Please watch it because it is excellent .");
        let run = |seed| {
            let mut rng = RunRng::new(seed);
            informalize_stochastic(&formal, &mut rng).unwrap()
        };
        assert_eq!(run(5), run(5));
        // Across many seeds both R3 terminals and R4 prefixes appear.
        let mut saw_prefix = false;
        let mut terminals = BTreeSet::new();
        for seed in 0..64 {
            let out = run(seed);
            if PREFIXES.contains(&out[0].as_str()) {
                saw_prefix = true;
            }
            terminals.insert(out.last().unwrap().clone());
        }
        assert!(saw_prefix);
        assert_eq!(terminals.len(), TERMINALS.len());
    }

    #[test]
    fn oracle_is_idempotent_on_its_own_output() {
        let mut rng = RunRng::new(17);
        for _ in 0..200 {
            let formal = sample_formal(&mut rng);
            let once = informalize_oracle(&formal).unwrap();
            let twice = informalize_oracle(&once).unwrap();
            assert_eq!(once, twice, "formal: {}", render_sentence(&formal));
        }
    }

    #[test]
    fn out_of_vocabulary_token_is_rejected() {
        let bad = parse_sentence("Please qwerty .");
        assert!(matches!(
            informalize_oracle(&bad),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_corpus(7, 40, 8, 12).unwrap();
        let b = generate_synthetic_corpus(7, 40, 8, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_items_cover_both_directions_with_distinct_references() {
        let c = generate_synthetic_corpus(0, 20, 10, 5).unwrap();
        for split in [&c.valid, &c.test] {
            assert_eq!(split.len(), 20);
            let informal_sources = split
                .iter()
                .filter(|i| i.source_style == Style::Informal)
                .count();
            assert_eq!(informal_sources, 10);
            let distinct = split
                .iter()
                .filter(|i| {
                    let texts: BTreeSet<String> =
                        i.references.iter().map(|r| render_sentence(r)).collect();
                    texts.len() == 4
                })
                .count();
            assert!(
                distinct as f64 >= 0.95 * split.len() as f64,
                "{distinct}/{} items have 4 distinct references",
                split.len()
            );
            // Reference 0 of an informal-source item is the underlying
            // formal sentence: informalizing it recovers a valid source.
            for item in split.iter().filter(|i| i.source_style == Style::Informal) {
                assert_eq!(item.references.len(), 4);
            }
        }
    }

    #[test]
    fn informal_sources_carry_style_markers() {
        let c = generate_synthetic_corpus(3, 10_000, 1, 1).unwrap();
        let vocabulary = grammar_vocabulary();
        let mut markers: BTreeSet<&str> = BTreeSet::new();
        markers.extend(ABBREV.iter().map(|(_, a)| *a));
        markers.extend(TERMINALS);
        markers.extend(PREFIXES);
        let marked = c
            .train
            .iter()
            .filter(|p| p.source.iter().any(|t| markers.contains(t.as_str())))
            .count();
        assert!(
            marked as f64 >= 0.99 * c.train.len() as f64,
            "{marked}/{} informal sentences carry a marker",
            c.train.len()
        );
        // All generated text stays inside the closed vocabulary.
        for p in &c.train {
            for t in p.source.iter().chain(p.target.iter()) {
                assert!(vocabulary.contains(t), "unexpected token {t:?}");
            }
        }
    }

    #[test]
    fn unpaired_text_is_disjoint_from_parallel_pairs() {
        let c = generate_synthetic_corpus(11, 100, 10, 50).unwrap();
        let pair_text: BTreeSet<String> = c
            .train
            .iter()
            .flat_map(|p| [render_sentence(&p.source), render_sentence(&p.target)])
            .collect();
        for s in c.unpaired_formal.iter().chain(c.unpaired_informal.iter()) {
            assert!(!pair_text.contains(&render_sentence(s)));
        }
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(matches!(
            generate_synthetic_corpus(0, 0, 1, 1),
            Err(Error::Config(_))
        ));
    }
}
