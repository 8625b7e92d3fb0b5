//! GYAFC-style directory I/O.
//!
//! Layout (UTF-8, LF, one space-joined pretokenized sentence per line):
//!
//! ```text
//! train/informal          train/formal            (line-aligned pairs)
//! valid/informal          valid/formal.ref0..3    (informal→formal items)
//! valid/formal            valid/informal.ref0..3  (formal→informal items)
//! test/  …same as valid…
//! unpaired/informal       unpaired/formal         (optional; pretraining text)
//! ```
//!
//! The `unpaired/` directory is this crate's extension for pretraining text;
//! loading tolerates its absence so real GYAFC-format data works unchanged.

use std::fs;
use std::path::Path;

use crate::corpus::{parse_sentence, render_sentence, Corpus, EvalItem, ParallelPair, Sentence, Style};
use crate::error::{Error, Result};

fn read_lines(path: &Path) -> Result<Vec<Sentence>> {
    if !path.is_file() {
        return Err(Error::Format(format!("missing corpus file {}", path.display())));
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = parse_sentence(line);
        if s.is_empty() {
            return Err(Error::Format(format!(
                "{}:{}: empty sentence line",
                path.display(),
                i + 1
            )));
        }
        out.push(s);
    }
    Ok(out)
}

fn read_optional(path: &Path) -> Result<Vec<Sentence>> {
    if path.is_file() {
        read_lines(path)
    } else {
        Ok(Vec::new())
    }
}

fn write_lines(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        for tok in s {
            if tok.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "token {tok:?} contains whitespace; cannot serialize"
                )));
            }
        }
        text.push_str(&render_sentence(s));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Load one eval direction: `<src_name>` + `<ref_name>.ref0..ref3`.
fn read_eval_direction(dir: &Path, src_name: &str, ref_name: &str, source_style: Style) -> Result<Vec<EvalItem>> {
    let sources = read_lines(&dir.join(src_name))?;
    let mut refs: Vec<Vec<Sentence>> = Vec::with_capacity(4);
    for k in 0..4 {
        let path = dir.join(format!("{ref_name}.ref{k}"));
        let lines = read_lines(&path)?;
        if lines.len() != sources.len() {
            return Err(Error::Alignment(format!(
                "{}: {} lines vs {} sources",
                path.display(),
                lines.len(),
                sources.len()
            )));
        }
        refs.push(lines);
    }
    Ok(sources
        .into_iter()
        .enumerate()
        .map(|(i, source)| EvalItem {
            source,
            source_style,
            references: [
                refs[0][i].clone(),
                refs[1][i].clone(),
                refs[2][i].clone(),
                refs[3][i].clone(),
            ],
        })
        .collect())
}

fn read_eval_split(dir: &Path) -> Result<Vec<EvalItem>> {
    let mut items = read_eval_direction(dir, "informal", "formal", Style::Informal)?;
    items.extend(read_eval_direction(dir, "formal", "informal", Style::Formal)?);
    Ok(items)
}

/// Load a corpus from a GYAFC-format directory.
pub fn load_gyafc_dir(root: &Path) -> Result<Corpus> {
    let train_informal = read_lines(&root.join("train").join("informal"))?;
    let train_formal = read_lines(&root.join("train").join("formal"))?;
    if train_informal.len() != train_formal.len() {
        return Err(Error::Alignment(format!(
            "train: {} informal lines vs {} formal lines",
            train_informal.len(),
            train_formal.len()
        )));
    }
    let train = train_informal
        .into_iter()
        .zip(train_formal)
        .map(|(src, tgt)| ParallelPair::new(src, tgt, Style::Informal))
        .collect::<Result<Vec<_>>>()?;

    Ok(Corpus {
        train,
        valid: read_eval_split(&root.join("valid"))?,
        test: read_eval_split(&root.join("test"))?,
        unpaired_informal: read_optional(&root.join("unpaired").join("informal"))?,
        unpaired_formal: read_optional(&root.join("unpaired").join("formal"))?,
    })
}

fn write_eval_split(dir: &Path, items: &[EvalItem]) -> Result<()> {
    for (src_name, ref_name, style) in [
        ("informal", "formal", Style::Informal),
        ("formal", "informal", Style::Formal),
    ] {
        let of_style: Vec<&EvalItem> = items.iter().filter(|i| i.source_style == style).collect();
        let sources: Vec<Sentence> = of_style.iter().map(|i| i.source.clone()).collect();
        write_lines(&dir.join(src_name), &sources)?;
        for k in 0..4 {
            let refs: Vec<Sentence> = of_style.iter().map(|i| i.references[k].clone()).collect();
            write_lines(&dir.join(format!("{ref_name}.ref{k}")), &refs)?;
        }
    }
    Ok(())
}

/// Write a corpus as a GYAFC-format directory (inverse of `load_gyafc_dir`).
pub fn write_gyafc_dir(corpus: &Corpus, root: &Path) -> Result<()> {
    for sub in ["train", "valid", "test", "unpaired"] {
        fs::create_dir_all(root.join(sub))?;
    }
    let train_dir = root.join("train");
    let informal: Vec<Sentence> = corpus.train.iter().map(src_informal).collect();
    let formal: Vec<Sentence> = corpus.train.iter().map(src_formal).collect();
    write_lines(&train_dir.join("informal"), &informal)?;
    write_lines(&train_dir.join("formal"), &formal)?;
    write_eval_split(&root.join("valid"), &corpus.valid)?;
    write_eval_split(&root.join("test"), &corpus.test)?;
    write_lines(&root.join("unpaired").join("informal"), &corpus.unpaired_informal)?;
    write_lines(&root.join("unpaired").join("formal"), &corpus.unpaired_formal)?;
    Ok(())
}

fn src_informal(p: &ParallelPair) -> Sentence {
    match p.source_style {
        Style::Informal => p.source.clone(),
        Style::Formal => p.target.clone(),
    }
}

fn src_formal(p: &ParallelPair) -> Sentence {
    match p.source_style {
        Style::Informal => p.target.clone(),
        Style::Formal => p.source.clone(),
    }
}
