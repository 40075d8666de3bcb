use std::path::Path;

use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// One tokenized document: `BOS tokens... EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub ids: Vec<usize>,
    pub label: Option<usize>,
    /// 1-based source line.
    pub line: usize,
}

impl Document {
    pub fn new(body: &[usize], label: Option<usize>, line: usize) -> Result<Self> {
        if body.iter().any(|&t| matches!(t, PAD | BOS | EOS)) {
            return Err(Error::Input(format!("document at line {line} contains a reserved id")));
        }
        let mut ids = Vec::with_capacity(body.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(body);
        ids.push(EOS);
        Ok(Self { ids, label, line })
    }

    /// Tokens between BOS and EOS.
    pub fn body(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.len() <= 2
    }
}

/// Splits `"label<TAB>text"`; lines without a tab have no label part.
pub fn split_label(line: &str) -> (Option<&str>, &str) {
    match line.split_once('\t') {
        Some((l, t)) => (Some(l), t),
        None => (None, line),
    }
}

/// Text part of a corpus line, given whether the corpus is labeled.
pub fn line_text(line: &str, labeled: bool) -> &str {
    if labeled {
        split_label(line).1
    } else {
        line
    }
}

/// Encodes one corpus line.
///
/// With `classes = Some(c)` the line must be `"label<TAB>text"` with an
/// integer label below `c`; with `None` the whole line is text.
pub fn encode_labeled_line(line: &str, line_no: usize, vocab: &Vocabulary, classes: Option<usize>) -> Result<Document> {
    let (label, text) = match classes {
        None => (None, line),
        Some(c) => {
            let (raw, text) = split_label(line);
            let raw = raw.ok_or_else(|| Error::Parse { line: line_no, msg: "missing label and tab separator".into() })?;
            let label: usize = raw
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("malformed label {raw:?}") })?;
            if label >= c {
                return Err(Error::Parse { line: line_no, msg: format!("label {label} not below class count {c}") });
            }
            (Some(label), text)
        }
    };
    Document::new(&vocab.encode(text), label, line_no)
}

pub fn encode_lines<'a>(lines: impl IntoIterator<Item = &'a str>, vocab: &Vocabulary, classes: Option<usize>) -> Result<Vec<Document>> {
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| encode_labeled_line(l, i + 1, vocab, classes))
        .collect()
}

/// Non-empty lines of a UTF-8 corpus file.
pub fn read_corpus_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}
