use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Number of reserved ids preceding the corpus tokens.
pub const RESERVED: usize = 4;

const RESERVED_NAMES: [&str; RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Bidirectional token/id map with reserved PAD, BOS, EOS and UNK ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap - 4` most frequent tokens; ties break lexicographically.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, cap: usize) -> Result<Self> {
        if cap <= RESERVED {
            return Err(Error::Parameter(format!("vocabulary cap {cap} must exceed {RESERVED}")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut lines_seen = 0;
        for line in lines {
            lines_seen += 1;
            for tok in tokenize(line) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if lines_seen == 0 {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - RESERVED);
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t)))
    }

    /// Builds from corpus tokens listed in id order (ids start at 4).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED_NAMES.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let index = all.iter().enumerate().skip(RESERVED).map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: all, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`, without BOS/EOS.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens; BOS, EOS and PAD are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).unwrap_or(RESERVED_NAMES[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line `n` (from 0) holds id `n + 4`.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens[RESERVED..] {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Parse { line: n + 1, msg: format!("invalid vocabulary entry {line:?}") });
            }
            tokens.push(t.to_string());
        }
        Ok(Self::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
