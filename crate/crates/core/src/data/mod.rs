//! Corpus ingestion, vocabulary, batching and synthetic corpora.

mod batch;
mod corpus;
pub mod synthetic;
mod vocab;

pub use batch::{batchify, Batch};
pub use corpus::{encode_labeled_line, encode_lines, line_text, read_corpus_lines, split_label, Document};
pub use synthetic::{entropy_rate, generate_synthetic, stationary_distribution, token_name, SyntheticCorpus, SyntheticSpec};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
