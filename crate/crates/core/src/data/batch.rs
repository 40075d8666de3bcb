use rand::seq::SliceRandom;

use super::corpus::Document;
use super::vocab::PAD;
use crate::rng::Rng;

/// PAD-filled token matrix `[batch, seq_len]` with per-row lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lengths: Vec<usize>,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    /// Pads to the longest document.
    pub fn from_documents(docs: &[&Document]) -> Self {
        let seq_len = docs.iter().map(|d| d.len()).max().unwrap_or(2);
        Self::padded_to(docs, seq_len)
    }

    /// Pads to `seq_len` columns (at least the longest document).
    pub fn padded_to(docs: &[&Document], seq_len: usize) -> Self {
        assert!(!docs.is_empty(), "batch needs at least one document");
        let seq_len = seq_len.max(docs.iter().map(|d| d.len()).max().unwrap());
        let mut tokens = vec![PAD; docs.len() * seq_len];
        for (row, d) in docs.iter().enumerate() {
            tokens[row * seq_len..row * seq_len + d.len()].copy_from_slice(&d.ids);
        }
        let labels = docs.iter().map(|d| d.label).collect::<Option<Vec<_>>>();
        Self { tokens, batch_size: docs.len(), seq_len, lengths: docs.iter().map(|d| d.len()).collect(), labels }
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.tokens[b * self.seq_len..(b + 1) * self.seq_len]
    }

    /// True on real-token positions of the full matrix.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.batch_size)
            .flat_map(|b| (0..self.seq_len).map(move |t| t < self.lengths[b]))
            .collect()
    }

    /// Decoder inputs `[batch, seq_len - 1]`: every column but the last.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        (0..self.batch_size).flat_map(|b| self.row(b)[..self.seq_len - 1].iter().copied()).collect()
    }

    /// Prediction targets `[batch, seq_len - 1]`: every column but the first.
    pub fn targets(&self) -> Vec<usize> {
        (0..self.batch_size).flat_map(|b| self.row(b)[1..].iter().copied()).collect()
    }

    /// True where the target is a real token (EOS included, BOS never a target).
    pub fn target_mask(&self) -> Vec<bool> {
        (0..self.batch_size)
            .flat_map(|b| (1..self.seq_len).map(move |t| t < self.lengths[b]))
            .collect()
    }

    pub fn steps(&self) -> usize {
        self.seq_len - 1
    }

    /// Number of predicted tokens (EOS counted, BOS not).
    pub fn target_count(&self) -> usize {
        self.lengths.iter().map(|l| l - 1).sum()
    }
}

/// Splits documents into batches covering each document exactly once.
///
/// With an RNG the order is shuffled; `sort_by_length` then groups documents
/// of similar length (within pools of 20 batches) before the batch order is
/// shuffled again.
pub fn batchify(docs: &[Document], batch_size: usize, rng: Option<&mut Rng>, sort_by_length: bool) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let shuffle = rng.is_some();
    let mut rng = rng;
    if let Some(r) = rng.as_deref_mut() {
        order.shuffle(r);
    }
    if sort_by_length {
        for pool in order.chunks_mut(batch_size * 20) {
            pool.sort_by_key(|&i| docs[i].len());
        }
    }
    let mut batches: Vec<Batch> = order
        .chunks(batch_size)
        .map(|idx| Batch::from_documents(&idx.iter().map(|&i| &docs[i]).collect::<Vec<_>>()))
        .collect();
    if shuffle && sort_by_length {
        if let Some(r) = rng {
            batches.shuffle(r);
        }
    }
    batches
}
