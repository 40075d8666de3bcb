use rand::Rng as _;

use crate::data::{PAD, UNK};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Replaces each non-PAD token by UNK with probability `rate`.
pub fn drop_word(tokens: &[usize], rate: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("drop-word rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(tokens.to_vec());
    }
    Ok(tokens
        .iter()
        .map(|&t| if t != PAD && rng.random::<f64>() < rate { UNK } else { t })
        .collect())
}
