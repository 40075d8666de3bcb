//! Layers: affine maps, embeddings, LSTM, dilated residual blocks, drop-word.

mod conv;
mod dropword;
mod linear;
mod lstm;
mod params;

pub use conv::{effective_receptive_field, DecoderArch, DecoderKind, DilatedStack, ResidualBlock, NAMED_CNN};
pub use dropword::drop_word;
pub use linear::{Embedding, Linear, Mlp};
pub use lstm::Lstm;
pub use params::{Bound, Init, Mode, ParamId, ParamStore};
