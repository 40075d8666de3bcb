//! Language models, VAEs and semi-supervised VAEs sharing one decoder code path.

mod config;
mod eval;
mod loss;
mod text_model;

pub use config::{ModelConfig, ModelKind};
pub use eval::{batch_bound, eval_nll_ppl, EpsMode, EvalReport};
pub(crate) use loss::combine;
pub use loss::{elbo_loss, kl_to_standard_normal, lm_loss, reconstruction_per_doc, reparameterize, standard_normal, LossBreakdown};
pub use text_model::{Conditioning, DecoderNet, Encoder, GaussianPosterior, TextModel};
