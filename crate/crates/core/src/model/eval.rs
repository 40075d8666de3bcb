use serde::{Deserialize, Serialize};

use super::config::ModelKind;
use super::loss::{kl_to_standard_normal, reconstruction_per_doc, reparameterize, standard_normal};
use super::text_model::TextModel;
use crate::data::{Batch, Document};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::rng::RngStreams;
use crate::scalar::Scalar;
use crate::semi::semi_eval_parts;
use crate::tensor::{Tape, Tensor};

/// How the latent code is chosen when scoring a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "seed")]
pub enum EpsMode {
    /// `z = μ`; the KL term is still analytic.
    Mean,
    /// One reparameterized draw per document, noise keyed by the seed.
    Sample(u64),
}

/// Variational bound on a corpus with the KL weight at 1.
///
/// `nll`, `reconstruction` and `kl` are per-document means; `ppl` is
/// `exp(Σ nll / Σ tokens)` with EOS counted as a token and BOS not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub docs: usize,
    pub tokens: usize,
    pub nll: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub ppl: f64,
    pub eps_mode: EpsMode,
}

/// Per-document `(reconstruction, kl)` for one batch.
pub fn batch_bound<S: Scalar>(model: &TextModel<S>, batch: &Batch, eps_mode: EpsMode, batch_index: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let t = &tape;
    let eps = match eps_mode {
        EpsMode::Mean => Tensor::zeros(vec![batch.batch_size, model.config.z_dim]),
        EpsMode::Sample(seed) => standard_normal(batch.batch_size, model.config.z_dim, &mut RngStreams::new(seed).stream(&[batch_index])),
    };
    let mode = Mode::Eval;
    let (recon, kl) = match model.kind() {
        ModelKind::Lm => {
            let logits = model.decode_logits(&p, None, None, &batch.decoder_inputs(), batch.batch_size, batch.steps(), &mode)?;
            (reconstruction_per_doc(t, &logits, batch)?, Tensor::zeros(vec![batch.batch_size]))
        }
        ModelKind::Vae => {
            let post = model.encode(&p, batch, &mode)?;
            let z = reparameterize(t, &post, &eps)?;
            let logits = model.decode_logits(&p, Some(&z), None, &batch.decoder_inputs(), batch.batch_size, batch.steps(), &mode)?;
            (reconstruction_per_doc(t, &logits, batch)?, kl_to_standard_normal(t, &post)?)
        }
        ModelKind::Semi => semi_eval_parts(model, &p, batch, &eps)?,
    };
    let v = |x: &Tensor<S>| x.data().iter().map(|s| s.as_f64()).collect::<Vec<_>>();
    Ok((v(&recon), v(&kl)))
}

/// Scores `docs` in fixed order, `batch_size` documents at a time.
pub fn eval_nll_ppl<S: Scalar>(model: &TextModel<S>, docs: &[Document], batch_size: usize, eps_mode: EpsMode) -> Result<EvalReport> {
    if docs.is_empty() {
        return Err(Error::Input("cannot evaluate an empty corpus".into()));
    }
    let (mut recon, mut kl) = (0.0, 0.0);
    for (i, chunk) in docs.chunks(batch_size.max(1)).enumerate() {
        let batch = Batch::from_documents(&chunk.iter().collect::<Vec<_>>());
        let (r, k) = batch_bound(model, &batch, eps_mode, i as u64)?;
        recon += r.iter().sum::<f64>();
        kl += k.iter().sum::<f64>();
    }
    if !(recon.is_finite() && kl.is_finite()) {
        return Err(Error::Numeric("evaluation produced a non-finite bound".into()));
    }
    let tokens: usize = docs.iter().map(|d| d.len() - 1).sum();
    let n = docs.len() as f64;
    Ok(EvalReport {
        docs: docs.len(),
        tokens,
        nll: (recon + kl) / n,
        reconstruction: recon / n,
        kl: kl / n,
        ppl: ((recon + kl) / tokens as f64).exp(),
        eps_mode,
    })
}
