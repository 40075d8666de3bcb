use rand_distr::{Distribution, StandardNormal};

use super::text_model::{GaussianPosterior, TextModel};
use crate::data::Batch;
use crate::error::{dim_err, Error, Result};
use crate::nn::{Bound, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Scalar loss plus its parts, all averaged over the documents of a batch.
#[derive(Debug, Clone)]
pub struct LossBreakdown<S> {
    /// `reconstruction + kl_weight · kl`, differentiable.
    pub total: Tensor<S>,
    pub reconstruction: f64,
    pub kl: f64,
    pub kl_weight: f64,
}

impl<S: Scalar> LossBreakdown<S> {
    pub fn total_value(&self) -> f64 {
        self.total.item().as_f64()
    }
}

/// Draws a `[rows, cols]` tensor of independent standard normals.
pub fn standard_normal<S: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Tensor<S> {
    let data = (0..rows * cols)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            S::c(x)
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// `z = μ + exp(½ logvar) ⊙ eps`.
pub fn reparameterize<S: Scalar>(tape: &Tape<S>, post: &GaussianPosterior<S>, eps: &Tensor<S>) -> Result<Tensor<S>> {
    if eps.shape() != post.mu.shape() {
        return Err(dim_err!("eps {:?} does not match mu {:?}", eps.shape(), post.mu.shape()));
    }
    let sigma = tape.exp(&tape.scale(&post.logvar, S::c(0.5))?)?;
    tape.add(&post.mu, &tape.mul(&sigma, eps)?)
}

/// Per-example `KL(q(z|x) ‖ N(0, I))` summed over latent dimensions, shape `[batch]`.
pub fn kl_to_standard_normal<S: Scalar>(tape: &Tape<S>, post: &GaussianPosterior<S>) -> Result<Tensor<S>> {
    if !post.mu.all_finite() || !post.logvar.all_finite() {
        return Err(Error::Numeric("non-finite posterior parameters".into()));
    }
    let mu2 = tape.mul(&post.mu, &post.mu)?;
    let var = tape.exp(&post.logvar)?;
    let inner = tape.sub(&tape.add(&mu2, &var)?, &post.logvar)?;
    let inner = tape.add_scalar(&inner, -S::one())?;
    tape.scale(&tape.sum_last(&inner)?, S::c(0.5))
}

/// Per-document masked cross-entropy of the targets, shape `[batch]`.
///
/// `logits` is `[batch, steps, vocab]` for the batch's decoder inputs.
pub fn reconstruction_per_doc<S: Scalar>(tape: &Tape<S>, logits: &Tensor<S>, batch: &Batch) -> Result<Tensor<S>> {
    let s = logits.shape();
    let (b, t) = (batch.batch_size, batch.steps());
    if s.len() != 3 || s[0] != b || s[1] != t {
        return Err(dim_err!("logits {:?} do not match batch [{b}, {t}]", s));
    }
    let flat = tape.reshape(logits, vec![b * t, s[2]])?;
    let rows = tape.cross_entropy_rows(&flat, &batch.targets(), &batch.target_mask())?;
    tape.sum_last(&tape.reshape(&rows, vec![b, t])?)
}

fn mean_of<S: Scalar>(t: &Tensor<S>) -> f64 {
    t.data().iter().map(|x| x.as_f64()).sum::<f64>() / t.numel().max(1) as f64
}

/// Single-sample negative ELBO of a VAE: `recon + kl_weight · KL`, averaged over documents.
pub fn elbo_loss<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    eps: &Tensor<S>,
    kl_weight: f64,
    mode: &Mode,
) -> Result<LossBreakdown<S>> {
    if !(0.0..=1.0).contains(&kl_weight) {
        return Err(Error::Parameter(format!("kl weight {kl_weight} outside [0, 1]")));
    }
    let t = p.tape;
    let post = model.encode(p, batch, mode)?;
    let z = reparameterize(t, &post, eps)?;
    let logits = model.decode_logits(p, Some(&z), None, &batch.decoder_inputs(), batch.batch_size, batch.steps(), mode)?;
    let recon = reconstruction_per_doc(t, &logits, batch)?;
    let kl = kl_to_standard_normal(t, &post)?;
    combine(t, &recon, &kl, kl_weight)
}

/// `mean(recon) + w · mean(kl)` with the parts recorded.
pub(crate) fn combine<S: Scalar>(tape: &Tape<S>, recon: &Tensor<S>, kl: &Tensor<S>, kl_weight: f64) -> Result<LossBreakdown<S>> {
    let total = tape.add(&tape.mean(recon)?, &tape.scale(&tape.mean(kl)?, S::c(kl_weight))?)?;
    Ok(LossBreakdown { total, reconstruction: mean_of(recon), kl: mean_of(kl), kl_weight })
}

/// Masked cross-entropy of a decoder-only model, averaged over documents.
pub fn lm_loss<S: Scalar>(model: &TextModel<S>, p: &Bound<S>, batch: &Batch, mode: &Mode) -> Result<LossBreakdown<S>> {
    let t = p.tape;
    let logits = model.decode_logits(p, None, None, &batch.decoder_inputs(), batch.batch_size, batch.steps(), mode)?;
    let recon = reconstruction_per_doc(t, &logits, batch)?;
    let total = t.mean(&recon)?;
    Ok(LossBreakdown { total, reconstruction: mean_of(&recon), kl: 0.0, kl_weight: 0.0 })
}
