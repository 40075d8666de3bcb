//! Semi-supervised VAE objective, Gumbel-softmax label inference and the
//! clustering variant with a clamped categorical KL.

use rand::Rng as _;

use crate::data::{Batch, Document};
use crate::error::{dim_err, Error, Result};
use crate::model::{combine, kl_to_standard_normal, reconstruction_per_doc, reparameterize, standard_normal, LossBreakdown, ModelKind, TextModel};
use crate::nn::{Bound, Mode};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// `[batch, classes]` one-hot rows; index error on a class id ≥ `classes`.
pub fn one_hot<S: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<S>> {
    let mut data = vec![S::zero(); labels.len() * classes];
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Index(format!("class id {y} at row {r} is not below {classes}")));
        }
        data[r * classes + y] = S::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}

fn require_semi<S: Scalar>(model: &TextModel<S>) -> Result<()> {
    if model.kind() != ModelKind::Semi {
        return Err(Error::Config(format!("{} model has no label inference", model.kind().as_str())));
    }
    Ok(())
}

/// `q(y|x)` for every document in the batch, `[batch, classes]`.
pub fn classify<S: Scalar>(model: &TextModel<S>, p: &Bound<S>, batch: &Batch, mode: &Mode) -> Result<Tensor<S>> {
    require_semi(model)?;
    let state = model.encoder_state(p, batch, mode)?;
    p.tape.softmax(&model.classifier_logits(p, &state)?)
}

/// Gumbel noise `-log(-log u)` for `n` entries.
pub fn gumbel_noise(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((log π + g) / τ)` with `π = softmax(logits)` and noise drawn from `rng`.
pub fn gumbel_softmax<S: Scalar>(tape: &Tape<S>, logits: &Tensor<S>, tau: f64, rng: &mut Rng) -> Result<Tensor<S>> {
    let g = gumbel_noise(logits.numel(), rng);
    gumbel_softmax_with_noise(tape, logits, tau, &g)
}

/// [`gumbel_softmax`] with explicit noise, one value per logit.
pub fn gumbel_softmax_with_noise<S: Scalar>(tape: &Tape<S>, logits: &Tensor<S>, tau: f64, noise: &[f64]) -> Result<Tensor<S>> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if noise.len() != logits.numel() {
        return Err(dim_err!("{} noise values for logits {:?}", noise.len(), logits.shape()));
    }
    let g = Tensor::new(logits.shape().to_vec(), noise.iter().map(|&x| S::c(x)).collect())?;
    let perturbed = tape.add(&tape.log_softmax(logits)?, &g)?;
    tape.softmax(&tape.scale(&perturbed, S::c(1.0 / tau))?)
}

/// Per-example `KL(q(y|x) ‖ uniform)` from classifier logits, shape `[batch]`.
pub fn categorical_kl_uniform<S: Scalar>(tape: &Tape<S>, logits: &Tensor<S>) -> Result<Tensor<S>> {
    let c = *logits.shape().last().ok_or_else(|| dim_err!("logits need a class axis"))?;
    let logq = tape.log_softmax(logits)?;
    let q = tape.softmax(logits)?;
    tape.add_scalar(&tape.sum_last(&tape.mul(&q, &logq)?)?, S::c((c as f64).ln()))
}

/// `max(γ, mean_batch KL(q(y|x) ‖ uniform))`; no gradient while the KL is below γ.
pub fn clamped_categorical_kl<S: Scalar>(tape: &Tape<S>, logits: &Tensor<S>, gamma: f64) -> Result<Tensor<S>> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Parameter(format!("clamp threshold must be non-negative, got {gamma}")));
    }
    let kl = tape.mean(&categorical_kl_uniform(tape, logits)?)?;
    tape.clamp_min(&kl, S::c(gamma))
}

/// Reconstruction and z-KL per document under label conditioning `y` (hard or soft).
fn conditioned_parts<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    state: &Tensor<S>,
    batch: &Batch,
    y: &Tensor<S>,
    eps: &Tensor<S>,
    mode: &Mode,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let t = p.tape;
    let post = model.posterior(p, state, Some(y))?;
    let z = reparameterize(t, &post, eps)?;
    let logits = model.decode_logits(p, Some(&z), Some(y), &batch.decoder_inputs(), batch.batch_size, batch.steps(), mode)?;
    Ok((reconstruction_per_doc(t, &logits, batch)?, kl_to_standard_normal(t, &post)?))
}

/// `L(x, y) = E_q(z|x,y)[log p(x|y,z)] − w · KL(q(z|x,y) ‖ p(z))` per document, single sample.
#[allow(clippy::too_many_arguments)]
pub fn labeled_bound<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    labels: &[usize],
    eps: &Tensor<S>,
    kl_weight: f64,
    mode: &Mode,
) -> Result<Tensor<S>> {
    require_semi(model)?;
    let t = p.tape;
    let y = one_hot(labels, model.config.classes)?;
    let state = model.encoder_state(p, batch, mode)?;
    let (recon, kl) = conditioned_parts(model, p, &state, batch, &y, eps, mode)?;
    t.neg(&t.add(&recon, &t.scale(&kl, S::c(kl_weight))?)?)
}

/// Relaxed `U(x)` per document: `L(x, y_soft) − KL(q(y|x) ‖ p(y))` with `y_soft` a
/// Gumbel-softmax sample from `q(y|x)`.
#[allow(clippy::too_many_arguments)]
pub fn unlabeled_bound<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    eps: &Tensor<S>,
    rng: &mut Rng,
    tau: f64,
    kl_weight: f64,
    mode: &Mode,
) -> Result<Tensor<S>> {
    require_semi(model)?;
    let state = model.encoder_state(p, batch, mode)?;
    let logits = model.classifier_logits(p, &state)?;
    relaxed_unlabeled(model, p, &state, &logits, batch, eps, rng, tau, kl_weight, mode)
}

#[allow(clippy::too_many_arguments)]
fn relaxed_unlabeled<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    state: &Tensor<S>,
    logits: &Tensor<S>,
    batch: &Batch,
    eps: &Tensor<S>,
    rng: &mut Rng,
    tau: f64,
    kl_weight: f64,
    mode: &Mode,
) -> Result<Tensor<S>> {
    let t = p.tape;
    let y = gumbel_softmax(t, logits, tau, rng)?;
    let (recon, kl) = conditioned_parts(model, p, state, batch, &y, eps, mode)?;
    let neg_l = t.add(&recon, &t.scale(&kl, S::c(kl_weight))?)?;
    t.neg(&t.add(&neg_l, &categorical_kl_uniform(t, logits)?)?)
}

/// Per-document parts of the exact unlabeled bound, summing over every class:
/// `(Σ_y q·recon_y, Σ_y q·KL_z,y, KL(q(y|x) ‖ p(y)))`.
fn exact_parts<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    eps: &Tensor<S>,
    mode: &Mode,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let t = p.tape;
    let c = model.config.classes;
    let b = batch.batch_size;
    let state = model.encoder_state(p, batch, mode)?;
    let logits = model.classifier_logits(p, &state)?;
    let q = t.softmax(&logits)?;
    let mut recon = Tensor::zeros(vec![b]);
    let mut kl = Tensor::zeros(vec![b]);
    for class in 0..c {
        let y = one_hot(&vec![class; b], c)?;
        let (r, k) = conditioned_parts(model, p, &state, batch, &y, eps, mode)?;
        let qy = t.reshape(&t.slice(&q, 1, class, 1)?, vec![b])?;
        recon = t.add(&recon, &t.mul(&qy, &r)?)?;
        kl = t.add(&kl, &t.mul(&qy, &k)?)?;
    }
    Ok((recon, kl, categorical_kl_uniform(t, &logits)?))
}

/// Exact `U(x) = Σ_y q(y|x) L(x, y) − KL(q(y|x) ‖ p(y))` per document.
pub fn unlabeled_bound_exact<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    eps: &Tensor<S>,
    kl_weight: f64,
    mode: &Mode,
) -> Result<Tensor<S>> {
    require_semi(model)?;
    let t = p.tape;
    let (recon, kl, kl_y) = exact_parts(model, p, batch, eps, mode)?;
    t.neg(&t.add(&t.add(&recon, &t.scale(&kl, S::c(kl_weight))?)?, &kl_y)?)
}

/// Bound parts of a semi model for evaluation: `(reconstruction, KL)` per document
/// where the KL includes the categorical term, so `−U(x) = recon + KL`.
pub fn semi_eval_parts<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    eps: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    require_semi(model)?;
    let t = p.tape;
    let (recon, kl, kl_y) = exact_parts(model, p, batch, eps, &Mode::Eval)?;
    Ok((recon, t.add(&kl, &kl_y)?))
}

/// Values of the three terms of `J` (batch means) and the loss `−J`.
#[derive(Debug, Clone)]
pub struct SemiObjectiveTerms<S> {
    pub loss: Tensor<S>,
    pub labeled_bound: f64,
    pub unlabeled_bound: f64,
    /// Mean `log q(y|x)` over labeled documents.
    pub classifier_log_likelihood: f64,
    pub alpha: f64,
}

/// Settings shared by one evaluation of `J` (or of the clustering loss).
#[derive(Debug, Clone, Copy)]
pub struct SemiStep {
    pub alpha: f64,
    pub kl_weight: f64,
    pub tau: f64,
    /// Gumbel-softmax draws averaged in the unlabeled term (at least one).
    pub samples: usize,
}

impl SemiStep {
    pub fn new(alpha: f64, kl_weight: f64, tau: f64) -> Self {
        Self { alpha, kl_weight, tau, samples: 1 }
    }
}

fn mean_value<S: Scalar>(t: &Tensor<S>) -> f64 {
    t.data().iter().map(|x| x.as_f64()).sum::<f64>() / t.numel().max(1) as f64
}

/// `J = E[L(x,y)] + E[U(x)] + α E[log q(y|x)]`; the returned loss is `−J`.
///
/// Fresh `eps` and Gumbel noise are drawn from `rng`.
pub fn semi_objective<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    labeled: Option<&Batch>,
    unlabeled: Option<&Batch>,
    step: SemiStep,
    rng: &mut Rng,
    mode: &Mode,
) -> Result<SemiObjectiveTerms<S>> {
    require_semi(model)?;
    if step.alpha.is_nan() || step.alpha < 0.0 {
        return Err(Error::Parameter(format!("alpha must be non-negative, got {}", step.alpha)));
    }
    if labeled.is_none() && step.alpha > 0.0 {
        return Err(Error::Input("classifier term needs labeled documents".into()));
    }
    let t = p.tape;
    let z = model.config.z_dim;
    let mut loss = Tensor::scalar(S::zero());
    let (mut lb, mut ub, mut cll) = (0.0, 0.0, 0.0);
    if let Some(batch) = labeled {
        let labels = batch.labels.as_ref().ok_or_else(|| Error::Input("labeled batch carries no labels".into()))?;
        let y = one_hot(labels, model.config.classes)?;
        let eps = standard_normal(batch.batch_size, z, rng);
        let state = model.encoder_state(p, batch, mode)?;
        let (recon, kl) = conditioned_parts(model, p, &state, batch, &y, &eps, mode)?;
        let neg_l = t.add(&recon, &t.scale(&kl, S::c(step.kl_weight))?)?;
        lb = -mean_value(&neg_l);
        loss = t.add(&loss, &t.mean(&neg_l)?)?;
        if step.alpha > 0.0 {
            let logits = model.classifier_logits(p, &state)?;
            let ce = t.cross_entropy_rows(&logits, labels, &vec![true; labels.len()])?;
            cll = -mean_value(&ce);
            loss = t.add(&loss, &t.scale(&t.mean(&ce)?, S::c(step.alpha))?)?;
        }
    }
    if let Some(batch) = unlabeled {
        let state = model.encoder_state(p, batch, mode)?;
        let logits = model.classifier_logits(p, &state)?;
        let n = step.samples.max(1);
        for _ in 0..n {
            let eps = standard_normal(batch.batch_size, z, rng);
            let u = relaxed_unlabeled(model, p, &state, &logits, batch, &eps, rng, step.tau, step.kl_weight, mode)?;
            ub += mean_value(&u) / n as f64;
            loss = t.sub(&loss, &t.scale(&t.mean(&u)?, S::c(1.0 / n as f64))?)?;
        }
    }
    Ok(SemiObjectiveTerms { loss, labeled_bound: lb, unlabeled_bound: ub, classifier_log_likelihood: cll, alpha: step.alpha })
}

/// Clustering loss: the relaxed unlabeled bound with its categorical KL replaced
/// by `max(γ, KL)` over the batch.
pub fn cluster_loss<S: Scalar>(
    model: &TextModel<S>,
    p: &Bound<S>,
    batch: &Batch,
    gamma: f64,
    step: SemiStep,
    rng: &mut Rng,
    mode: &Mode,
) -> Result<LossBreakdown<S>> {
    require_semi(model)?;
    let t = p.tape;
    let state = model.encoder_state(p, batch, mode)?;
    let logits = model.classifier_logits(p, &state)?;
    let eps = standard_normal(batch.batch_size, model.config.z_dim, rng);
    let y = gumbel_softmax(t, &logits, step.tau, rng)?;
    let (recon, kl) = conditioned_parts(model, p, &state, batch, &y, &eps, mode)?;
    let mut parts = combine(t, &recon, &kl, step.kl_weight)?;
    parts.total = t.add(&parts.total, &clamped_categorical_kl(t, &logits, gamma)?)?;
    Ok(parts)
}

/// `q(y|x)` rows for a document set, evaluated in batches.
pub fn class_probabilities<S: Scalar>(model: &TextModel<S>, docs: &[Document], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    require_semi(model)?;
    let mut out = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(batch_size.max(1)) {
        let batch = Batch::from_documents(&chunk.iter().collect::<Vec<_>>());
        let tape = Tape::new();
        let p = model.params.bind_frozen(&tape);
        let q = classify(model, &p, &batch, &Mode::Eval)?;
        let c = model.config.classes;
        out.extend(q.data().chunks(c).map(|row| row.iter().map(|x| x.as_f64()).collect()));
    }
    Ok(out)
}

/// Accuracy of a cluster → label assignment fixed on a validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub accuracy: f64,
    /// Label given to each cluster, `None` for clusters no validation document falls in.
    pub assignment: Vec<Option<usize>>,
    pub empty_clusters: Vec<usize>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Labels each cluster `i` with the true label of its validation member (a document whose
/// argmax is `i`) with the highest `q(y=i|x)`, then scores test documents assigned to their argmax cluster.
///
/// Ties for the best validation document resolve to the most common label among the
/// tied documents. A cluster that is no validation document's argmax stays unlabeled
/// and its test documents count as errors.
pub fn cluster_evaluate(val_probs: &[Vec<f64>], val_labels: &[usize], test_probs: &[Vec<f64>], test_labels: &[usize]) -> Result<ClusterReport> {
    if val_probs.len() != val_labels.len() || test_probs.len() != test_labels.len() {
        return Err(Error::Input("probability rows and labels differ in count".into()));
    }
    if val_probs.is_empty() || test_probs.is_empty() {
        return Err(Error::Input("cluster evaluation needs validation and test documents".into()));
    }
    let c = val_probs[0].len();
    if val_probs.iter().chain(test_probs).any(|r| r.len() != c) {
        return Err(dim_err!("probability rows must all have {c} entries"));
    }
    let val_argmax: Vec<usize> = val_probs.iter().map(|r| argmax(r)).collect();
    let mut assignment = vec![None; c];
    let mut empty_clusters = Vec::new();
    for (i, slot) in assignment.iter_mut().enumerate() {
        if !val_argmax.contains(&i) {
            empty_clusters.push(i);
            continue;
        }
        let members = || val_probs.iter().zip(val_labels).zip(&val_argmax).filter(|(_, &a)| a == i).map(|(m, _)| m);
        let best = members().map(|(r, _)| r[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut counts = std::collections::BTreeMap::new();
        for (r, &label) in members() {
            if r[i] >= best - 1e-12 {
                *counts.entry(label).or_insert(0usize) += 1;
            }
        }
        let top = counts.values().copied().max().unwrap_or(0);
        *slot = counts.into_iter().find(|&(_, n)| n == top).map(|(label, _)| label);
    }
    let correct = test_probs
        .iter()
        .zip(test_labels)
        .filter(|(r, &label)| assignment[argmax(r)] == Some(label))
        .count();
    Ok(ClusterReport { accuracy: correct as f64 / test_labels.len() as f64, assignment, empty_clusters })
}
