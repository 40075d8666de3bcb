use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::manifest::{EpochRecord, RunManifest};
use super::optim::{clip_grad_norm, Adam, AdamConfig};
use super::schedule::Schedule;
use crate::data::{batchify, Batch, Document};
use crate::error::{Error, Result};
use crate::model::{elbo_loss, eval_nll_ppl, lm_loss, standard_normal, EpsMode, EvalReport, ModelConfig, ModelKind, TextModel};
use crate::nn::{DecoderKind, Mode};
use crate::rng::RngStreams;
use crate::scalar::Scalar;
use crate::semi::{class_probabilities, cluster_loss, semi_objective, SemiStep};
use crate::tensor::Tape;

const ORDER_KEY: u64 = 0x0D;
const NOISE_KEY: u64 = 0x0E;
const LABELED_KEY: u64 = 0x1A;
const LAYER_KEY: u64 = 0x1B;

/// What is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "objective")]
pub enum Objective {
    Lm,
    Vae,
    /// `−J` over labeled and unlabeled batches.
    Semi { alpha: f64, gumbel_samples: usize },
    /// Relaxed unlabeled bound with the clamped categorical KL.
    Cluster { gamma: f64 },
    /// Cross-entropy of `q(y|x)` on labeled training documents only.
    Classify,
}

impl Objective {
    fn model_kind(&self) -> ModelKind {
        match self {
            Objective::Lm => ModelKind::Lm,
            Objective::Vae => ModelKind::Vae,
            Objective::Semi { .. } | Objective::Cluster { .. } | Objective::Classify => ModelKind::Semi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip: Option<f64>,
    /// Holds the KL weight constant instead of annealing it.
    pub fixed_kl_weight: Option<f64>,
    pub sort_by_length: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Vae,
            epochs: 40,
            batch_size: 32,
            eval_batch_size: 64,
            adam: AdamConfig::default(),
            schedule: Schedule::default(),
            clip: Some(5.0),
            fixed_kl_weight: None,
            sort_by_length: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let (name, extra) = match self.objective {
            Objective::Lm => ("lm", vec![]),
            Objective::Vae => ("vae", vec![]),
            Objective::Semi { alpha, gumbel_samples } => {
                ("semi", vec![("alpha", format!("{alpha:?}")), ("gumbel_samples", gumbel_samples.to_string())])
            }
            Objective::Cluster { gamma } => ("cluster", vec![("gamma", format!("{gamma:?}"))]),
            Objective::Classify => ("classify", vec![]),
        };
        m.insert("train.objective".into(), name.into());
        for (k, v) in extra {
            m.insert(format!("train.{k}"), v);
        }
        let s = &self.schedule;
        for (k, v) in [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("lr", format!("{:?}", self.adam.lr)),
            ("beta1", format!("{:?}", self.adam.beta1)),
            ("beta2", format!("{:?}", self.adam.beta2)),
            ("clip", self.clip.map_or("off".into(), |c| format!("{c:?}"))),
            ("fixed_kl_weight", self.fixed_kl_weight.map_or("off".into(), |c| format!("{c:?}"))),
            ("sort_by_length", self.sort_by_length.to_string()),
            ("kl_anneal_iters", s.kl_anneal_iters.to_string()),
            ("kl_floor", format!("{:?}", s.kl_floor)),
            ("lr_half_start_epoch", s.lr_half_start_epoch.to_string()),
            ("lr_half_every", s.lr_half_every.to_string()),
            ("tau_start", format!("{:?}", s.tau_start)),
            ("tau_min", format!("{:?}", s.tau_min)),
            ("tau_decay", format!("{:?}", s.tau_decay)),
        ] {
            m.insert(format!("train.{k}"), v);
        }
        m
    }
}

/// Document sets of one run. `labeled` is only read by semi-supervised objectives.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Document],
    pub valid: &'a [Document],
    pub labeled: &'a [Document],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S: Scalar> {
    /// Parameters of the best validation epoch (the initial model when no epoch ran).
    pub best: TextModel<S>,
    pub last: TextModel<S>,
    pub manifest: RunManifest,
}

struct Totals {
    recon: f64,
    kl: f64,
    total: f64,
    n: usize,
}

fn validation_accuracy<S: Scalar>(model: &TextModel<S>, docs: &[Document], batch_size: usize) -> Result<Option<f64>> {
    let labels: Option<Vec<usize>> = docs.iter().map(|d| d.label).collect();
    let Some(labels) = labels else { return Ok(None) };
    let probs = class_probabilities(model, docs, batch_size)?;
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == y
        })
        .count();
    Ok(Some(correct as f64 / labels.len() as f64))
}

/// Mean `−log q(y|x)` over labeled documents.
fn validation_cross_entropy<S: Scalar>(model: &TextModel<S>, docs: &[Document], batch_size: usize) -> Result<f64> {
    let probs = class_probabilities(model, docs, batch_size)?;
    let mut sum = 0.0;
    for (row, d) in probs.iter().zip(docs) {
        let y = d.label.ok_or_else(|| Error::Input("validation document without a label".into()))?;
        sum -= row[y].ln();
    }
    Ok(sum / docs.len() as f64)
}

/// Mean posterior variance `exp(logvar)` over documents, VAE models only.
pub fn mean_posterior_variance<S: Scalar>(model: &TextModel<S>, docs: &[Document], batch_size: usize) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for chunk in docs.chunks(batch_size.max(1)) {
        let batch = Batch::from_documents(&chunk.iter().collect::<Vec<_>>());
        let tape = Tape::new();
        let p = model.params.bind_frozen(&tape);
        let post = model.encode(&p, &batch, &Mode::Eval)?;
        sum += post.logvar.data().iter().map(|x| x.as_f64().exp()).sum::<f64>();
        n += post.logvar.numel();
    }
    Ok(sum / n.max(1) as f64)
}

/// Runs the optimization recipe and keeps the best-by-validation parameters.
///
/// Selection uses validation accuracy for the semi-supervised objective when the
/// validation documents are labeled, and the validation bound otherwise. A
/// non-finite loss stops the run; the manifest then names the failure and the
/// outcome holds the last good parameters.
pub fn train<S: Scalar>(model: TextModel<S>, data: TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome<S>> {
    if model.kind() != cfg.objective.model_kind() {
        return Err(Error::Config(format!(
            "objective needs a {} model, got {}",
            cfg.objective.model_kind().as_str(),
            model.kind().as_str()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Input("training needs non-empty train and validation sets".into()));
    }
    let semi = matches!(cfg.objective, Objective::Semi { .. } | Objective::Classify);
    if semi && data.labeled.iter().any(|d| d.label.is_none()) {
        return Err(Error::Input("labeled set contains unlabeled documents".into()));
    }
    if cfg.objective == Objective::Classify && data.train.iter().any(|d| d.label.is_none()) {
        return Err(Error::Input("classifier training needs labeled training documents".into()));
    }
    cfg.schedule.kl_weight(0)?;
    let mut config = model.config.to_kv().into_iter().map(|(k, v)| (format!("model.{k}"), v)).collect::<BTreeMap<_, _>>();
    config.extend(cfg.to_kv());
    let mut manifest = RunManifest::new(config, cfg.seed);
    let streams = RngStreams::new(cfg.seed);
    let layer_streams = RngStreams::new(streams.stream(&[LAYER_KEY]).random());
    let mut adam = Adam::new(&model.params, cfg.adam);
    let mut model = model;
    let mut best = model.clone();
    let mut best_score: Option<(f64, f64)> = None;
    let batches_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let total_iters = (cfg.epochs * batches_per_epoch).max(1) as f64;
    let mut iteration: u64 = 0;
    let mut labeled_queue: Vec<usize> = Vec::new();
    let mut labeled_pass = 0u64;

    'epochs: for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.schedule.learning_rate(epoch, cfg.adam.lr);
        let mut order_rng = streams.stream(&[ORDER_KEY, epoch as u64]);
        let batches = batchify(data.train, cfg.batch_size, Some(&mut order_rng), cfg.sort_by_length);
        let mut totals = Totals { recon: 0.0, kl: 0.0, total: 0.0, n: 0 };
        let mut kl_weight = 0.0;
        for batch in &batches {
            kl_weight = match cfg.fixed_kl_weight {
                Some(w) => w,
                None => cfg.schedule.kl_weight(iteration)?,
            };
            let mode = Mode::Train { streams: layer_streams, step: iteration };
            let mut noise = streams.stream(&[NOISE_KEY, iteration]);
            let tape = Tape::new();
            let p = model.params.bind(&tape);
            let (loss, recon, kl) = match cfg.objective {
                Objective::Lm => {
                    let l = lm_loss(&model, &p, batch, &mode)?;
                    (l.total, l.reconstruction, 0.0)
                }
                Objective::Vae => {
                    let eps = standard_normal(batch.batch_size, model.config.z_dim, &mut noise);
                    let l = elbo_loss(&model, &p, batch, &eps, kl_weight, &mode)?;
                    (l.total, l.reconstruction, l.kl)
                }
                Objective::Semi { alpha, gumbel_samples } => {
                    let labeled = if data.labeled.is_empty() {
                        None
                    } else {
                        let want = cfg.batch_size.min(data.labeled.len());
                        let mut picked = Vec::with_capacity(want);
                        while picked.len() < want {
                            if labeled_queue.is_empty() {
                                labeled_queue = (0..data.labeled.len()).collect();
                                labeled_queue.shuffle(&mut streams.stream(&[LABELED_KEY, labeled_pass]));
                                labeled_pass += 1;
                            }
                            picked.push(&data.labeled[labeled_queue.pop().unwrap()]);
                        }
                        Some(Batch::from_documents(&picked))
                    };
                    let tau = cfg.schedule.tau(iteration as f64 / total_iters);
                    let step = SemiStep { alpha, kl_weight, tau, samples: gumbel_samples };
                    let terms = semi_objective(&model, &p, labeled.as_ref(), Some(batch), step, &mut noise, &mode)?;
                    let v = terms.loss.item().as_f64();
                    (terms.loss, v, 0.0)
                }
                Objective::Cluster { gamma } => {
                    let tau = cfg.schedule.tau(iteration as f64 / total_iters);
                    let step = SemiStep::new(0.0, kl_weight, tau);
                    let l = cluster_loss(&model, &p, batch, gamma, step, &mut noise, &mode)?;
                    (l.total, l.reconstruction, l.kl)
                }
                Objective::Classify => {
                    let labels = batch.labels.as_ref().expect("checked above");
                    let logits = model.classifier_logits(&p, &model.encoder_state(&p, batch, &mode)?)?;
                    let ce = tape.mean(&tape.cross_entropy_rows(&logits, labels, &vec![true; labels.len()])?)?;
                    let v = ce.item().as_f64();
                    (ce, v, 0.0)
                }
            };
            let value = loss.item().as_f64();
            if !value.is_finite() {
                manifest.diverged = Some(format!("non-finite loss at epoch {epoch}, iteration {iteration}"));
                break 'epochs;
            }
            let grads = tape.backward(&loss)?;
            let mut g = p.gradients(&grads);
            drop(p);
            if let Some(c) = cfg.clip {
                clip_grad_norm(&mut g, c);
            }
            if let Err(e) = adam.update(&mut model.params, &g, lr) {
                manifest.diverged = Some(e.to_string());
                break 'epochs;
            }
            let k = batch.batch_size;
            totals.recon += recon * k as f64;
            totals.kl += kl * k as f64;
            totals.total += value * k as f64;
            totals.n += k;
            iteration += 1;
        }
        let report = if cfg.objective == Objective::Classify {
            let ce = validation_cross_entropy(&model, data.valid, cfg.eval_batch_size)?;
            EvalReport { docs: data.valid.len(), tokens: 0, nll: ce, reconstruction: ce, kl: 0.0, ppl: f64::NAN, eps_mode: EpsMode::Mean }
        } else {
            match eval_nll_ppl(&model, data.valid, cfg.eval_batch_size, EpsMode::Mean) {
                Ok(r) => r,
                Err(Error::Numeric(msg)) => {
                    manifest.diverged = Some(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        };
        let accuracy = if semi { validation_accuracy(&model, data.valid, cfg.eval_batch_size)? } else { None };
        let posterior_variance = if model.kind() == ModelKind::Vae {
            Some(mean_posterior_variance(&model, data.valid, cfg.eval_batch_size)?)
        } else {
            None
        };
        let n = totals.n.max(1) as f64;
        manifest.epochs.push(EpochRecord {
            epoch,
            lr,
            kl_weight,
            train_recon: totals.recon / n,
            train_kl: totals.kl / n,
            train_total: totals.total / n,
            recon: report.reconstruction,
            kl: report.kl,
            total: report.nll,
            accuracy,
            posterior_variance,
            seconds: start.elapsed().as_secs_f64(),
        });
        // Larger is better in both components.
        let score = (accuracy.unwrap_or(0.0), -report.nll);
        if best_score.is_none_or(|b| score.partial_cmp(&b) == Some(std::cmp::Ordering::Greater)) {
            best_score = Some(score);
            best = model.clone();
            manifest.best_epoch = Some(epoch);
        }
    }
    Ok(TrainOutcome { best, last: model, manifest })
}

/// Copies an LSTM language model's decoder LSTM and embedding table into the
/// encoder of a VAE or semi-supervised model.
pub fn init_encoder_from_lm<S: Scalar>(model: &mut TextModel<S>, lm: &TextModel<S>) -> Result<usize> {
    if lm.kind() != ModelKind::Lm || lm.config.decoder.kind != DecoderKind::Lstm {
        return Err(Error::Config("encoder initialization needs an LSTM language model".into()));
    }
    if model.kind() == ModelKind::Lm {
        return Err(Error::Config("language models have no encoder to initialize".into()));
    }
    let (a, b) = (&model.config, &lm.config);
    if a.vocab_size != b.vocab_size || a.embed_dim != b.embed_dim || a.encoder_hidden != b.decoder.lstm_hidden {
        return Err(Error::Config(format!(
            "LM (vocab {}, embed {}, hidden {}) does not match encoder (vocab {}, embed {}, hidden {})",
            b.vocab_size, b.embed_dim, b.decoder.lstm_hidden, a.vocab_size, a.embed_dim, a.encoder_hidden
        )));
    }
    model.copy_matching(&lm.params, |name| {
        if name == "decoder.embedding.table" {
            Some("encoder.embedding.table".into())
        } else {
            name.strip_prefix("decoder.lstm.").map(|rest| format!("encoder.lstm.{rest}"))
        }
    })
}

/// Language-model config whose LSTM matches `config`'s encoder.
pub fn encoder_lm_config(config: &ModelConfig) -> ModelConfig {
    let mut lm = config.clone();
    lm.kind = ModelKind::Lm;
    lm.decoder = crate::nn::DecoderArch::lstm(config.encoder_hidden);
    lm.decoder_dropout = config.encoder_dropout;
    lm
}

/// Trains `lm_config` as a language model on `data.train`, then builds a fresh
/// `config` model whose encoder LSTM and embeddings are copied from it.
pub fn pretrain_lm_then_init_encoder<S: Scalar>(
    config: ModelConfig,
    lm_config: ModelConfig,
    data: TrainData<'_>,
    lm_train: &TrainConfig,
) -> Result<(TextModel<S>, RunManifest)> {
    if lm_config.kind != ModelKind::Lm || lm_config.decoder.kind != DecoderKind::Lstm {
        return Err(Error::Config("only LSTM language models can initialize the encoder".into()));
    }
    let mut model = TextModel::new(config)?;
    let lm = TextModel::new(lm_config)?;
    // Shape check before spending time on training.
    init_encoder_from_lm(&mut model.clone(), &lm)?;
    let cfg = TrainConfig { objective: Objective::Lm, ..lm_train.clone() };
    let out = train(lm, data, &cfg)?;
    init_encoder_from_lm(&mut model, &out.best)?;
    Ok((model, out.manifest))
}
