//! Beam-search generation, latent export and receptive-field probing.

use std::io::Write;

use serde::Serialize;

use crate::data::{Batch, Document, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{ModelKind, TextModel};
use crate::nn::{effective_receptive_field, DecoderArch, DecoderKind, DilatedStack, Init, Mode, ParamStore};
use crate::rng::RngStreams;
use crate::scalar::Scalar;
use crate::semi::{class_probabilities, one_hot};
use crate::tensor::{Tape, Tensor};

pub const MAX_GENERATED: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamOptions {
    pub width: usize,
    /// Generated tokens per sequence, EOS included.
    pub max_len: usize,
}

impl Default for BeamOptions {
    fn default() -> Self {
        Self { width: 10, max_len: MAX_GENERATED }
    }
}

/// Next-token log-probabilities after each prefix, `[prefixes.len()][vocab]`.
/// All prefixes start with BOS and share one length.
pub fn next_token_log_probs<S: Scalar>(
    model: &TextModel<S>,
    z: Option<&[f64]>,
    label: Option<usize>,
    prefixes: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    let c = &model.config;
    match (model.kind(), z, label) {
        (ModelKind::Lm, None, None) | (ModelKind::Vae, Some(_), None) | (ModelKind::Semi, Some(_), Some(_)) => {}
        (ModelKind::Lm | ModelKind::Vae, _, Some(_)) => {
            return Err(Error::Config(format!("a {} model cannot be conditioned on a label", model.kind().as_str())))
        }
        (kind, _, _) => return Err(Error::Config(format!("wrong conditioning for a {} model", kind.as_str()))),
    }
    let b = prefixes.len();
    let steps = prefixes[0].len();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let zt = match z {
        Some(z) => {
            if z.len() != c.z_dim {
                return Err(Error::Input(format!("z has {} entries, model expects {}", z.len(), c.z_dim)));
            }
            Some(Tensor::new(vec![b, c.z_dim], (0..b).flat_map(|_| z.iter().map(|&v| S::c(v))).collect())?)
        }
        None => None,
    };
    let yt = match label {
        Some(y) => Some(one_hot::<S>(&vec![y; b], c.classes)?),
        None => None,
    };
    let inputs: Vec<usize> = prefixes.iter().flatten().copied().collect();
    let logits = model.decode_logits(&p, zt.as_ref(), yt.as_ref(), &inputs, b, steps, &Mode::Eval)?;
    let last = tape.reshape(&tape.slice(&logits, 1, steps - 1, 1)?, vec![b, c.vocab_size])?;
    let lp = tape.log_softmax(&last)?;
    Ok(lp.data().chunks(c.vocab_size).map(|r| r.iter().map(|x| x.as_f64()).collect()).collect())
}

/// Length-normalized beam search. Returns body token ids (no BOS/EOS).
///
/// Scores are `Σ log p / generated length` with EOS counted. PAD and BOS are
/// never proposed. Sequences reaching `max_len` without EOS are finished as is.
pub fn beam_search<S: Scalar>(model: &TextModel<S>, z: Option<&[f64]>, label: Option<usize>, opts: BeamOptions) -> Result<Vec<usize>> {
    if opts.width == 0 || opts.max_len == 0 {
        return Err(Error::Config("beam width and length cap must be positive".into()));
    }
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for step in 1..=opts.max_len {
        let prefixes: Vec<Vec<usize>> = alive.iter().map(|(t, _)| t.clone()).collect();
        let lp = next_token_log_probs(model, z, label, &prefixes)?;
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for (i, row) in lp.iter().enumerate() {
            for (tok, &l) in row.iter().enumerate() {
                if tok != PAD && tok != BOS {
                    cands.push((i, tok, alive[i].1 + l));
                }
            }
        }
        // Highest score first; ties go to the earlier beam, then the smaller id.
        cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next = Vec::new();
        for (i, tok, score) in cands.into_iter().take(opts.width) {
            let mut seq = alive[i].0.clone();
            seq.push(tok);
            if tok == EOS || step == opts.max_len {
                finished.push((seq, score / step as f64));
            } else {
                next.push((seq, score));
            }
        }
        // Stop once enough hypotheses ended and no live one is ahead of the
        // best finished score at its current length.
        let best_finished = finished.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
        let best_alive = next.iter().map(|a| a.1 / step as f64).fold(f64::NEG_INFINITY, f64::max);
        if next.is_empty() || (finished.len() >= opts.width && best_alive <= best_finished) {
            break;
        }
        alive = next;
    }
    let best = finished
        .into_iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
        .map(|(_, s)| s.0)
        .expect("at least one finished sequence");
    Ok(best.into_iter().filter(|&t| t != BOS && t != EOS).collect())
}

/// One exported row: document index, optional label and posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentRow {
    pub doc: usize,
    pub label: Option<usize>,
    pub mu: Vec<f64>,
}

/// Posterior means of every document. Semi-supervised models condition the
/// posterior on the soft prediction `q(y|x)`.
pub fn export_latent<S: Scalar>(model: &TextModel<S>, docs: &[Document], batch_size: usize) -> Result<Vec<LatentRow>> {
    if model.kind() == ModelKind::Lm {
        return Err(Error::Config("language models have no latent code to export".into()));
    }
    if let Some(t) = docs.iter().flat_map(|d| d.ids.iter()).find(|&&t| t >= model.config.vocab_size) {
        return Err(Error::Input(format!("token id {t} does not fit the model's vocabulary of {}", model.config.vocab_size)));
    }
    let soft = if model.kind() == ModelKind::Semi { Some(class_probabilities(model, docs, batch_size)?) } else { None };
    let mut rows = Vec::with_capacity(docs.len());
    let bs = batch_size.max(1);
    for (k, chunk) in docs.chunks(bs).enumerate() {
        let batch = Batch::from_documents(&chunk.iter().collect::<Vec<_>>());
        let tape = Tape::new();
        let p = model.params.bind_frozen(&tape);
        let state = model.encoder_state(&p, &batch, &Mode::Eval)?;
        let y = match &soft {
            Some(q) => {
                let rows = &q[k * bs..k * bs + chunk.len()];
                Some(Tensor::new(vec![chunk.len(), model.config.classes], rows.iter().flatten().map(|&v| S::c(v)).collect())?)
            }
            None => None,
        };
        let post = model.posterior(&p, &state, y.as_ref())?;
        for (i, (d, mu)) in chunk.iter().zip(post.mu.data().chunks(model.config.z_dim)).enumerate() {
            rows.push(LatentRow { doc: k * bs + i, label: d.label, mu: mu.iter().map(|x| x.as_f64()).collect() });
        }
    }
    Ok(rows)
}

/// Writes rows as CSV with header `doc,label,mu_1..mu_d`; a missing label is an empty field.
pub fn write_latent_csv<W: Write>(rows: &[LatentRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dim = rows.first().map_or(0, |r| r.mu.len());
    let mut header = vec!["doc".to_string(), "label".to_string()];
    header.extend((1..=dim).map(|i| format!("mu_{i}")));
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.doc.to_string(), r.label.map_or(String::new(), |l| l.to_string())];
        rec.extend(r.mu.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Analytic and measured receptive field of a CNN decoder stack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub name: String,
    pub filter_size: usize,
    pub dilations: Vec<usize>,
    pub analytic: usize,
    /// Span `t − min{s : ∂y_t/∂x_s ≠ 0} + 1` at the last position.
    pub empirical: usize,
    /// Whether every offset inside the span is reachable; dilation sets with
    /// gaps (e.g. k = 3, d = [5]) leave holes in the window.
    pub contiguous: bool,
    /// Probed `(t, s)` pairs with a nonzero gradient and `s > t`.
    pub causality_violations: Vec<(usize, usize)>,
    /// Probed `(t, s)` pairs where the gradient disagrees with the reachable offsets.
    pub support_mismatches: Vec<(usize, usize)>,
}

impl ProbeReport {
    pub fn ok(&self) -> bool {
        self.causality_violations.is_empty() && self.support_mismatches.is_empty() && self.analytic == self.empirical
    }
}

/// Offsets `t − s` reachable through the stack: `{Σ aᵢdᵢ : 0 ≤ aᵢ < k}`.
/// Residual skips add nothing new since `aᵢ = 0` is already included.
pub fn reachable_offsets(k: usize, dilations: &[usize]) -> Result<Vec<bool>> {
    let r = effective_receptive_field(k, dilations)?;
    let mut reach = vec![false; r];
    reach[0] = true;
    for &d in dilations {
        let prev = reach.clone();
        for (o, _) in prev.iter().enumerate().filter(|(_, &on)| on) {
            for a in 1..k {
                reach[o + a * d] = true;
            }
        }
    }
    Ok(reach)
}

/// Measures `{s : ∂y_t/∂x_s ≠ 0}` of a randomly initialized residual stack
/// (dropout off) at the last position and at one position whose window is
/// cut off by the sequence start. The span must equal `(k−1)Σd + 1` and the
/// set must equal the reachable offsets.
const PROBE_INPUTS: usize = 4;

pub fn probe_arch(arch: &DecoderArch, seed: u64) -> Result<ProbeReport> {
    if arch.kind != DecoderKind::Cnn {
        return Err(Error::Config("receptive-field probing needs a CNN decoder".into()));
    }
    arch.validate()?;
    let analytic = effective_receptive_field(arch.filter_size, &arch.dilations)?;
    let reach = reachable_offsets(arch.filter_size, &arch.dilations)?;
    // The support does not depend on channel width, but narrow stacks can
    // lose a path to dead ReLUs, so the probe always measures at 8/16.
    let probe = DecoderArch { ext_channels: 8, int_channels: 16, ..arch.clone() };
    let streams = RngStreams::new(seed);
    let mut store = ParamStore::<f64>::new();
    let mut init = Init::new(&streams);
    let stack = DilatedStack::new(&mut store, &mut init, "probe", &probe, 0.0)?;
    let len = analytic + 4;
    let e = probe.ext_channels;
    // A ReLU can zero one input's gradient by chance, so liveness is the
    // union over a few random inputs.
    let inputs: Vec<Tensor<f64>> = (0..PROBE_INPUTS).map(|_| init.uniform::<f64>(&[1, e, len], 1.0)).collect();
    let mut report = ProbeReport {
        name: arch.name.clone(),
        filter_size: arch.filter_size,
        dilations: arch.dilations.clone(),
        analytic,
        empirical: 0,
        contiguous: reach.iter().all(|&r| r),
        causality_violations: Vec::new(),
        support_mismatches: Vec::new(),
    };
    let probes = [len - 1, (analytic / 2).min(len - 1)];
    for (n, &t) in probes.iter().enumerate() {
        let mut live = vec![false; len];
        for x in &inputs {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let xv = tape.leaf(x);
            let y = stack.forward(&p, &xv, &Mode::Eval)?;
            let yt = tape.sum(&tape.slice(&y, 2, t, 1)?)?;
            let g = tape.backward(&yt)?.wrt_or_zero(&xv);
            for (s, l) in live.iter_mut().enumerate() {
                *l |= (0..e).any(|c| g.data()[c * len + s] != 0.0);
            }
        }
        for s in 0..len {
            let inside = s <= t && t - s < analytic && reach[t - s];
            if live[s] && s > t {
                report.causality_violations.push((t, s));
            } else if live[s] != inside {
                report.support_mismatches.push((t, s));
            }
        }
        if n == 0 {
            report.empirical = live[..=t].iter().position(|&l| l).map_or(0, |lo| t - lo + 1);
        }
    }
    Ok(report)
}
