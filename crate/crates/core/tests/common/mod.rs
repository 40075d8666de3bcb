#![allow(dead_code)]

use rand::Rng as _;
use textvae::data::{Batch, Document, RESERVED};
use textvae::model::{ModelConfig, ModelKind, TextModel};
use textvae::nn::{DecoderArch, Init};
use textvae::RngStreams;

pub fn cnn(name: &str) -> DecoderArch {
    DecoderArch::named(name, 4, 3).unwrap()
}

pub fn tiny_config(kind: ModelKind, decoder: DecoderArch, vocab: usize, z_dim: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        kind,
        vocab_size: vocab,
        embed_dim: 3,
        encoder_hidden: 4,
        z_dim,
        classes,
        classifier_hidden: 4,
        decoder,
        encoder_dropout: 0.0,
        decoder_dropout: 0.0,
        cnn_dropout: 0.0,
        drop_word: 0.0,
        label_every_step: true,
        init_seed: 0,
    }
}

/// A model whose every parameter (biases included) is redrawn from U(−scale, scale),
/// so no gradient path is trivially zero.
pub fn randomized(config: ModelConfig, seed: u64, scale: f64) -> TextModel<f64> {
    let mut model = TextModel::new(config).unwrap();
    let mut init = Init::new(&RngStreams::new(seed));
    for id in model.params.ids().collect::<Vec<_>>() {
        let shape = model.params.get(id).shape().to_vec();
        model.params.set(id, init.uniform(&shape, scale)).unwrap();
    }
    model
}

/// Random documents over the non-reserved ids with the given body lengths.
pub fn random_docs(vocab: usize, lengths: &[usize], classes: usize, seed: u64) -> Vec<Document> {
    let mut rng = RngStreams::new(seed).stream(&[0xD0C]);
    lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let body: Vec<usize> = (0..len).map(|_| rng.random_range(RESERVED..vocab)).collect();
            let label = (classes > 0).then(|| rng.random_range(0..classes));
            Document::new(&body, label, i + 1).unwrap()
        })
        .collect()
}

pub fn batch(docs: &[Document]) -> Batch {
    Batch::from_documents(&docs.iter().collect::<Vec<_>>())
}

/// `(log p(x), ELBO)` of one document under a VAE with `z_dim ≤ 2`, both by
/// tensor-product trapezoid quadrature on `[−half, half]^d` with spacing `step`.
///
/// `log p(x) = log ∫ p(x|z) N(z; 0, I) dz` and
/// `ELBO = ∫ N(u; 0, I) log p(x | μ + σ u) du − KL(q ‖ p)`, with the KL taken
/// from the model's closed form.
pub fn quadrature_bound(model: &TextModel<f64>, doc: &Document, half: f64, step: f64) -> (f64, f64) {
    use textvae::model::{kl_to_standard_normal, reconstruction_per_doc};
    use textvae::nn::Mode;
    use textvae::tensor::{Tape, Tensor};

    let d = model.config.z_dim;
    assert!(d <= 2, "quadrature oracle handles z_dim ≤ 2");
    let n = (2.0 * half / step).round() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|i| -half + i as f64 * step).collect();
    let nodes: Vec<Vec<f64>> = if d == 1 {
        axis.iter().map(|&u| vec![u]).collect()
    } else {
        axis.iter().flat_map(|&a| axis.iter().map(move |&b| vec![a, b])).collect()
    };
    let log_w: Vec<f64> = nodes
        .iter()
        .map(|u| u.iter().map(|x| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln() + step.ln()).sum())
        .collect();
    let g = nodes.len();

    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let single = batch(std::slice::from_ref(doc));
    let post = model.encode(&p, &single, &Mode::Eval).unwrap();
    let kl = kl_to_standard_normal(&tape, &post).unwrap().item();
    let (mu, sigma): (Vec<f64>, Vec<f64>) =
        (0..d).map(|k| (post.mu.data()[k], (0.5 * post.logvar.data()[k]).exp())).unzip();

    let copies = vec![doc.clone(); g];
    let many = batch(&copies);
    let log_lik = |zs: Vec<f64>| -> Vec<f64> {
        let z = Tensor::new(vec![g, d], zs).unwrap();
        let logits = model.decode_logits(&p, Some(&z), None, &many.decoder_inputs(), g, many.steps(), &Mode::Eval).unwrap();
        reconstruction_per_doc(&tape, &logits, &many).unwrap().data().iter().map(|r| -r).collect()
    };
    let prior = log_lik(nodes.iter().flatten().copied().collect());
    let terms: Vec<f64> = prior.iter().zip(&log_w).map(|(l, w)| l + w).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_px = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();

    let shifted: Vec<f64> = nodes.iter().flat_map(|u| (0..d).map(|k| mu[k] + sigma[k] * u[k]).collect::<Vec<_>>()).collect();
    let expected: f64 = log_lik(shifted).iter().zip(&log_w).map(|(l, w)| l * w.exp()).sum();
    (log_px, expected - kl)
}

/// `|mean relaxed U(x) − exact U(x)|` for one document: `samples` Gumbel-softmax
/// draws at temperature `tau`, all sharing one Gaussian `eps` row with the
/// exact enumeration so only the label relaxation differs.
pub fn relaxation_gap(model: &TextModel<f64>, doc: &Document, tau: f64, samples: usize, seed: u64) -> f64 {
    use textvae::nn::Mode;
    use textvae::semi::{unlabeled_bound, unlabeled_bound_exact};
    use textvae::tensor::{Tape, Tensor};

    let z = model.config.z_dim;
    let eps_row: Vec<f64> = (0..z).map(|k| 0.3 - 0.2 * k as f64).collect();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let one = batch(std::slice::from_ref(doc));
    let exact = unlabeled_bound_exact(model, &p, &one, &Tensor::from_f64(vec![1, z], &eps_row).unwrap(), 1.0, &Mode::Eval)
        .unwrap()
        .item();
    let copies = vec![doc.clone(); samples];
    let many = batch(&copies);
    let eps = Tensor::from_f64(vec![samples, z], &eps_row.repeat(samples)).unwrap();
    let mut rng = RngStreams::new(seed).stream(&[0x6A]);
    let relaxed = unlabeled_bound(model, &p, &many, &eps, &mut rng, tau, 1.0, &Mode::Eval).unwrap();
    let mean = relaxed.data().iter().sum::<f64>() / samples as f64;
    (mean - exact).abs()
}

/// Documents of a synthetic corpus with token `wi` at id `RESERVED + i`.
pub fn synthetic_docs(spec: &textvae::data::SyntheticSpec) -> Vec<Document> {
    let corpus = textvae::data::generate_synthetic(spec).unwrap();
    corpus
        .docs
        .iter()
        .enumerate()
        .map(|(i, (c, toks))| {
            let body: Vec<usize> = toks.iter().map(|t| RESERVED + t).collect();
            Document::new(&body, Some(*c), i + 1).unwrap()
        })
        .collect()
}
