mod common;

use common::{batch, randomized, random_docs, tiny_config};
use textvae::model::{elbo_loss, lm_loss, standard_normal, ModelKind, TextModel};
use textvae::nn::{DecoderArch, Mode};
use textvae::semi::{cluster_loss, labeled_bound, semi_objective, unlabeled_bound, unlabeled_bound_exact, SemiStep};
use textvae::tensor::Tensor;
use textvae::RngStreams;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn two_layer_cnn() -> DecoderArch {
    DecoderArch::cnn("two", 3, vec![1, 2], 4, 3)
}

fn eps(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    standard_normal(rows, cols, &mut RngStreams::new(seed).stream(&[7]))
}

fn check(model: &TextModel<f64>, loss: impl Fn(&textvae::nn::Bound<f64>) -> textvae::Result<Tensor<f64>>) {
    let report = model.params.grad_check(H, loss).unwrap();
    assert!(report.max_rel_error <= TOL, "{report:?} at {}", model.params.name(model.params.ids().nth(report.worst.0).unwrap()));
}

#[test]
fn elbo_of_two_layer_scnn_vae_on_six_tokens() {
    let model = randomized(tiny_config(ModelKind::Vae, two_layer_cnn(), 7, 2, 0), 1, 0.5);
    // Two single-word documents: 6 tokens with BOS/EOS.
    let docs = random_docs(7, &[1, 1], 0, 2);
    let b = batch(&docs);
    assert_eq!(b.lengths.iter().sum::<usize>(), 6);
    let e = eps(2, 2, 3);
    check(&model, |p| Ok(elbo_loss(&model, p, &b, &e, 0.7, &Mode::Eval)?.total));
}

#[test]
fn elbo_of_lstm_vae() {
    let model = randomized(tiny_config(ModelKind::Vae, DecoderArch::lstm(4), 6, 2, 0), 4, 0.5);
    let b = batch(&random_docs(6, &[3, 1, 2], 0, 5));
    let e = eps(3, 2, 6);
    check(&model, |p| Ok(elbo_loss(&model, p, &b, &e, 1.0, &Mode::Eval)?.total));
}

#[test]
fn language_model_losses() {
    for arch in [two_layer_cnn(), DecoderArch::lstm(3)] {
        let model = randomized(tiny_config(ModelKind::Lm, arch, 6, 2, 0), 7, 0.5);
        let b = batch(&random_docs(6, &[2, 3], 0, 8));
        check(&model, |p| Ok(lm_loss(&model, p, &b, &Mode::Eval)?.total));
    }
}

fn semi_model(arch: DecoderArch, every_step: bool) -> TextModel<f64> {
    let mut config = tiny_config(ModelKind::Semi, arch, 6, 2, 3);
    config.label_every_step = every_step;
    randomized(config, 9, 0.5)
}

#[test]
fn labeled_bound_gradients() {
    for (arch, every) in [(two_layer_cnn(), true), (DecoderArch::lstm(3), false)] {
        let model = semi_model(arch, every);
        let b = batch(&random_docs(6, &[2, 1], 3, 10));
        let labels = b.labels.clone().unwrap();
        let e = eps(2, 2, 11);
        check(&model, |p| p.tape.sum(&labeled_bound(&model, p, &b, &labels, &e, 0.8, &Mode::Eval)?));
    }
}

#[test]
fn relaxed_and_exact_unlabeled_bound_gradients() {
    let model = semi_model(two_layer_cnn(), true);
    let b = batch(&random_docs(6, &[2, 2], 0, 12));
    let e = eps(2, 2, 13);
    check(&model, |p| {
        let mut rng = RngStreams::new(14).stream(&[0]);
        p.tape.sum(&unlabeled_bound(&model, p, &b, &e, &mut rng, 0.7, 1.0, &Mode::Eval)?)
    });
    check(&model, |p| p.tape.sum(&unlabeled_bound_exact(&model, p, &b, &e, 1.0, &Mode::Eval)?));
}

#[test]
fn semi_objective_gradients() {
    let model = semi_model(DecoderArch::lstm(3), true);
    let labeled = batch(&random_docs(6, &[1, 2], 3, 15));
    let unlabeled = batch(&random_docs(6, &[2, 3], 0, 16));
    let step = SemiStep { samples: 2, ..SemiStep::new(0.5, 0.6, 0.8) };
    check(&model, |p| {
        let mut rng = RngStreams::new(17).stream(&[0]);
        Ok(semi_objective(&model, p, Some(&labeled), Some(&unlabeled), step, &mut rng, &Mode::Eval)?.loss)
    });
}

#[test]
fn cluster_loss_gradients_with_and_without_clamp() {
    let model = semi_model(two_layer_cnn(), true);
    let b = batch(&random_docs(6, &[2, 2, 1], 0, 18));
    for gamma in [0.0, 1.5] {
        check(&model, |p| {
            let mut rng = RngStreams::new(19).stream(&[0]);
            Ok(cluster_loss(&model, p, &b, gamma, SemiStep::new(0.0, 1.0, 0.5), &mut rng, &Mode::Eval)?.total)
        });
    }
}
