mod common;

use common::{cnn, randomized, tiny_config};
use textvae::model::{ModelKind, TextModel};
use textvae::nn::{effective_receptive_field, DecoderArch, DecoderKind, Init, Mode};
use textvae::tensor::{Tape, Tensor};
use textvae::RngStreams;

fn decoders() -> Vec<DecoderArch> {
    let mut archs = vec![DecoderArch::lstm(4)];
    archs.extend(["scnn", "mcnn", "lcnn", "vlcnn"].map(cnn));
    archs
}

/// Which embedding positions the logits at step `t` depend on.
fn live_inputs(model: &TextModel<f64>, emb: &Tensor<f64>, z: &Tensor<f64>, t: usize) -> Vec<bool> {
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let e = tape.leaf(emb);
    let cond = model.conditioning(&p, Some(z), None).unwrap();
    let logits = model.decode_embedded(&p, &e, &cond, &Mode::Eval).unwrap();
    let row = tape.sum(&tape.slice(&logits, 0, t, 1).unwrap()).unwrap();
    let g = tape.backward(&row).unwrap().wrt_or_zero(&e);
    let (steps, d) = (emb.shape()[1], emb.shape()[2]);
    (0..steps).map(|s| (0..d).any(|k| g.data()[s * d + k] != 0.0)).collect()
}

fn setup(arch: DecoderArch, steps: usize) -> (TextModel<f64>, Tensor<f64>, Tensor<f64>) {
    let model = randomized(tiny_config(ModelKind::Vae, arch, 6, 2, 0), 3, 0.5);
    let mut init = Init::new(&RngStreams::new(4));
    let emb = init.uniform(&[1, steps, 3], 1.0);
    let z = init.uniform(&[1, 2], 1.0);
    (model, emb, z)
}

#[test]
fn logits_never_depend_on_future_inputs() {
    for arch in decoders() {
        let steps = match arch.kind {
            DecoderKind::Lstm => 8,
            DecoderKind::Cnn => effective_receptive_field(arch.filter_size, &arch.dilations).unwrap() + 3,
        };
        let (model, emb, z) = setup(arch.clone(), steps);
        for t in [0, steps / 3, steps / 2, steps - 2] {
            let live = live_inputs(&model, &emb, &z, t);
            assert!(live[t], "{}: step {t} ignores its own input", arch.name);
            if let Some(s) = (t + 1..steps).find(|&s| live[s]) {
                panic!("{}: logits at {t} depend on input {s}", arch.name);
            }
        }
    }
}

#[test]
fn scnn_decoder_sees_fifteen_positions() {
    let (model, emb, z) = setup(cnn("scnn"), 30);
    let live = live_inputs(&model, &emb, &z, 25);
    let window: Vec<usize> = (0..30).filter(|&s| live[s]).collect();
    assert_eq!(window, (11..=25).collect::<Vec<_>>());
}

#[test]
fn lstm_decoder_sees_the_whole_prefix() {
    let (model, emb, z) = setup(DecoderArch::lstm(4), 12);
    let live = live_inputs(&model, &emb, &z, 10);
    assert!(live[..=10].iter().all(|&l| l));
}

#[test]
fn latent_code_changes_logits() {
    for arch in decoders() {
        let (model, emb, _) = setup(arch.clone(), 6);
        let logits = |z: [f64; 2]| {
            let tape = Tape::new();
            let p = model.params.bind_frozen(&tape);
            let z = Tensor::from_f64(vec![1, 2], &z).unwrap();
            let cond = model.conditioning(&p, Some(&z), None).unwrap();
            model.decode_embedded(&p, &emb, &cond, &Mode::Eval).unwrap().to_vec()
        };
        let (a, b) = (logits([0.0, 0.0]), logits([1.0, -1.0]));
        // Every position, including the first, sees z.
        for t in 0..6 {
            let row = |v: &[f64]| v[t * 6..(t + 1) * 6].to_vec();
            assert_ne!(row(&a), row(&b), "{}: z is dead at step {t}", arch.name);
        }
    }
}

#[test]
fn semi_label_changes_logits() {
    for every_step in [true, false] {
        let mut config = tiny_config(ModelKind::Semi, DecoderArch::lstm(4), 6, 2, 3);
        config.label_every_step = every_step;
        let model = randomized(config, 5, 0.5);
        let emb = Init::new(&RngStreams::new(1)).uniform(&[1, 4, 3], 1.0);
        let run = |label: usize| {
            let tape = Tape::new();
            let p = model.params.bind_frozen(&tape);
            let z = Tensor::from_f64(vec![1, 2], &[0.3, -0.2]).unwrap();
            let y = textvae::semi::one_hot(&[label], 3).unwrap();
            let cond = model.conditioning(&p, Some(&z), Some(&y)).unwrap();
            model.decode_embedded(&p, &emb, &cond, &Mode::Eval).unwrap().to_vec()
        };
        assert_ne!(run(0), run(2));
    }
}
