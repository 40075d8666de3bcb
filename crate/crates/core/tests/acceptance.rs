//! End-to-end acceptance gate. Each criterion prints one `PASS`/`FAIL` line;
//! the test fails if any criterion does.
//!
//! Run alone with `cargo test -p textvae --test acceptance`.
//! The training criteria (6, 7, 9, 10) take most of the roughly 30 minutes.

mod common;

use common::{batch, cnn, quadrature_bound, randomized, random_docs, relaxation_gap, synthetic_docs, tiny_config};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;
use textvae::checkpoint;
use textvae::data::{encode_lines, generate_synthetic, line_text, Document, SyntheticSpec, Vocabulary, RESERVED};
use textvae::model::{
    elbo_loss, eval_nll_ppl, kl_to_standard_normal, lm_loss, standard_normal, EpsMode, GaussianPosterior, ModelConfig, ModelKind,
};
use textvae::nn::{effective_receptive_field, DecoderArch, DecoderKind, DilatedStack, Embedding, Init, Lstm, Mlp, Mode, ResidualBlock};
use textvae::semi::{
    class_probabilities, cluster_evaluate, cluster_loss, gumbel_softmax, labeled_bound, semi_objective, unlabeled_bound,
    unlabeled_bound_exact, SemiStep,
};
use textvae::tensor::grad_check;
use textvae::tools::probe_arch;
use textvae::train::{encoder_lm_config, pretrain_lm_then_init_encoder, train, Objective, Schedule, TrainConfig, TrainData, TrainOutcome};
use textvae::{ParamStore, RngStreams, Tape, Tensor, TextModel};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

const H: f64 = 1e-5;

fn layer_checks() -> Vec<(&'static str, f64)> {
    let streams = RngStreams::new(101);
    let mut init = Init::new(&streams);
    let mut out = Vec::new();

    let a: Tensor = init.uniform(&[3, 4], 1.0);
    let b: Tensor = init.uniform(&[4, 2], 1.0);
    let r = grad_check(|t, xs| t.sum(&t.tanh(&t.matmul(&xs[0], &xs[1])?)?), &[a, b], H).unwrap();
    out.push(("matmul", r.max_rel_error));

    let x: Tensor = init.uniform(&[2, 3, 7], 1.0);
    let w: Tensor = init.uniform(&[2, 3, 3], 1.0);
    let r = grad_check(|t, xs| t.sum(&t.tanh(&t.conv1d_causal(&xs[0], &xs[1], 2)?)?), &[x, w], H).unwrap();
    out.push(("conv1d_causal", r.max_rel_error));

    let logits: Tensor = init.uniform(&[4, 5], 2.0);
    let r = grad_check(|t, xs| t.softmax_cross_entropy(&xs[0], &[1, 0, 4, 2], &[true, true, false, true]), &[logits], H).unwrap();
    out.push(("softmax_cross_entropy", r.max_rel_error));

    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, &mut init, "mlp", &[3, 5, 2]).unwrap();
    let xid = store.add("x", init.uniform(&[4, 3], 1.0)).unwrap();
    randomize(&mut store, 102);
    let r = store.grad_check(H, |p| p.tape.sum(&p.tape.tanh(&mlp.forward(p, p.var(xid))?)?)).unwrap();
    out.push(("linear/mlp", r.max_rel_error));

    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, &mut init, "emb", 6, 3).unwrap();
    let lstm = Lstm::new(&mut store, &mut init, "lstm", 3, 4).unwrap();
    randomize(&mut store, 103);
    let ids = [1, 4, 5, 2, 1, 3, 0, 0];
    let r = store
        .grad_check(H, |p| {
            let e = emb.forward(p, &ids, 2, 4)?;
            p.tape.sum(&lstm.encode(p, &e, &[4, 2])?)
        })
        .unwrap();
    out.push(("embedding+lstm", r.max_rel_error));

    let mut store = ParamStore::new();
    let block = ResidualBlock::new(&mut store, &mut init, "block", 3, 2, 3, 2).unwrap();
    let xid = store.add("x", init.uniform(&[2, 3, 8], 1.0)).unwrap();
    randomize(&mut store, 104);
    let r = store.grad_check(H, |p| p.tape.sum(&p.tape.tanh(&block.forward(p, p.var(xid))?)?)).unwrap();
    out.push(("residual block", r.max_rel_error));

    let mut store = ParamStore::new();
    let stack = DilatedStack::new(&mut store, &mut init, "stack", &DecoderArch::cnn("s", 2, vec![1, 2, 4], 3, 2), 0.0).unwrap();
    let xid = store.add("x", init.uniform(&[1, 3, 9], 1.0)).unwrap();
    randomize(&mut store, 105);
    let r = store.grad_check(H, |p| p.tape.sum(&p.tape.tanh(&stack.forward(p, p.var(xid), &Mode::Eval)?)?)).unwrap();
    out.push(("dilated stack", r.max_rel_error));
    out
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut init = Init::new(&RngStreams::new(seed));
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        store.set(id, init.uniform(&shape, 0.8)).unwrap();
    }
}

fn loss_checks() -> Vec<(&'static str, f64)> {
    let two = DecoderArch::cnn("two", 3, vec![1, 2], 4, 3);
    let eps = |rows, seed| standard_normal::<f64>(rows, 2, &mut RngStreams::new(seed).stream(&[7]));
    let check = |model: &TextModel, f: &dyn Fn(&textvae::nn::Bound<f64>) -> textvae::Result<Tensor>| {
        model.params.grad_check(H, f).unwrap().max_rel_error
    };
    let mut out = Vec::new();

    for (name, arch) in [("ELBO (CNN)", two.clone()), ("ELBO (LSTM)", DecoderArch::lstm(4))] {
        let model = randomized(tiny_config(ModelKind::Vae, arch, 7, 2, 0), 111, 0.5);
        let b = batch(&random_docs(7, &[1, 3], 0, 112));
        let e = eps(2, 113);
        out.push((name, check(&model, &|p| Ok(elbo_loss(&model, p, &b, &e, 0.7, &Mode::Eval)?.total))));
    }
    let lm = randomized(tiny_config(ModelKind::Lm, two.clone(), 7, 2, 0), 114, 0.5);
    let b = batch(&random_docs(7, &[2, 3], 0, 115));
    out.push(("LM", check(&lm, &|p| Ok(lm_loss(&lm, p, &b, &Mode::Eval)?.total))));

    let semi = randomized(tiny_config(ModelKind::Semi, two, 6, 2, 3), 116, 0.5);
    let lab = batch(&random_docs(6, &[2, 1], 3, 117));
    let labels = lab.labels.clone().unwrap();
    let unl = batch(&random_docs(6, &[2, 3], 0, 118));
    let e = eps(2, 119);
    out.push(("L(x,y)", check(&semi, &|p| p.tape.sum(&labeled_bound(&semi, p, &lab, &labels, &e, 0.8, &Mode::Eval)?))));
    out.push((
        "U(x) relaxed",
        check(&semi, &|p| {
            let mut rng = RngStreams::new(120).stream(&[0]);
            p.tape.sum(&unlabeled_bound(&semi, p, &unl, &e, &mut rng, 0.7, 1.0, &Mode::Eval)?)
        }),
    ));
    out.push(("U(x) exact", check(&semi, &|p| p.tape.sum(&unlabeled_bound_exact(&semi, p, &unl, &e, 1.0, &Mode::Eval)?))));
    out.push((
        "J",
        check(&semi, &|p| {
            let mut rng = RngStreams::new(121).stream(&[0]);
            Ok(semi_objective(&semi, p, Some(&lab), Some(&unl), SemiStep::new(0.5, 0.6, 0.8), &mut rng, &Mode::Eval)?.loss)
        }),
    ));
    out.push((
        "cluster loss",
        check(&semi, &|p| {
            let mut rng = RngStreams::new(122).stream(&[0]);
            Ok(cluster_loss(&semi, p, &unl, 1.5, SemiStep::new(0.0, 1.0, 0.5), &mut rng, &Mode::Eval)?.total)
        }),
    ));
    out
}

fn criterion_1() -> Verdict {
    let all: Vec<_> = layer_checks().into_iter().chain(loss_checks()).collect();
    let (worst_name, worst) = all.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let pass = all.iter().all(|(_, e)| *e <= 1e-4);
    verdict(pass, format!("{} checks, max rel err {worst:.2e} ({worst_name})", all.len()))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, want) in [("scnn", 15), ("mcnn", 63), ("lcnn", 125), ("vlcnn", 187)] {
        let r = probe_arch(&DecoderArch::named(name, 8, 8).unwrap(), 1).unwrap();
        pass &= r.analytic == want && r.ok();
        detail.push(format!("{name}={}/{}", r.analytic, r.empirical));
    }
    let mut rng = RngStreams::new(202).stream(&[0]);
    let mut random_ok = 0;
    for i in 0..20 {
        let k = rng.random_range(1..=4);
        let layers = rng.random_range(1..=5);
        let dilations: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=8)).collect();
        let r = probe_arch(&DecoderArch::cnn(&format!("r{i}"), k, dilations, 4, 4), 300 + i).unwrap();
        random_ok += r.ok() as usize;
    }
    pass &= random_ok == 20;
    verdict(pass, format!("named {}; random {random_ok}/20 match", detail.join(" ")))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let mut archs = vec![DecoderArch::lstm(4)];
    archs.extend(["scnn", "mcnn", "lcnn", "vlcnn"].map(cnn));
    archs.push(DecoderArch::cnn("gapped", 3, vec![5], 4, 3));
    archs.push(DecoderArch::cnn("k1", 1, vec![1, 2], 4, 3));
    let mut violations = Vec::new();
    for arch in &archs {
        let steps = match arch.kind {
            DecoderKind::Lstm => 12,
            DecoderKind::Cnn => effective_receptive_field(arch.filter_size, &arch.dilations).unwrap() + 3,
        };
        for kind in [ModelKind::Vae, ModelKind::Lm] {
            let model = randomized(tiny_config(kind, arch.clone(), 6, 2, 0), 31, 0.5);
            let mut init = Init::new(&RngStreams::new(32));
            let emb: Tensor = init.uniform(&[1, steps, 3], 1.0);
            let z: Tensor = init.uniform(&[1, 2], 1.0);
            for t in 0..steps {
                let tape = Tape::new();
                let p = model.params.bind_frozen(&tape);
                let e = tape.leaf(&emb);
                let cond = model.conditioning(&p, (kind == ModelKind::Vae).then_some(&z), None).unwrap();
                let logits = model.decode_embedded(&p, &e, &cond, &Mode::Eval).unwrap();
                let row = tape.sum(&tape.slice(&logits, 0, t, 1).unwrap()).unwrap();
                let g = tape.backward(&row).unwrap().wrt_or_zero(&e);
                if g.data()[(t + 1) * 3..].iter().any(|&v| v != 0.0) {
                    violations.push(format!("{}@{t}", arch.name));
                }
            }
        }
    }
    verdict(violations.is_empty(), format!("{} decoders x 2 kinds, all steps; violations {violations:?}", archs.len()))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let mut rng = RngStreams::new(404).stream(&[0]);
    let n = 100_000;
    let mut inside = 0;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..=8);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.0)).collect();
        let post = GaussianPosterior { mu: Tensor::from_f64(vec![1, d], &mu).unwrap(), logvar: Tensor::from_f64(vec![1, d], &logvar).unwrap() };
        let analytic = kl_to_standard_normal(&Tape::new(), &post).unwrap().item();
        // log q(z) − log p(z) at z = μ + σe.
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|k| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        let z = mu[k] + (0.5 * logvar[k]).exp() * e;
                        -0.5 * logvar[k] - 0.5 * e * e + 0.5 * z * z
                    })
                    .sum()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let z = (analytic - mean).abs() / (var / n as f64).sqrt();
        worst = worst.max(z);
        inside += (z <= 3.0) as usize;
    }
    verdict(inside == 50, format!("{inside}/50 within 3 SE, worst {worst:.2} SE"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let mut rng = RngStreams::new(505).stream(&[0]);
    let mut ok = 0;
    let mut worst_gap = f64::INFINITY;
    for case in 0..100u64 {
        let arch = match rng.random_range(0..3) {
            0 => DecoderArch::lstm(3),
            1 => DecoderArch::cnn("c", 3, vec![1, 2], 3, 2),
            _ => DecoderArch::cnn("k2", 2, vec![1], 4, 3),
        };
        let z_dim = rng.random_range(1..=2);
        let scale = rng.random_range(0.5..2.0);
        let body = rng.random_range(0..=3);
        let model = randomized(tiny_config(ModelKind::Vae, arch, 5, z_dim, 0), 600 + case, scale);
        let doc = random_docs(5, &[body], 0, 700 + case).remove(0);
        let step = if z_dim == 1 { 0.0625 } else { 0.125 };
        let (log_px, elbo) = quadrature_bound(&model, &doc, 7.0, step);
        worst_gap = worst_gap.min(log_px - elbo);
        ok += (elbo <= log_px) as usize;
    }
    verdict(ok >= 95, format!("{ok}/100 with bound below the grid marginal, min gap {worst_gap:.3e} nats"))
}

// ---------------------------------------------------------------- 6 and 7

struct CollapseRun {
    kl: [f64; 3],
    vae_bound: f64,
    lm_nll: f64,
}

fn collapse_run(seed: u64) -> CollapseRun {
    let corpus = generate_synthetic(&SyntheticSpec::latent_class(4, 50, 0.5, 0.3, 30, 50, 2400, seed)).unwrap();
    let lines = corpus.lines();
    let vocab = Vocabulary::build(lines.iter().map(|l| line_text(l, true)), 100).unwrap();
    let docs = encode_lines(lines.iter().map(String::as_str), &vocab, Some(4)).unwrap();
    let (tr, valid) = docs.split_at(2000);
    let data = TrainData { train: tr, valid, labeled: &[] };
    let epochs = 15;
    let config = |kind, decoder| ModelConfig {
        kind,
        vocab_size: vocab.len(),
        embed_dim: 16,
        encoder_hidden: 32,
        z_dim: 8,
        decoder,
        init_seed: seed,
        ..ModelConfig::default()
    };
    // Same annealing for every decoder: the weight reaches 1 halfway through training.
    let cfg = |objective| TrainConfig {
        objective,
        epochs,
        seed,
        schedule: Schedule { kl_anneal_iters: epochs as u64 * 63 / 2, ..Schedule::default() },
        ..TrainConfig::default()
    };
    let fit = |kind, decoder, objective| train(TextModel::new(config(kind, decoder)).unwrap(), data, &cfg(objective)).unwrap();
    let final_kl = |o: &TrainOutcome<f64>| o.manifest.epochs.last().unwrap().kl;

    let scnn = fit(ModelKind::Vae, DecoderArch::named("scnn", 32, 16).unwrap(), Objective::Vae);
    let lcnn = fit(ModelKind::Vae, DecoderArch::named("lcnn", 32, 16).unwrap(), Objective::Vae);
    let lstm = fit(ModelKind::Vae, DecoderArch::lstm(32), Objective::Vae);
    let lm = fit(ModelKind::Lm, DecoderArch::named("scnn", 32, 16).unwrap(), Objective::Lm);
    // A sampled z gives an unbiased estimate of the bound; z = μ would not be a bound.
    let draws = 10;
    let vae_bound = (0..draws).map(|s| eval_nll_ppl(&scnn.best, valid, 64, EpsMode::Sample(900 + s)).unwrap().nll).sum::<f64>() / draws as f64;
    let lm_nll = eval_nll_ppl(&lm.best, valid, 64, EpsMode::Mean).unwrap().nll;
    CollapseRun { kl: [final_kl(&scnn), final_kl(&lcnn), final_kl(&lstm)], vae_bound, lm_nll }
}

fn criteria_6_7() -> (Verdict, Verdict) {
    let runs: Vec<CollapseRun> = (1..=3).map(collapse_run).collect();
    let kl_wins = runs.iter().filter(|r| r.kl[0] > r.kl[1] && r.kl[0] > r.kl[2]).count();
    let nll_wins = runs.iter().filter(|r| r.vae_bound < r.lm_nll).count();
    let kls: Vec<String> = runs.iter().map(|r| format!("[{:.3} {:.3} {:.3}]", r.kl[0], r.kl[1], r.kl[2])).collect();
    let nlls: Vec<String> = runs.iter().map(|r| format!("{:.2}<{:.2}", r.vae_bound, r.lm_nll)).collect();
    (
        verdict(kl_wins >= 2, format!("{kl_wins}/3 seeds; validation KL [SCNN LCNN LSTM] {}", kls.join(" "))),
        verdict(nll_wins >= 2, format!("{nll_wins}/3 seeds; SCNN-VAE bound vs SCNN-LM NLL {}", nlls.join(" "))),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let pi = [0.5, 0.3, 0.15, 0.05];
    let n = 10_000;
    let logits: Vec<f64> = pi.iter().cycle().take(4 * n).map(|p: &f64| p.ln()).collect();
    let logits = Tensor::from_f64(vec![n, 4], &logits).unwrap();
    let mut rng = RngStreams::new(808).stream(&[0]);
    let y = gumbel_softmax(&Tape::new(), &logits, 0.01, &mut rng).unwrap();
    let mut counts = [0usize; 4];
    for row in y.data().chunks(4) {
        counts[(0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap()] += 1;
    }
    let dev = counts.iter().zip(pi).map(|(c, p)| (*c as f64 / n as f64 - p).abs()).fold(0.0, f64::max);

    let taus = [1.0, 0.3, 0.1, 0.03];
    let gaps_for = |seed: u64| -> Vec<f64> {
        let model = randomized(tiny_config(ModelKind::Semi, cnn("scnn"), 8, 2, 3), seed, 1.0);
        let doc = random_docs(8, &[5], 0, seed).remove(0);
        taus.iter().map(|&tau| relaxation_gap(&model, &doc, tau, 20_000, 7)).collect()
    };
    let monotone = |g: &[f64]| g.windows(2).all(|w| w[1] < w[0]);
    let gaps = gaps_for(6);
    let others = (1..=10).filter(|&s| monotone(&gaps_for(s))).count();
    let pass = dev <= 0.02 && monotone(&gaps);
    verdict(
        pass,
        format!(
            "max freq deviation {dev:.4}; gaps over tau {taus:?}: {:?}; monotone for {others}/10 other random models",
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn accuracy(model: &TextModel, docs: &[Document]) -> f64 {
    let q = class_probabilities(model, docs, 64).unwrap();
    let hits = q
        .iter()
        .zip(docs)
        .filter(|(row, d)| Some((0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })) == d.label)
        .count();
    hits as f64 / docs.len() as f64
}

fn semi_vs_supervised(seed: u64) -> (f64, f64) {
    let classes = 4;
    let corpus = generate_synthetic(&SyntheticSpec::latent_class(classes, 50, 1.0, 0.3, 30, 50, 2820, seed)).unwrap();
    let lines = corpus.lines();
    let vocab = Vocabulary::build(lines.iter().map(|l| line_text(l, true)), 100).unwrap();
    let docs = encode_lines(lines.iter().map(String::as_str), &vocab, Some(classes)).unwrap();
    let (labeled, rest) = docs.split_at(20);
    let (unl, rest) = rest.split_at(2000);
    let (valid, test) = rest.split_at(400);
    let unlabeled: Vec<Document> = unl.iter().map(|d| Document { label: None, ..d.clone() }).collect();
    let config = ModelConfig {
        kind: ModelKind::Semi,
        classes,
        vocab_size: vocab.len(),
        embed_dim: 16,
        encoder_hidden: 32,
        classifier_hidden: 32,
        z_dim: 8,
        decoder: DecoderArch::named("scnn", 32, 16).unwrap(),
        encoder_dropout: 0.0,
        init_seed: seed,
        ..ModelConfig::default()
    };

    let lm_cfg = TrainConfig { objective: Objective::Lm, epochs: 10, seed, ..TrainConfig::default() };
    let lm_data = TrainData { train: &unlabeled, valid, labeled: &[] };
    let (init, _) = pretrain_lm_then_init_encoder::<f64>(config.clone(), encoder_lm_config(&config), lm_data, &lm_cfg).unwrap();
    let epochs = 12;
    let semi_cfg = TrainConfig {
        objective: Objective::Semi { alpha: 1.0, gumbel_samples: 1 },
        epochs,
        seed,
        schedule: Schedule { kl_anneal_iters: epochs as u64 * 63 / 2, ..Schedule::default() },
        ..TrainConfig::default()
    };
    let semi = train(init, TrainData { train: &unlabeled, valid, labeled }, &semi_cfg).unwrap();

    // The baseline sees only the 20 labels; small batches and a constant
    // learning rate give it as many updates as it can use.
    let epochs = 400;
    let sup_cfg = TrainConfig {
        objective: Objective::Classify,
        epochs,
        batch_size: 20,
        seed,
        schedule: Schedule { lr_half_start_epoch: epochs, ..Schedule::default() },
        ..TrainConfig::default()
    };
    let sup = train(TextModel::new(config).unwrap(), TrainData { train: labeled, valid, labeled }, &sup_cfg).unwrap();
    (accuracy(&semi.best, test), accuracy(&sup.best, test))
}

fn criterion_9() -> Verdict {
    let runs: Vec<(f64, f64)> = (1..=3).map(semi_vs_supervised).collect();
    let mut diffs: Vec<f64> = runs.iter().map(|(s, b)| s - b).collect();
    diffs.sort_by(f64::total_cmp);
    let shown: Vec<String> = runs.iter().map(|(s, b)| format!("{s:.3} vs {b:.3}")).collect();
    verdict(diffs[1] >= 0.10, format!("median gain {:.3}; test accuracy semi vs supervised {}", diffs[1], shown.join(", ")))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Verdict {
    let corpus = generate_synthetic(&SyntheticSpec::disjoint(3, 30, 10, 20, 1300, 7)).unwrap();
    let lines = corpus.lines();
    let vocab = Vocabulary::build(lines.iter().map(|l| line_text(l, true)), 100).unwrap();
    let docs = encode_lines(lines.iter().map(String::as_str), &vocab, Some(3)).unwrap();
    let (tr, rest) = docs.split_at(900);
    let (valid, test) = rest.split_at(200);
    let strip = |d: &[Document]| d.iter().map(|d| Document { label: None, ..d.clone() }).collect::<Vec<_>>();
    let (train_docs, unl_valid) = (strip(tr), strip(valid));
    let data = TrainData { train: &train_docs, valid: &unl_valid, labeled: &[] };
    let labels = |d: &[Document]| d.iter().map(|d| d.label.unwrap()).collect::<Vec<_>>();
    let gamma = 0.5;
    let mut accs = Vec::new();
    for seed in 1..=5 {
        let config = ModelConfig {
            kind: ModelKind::Semi,
            classes: 3,
            vocab_size: vocab.len(),
            embed_dim: 16,
            encoder_hidden: 32,
            classifier_hidden: 32,
            z_dim: 8,
            decoder: DecoderArch::named("scnn", 32, 16).unwrap(),
            init_seed: seed,
            ..ModelConfig::default()
        };
        let lm_cfg = TrainConfig { objective: Objective::Lm, epochs: 5, seed, ..TrainConfig::default() };
        let (init, _) = pretrain_lm_then_init_encoder::<f64>(config.clone(), encoder_lm_config(&config), data, &lm_cfg).unwrap();
        let epochs = 10;
        let cfg = TrainConfig {
            objective: Objective::Cluster { gamma },
            epochs,
            seed,
            schedule: Schedule { kl_anneal_iters: epochs as u64 * 29 / 2, ..Schedule::default() },
            ..TrainConfig::default()
        };
        let out = train(init, data, &cfg).unwrap();
        let vp = class_probabilities(&out.last, valid, 64).unwrap();
        let tp = class_probabilities(&out.last, test, 64).unwrap();
        accs.push(cluster_evaluate(&vp, &labels(valid), &tp, &labels(test)).unwrap().accuracy);
    }
    let best = accs.iter().cloned().fold(0.0, f64::max);
    verdict(best >= 0.90, format!("best {best:.3} of restarts {:?} (gamma {gamma})", accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>()))
}

// ---------------------------------------------------------------- 11

fn short_run(seed: u64, docs: &[Document]) -> TrainOutcome<f64> {
    let mut config = tiny_config(ModelKind::Vae, cnn("scnn"), RESERVED + 10, 2, 0);
    config.cnn_dropout = 0.2;
    config.drop_word = 0.2;
    let cfg = TrainConfig { epochs: 3, batch_size: 16, seed, ..TrainConfig::default() };
    train(TextModel::new(config).unwrap(), TrainData { train: &docs[..60], valid: &docs[60..], labeled: &[] }, &cfg).unwrap()
}

fn criterion_11() -> Verdict {
    let docs = synthetic_docs(&SyntheticSpec::disjoint(2, 10, 4, 10, 80, 3));
    let (a, b, c) = (short_run(4, &docs), short_run(4, &docs), short_run(5, &docs));
    let identical = a.manifest.same_run(&b.manifest) && checkpoint::to_bytes(&a.last) == checkpoint::to_bytes(&b.last);
    let seed_matters = checkpoint::to_bytes(&a.last) != checkpoint::to_bytes(&c.last);

    let path = std::env::temp_dir().join(format!("textvae-acceptance-{}.bin", std::process::id()));
    checkpoint::save(&a.best, &path).unwrap();
    let back: TextModel = checkpoint::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    let valid = &docs[60..];
    let bits = |m: &TextModel| {
        let r = eval_nll_ppl(m, valid, 16, EpsMode::Sample(3)).unwrap();
        (r.nll.to_bits(), r.kl.to_bits())
    };
    let reloaded = bits(&a.best) == bits(&back) && checkpoint::to_bytes(&back) == checkpoint::to_bytes(&a.best);
    verdict(
        identical && seed_matters && reloaded,
        format!("same seed identical: {identical}; other seed differs: {seed_matters}; reload bit-exact: {reloaded}"),
    )
}

// ----------------------------------------------------------------

/// Writes past the test harness's output capture so the verdicts show up in
/// a plain `cargo test` log, not only with `--nocapture`.
fn say(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

type Criterion = (usize, &'static str, fn() -> Verdict);

fn record(results: &mut Vec<(usize, bool)>, id: usize, name: &str, v: Verdict, secs: f64) {
    say(&format!("criterion {id:>2} {}: {name}: {} ({secs:.0}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail));
    results.push((id, v.pass));
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let quick: [Criterion; 5] = [
        (1, "gradient correctness", criterion_1),
        (2, "receptive field", criterion_2),
        (3, "causality", criterion_3),
        (4, "KL closed form", criterion_4),
        (5, "ELBO validity", criterion_5),
    ];
    for (id, name, f) in quick {
        let (v, secs) = timed(f);
        record(&mut results, id, name, v, secs);
    }
    // 6 and 7 share their training runs; the time shown is for both.
    let ((six, seven), secs) = timed(criteria_6_7);
    record(&mut results, 6, "collapse reproduction", six, secs);
    record(&mut results, 7, "VAE beats LM", seven, secs);
    let slow: [Criterion; 4] = [
        (8, "Gumbel-softmax fidelity", criterion_8),
        (9, "semi-supervised gain", criterion_9),
        (10, "clustering", criterion_10),
        (11, "determinism and persistence", criterion_11),
    ];
    for (id, name, f) in slow {
        let (v, secs) = timed(f);
        record(&mut results, id, name, v, secs);
    }

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    say(&format!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len()));
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
