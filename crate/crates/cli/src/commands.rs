use std::path::{Path, PathBuf};

use rand::Rng as _;
use textvae::checkpoint;
use textvae::data::{encode_lines, generate_synthetic, line_text, read_corpus_lines, Document, SyntheticSpec, Vocabulary};
use textvae::model::{eval_nll_ppl, standard_normal, EpsMode, ModelKind, TextModel};
use textvae::nn::{DecoderArch, DecoderKind, NAMED_CNN};
use textvae::semi::{class_probabilities, cluster_evaluate};
use textvae::tools::{beam_search, export_latent as latents, probe_arch as probe, write_latent_csv, BeamOptions};
use textvae::train::{encoder_lm_config, init_encoder_from_lm, train, Objective, RunManifest, TrainData, TrainOutcome};
use textvae::{Error, Result, RngStreams};

use crate::settings::Settings;
use crate::{ModelFiles, TrainArgs};

const GENERATE_KEY: u64 = 0x6E;

pub fn synth(spec: &Path, out: &Path) -> Result<u8> {
    let spec = SyntheticSpec::parse(&std::fs::read_to_string(spec)?)?;
    let corpus = generate_synthetic(&spec)?;
    std::fs::write(out.join("corpus.txt"), corpus.lines().join("\n") + "\n")?;
    for (c, h) in corpus.entropy_rates.iter().enumerate() {
        println!("class {c}: entropy rate {h:.6} nats/token");
    }
    println!("wrote {} documents to {}", corpus.docs.len(), out.join("corpus.txt").display());
    Ok(0)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    read_corpus_lines(path)
}

fn encode(lines: &[String], vocab: &Vocabulary, classes: Option<usize>) -> Result<Vec<Document>> {
    encode_lines(lines.iter().map(String::as_str), vocab, classes)
}

fn build_vocab<'a>(sets: impl IntoIterator<Item = (&'a [String], bool)>, cap: usize) -> Result<Vocabulary> {
    let texts: Vec<&str> = sets.into_iter().flat_map(|(lines, labeled)| lines.iter().map(move |l| line_text(l, labeled))).collect();
    Vocabulary::build(texts, cap)
}

/// Largest label + 1 over labeled lines.
fn infer_classes(sets: &[&[String]]) -> Result<usize> {
    let mut max = None;
    for lines in sets {
        for (i, l) in lines.iter().enumerate() {
            let (label, _) = textvae::data::split_label(l);
            let label = label.ok_or_else(|| Error::Parse { line: i + 1, msg: "missing label".into() })?;
            let y: usize = label.trim().parse().map_err(|_| Error::Parse { line: i + 1, msg: format!("malformed label {label:?}") })?;
            max = Some(max.map_or(y, |m: usize| m.max(y)));
        }
    }
    max.map(|m| m + 1).ok_or_else(|| Error::Input("no labeled documents".into()))
}

fn save_run(out: &Path, outcome: &TrainOutcome<f64>, vocab: &Vocabulary) -> Result<u8> {
    checkpoint::save(&outcome.best, &out.join("checkpoint.bin"))?;
    vocab.save(&out.join("vocab.txt"))?;
    outcome.manifest.save(&out.join("manifest.jsonl"))?;
    report_manifest(&outcome.manifest);
    Ok(if outcome.manifest.diverged.is_some() { 3 } else { 0 })
}

fn report_manifest(m: &RunManifest) {
    for e in &m.epochs {
        let acc = e.accuracy.map_or(String::new(), |a| format!(" acc {a:.4}"));
        println!("epoch {:>3} lr {:.2e} kl_w {:.3} train {:.4} | valid {:.4} ({:.4}){acc}", e.epoch, e.lr, e.kl_weight, e.train_total, e.total, e.kl);
    }
    if let Some(b) = m.best_epoch {
        println!("best epoch {b}");
    }
    if let Some(d) = &m.diverged {
        eprintln!("training stopped: {d}");
    }
}

/// Builds a fresh model, pretraining an LSTM LM for the encoder when configured.
fn initial_model(s: &Settings, data: TrainData<'_>, seed: u64, out: &Path) -> Result<TextModel<f64>> {
    let mut model = TextModel::new(s.model.clone())?;
    if s.init_lm_epochs > 0 {
        let lm = TextModel::new(encoder_lm_config(&s.model))?;
        let cfg = textvae::train::TrainConfig { objective: Objective::Lm, epochs: s.init_lm_epochs, seed, ..s.train.clone() };
        let lm_data = TrainData { labeled: &[], ..data };
        let outcome = train(lm, lm_data, &cfg)?;
        outcome.manifest.save(&out.join("lm_manifest.jsonl"))?;
        init_encoder_from_lm(&mut model, &outcome.best)?;
        println!("encoder initialized from a {}-epoch language model", s.init_lm_epochs);
    }
    Ok(model)
}

pub fn train_plain(mut s: Settings, kind: ModelKind, a: &TrainArgs, out: &Path, seed: u64) -> Result<u8> {
    let (tr, va) = (read_lines(&a.train)?, read_lines(&a.valid)?);
    let vocab = build_vocab([(tr.as_slice(), a.labels)], s.vocab_cap)?;
    let classes = a.labels.then_some(usize::MAX);
    let (train_docs, valid_docs) = (encode(&tr, &vocab, classes)?, encode(&va, &vocab, classes)?);
    s.model.kind = kind;
    s.model.vocab_size = vocab.len();
    if kind == ModelKind::Lm && s.init_lm_epochs > 0 {
        return Err(Error::Config("encoder initialization applies to VAEs only".into()));
    }
    let data = TrainData { train: &train_docs, valid: &valid_docs, labeled: &[] };
    let model = initial_model(&s, data, seed, out)?;
    let outcome = train(model, data, &s.train_config(kind, false, seed))?;
    save_run(out, &outcome, &vocab)
}

pub fn train_semi(mut s: Settings, train_path: &Path, labeled: &Path, valid: &Path, out: &Path, seed: u64) -> Result<u8> {
    let (tr, lab, va) = (read_lines(train_path)?, read_lines(labeled)?, read_lines(valid)?);
    if s.model.classes == 0 {
        s.model.classes = infer_classes(&[&lab, &va])?;
    }
    let unlabeled_has_labels = tr.iter().all(|l| textvae::data::split_label(l).0.is_some());
    let vocab = build_vocab([(tr.as_slice(), unlabeled_has_labels), (lab.as_slice(), true)], s.vocab_cap)?;
    let unl: Vec<Document> = encode(&tr, &vocab, unlabeled_has_labels.then_some(usize::MAX))?
        .into_iter()
        .map(|d| Document { label: None, ..d })
        .collect();
    let c = Some(s.model.classes);
    let (lab_docs, valid_docs) = (encode(&lab, &vocab, c)?, encode(&va, &vocab, c)?);
    s.model.kind = ModelKind::Semi;
    s.model.vocab_size = vocab.len();
    let data = TrainData { train: &unl, valid: &valid_docs, labeled: &lab_docs };
    let model = initial_model(&s, data, seed, out)?;
    let outcome = train(model, data, &s.train_config(ModelKind::Semi, false, seed))?;
    save_run(out, &outcome, &vocab)
}

pub fn cluster(mut s: Settings, train_path: &Path, valid: &Path, test: &Path, out: &Path, seed: u64) -> Result<u8> {
    let (tr, va, te) = (read_lines(train_path)?, read_lines(valid)?, read_lines(test)?);
    if s.model.classes == 0 {
        s.model.classes = infer_classes(&[&va, &te])?;
    }
    let tr_labeled = tr.iter().all(|l| textvae::data::split_label(l).0.is_some());
    let vocab = build_vocab([(tr.as_slice(), tr_labeled)], s.vocab_cap)?;
    let strip = |docs: Vec<Document>| docs.into_iter().map(|d| Document { label: None, ..d }).collect::<Vec<_>>();
    let train_docs = strip(encode(&tr, &vocab, tr_labeled.then_some(usize::MAX))?);
    // Labels of the validation and test sets are never shown to training.
    let any = Some(usize::MAX);
    let (valid_docs, test_docs) = (encode(&va, &vocab, any)?, encode(&te, &vocab, any)?);
    let valid_unlabeled = strip(valid_docs.clone());
    let labels = |d: &[Document]| d.iter().map(|x| x.label.expect("labeled")).collect::<Vec<_>>();
    s.model.kind = ModelKind::Semi;
    s.model.vocab_size = vocab.len();
    let mut best: Option<(f64, TextModel<f64>, RunManifest)> = None;
    for r in 0..s.restarts.max(1) {
        let run_seed = seed.wrapping_add(r as u64);
        let mut rs = s.clone();
        rs.model.init_seed = run_seed;
        let data = TrainData { train: &train_docs, valid: &valid_unlabeled, labeled: &[] };
        let model = initial_model(&rs, data, run_seed, out)?;
        let outcome = train(model, data, &rs.train_config(ModelKind::Semi, true, run_seed))?;
        if let Some(d) = &outcome.manifest.diverged {
            eprintln!("restart {r}: {d}");
            continue;
        }
        let bs = rs.train.eval_batch_size;
        let vp = class_probabilities(&outcome.best, &valid_docs, bs)?;
        let tp = class_probabilities(&outcome.best, &test_docs, bs)?;
        let rep = cluster_evaluate(&vp, &labels(&valid_docs), &tp, &labels(&test_docs))?;
        let empty = if rep.empty_clusters.is_empty() { String::new() } else { format!(" empty clusters {:?}", rep.empty_clusters) };
        println!("restart {r} (seed {run_seed}): accuracy {:.4} assignment {:?}{empty}", rep.accuracy, rep.assignment);
        if best.as_ref().is_none_or(|b| rep.accuracy > b.0) {
            best = Some((rep.accuracy, outcome.best, outcome.manifest));
        }
    }
    let (acc, model, manifest) = best.ok_or_else(|| Error::Numeric("every restart diverged".into()))?;
    checkpoint::save(&model, &out.join("checkpoint.bin"))?;
    vocab.save(&out.join("vocab.txt"))?;
    manifest.save(&out.join("manifest.jsonl"))?;
    println!("best accuracy {acc:.4}");
    Ok(0)
}

fn load(files: &ModelFiles) -> Result<(TextModel<f64>, Vocabulary)> {
    let model = checkpoint::load(&files.checkpoint)?;
    let vocab_path = files.vocab.clone().unwrap_or_else(|| {
        files.checkpoint.parent().map_or_else(|| PathBuf::from("vocab.txt"), |p| p.join("vocab.txt"))
    });
    let vocab = Vocabulary::load(&vocab_path)?;
    if vocab.len() != model.config.vocab_size {
        return Err(Error::Input(format!(
            "vocabulary {} has {} entries, checkpoint expects {}",
            vocab_path.display(),
            vocab.len(),
            model.config.vocab_size
        )));
    }
    Ok((model, vocab))
}

fn load_corpus(path: &Path, vocab: &Vocabulary, labels: bool) -> Result<Vec<Document>> {
    encode(&read_lines(path)?, vocab, labels.then_some(usize::MAX))
}

pub fn eval(files: &ModelFiles, corpus: &Path, labels: bool, sample: bool, seed: u64) -> Result<u8> {
    let (model, vocab) = load(files)?;
    let docs = load_corpus(corpus, &vocab, labels)?;
    let mode = if sample { EpsMode::Sample(seed) } else { EpsMode::Mean };
    let r = eval_nll_ppl(&model, &docs, 64, mode)?;
    let decoder = match model.config.decoder.kind {
        DecoderKind::Lstm => "lstm".to_string(),
        DecoderKind::Cnn => model.config.decoder.name.clone(),
    };
    println!("model {} decoder {} z {}", model.kind().as_str(), decoder, if sample { "sampled" } else { "mean" });
    println!("{:<12} {:>24} {:>10}", "docs", "NLL (KL)", "PPL");
    println!("{:<12} {:>24} {:>10.2}", r.docs, format!("{:.2} ({:.2})", r.nll, r.kl), r.ppl);
    println!("nll = {:?}", r.nll);
    println!("reconstruction = {:?}", r.reconstruction);
    println!("kl = {:?}", r.kl);
    println!("ppl = {:?}", r.ppl);
    println!("tokens = {}", r.tokens);
    Ok(0)
}

pub fn generate(files: &ModelFiles, label: Option<usize>, beam: usize, z: Option<&str>, max_len: usize, seed: u64) -> Result<u8> {
    let (model, vocab) = load(files)?;
    let kind = model.kind();
    if label.is_some() && kind != ModelKind::Semi {
        return Err(Error::Config(format!("--label needs a semi-supervised checkpoint, got {}", kind.as_str())));
    }
    if z.is_some() && kind == ModelKind::Lm {
        return Err(Error::Config("--z needs a latent-variable checkpoint".into()));
    }
    if let Some(y) = label {
        if y >= model.config.classes {
            return Err(Error::Config(format!("label {y} is not below {} classes", model.config.classes)));
        }
    }
    let zv: Option<Vec<f64>> = match (kind, z) {
        (ModelKind::Lm, _) => None,
        (_, Some(text)) => Some(
            text.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad --z entry {v:?}"))))
                .collect::<Result<_>>()?,
        ),
        (_, None) => {
            let mut rng = RngStreams::new(seed).stream(&[GENERATE_KEY]);
            Some(standard_normal::<f64>(1, model.config.z_dim, &mut rng).to_vec())
        }
    };
    if let Some(v) = &zv {
        if v.len() != model.config.z_dim {
            return Err(Error::Config(format!("--z has {} entries, model expects {}", v.len(), model.config.z_dim)));
        }
    }
    let opts = BeamOptions { width: beam, max_len };
    let labels: Vec<Option<usize>> = match (kind, label) {
        (ModelKind::Semi, None) => (0..model.config.classes).map(Some).collect(),
        _ => vec![label],
    };
    for y in labels {
        let ids = beam_search(&model, zv.as_deref(), y, opts)?;
        let text = vocab.decode(&ids);
        match y {
            Some(y) if label.is_none() => println!("{y}\t{text}"),
            _ => println!("{text}"),
        }
    }
    Ok(0)
}

pub fn export_latent(files: &ModelFiles, corpus: &Path, labels: bool, out: &Path) -> Result<u8> {
    let (model, vocab) = load(files)?;
    let docs = load_corpus(corpus, &vocab, labels)?;
    let rows = latents(&model, &docs, 64)?;
    let path = out.join("latent.csv");
    write_latent_csv(&rows, std::fs::File::create(&path)?)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(0)
}

pub fn probe_arch(s: &Settings, random: usize, seed: u64) -> Result<u8> {
    let mut archs: Vec<DecoderArch> = NAMED_CNN.iter().map(|n| DecoderArch::named(n, 8, 8)).collect::<Result<_>>()?;
    let own = &s.model.decoder;
    if own.kind == DecoderKind::Cnn && !archs.iter().any(|a| a.dilations == own.dilations && a.filter_size == own.filter_size) {
        archs.push(own.clone());
    }
    let mut rng = RngStreams::new(seed).stream(&[0x9B]);
    for i in 0..random {
        let k = rng.random_range(1..=4);
        let n = rng.random_range(1..=5);
        let dil = (0..n).map(|_| rng.random_range(1..=8)).collect();
        archs.push(DecoderArch::cnn(&format!("random{i}"), k, dil, 8, 8));
    }
    let mut failed = false;
    for arch in &archs {
        let rep = probe(arch, seed)?;
        let status = if rep.ok() { "ok" } else { "FAIL" };
        println!(
            "{:<10} k={} dilations={:?} analytic={} empirical={}{} {status}",
            rep.name,
            rep.filter_size,
            rep.dilations,
            rep.analytic,
            rep.empirical,
            if rep.contiguous { "" } else { " (window has gaps)" }
        );
        if !rep.ok() {
            failed = true;
            for (t, s) in rep.causality_violations.iter().take(10) {
                println!("  causality violation: output {t} depends on input {s}");
            }
            for (t, s) in rep.support_mismatches.iter().take(10) {
                println!("  support mismatch at output {t}, input {s}");
            }
        }
    }
    Ok(if failed { 3 } else { 0 })
}
