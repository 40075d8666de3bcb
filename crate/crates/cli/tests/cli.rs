use std::path::Path;
use std::process::{Command, Output};

use textvae::data::SyntheticSpec;

const SMALL: &str = "\
[model]
embed_dim = 8
encoder_hidden = 8
z_dim = 3
classifier_hidden = 8
decoder.ext_channels = 8
decoder.int_channels = 4

[train]
epochs = 2
batch_size = 16
";

fn textvae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textvae")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Two-class disjoint corpus split into train/valid/test/labeled files.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::disjoint(2, 12, 4, 9, 160, 11);
    std::fs::write(dir.path().join("spec.txt"), spec.to_text()).unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let o = textvae(dir.path(), &["synth", "--spec", "spec.txt", "--out", "data"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("data/corpus.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 160);
    let write = |name: &str, part: &[&str]| std::fs::write(dir.path().join(name), part.join("\n") + "\n").unwrap();
    write("train.txt", &lines[..100]);
    write("valid.txt", &lines[100..130]);
    write("test.txt", &lines[130..]);
    write("labeled.txt", &lines[..8]);
    dir
}

fn train(dir: &Path, cmd: &str, out: &str) {
    let o = textvae(dir, &[cmd, "--train", "train.txt", "--valid", "valid.txt", "--labels", "--config", "small.toml", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "vocab.txt", "manifest.jsonl"] {
        assert!(dir.join(out).join(f).exists(), "{out}/{f} missing");
    }
}

fn field(out: &str, name: &str) -> f64 {
    let prefix = format!("{name} = ");
    out.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap_or_else(|| panic!("no {name} in {out}")).parse().unwrap()
}

#[test]
fn exit_codes() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(&textvae(d, &["--help"])), 0);
    assert_eq!(code(&textvae(d, &["no-such-command"])), 1);
    assert_eq!(code(&textvae(d, &["probe-arch", "--override", "model.nope=1"])), 1);
    assert_eq!(code(&textvae(d, &["probe-arch", "--override", "missing_equals"])), 1);
    assert_eq!(code(&textvae(d, &["eval", "--checkpoint", "absent.bin", "--corpus", "valid.txt"])), 2);
    std::fs::write(d.join("bad.txt"), "x\tw1 w2\n").unwrap();
    let o = textvae(d, &["train-vae", "--train", "bad.txt", "--valid", "bad.txt", "--labels", "--config", "small.toml"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn eval_reports_bound_decomposition() {
    let dir = workspace();
    let d = dir.path();
    train(d, "train-lm", "lm");
    train(d, "train-vae", "vae");
    let lm = stdout(&textvae(d, &["eval", "--checkpoint", "lm/checkpoint.bin", "--corpus", "test.txt", "--labels"]));
    assert_eq!(field(&lm, "kl"), 0.0);
    assert_eq!(field(&lm, "nll"), field(&lm, "reconstruction"));
    let vae = stdout(&textvae(d, &["eval", "--checkpoint", "vae/checkpoint.bin", "--corpus", "test.txt", "--labels"]));
    let (nll, rec, kl) = (field(&vae, "nll"), field(&vae, "reconstruction"), field(&vae, "kl"));
    assert!(kl > 0.0);
    assert!((nll - (rec + kl)).abs() < 1e-9);
    let tokens = field(&vae, "tokens");
    let docs = 30.0;
    assert!((field(&vae, "ppl") - (nll * docs / tokens).exp()).abs() < 1e-9);
    // A vocabulary that does not match the checkpoint is a data error.
    let o = textvae(d, &["eval", "--checkpoint", "vae/checkpoint.bin", "--vocab", "spec.txt", "--corpus", "test.txt"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn probe_arch_named_and_random() {
    let dir = workspace();
    let o = textvae(dir.path(), &["probe-arch", "--random", "20", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    for (name, r) in [("scnn", 15), ("mcnn", 63), ("lcnn", 125), ("vlcnn", 187)] {
        let line = out.lines().find(|l| l.starts_with(name)).unwrap();
        assert!(line.contains(&format!("analytic={r} empirical={r}")), "{line}");
    }
    assert_eq!(out.lines().filter(|l| l.starts_with("random")).count(), 20);
}

#[test]
fn generation_is_seeded() {
    let dir = workspace();
    let d = dir.path();
    train(d, "train-vae", "vae");
    let run = |extra: &[&str]| {
        let mut args = vec!["generate", "--checkpoint", "vae/checkpoint.bin", "--beam", "3", "--max-len", "20"];
        args.extend_from_slice(extra);
        let o = textvae(d, &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    assert_eq!(run(&["--seed", "5"]), run(&["--seed", "5"]));
    assert_eq!(run(&["--z=0.5,-1,2"]), run(&["--z=0.5,-1,2", "--seed", "9"]));
    let text = run(&["--seed", "1"]);
    assert!(text.trim().split(' ').count() <= 20);
    assert_eq!(code(&textvae(d, &["generate", "--checkpoint", "vae/checkpoint.bin", "--z=1,2"])), 1);
    assert_eq!(code(&textvae(d, &["generate", "--checkpoint", "vae/checkpoint.bin", "--label", "0"])), 1);
}

#[test]
fn export_latent_rows_and_reproducibility() {
    let dir = workspace();
    let d = dir.path();
    train(d, "train-vae", "vae");
    let export = |out: &str| {
        let o = textvae(d, &["export-latent", "--checkpoint", "vae/checkpoint.bin", "--corpus", "test.txt", "--labels", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(d.join(out).join("latent.csv")).unwrap()
    };
    let a = export("e1");
    assert_eq!(a, export("e2"));
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("doc,label,mu_1,mu_2,mu_3"));
    assert_eq!(lines.count(), 30);
}

#[test]
fn semi_and_cluster_commands_run() {
    let dir = workspace();
    let d = dir.path();
    let o = textvae(d, &["train-semi", "--train", "train.txt", "--labeled", "labeled.txt", "--valid", "valid.txt", "--config", "small.toml", "--out", "semi"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("acc "));
    let g = textvae(d, &["generate", "--checkpoint", "semi/checkpoint.bin", "--max-len", "8"]);
    let lines = stdout(&g);
    assert!(lines.lines().next().unwrap().starts_with("0\t"));
    assert_eq!(lines.lines().count(), 2);
    let o = textvae(
        d,
        &["cluster", "--train", "train.txt", "--valid", "valid.txt", "--test", "test.txt", "--config", "small.toml", "--override", "train.restarts=2", "--override", "train.init_lm_epochs=1", "--out", "cl"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("restart ")).count(), 2);
    assert!(out.contains("best accuracy"));
    assert!(d.join("cl/lm_manifest.jsonl").exists());
}

#[test]
fn training_is_reproducible() {
    let dir = workspace();
    let d = dir.path();
    train(d, "train-vae", "a");
    train(d, "train-vae", "b");
    assert_eq!(std::fs::read(d.join("a/checkpoint.bin")).unwrap(), std::fs::read(d.join("b/checkpoint.bin")).unwrap());
    let strip = |p: &str| {
        let text = std::fs::read_to_string(d.join(p)).unwrap();
        text.lines().map(|l| l.split("\"seconds\"").next().unwrap().to_string()).collect::<Vec<_>>()
    };
    assert_eq!(strip("a/manifest.jsonl"), strip("b/manifest.jsonl"));
}
