use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod settings;

use settings::Settings;

/// Text VAEs with dilated CNN decoders: training, evaluation, generation and probes.
#[derive(Debug, Parser)]
#[command(name = "textvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file with [model], [train] and [data] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Dotted setting, e.g. model.z_dim=16 (repeatable).
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory for checkpoints, vocabularies, manifests and corpora.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Corpus lines carry a leading "INT<TAB>" label.
    #[arg(long)]
    labels: bool,
}

#[derive(Debug, Args)]
struct ModelFiles {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to vocab.txt next to the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a corpus from a synthetic Markov spec into OUT/corpus.txt.
    Synth {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Train a decoder-only language model.
    TrainLm(TrainArgs),
    /// Train a VAE (optionally with LM encoder initialization).
    TrainVae(TrainArgs),
    /// Train a semi-supervised VAE on unlabeled text plus a labeled file.
    TrainSemi {
        /// Unlabeled documents (labels, if present, are ignored).
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        labeled: PathBuf,
        /// Labeled validation documents.
        #[arg(long)]
        valid: PathBuf,
    },
    /// Train the clustering model and score it with the validation-assignment protocol.
    Cluster {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Report NLL (KL) and PPL of a checkpoint on a corpus.
    Eval {
        #[command(flatten)]
        files: ModelFiles,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: bool,
        /// Draw z from q(z|x) (seeded) instead of using its mean.
        #[arg(long)]
        sample: bool,
    },
    /// Beam-search text from a checkpoint.
    Generate {
        #[command(flatten)]
        files: ModelFiles,
        /// Class to condition on (semi-supervised models; default: one line per class).
        #[arg(long)]
        label: Option<usize>,
        #[arg(long, default_value_t = 10)]
        beam: usize,
        /// Comma-separated latent vector; default is a prior draw keyed by --seed.
        #[arg(long, allow_hyphen_values = true)]
        z: Option<String>,
        #[arg(long, default_value_t = textvae::tools::MAX_GENERATED)]
        max_len: usize,
    },
    /// Write posterior means of every document as CSV to OUT/latent.csv.
    ExportLatent {
        #[command(flatten)]
        files: ModelFiles,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: bool,
    },
    /// Check analytic against measured receptive fields of CNN decoders.
    ProbeArch {
        /// Additional random (k, dilations) configurations to probe.
        #[arg(long, default_value_t = 20)]
        random: usize,
    },
}

/// 0 success, 1 usage/config, 2 data, 3 numeric or verification failure.
fn exit_code(e: &textvae::Error) -> u8 {
    use textvae::Error::*;
    match e {
        Config(_) | Parameter(_) => 1,
        Input(_) | Parse { .. } | Format(_) | Io(_) | Index(_) | Dimension(_) => 2,
        Numeric(_) => 3,
    }
}

fn settings(cli: &Cli) -> textvae::Result<Settings> {
    let mut s = Settings::default();
    s.model.init_seed = cli.seed;
    if let Some(path) = &cli.config {
        s.apply_toml(&std::fs::read_to_string(path)?)?;
    }
    for o in &cli.overrides {
        s.apply_override(o)?;
    }
    Ok(s)
}

fn run(cli: &Cli) -> textvae::Result<u8> {
    let s = settings(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let out = &cli.out;
    match &cli.command {
        Command::Synth { spec } => commands::synth(spec, out),
        Command::TrainLm(a) => commands::train_plain(s, textvae::model::ModelKind::Lm, a, out, cli.seed),
        Command::TrainVae(a) => commands::train_plain(s, textvae::model::ModelKind::Vae, a, out, cli.seed),
        Command::TrainSemi { train, labeled, valid } => commands::train_semi(s, train, labeled, valid, out, cli.seed),
        Command::Cluster { train, valid, test } => commands::cluster(s, train, valid, test, out, cli.seed),
        Command::Eval { files, corpus, labels, sample } => commands::eval(files, corpus, *labels, *sample, cli.seed),
        Command::Generate { files, label, beam, z, max_len } => commands::generate(files, *label, *beam, z.as_deref(), *max_len, cli.seed),
        Command::ExportLatent { files, corpus, labels } => commands::export_latent(files, corpus, *labels, out),
        Command::ProbeArch { random } => commands::probe_arch(&s, *random, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
