use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one epoch. Validation figures are per-document means with the KL weight at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// KL weight at the last iteration of the epoch.
    pub kl_weight: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    pub train_total: f64,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
    /// Validation classification accuracy (semi-supervised runs with labeled validation data).
    pub accuracy: Option<f64>,
    /// Mean `exp(logvar)` of `q(z|x)` over validation documents (VAE runs).
    pub posterior_variance: Option<f64>,
    pub seconds: f64,
}

/// Append-only record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Set when training stopped on a non-finite loss; the last good epoch is the last record.
    pub diverged: Option<String>,
}

#[derive(Serialize)]
struct Header<'a> {
    record: &'static str,
    seed: u64,
    config: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Footer<'a> {
    record: &'static str,
    best_epoch: Option<usize>,
    diverged: &'a Option<String>,
}

impl RunManifest {
    pub fn new(config: BTreeMap<String, String>, seed: u64) -> Self {
        Self { config, seed, epochs: Vec::new(), best_epoch: None, diverged: None }
    }

    /// Equality with wall-clock timings ignored.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        let strip = |m: &RunManifest| {
            let mut m = m.clone();
            m.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
            m
        };
        strip(self) == strip(other)
    }

    /// One JSON object per line: a header, one line per epoch, a footer.
    pub fn to_jsonl(&self) -> Result<String> {
        let enc = |v: serde_json::Result<String>| v.map_err(|e| Error::Format(e.to_string()));
        let mut lines = vec![enc(serde_json::to_string(&Header { record: "run", seed: self.seed, config: &self.config }))?];
        for e in &self.epochs {
            lines.push(enc(serde_json::to_string(e))?);
        }
        lines.push(enc(serde_json::to_string(&Footer { record: "end", best_epoch: self.best_epoch, diverged: &self.diverged }))?);
        Ok(lines.join("\n") + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }
}
