//! Run settings: defaults, then the TOML config file, then `--override` pairs.
//!
//! The config file has one table per area:
//!
//! ```toml
//! [model]
//! embed_dim = 32
//! decoder.name = "scnn"      # or decoder.kind = "lstm"
//!
//! [train]
//! epochs = 40
//! kl_anneal_iters = 10000
//!
//! [data]
//! vocab_cap = 20000
//! ```
//!
//! Overrides use the same dotted keys, e.g. `--override model.z_dim=16`.

use textvae::model::{ModelConfig, ModelKind};
use textvae::train::{Objective, TrainConfig};
use textvae::{Error, Result};

#[derive(Debug, Clone)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_cap: usize,
    /// Language-model epochs used to initialize the encoder; 0 disables.
    pub init_lm_epochs: usize,
    pub alpha: f64,
    pub gumbel_samples: usize,
    pub gamma: f64,
    pub restarts: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab_cap: 20_000,
            init_lm_epochs: 0,
            alpha: 1.0,
            gumbel_samples: 1,
            gamma: 1.0,
            restarts: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn optional(key: &str, value: &str) -> Result<Option<f64>> {
    match value.trim() {
        "off" | "none" | "" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

/// Flattens nested TOML tables into `a.b.c = value` pairs.
fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let text = match v {
            toml::Value::Table(t) => {
                flatten(&key, t, out)?;
                continue;
            }
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    toml::Value::Integer(n) => Ok(n.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    toml::Value::String(s) => Ok(s.clone()),
                    _ => Err(Error::Config(format!("unsupported array entry in {key}"))),
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
            toml::Value::Datetime(_) => return Err(Error::Config(format!("dates are not valid settings ({key})"))),
        };
        out.push((key, text));
    }
    Ok(())
}

impl Settings {
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("config file: {}", e.message())))?;
        let mut pairs = Vec::new();
        flatten("", &table, &mut pairs)?;
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::Config(format!("override {pair:?} is not KEY=VALUE")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (section, rest) = key.split_once('.').ok_or_else(|| Error::Config(format!("setting {key:?} needs a section prefix")))?;
        match section {
            "model" => self.model.set(rest, value),
            "data" => match rest {
                "vocab_cap" => {
                    self.vocab_cap = parse(key, value)?;
                    Ok(())
                }
                _ => Err(Error::Config(format!("unknown setting {key}"))),
            },
            "train" => self.set_train(rest, key, value),
            _ => Err(Error::Config(format!("unknown section in {key:?}"))),
        }
    }

    fn set_train(&mut self, rest: &str, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut t.schedule;
        match rest {
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "eval_batch_size" => t.eval_batch_size = parse(key, value)?,
            "lr" => t.adam.lr = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "clip" => t.clip = optional(key, value)?,
            "fixed_kl_weight" => t.fixed_kl_weight = optional(key, value)?,
            "sort_by_length" => t.sort_by_length = parse(key, value)?,
            "kl_anneal_iters" => s.kl_anneal_iters = parse(key, value)?,
            "kl_floor" => s.kl_floor = parse(key, value)?,
            "lr_half_start_epoch" => s.lr_half_start_epoch = parse(key, value)?,
            "lr_half_every" => s.lr_half_every = parse(key, value)?,
            "tau_start" => s.tau_start = parse(key, value)?,
            "tau_min" => s.tau_min = parse(key, value)?,
            "tau_decay" => s.tau_decay = parse(key, value)?,
            "init_lm_epochs" => self.init_lm_epochs = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "gumbel_samples" => self.gumbel_samples = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting {key}"))),
        }
        Ok(())
    }

    /// Training config for `kind`, with the run seed applied.
    pub fn train_config(&self, kind: ModelKind, cluster: bool, seed: u64) -> TrainConfig {
        let objective = match (kind, cluster) {
            (ModelKind::Lm, _) => Objective::Lm,
            (ModelKind::Vae, _) => Objective::Vae,
            (ModelKind::Semi, false) => Objective::Semi { alpha: self.alpha, gumbel_samples: self.gumbel_samples },
            (ModelKind::Semi, true) => Objective::Cluster { gamma: self.gamma },
        };
        TrainConfig { objective, seed, ..self.train.clone() }
    }
}
