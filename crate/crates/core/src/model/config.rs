use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DecoderArch, DecoderKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Decoder-only language model.
    Lm,
    /// LSTM encoder, Gaussian posterior, conditioned decoder.
    Vae,
    /// VAE with a label classifier `q(y|x)` and label-conditioned posterior.
    Semi,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lm => "lm",
            ModelKind::Vae => "vae",
            ModelKind::Semi => "semi",
        }
    }
}

/// Every hyperparameter needed to rebuild a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub z_dim: usize,
    /// Label count; semi-supervised models only.
    pub classes: usize,
    pub classifier_hidden: usize,
    pub decoder: DecoderArch,
    /// Dropout on encoder LSTM inputs.
    pub encoder_dropout: f64,
    /// Dropout on LSTM-decoder inputs.
    pub decoder_dropout: f64,
    /// Dropout on each residual block input of a CNN decoder.
    pub cnn_dropout: f64,
    /// Drop-word rate on LSTM-decoder inputs.
    pub drop_word: f64,
    /// Semi models: feed `y ⊕ z` to every decoder step (otherwise the LSTM
    /// decoder gets `y ⊕ z` as its starting state and `z` per step).
    pub label_every_step: bool,
    /// Seed of the parameter initializer.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Vae,
            vocab_size: 0,
            embed_dim: 32,
            encoder_hidden: 64,
            z_dim: 32,
            classes: 0,
            classifier_hidden: 64,
            decoder: DecoderArch::named("scnn", 64, 32).expect("named config"),
            encoder_dropout: 0.0,
            decoder_dropout: 0.0,
            cnn_dropout: 0.1,
            drop_word: 0.0,
            label_every_step: true,
            init_seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ModelConfig {
    /// Width of the vector the decoder is conditioned on.
    pub fn cond_dim(&self) -> usize {
        match self.kind {
            ModelKind::Lm => 0,
            ModelKind::Vae => self.z_dim,
            ModelKind::Semi => self.z_dim + self.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::data::RESERVED {
            return Err(Error::Config(format!("vocab_size {} leaves no corpus tokens", self.vocab_size)));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.kind != ModelKind::Lm && (self.encoder_hidden == 0 || self.z_dim == 0) {
            return Err(Error::Config("encoder_hidden and z_dim must be positive".into()));
        }
        if self.kind == ModelKind::Semi && (self.classes == 0 || self.classifier_hidden == 0) {
            return Err(Error::Config("semi-supervised models need classes and classifier_hidden".into()));
        }
        if self.kind == ModelKind::Semi && !self.label_every_step && self.decoder.kind == DecoderKind::Cnn {
            return Err(Error::Config("start-state-only label conditioning needs an LSTM decoder".into()));
        }
        for (k, r) in [
            ("encoder_dropout", self.encoder_dropout),
            ("decoder_dropout", self.decoder_dropout),
            ("cnn_dropout", self.cnn_dropout),
            ("drop_word", self.drop_word),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{k} = {r} outside [0, 1)")));
            }
        }
        self.decoder.validate()
    }

    /// Flat `key = value` view used in checkpoint headers and overrides.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let d = &self.decoder;
        let dil: Vec<String> = d.dilations.iter().map(usize::to_string).collect();
        [
            ("kind", self.kind.as_str().to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("z_dim", self.z_dim.to_string()),
            ("classes", self.classes.to_string()),
            ("classifier_hidden", self.classifier_hidden.to_string()),
            ("decoder.kind", if d.kind == DecoderKind::Lstm { "lstm" } else { "cnn" }.to_string()),
            ("decoder.name", d.name.clone()),
            ("decoder.filter_size", d.filter_size.to_string()),
            ("decoder.dilations", dil.join(",")),
            ("decoder.ext_channels", d.ext_channels.to_string()),
            ("decoder.int_channels", d.int_channels.to_string()),
            ("decoder.lstm_hidden", d.lstm_hidden.to_string()),
            ("encoder_dropout", format!("{:?}", self.encoder_dropout)),
            ("decoder_dropout", format!("{:?}", self.decoder_dropout)),
            ("cnn_dropout", format!("{:?}", self.cnn_dropout)),
            ("drop_word", format!("{:?}", self.drop_word)),
            ("label_every_step", self.label_every_step.to_string()),
            ("init_seed", self.init_seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Sets one key of the flat view. `decoder.name` with a named stack
    /// (scnn/mcnn/lcnn/vlcnn) also sets the filter size and dilations.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "kind" => {
                self.kind = match v {
                    "lm" => ModelKind::Lm,
                    "vae" => ModelKind::Vae,
                    "semi" => ModelKind::Semi,
                    _ => return Err(Error::Config(format!("unknown model kind {v:?}"))),
                }
            }
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "encoder_hidden" => self.encoder_hidden = parse(key, v)?,
            "z_dim" => self.z_dim = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "classifier_hidden" => self.classifier_hidden = parse(key, v)?,
            "decoder.kind" => {
                self.decoder.kind = match v {
                    "lstm" => DecoderKind::Lstm,
                    "cnn" => DecoderKind::Cnn,
                    _ => return Err(Error::Config(format!("unknown decoder kind {v:?}"))),
                }
            }
            "decoder.name" => {
                if let Ok(named) = DecoderArch::named(v, self.decoder.ext_channels, self.decoder.int_channels) {
                    self.decoder.kind = DecoderKind::Cnn;
                    self.decoder.filter_size = named.filter_size;
                    self.decoder.dilations = named.dilations;
                    self.decoder.name = named.name;
                } else {
                    self.decoder.name = v.to_string();
                }
            }
            "decoder.filter_size" => self.decoder.filter_size = parse(key, v)?,
            "decoder.dilations" => {
                self.decoder.dilations = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|d| parse(key, d)).collect::<Result<_>>()?
                }
            }
            "decoder.ext_channels" => self.decoder.ext_channels = parse(key, v)?,
            "decoder.int_channels" => self.decoder.int_channels = parse(key, v)?,
            "decoder.lstm_hidden" => self.decoder.lstm_hidden = parse(key, v)?,
            "encoder_dropout" => self.encoder_dropout = parse(key, v)?,
            "decoder_dropout" => self.decoder_dropout = parse(key, v)?,
            "cnn_dropout" => self.cnn_dropout = parse(key, v)?,
            "drop_word" => self.drop_word = parse(key, v)?,
            "label_every_step" => self.label_every_step = parse(key, v)?,
            "init_seed" => self.init_seed = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in pairs {
            c.set(k, v)?;
        }
        Ok(c)
    }
}
