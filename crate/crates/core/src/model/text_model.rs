use super::config::{ModelConfig, ModelKind};
use crate::data::Batch;
use crate::error::{dim_err, Error, Result};
use crate::nn::{drop_word, Bound, DecoderKind, DilatedStack, Embedding, Init, Linear, Lstm, Mlp, Mode, ParamId, ParamStore};
use crate::rng::RngStreams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const ENCODER_DROPOUT_KEY: u64 = 1;
const DECODER_DROPOUT_KEY: u64 = 2;
const DROP_WORD_KEY: u64 = 3;

/// Diagonal Gaussian `q(z|x)`: mean and log-variance, `[batch, z_dim]` each.
#[derive(Debug, Clone)]
pub struct GaussianPosterior<S> {
    pub mu: Tensor<S>,
    pub logvar: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub embedding: Embedding,
    pub lstm: Lstm,
    /// Last hidden state (⊕ label for semi models) → `[μ, log σ²]`.
    pub posterior: Mlp,
}

#[derive(Debug, Clone)]
pub enum DecoderNet {
    Lstm {
        lstm: Lstm,
        /// Conditioning vector → initial hidden state.
        init_state: Option<Linear>,
        out: Linear,
    },
    Cnn {
        /// 1×1 projection `[ext, embed + cond, 1]` into the residual stack.
        in_weight: ParamId,
        in_bias: ParamId,
        stack: DilatedStack,
        out: Linear,
    },
}

/// What the decoder is conditioned on for one batch.
#[derive(Debug, Clone, Default)]
pub struct Conditioning<S> {
    /// Concatenated to every decoder input, `[batch, width]`.
    pub per_step: Option<Tensor<S>>,
    /// Mapped to the LSTM decoder's initial state, `[batch, width]`.
    pub start: Option<Tensor<S>>,
}

/// Language model, VAE or semi-supervised VAE over token sequences.
#[derive(Debug, Clone)]
pub struct TextModel<S: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    pub embedding: Embedding,
    pub encoder: Option<Encoder>,
    /// Two-layer MLP giving the logits of `q(y|x)`.
    pub classifier: Option<Mlp>,
    pub decoder: DecoderNet,
}

impl<S: Scalar> TextModel<S> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&RngStreams::new(config.init_seed));
        let c = &config;
        let embedding = Embedding::new(&mut params, &mut init, "decoder.embedding", c.vocab_size, c.embed_dim)?;
        let encoder = match c.kind {
            ModelKind::Lm => None,
            ModelKind::Vae | ModelKind::Semi => {
                let embedding = Embedding::new(&mut params, &mut init, "encoder.embedding", c.vocab_size, c.embed_dim)?;
                let lstm = Lstm::new(&mut params, &mut init, "encoder.lstm", c.embed_dim, c.encoder_hidden)?;
                let label_width = if c.kind == ModelKind::Semi { c.classes } else { 0 };
                let posterior =
                    Mlp::new(&mut params, &mut init, "encoder.posterior", &[c.encoder_hidden + label_width, 2 * c.z_dim])?;
                Some(Encoder { embedding, lstm, posterior })
            }
        };
        let classifier = match c.kind {
            ModelKind::Semi => Some(Mlp::new(
                &mut params,
                &mut init,
                "classifier",
                &[c.encoder_hidden, c.classifier_hidden, c.classes],
            )?),
            _ => None,
        };
        let (step_width, start_width) = Self::cond_widths(c);
        let decoder = match c.decoder.kind {
            DecoderKind::Lstm => {
                let h = c.decoder.lstm_hidden;
                DecoderNet::Lstm {
                    lstm: Lstm::new(&mut params, &mut init, "decoder.lstm", c.embed_dim + step_width, h)?,
                    init_state: if start_width > 0 {
                        Some(Linear::new(&mut params, &mut init, "decoder.init_state", start_width, h)?)
                    } else {
                        None
                    },
                    out: Linear::new(&mut params, &mut init, "decoder.out", h, c.vocab_size)?,
                }
            }
            DecoderKind::Cnn => {
                let e = c.decoder.ext_channels;
                DecoderNet::Cnn {
                    in_weight: params.add("decoder.in.weight", init.uniform(&[e, c.embed_dim + step_width, 1], 0.05))?,
                    in_bias: params.add("decoder.in.bias", Tensor::zeros(vec![e]))?,
                    stack: DilatedStack::new(&mut params, &mut init, "decoder", &c.decoder, c.cnn_dropout)?,
                    out: Linear::new(&mut params, &mut init, "decoder.out", e, c.vocab_size)?,
                }
            }
        };
        Ok(Self { config, params, embedding, encoder, classifier, decoder })
    }

    /// (per-step width, start-state width) of the decoder conditioning.
    fn cond_widths(c: &ModelConfig) -> (usize, usize) {
        match c.kind {
            ModelKind::Lm => (0, 0),
            ModelKind::Vae => (c.z_dim, c.z_dim),
            ModelKind::Semi if c.label_every_step => (c.z_dim + c.classes, c.z_dim + c.classes),
            ModelKind::Semi => (c.z_dim, c.z_dim + c.classes),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    fn encoder(&self) -> Result<&Encoder> {
        self.encoder.as_ref().ok_or_else(|| Error::Config("language models have no encoder".into()))
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(t) => Err(Error::Index(format!("token id {t} outside vocabulary of {}", self.config.vocab_size))),
            None => Ok(()),
        }
    }

    /// Last encoder hidden state of each document, `[batch, encoder_hidden]`.
    pub fn encoder_state(&self, p: &Bound<S>, batch: &Batch, mode: &Mode) -> Result<Tensor<S>> {
        let enc = self.encoder()?;
        self.check_ids(&batch.tokens)?;
        let emb = enc.embedding.forward(p, &batch.tokens, batch.batch_size, batch.seq_len)?;
        let emb = mode.dropout(p.tape, &emb, self.config.encoder_dropout, ENCODER_DROPOUT_KEY)?;
        enc.lstm.encode(p, &emb, &batch.lengths)
    }

    /// `q(z|x)` (or `q(z|x,y)` when `label` is given) from an encoder state.
    pub fn posterior(&self, p: &Bound<S>, state: &Tensor<S>, label: Option<&Tensor<S>>) -> Result<GaussianPosterior<S>> {
        let enc = self.encoder()?;
        let input = match (self.kind(), label) {
            (ModelKind::Semi, Some(y)) => p.tape.concat(&[state.clone(), y.clone()], 1)?,
            (ModelKind::Semi, None) => return Err(Error::Config("semi-supervised posterior needs a label".into())),
            (_, Some(_)) => return Err(Error::Config("only semi-supervised models take labels".into())),
            (_, None) => state.clone(),
        };
        let out = enc.posterior.forward(p, &input)?;
        let z = self.config.z_dim;
        Ok(GaussianPosterior { mu: p.tape.slice(&out, 1, 0, z)?, logvar: p.tape.slice(&out, 1, z, z)? })
    }

    /// `q(z|x)` for a plain VAE.
    pub fn encode(&self, p: &Bound<S>, batch: &Batch, mode: &Mode) -> Result<GaussianPosterior<S>> {
        let state = self.encoder_state(p, batch, mode)?;
        self.posterior(p, &state, None)
    }

    /// Logits of `q(y|x)` from an encoder state, `[batch, classes]`.
    pub fn classifier_logits(&self, p: &Bound<S>, state: &Tensor<S>) -> Result<Tensor<S>> {
        let mlp = self.classifier.as_ref().ok_or_else(|| Error::Config("model has no classifier".into()))?;
        mlp.forward(p, state)
    }

    /// Decoder conditioning from a latent code and, for semi models, a label.
    pub fn conditioning(&self, p: &Bound<S>, z: Option<&Tensor<S>>, y: Option<&Tensor<S>>) -> Result<Conditioning<S>> {
        let c = &self.config;
        let check = |t: &Tensor<S>, width: usize, what: &str| {
            if t.shape().len() != 2 || t.shape()[1] != width {
                return Err(dim_err!("{what} must be [batch, {width}], got {:?}", t.shape()));
            }
            Ok(())
        };
        match (c.kind, z, y) {
            (ModelKind::Lm, None, None) => Ok(Conditioning::default()),
            (ModelKind::Vae, Some(z), None) => {
                check(z, c.z_dim, "z")?;
                Ok(Conditioning { per_step: Some(z.clone()), start: Some(z.clone()) })
            }
            (ModelKind::Semi, Some(z), Some(y)) => {
                check(z, c.z_dim, "z")?;
                check(y, c.classes, "y")?;
                let yz = p.tape.concat(&[y.clone(), z.clone()], 1)?;
                let per_step = if c.label_every_step { yz.clone() } else { z.clone() };
                Ok(Conditioning { per_step: Some(per_step), start: Some(yz) })
            }
            (kind, z, y) => Err(Error::Config(format!(
                "{} model cannot be conditioned on z={} y={}",
                kind.as_str(),
                z.is_some(),
                y.is_some()
            ))),
        }
    }

    /// Token embeddings of the decoder inputs, with drop-word on LSTM decoders in training.
    pub fn decoder_embeddings(&self, p: &Bound<S>, inputs: &[usize], batch: usize, steps: usize, mode: &Mode) -> Result<Tensor<S>> {
        self.check_ids(inputs)?;
        let ids = match (&self.decoder, mode.rng(DROP_WORD_KEY)) {
            (DecoderNet::Lstm { .. }, Some(mut rng)) if self.config.drop_word > 0.0 => {
                drop_word(inputs, self.config.drop_word, &mut rng)?
            }
            _ => inputs.to_vec(),
        };
        self.embedding.forward(p, &ids, batch, steps)
    }

    /// Next-token logits `[batch · steps, vocab]` from decoder-input embeddings `[batch, steps, embed]`.
    pub fn decode_embedded(&self, p: &Bound<S>, emb: &Tensor<S>, cond: &Conditioning<S>, mode: &Mode) -> Result<Tensor<S>> {
        let t = p.tape;
        let s = emb.shape();
        if s.len() != 3 || s[2] != self.config.embed_dim {
            return Err(dim_err!("decoder input must be [B, T, {}], got {:?}", self.config.embed_dim, s));
        }
        let (b, steps) = (s[0], s[1]);
        let xs = match &cond.per_step {
            Some(c) => {
                if c.shape()[0] != b {
                    return Err(dim_err!("conditioning batch {} vs input batch {b}", c.shape()[0]));
                }
                t.concat(&[emb.clone(), t.expand_steps(c, steps)?], 2)?
            }
            None => emb.clone(),
        };
        match &self.decoder {
            DecoderNet::Lstm { lstm, init_state, out } => {
                let xs = mode.dropout(t, &xs, self.config.decoder_dropout, DECODER_DROPOUT_KEY)?;
                let h = lstm.hidden;
                let h0 = match (init_state, &cond.start) {
                    (Some(l), Some(c)) => t.tanh(&l.forward(p, c)?)?,
                    _ => Tensor::zeros(vec![b, h]),
                };
                let hs = lstm.run(p, &xs, h0, Tensor::zeros(vec![b, h]))?;
                let hs = hs.iter().map(|x| t.reshape(x, vec![b, 1, h])).collect::<Result<Vec<_>>>()?;
                let all = t.reshape(&t.concat(&hs, 1)?, vec![b * steps, h])?;
                out.forward(p, &all)
            }
            DecoderNet::Cnn { in_weight, in_bias, stack, out } => {
                let x = t.swap_last2(&xs)?;
                let x = t.add_channel_bias(&t.conv1d_causal(&x, p.var(*in_weight), 1)?, p.var(*in_bias))?;
                let y = stack.forward(p, &x, mode)?;
                let e = self.config.decoder.ext_channels;
                let y = t.reshape(&t.swap_last2(&y)?, vec![b * steps, e])?;
                out.forward(p, &y)
            }
        }
    }

    /// Next-token logits `[batch, steps, vocab]` for BOS-initial decoder inputs.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_logits(
        &self,
        p: &Bound<S>,
        z: Option<&Tensor<S>>,
        y: Option<&Tensor<S>>,
        inputs: &[usize],
        batch: usize,
        steps: usize,
        mode: &Mode,
    ) -> Result<Tensor<S>> {
        let cond = self.conditioning(p, z, y)?;
        let emb = self.decoder_embeddings(p, inputs, batch, steps, mode)?;
        let logits = self.decode_embedded(p, &emb, &cond, mode)?;
        p.tape.reshape(&logits, vec![batch, steps, self.config.vocab_size])
    }

    /// Copies parameter values from `other` for every name present in both
    /// stores with identical shape. Returns the number copied.
    pub fn copy_matching(&mut self, other: &ParamStore<S>, map: impl Fn(&str) -> Option<String>) -> Result<usize> {
        let mut copied = 0;
        for (name, value) in other.iter() {
            if let Some(target) = map(name) {
                let id = self
                    .params
                    .id(&target)
                    .ok_or_else(|| Error::Config(format!("no parameter {target:?} to receive {name:?}")))?;
                self.params.set(id, value.clone())?;
                copied += 1;
            }
        }
        Ok(copied)
    }
}
