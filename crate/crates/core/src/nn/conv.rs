use serde::{Deserialize, Serialize};

use super::linear::INIT_SCALE;
use super::params::{Bound, Init, Mode, ParamId, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Past positions seen by one output of a causal stack with filter size
/// `k` and the given per-layer dilations: `(k - 1) Σ dᵢ + 1`.
pub fn effective_receptive_field(k: usize, dilations: &[usize]) -> Result<usize> {
    if k == 0 || dilations.contains(&0) {
        return Err(Error::Parameter("filter size and dilations must be positive".into()));
    }
    Ok((k - 1) * dilations.iter().sum::<usize>() + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Lstm,
    Cnn,
}

/// Decoder shape: an LSTM, or a stack of dilated causal residual blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderArch {
    pub kind: DecoderKind,
    pub name: String,
    pub filter_size: usize,
    pub dilations: Vec<usize>,
    /// Channels between residual blocks.
    pub ext_channels: usize,
    /// Channels inside a block's bottleneck.
    pub int_channels: usize,
    pub lstm_hidden: usize,
}

const NAMED: [(&str, &[usize]); 4] = [
    ("scnn", &[1, 2, 4]),
    ("mcnn", &[1, 2, 4, 8, 16]),
    ("lcnn", &[1, 2, 4, 8, 16, 1, 2, 4, 8, 16]),
    ("vlcnn", &[1, 2, 4, 8, 16, 1, 2, 4, 8, 16, 1, 2, 4, 8, 16]),
];

pub const NAMED_CNN: [&str; 4] = ["scnn", "mcnn", "lcnn", "vlcnn"];

impl DecoderArch {
    pub fn cnn(name: &str, filter_size: usize, dilations: Vec<usize>, ext_channels: usize, int_channels: usize) -> Self {
        Self {
            kind: DecoderKind::Cnn,
            name: name.to_string(),
            filter_size,
            dilations,
            ext_channels,
            int_channels,
            lstm_hidden: 0,
        }
    }

    /// SCNN, MCNN, LCNN or VLCNN (case-insensitive), filter size 3.
    pub fn named(name: &str, ext_channels: usize, int_channels: usize) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        NAMED
            .iter()
            .find(|(n, _)| *n == lower)
            .map(|(n, d)| Self::cnn(n, 3, d.to_vec(), ext_channels, int_channels))
            .ok_or_else(|| Error::Config(format!("unknown decoder configuration {name:?}")))
    }

    pub fn lstm(hidden: usize) -> Self {
        Self {
            kind: DecoderKind::Lstm,
            name: "lstm".into(),
            filter_size: 0,
            dilations: Vec::new(),
            ext_channels: 0,
            int_channels: 0,
            lstm_hidden: hidden,
        }
    }

    pub fn receptive_field(&self) -> Result<usize> {
        effective_receptive_field(self.filter_size, &self.dilations)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DecoderKind::Lstm if self.lstm_hidden == 0 => Err(Error::Config("LSTM decoder needs a hidden size".into())),
            DecoderKind::Cnn => {
                if self.ext_channels == 0 || self.int_channels == 0 {
                    return Err(Error::Config("CNN decoder needs channel widths".into()));
                }
                if let Some((_, d)) = NAMED.iter().find(|(n, _)| *n == self.name) {
                    if self.dilations != *d {
                        return Err(Error::Config(format!("{} must use dilations {:?}", self.name, d)));
                    }
                }
                self.receptive_field().map(|_| ())
            }
            _ => Ok(()),
        }
    }
}

/// 1×1 → ReLU → 1×k dilated causal → ReLU → 1×1, plus the identity path.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub in_weight: ParamId,
    pub in_bias: ParamId,
    pub mid_weight: ParamId,
    pub mid_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
    pub ext_channels: usize,
    pub int_channels: usize,
    pub filter_size: usize,
    pub dilation: usize,
}

impl ResidualBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        init: &mut Init,
        name: &str,
        ext_channels: usize,
        int_channels: usize,
        filter_size: usize,
        dilation: usize,
    ) -> Result<Self> {
        if filter_size == 0 || dilation == 0 {
            return Err(Error::Parameter("filter size and dilation must be positive".into()));
        }
        let (e, i, k) = (ext_channels, int_channels, filter_size);
        Ok(Self {
            in_weight: store.add(&format!("{name}.in.weight"), init.uniform(&[i, e, 1], INIT_SCALE))?,
            in_bias: store.add(&format!("{name}.in.bias"), Tensor::zeros(vec![i]))?,
            mid_weight: store.add(&format!("{name}.mid.weight"), init.uniform(&[i, i, k], INIT_SCALE))?,
            mid_bias: store.add(&format!("{name}.mid.bias"), Tensor::zeros(vec![i]))?,
            out_weight: store.add(&format!("{name}.out.weight"), init.uniform(&[e, i, 1], INIT_SCALE))?,
            out_bias: store.add(&format!("{name}.out.bias"), Tensor::zeros(vec![e]))?,
            ext_channels,
            int_channels,
            filter_size,
            dilation,
        })
    }

    /// `x: [B, ext, T] → [B, ext, T]`
    pub fn forward<S: Scalar>(&self, p: &Bound<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().len() != 3 || x.shape()[1] != self.ext_channels {
            return Err(dim_err!("residual block expects [B, {}, T], got {:?}", self.ext_channels, x.shape()));
        }
        let t = p.tape;
        let h = t.add_channel_bias(&t.conv1d_causal(x, p.var(self.in_weight), 1)?, p.var(self.in_bias))?;
        let h = t.relu(&h)?;
        let h = t.add_channel_bias(&t.conv1d_causal(&h, p.var(self.mid_weight), self.dilation)?, p.var(self.mid_bias))?;
        let h = t.relu(&h)?;
        let h = t.add_channel_bias(&t.conv1d_causal(&h, p.var(self.out_weight), 1)?, p.var(self.out_bias))?;
        t.add(x, &h)
    }
}

/// Residual blocks applied in sequence, with dropout on each block input.
#[derive(Debug, Clone)]
pub struct DilatedStack {
    pub blocks: Vec<ResidualBlock>,
    pub dropout: f64,
}

/// Key offset for per-block dropout streams.
pub(crate) const STACK_DROPOUT_KEY: u64 = 0xC0_0000;

impl DilatedStack {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, arch: &DecoderArch, dropout: f64) -> Result<Self> {
        let blocks = arch
            .dilations
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                ResidualBlock::new(store, init, &format!("{name}.block{i}"), arch.ext_channels, arch.int_channels, arch.filter_size, d)
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks, dropout })
    }

    pub fn forward<S: Scalar>(&self, p: &Bound<S>, x: &Tensor<S>, mode: &Mode) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for (i, block) in self.blocks.iter().enumerate() {
            h = mode.dropout(p.tape, &h, self.dropout, STACK_DROPOUT_KEY + i as u64)?;
            h = block.forward(p, &h)?;
        }
        Ok(h)
    }
}
