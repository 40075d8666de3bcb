use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const INIT_SCALE: f64 = 0.05;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = store.add(&format!("{name}.weight"), init.uniform(&[in_dim, out_dim], INIT_SCALE))?;
        let bias = store.add(&format!("{name}.bias"), Tensor::zeros(vec![out_dim]))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    /// `x: [N, in] → [N, out]`
    pub fn forward<S: Scalar>(&self, p: &Bound<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim {
            return Err(dim_err!("linear layer expects [N, {}], got {:?}", self.in_dim, x.shape()));
        }
        let y = p.tape.matmul(x, p.var(self.weight))?;
        p.tape.add_row_bias(&y, p.var(self.bias))
    }
}

/// Affine layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden..., out]`, at least two entries.
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(crate::Error::Config(format!("MLP {name} needs at least input and output widths")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, init, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward<S: Scalar>(&self, p: &Bound<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = p.tape.relu(&h)?;
            }
            h = layer.forward(p, &h)?;
        }
        Ok(h)
    }
}

/// `[V, d]` lookup table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, vocab: usize, dim: usize) -> Result<Self> {
        let table = store.add(&format!("{name}.table"), init.uniform(&[vocab, dim], INIT_SCALE))?;
        Ok(Self { table, vocab, dim })
    }

    /// `ids` laid out as `[batch, steps]` → `[batch, steps, dim]`.
    pub fn forward<S: Scalar>(&self, p: &Bound<S>, ids: &[usize], batch: usize, steps: usize) -> Result<Tensor<S>> {
        if ids.len() != batch * steps {
            return Err(dim_err!("{} ids do not fill [{batch}, {steps}]", ids.len()));
        }
        let rows = p.tape.gather(p.var(self.table), ids)?;
        p.tape.reshape(&rows, vec![batch, steps, self.dim])
    }
}
