use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{Rng, RngStreams};
use crate::scalar::Scalar;
use crate::tensor::{grad_check, GradCheckReport, Gradients, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered trainable tensors.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value.detach());
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Dimension(format!(
                "parameter {:?} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value.detach();
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Registers every parameter as a differentiable leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound { tape, vars: self.values.iter().map(|v| tape.leaf(v)).collect() }
    }

    /// Compares tape gradients of `loss` with respect to every parameter
    /// against central finite differences.
    pub fn grad_check<F>(&self, h: f64, loss: F) -> Result<GradCheckReport>
    where
        F: Fn(&Bound<S>) -> Result<Tensor<S>>,
    {
        grad_check(|tape, xs| loss(&Bound { tape, vars: xs.to_vec() }), &self.values, h)
    }

    /// Binds every parameter as a constant (no gradients recorded).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound { tape, vars: self.values.clone() }
    }
}

/// Parameters of one forward pass, bound to a tape.
pub struct Bound<'t, S: Scalar> {
    pub tape: &'t Tape<S>,
    vars: Vec<Tensor<S>>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    pub fn var(&self, id: ParamId) -> &Tensor<S> {
        &self.vars[id.0]
    }

    /// Gradient for every parameter, in store order; zeros where unreachable.
    pub fn gradients(&self, grads: &Gradients<S>) -> Vec<Tensor<S>> {
        self.vars.iter().map(|v| grads.wrt_or_zero(v)).collect()
    }
}

/// Deterministic parameter initializer.
pub struct Init {
    rng: Rng,
}

impl Init {
    pub fn new(streams: &RngStreams) -> Self {
        Self { rng: streams.stream(&[0x1417]) }
    }

    pub fn uniform<S: Scalar>(&mut self, shape: &[usize], scale: f64) -> Tensor<S> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| S::c(self.rng.random_range(-scale..scale))).collect();
        Tensor::new(shape.to_vec(), data).expect("valid parameter shape")
    }
}

/// Training-time randomness for one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Eval,
    /// Stochastic layers draw from streams keyed by `(step, layer)`.
    Train { streams: RngStreams, step: u64 },
}

impl Mode {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    /// Stream for one stochastic layer, `None` in eval mode.
    pub fn rng(&self, layer: u64) -> Option<Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train { streams, step } => Some(streams.stream(&[*step, layer])),
        }
    }

    /// Dropout in train mode, identity otherwise.
    pub fn dropout<S: Scalar>(&self, tape: &Tape<S>, x: &Tensor<S>, rate: f64, layer: u64) -> Result<Tensor<S>> {
        match self.rng(layer) {
            Some(mut rng) if rate > 0.0 => tape.dropout(x, rate, &mut rng),
            _ => Ok(x.clone()),
        }
    }
}
