//! Dense row-major tensors and the define-by-run gradient tape.

mod gradcheck;
mod tape;

use std::sync::Arc;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use tape::{Gradients, Tape};

/// Identifier of a node on one specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

/// Dense n-dimensional array. Cloning is cheap: the buffer is shared.
///
/// A tensor produced by a [`Tape`] operation carries a [`NodeRef`] into that
/// tape; tensors built directly are constants.
#[derive(Debug, Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    node: Option<NodeRef>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(dim_err!("shape {:?} has a zero extent", shape));
        }
        if numel(&shape) != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel(&shape),
                data.len()
            ));
        }
        Ok(Self { shape, data: Arc::new(data), node: None })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| S::c(x)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: S) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self { shape, data: Arc::new(vec![value; n]), node: None }
    }

    pub fn scalar(value: S) -> Self {
        Self { shape: Vec::new(), data: Arc::new(vec![value]), node: None }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<Vec<S>>, node: Option<NodeRef>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.data)
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// Same values, no tape node.
    pub fn detach(&self) -> Self {
        Self { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> S {
        assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < extent, "index {ix} out of range on axis {i}");
            flat = flat * extent + ix;
        }
        self.data[flat]
    }

    /// Reinterprets the buffer with a new shape (constant result, no node).
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(dim_err!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        Ok(Self { shape, data: Arc::clone(&self.data), node: None })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Casts to another scalar type.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|x| T::c(x.as_f64())).collect()),
            node: None,
        }
    }
}

impl<S: Scalar> PartialEq for Tensor<S> {
    /// Value equality: shapes and buffers match exactly; tape membership is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}
