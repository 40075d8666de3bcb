use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{numel, NodeRef, Tensor};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    AddRowBias(usize, usize),
    AddChannelBias(usize, usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Reshape(usize),
    SwapLast2(usize),
    ExpandSteps(usize),
    Sum(usize),
    SumLast(usize),
    Gather { table: usize, ids: Vec<usize> },
    Conv1dCausal { x: usize, w: usize, dilation: usize },
    CrossEntropyRows { logits: usize, targets: Vec<usize>, mask: Vec<bool>, probs: Vec<S> },
    Softmax(usize),
    LogSoftmax(usize),
    ClampMin(usize, S),
}

#[derive(Debug)]
struct Node<S> {
    op: Op<S>,
    shape: Vec<usize>,
    value: Arc<Vec<S>>,
    requires_grad: bool,
}

/// Append-only record of the operations of one forward pass.
///
/// Every operation appends a node whose inputs precede it, so the node list
/// is already topologically ordered. Tensors without a node that are fed to
/// an operation are recorded as constant leaves.
#[derive(Debug)]
pub struct Tape<S: Scalar> {
    id: u64,
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Strides for viewing a shape as `[outer, extent(axis), inner]`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn last_dim(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.last() {
        Some(&n) => Ok((numel(shape) / n, n)),
        None => Err(dim_err!("operation needs at least one axis, got a scalar")),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, t: &Tensor<S>) -> Tensor<S> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            op: Op::Leaf,
            shape: t.shape().to_vec(),
            value: t.shared_data(),
            requires_grad: true,
        });
        Tensor::from_parts(t.shape().to_vec(), t.shared_data(), Some(NodeRef { tape: self.id, index }))
    }

    fn id_of(&self, t: &Tensor<S>) -> Result<usize> {
        match t.node() {
            Some(r) if r.tape == self.id => Ok(r.index),
            Some(_) => Err(Error::Input("tensor is recorded on a different tape".into())),
            None => {
                let mut nodes = self.nodes.borrow_mut();
                nodes.push(Node {
                    op: Op::Leaf,
                    shape: t.shape().to_vec(),
                    value: t.shared_data(),
                    requires_grad: false,
                });
                Ok(nodes.len() - 1)
            }
        }
    }

    fn tracked(&self, t: &Tensor<S>) -> bool {
        matches!(t.node(), Some(r) if r.tape == self.id)
            && self.nodes.borrow()[t.node().unwrap().index].requires_grad
    }

    /// Appends a node. Operations with no differentiable input yield constants.
    fn push(&self, op: impl FnOnce() -> Result<Op<S>>, inputs: &[&Tensor<S>], shape: Vec<usize>, value: Vec<S>) -> Result<Tensor<S>> {
        let value = Arc::new(value);
        let requires_grad = inputs.iter().any(|t| self.tracked(t));
        for t in inputs {
            if let Some(r) = t.node() {
                if r.tape != self.id {
                    return Err(Error::Input("tensor is recorded on a different tape".into()));
                }
            }
        }
        if !requires_grad {
            return Ok(Tensor::from_parts(shape, value, None));
        }
        let op = op()?;
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node { op, shape: shape.clone(), value: Arc::clone(&value), requires_grad: true });
        Ok(Tensor::from_parts(shape, value, Some(NodeRef { tape: self.id, index })))
    }

    fn same_shape(a: &Tensor<S>, b: &Tensor<S>, what: &str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(dim_err!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape()));
        }
        Ok(())
    }

    fn zip(&self, a: &Tensor<S>, b: &Tensor<S>, what: &str, f: impl Fn(S, S) -> S, op: fn(usize, usize) -> Op<S>) -> Result<Tensor<S>> {
        Self::same_shape(a, b, what)?;
        let value = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.push(|| Ok(op(self.id_of(a)?, self.id_of(b)?)), &[a, b], a.shape().to_vec(), value)
    }

    fn unary(&self, a: &Tensor<S>, f: impl Fn(S) -> S, op: fn(usize) -> Op<S>) -> Result<Tensor<S>> {
        let value = a.data().iter().map(|&x| f(x)).collect();
        self.push(|| Ok(op(self.id_of(a)?)), &[a], a.shape().to_vec(), value)
    }

    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&self, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        let value = a.data().iter().map(|&x| x * c).collect();
        self.push(|| Ok(Op::Scale(self.id_of(a)?, c)), &[a], a.shape().to_vec(), value)
    }

    pub fn add_scalar(&self, a: &Tensor<S>, c: S) -> Result<Tensor<S>> {
        self.unary(a, |x| x + c, Op::AddScalar)
    }

    /// `x[..., j] + b[j]` for `x` of shape `[..., n]` and `b` of shape `[n]`.
    pub fn add_row_bias(&self, x: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (_, n) = last_dim(x.shape())?;
        if b.shape() != [n] {
            return Err(dim_err!("row bias {:?} does not match rows of {:?}", b.shape(), x.shape()));
        }
        let bd = b.data();
        let value = x.data().chunks(n).flat_map(|row| row.iter().zip(bd).map(|(&v, &c)| v + c)).collect();
        self.push(|| Ok(Op::AddRowBias(self.id_of(x)?, self.id_of(b)?)), &[x, b], x.shape().to_vec(), value)
    }

    /// `x[b, c, t] + bias[c]` for `x` of shape `[batch, channels, T]`.
    pub fn add_channel_bias(&self, x: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let s = x.shape();
        if s.len() != 3 || b.shape() != [s[1]] {
            return Err(dim_err!("channel bias {:?} does not match {:?}", b.shape(), s));
        }
        let t = s[2];
        let bd = b.data();
        let value = x
            .data()
            .chunks(t)
            .enumerate()
            .flat_map(|(row, chunk)| {
                let c = bd[row % s[1]];
                chunk.iter().map(move |&v| v + c)
            })
            .collect();
        self.push(|| Ok(Op::AddChannelBias(self.id_of(x)?, self.id_of(b)?)), &[x, b], s.to_vec(), value)
    }

    pub fn matmul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        matmul_acc(a.data(), b.data(), &mut out, m, k, n);
        self.push(|| Ok(Op::MatMul(self.id_of(a)?, self.id_of(b)?)), &[a, b], vec![m, n], out)
    }

    pub fn relu(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu)
    }

    pub fn sigmoid(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(a, |x| x.tanh(), Op::Tanh)
    }

    pub fn exp(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(a, |x| x.exp(), Op::Exp)
    }

    pub fn log(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.unary(a, |x| x.ln(), Op::Log)
    }

    pub fn neg(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        self.scale(a, -S::one())
    }

    /// `max(a, floor)` elementwise; the gradient is zero where `a <= floor`.
    pub fn clamp_min(&self, a: &Tensor<S>, floor: S) -> Result<Tensor<S>> {
        let value = a.data().iter().map(|&x| if x > floor { x } else { floor }).collect();
        self.push(|| Ok(Op::ClampMin(self.id_of(a)?, floor)), &[a], a.shape().to_vec(), value)
    }

    pub fn concat(&self, parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| Error::Input("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(dim_err!("concat axis {axis} out of range for {:?}", first.shape()));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(dim_err!("concat along axis {axis}: {:?} vs {:?}", p.shape(), first.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let w = p.shape()[axis] * inner;
                value.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor<S>> = parts.iter().collect();
        self.push(
            || Ok(Op::Concat { inputs: parts.iter().map(|p| self.id_of(p)).collect::<Result<_>>()?, axis }),
            &refs,
            shape,
            value,
        )
    }

    pub fn slice(&self, a: &Tensor<S>, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        let s = a.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(dim_err!("slice [{start}, {}) on axis {axis} of {:?}", start + len, s));
        }
        let (outer, extent, inner) = split_axis(s, axis);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            value.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        self.push(|| Ok(Op::Slice { input: self.id_of(a)?, axis, start }), &[a], shape, value)
    }

    pub fn reshape(&self, a: &Tensor<S>, shape: impl Into<Vec<usize>>) -> Result<Tensor<S>> {
        let shape = shape.into();
        if numel(&shape) != a.numel() {
            return Err(dim_err!("cannot reshape {:?} to {:?}", a.shape(), shape));
        }
        self.push(|| Ok(Op::Reshape(self.id_of(a)?)), &[a], shape, a.to_vec())
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn swap_last2(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let s = a.shape();
        if s.len() != 3 {
            return Err(dim_err!("swap_last2 needs rank 3, got {:?}", s));
        }
        let value = swap_last2_values(a.data(), s[0], s[1], s[2]);
        self.push(|| Ok(Op::SwapLast2(self.id_of(a)?)), &[a], vec![s[0], s[2], s[1]], value)
    }

    /// Repeats `[batch, k]` across `steps` positions: `[batch, steps, k]`.
    pub fn expand_steps(&self, a: &Tensor<S>, steps: usize) -> Result<Tensor<S>> {
        let s = a.shape();
        if s.len() != 2 || steps == 0 {
            return Err(dim_err!("expand_steps needs [batch, k] and steps > 0, got {:?}", s));
        }
        let k = s[1];
        let mut value = Vec::with_capacity(s[0] * steps * k);
        for row in a.data().chunks(k) {
            for _ in 0..steps {
                value.extend_from_slice(row);
            }
        }
        self.push(|| Ok(Op::ExpandSteps(self.id_of(a)?)), &[a], vec![s[0], steps, k], value)
    }

    pub fn sum(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let total = a.data().iter().copied().sum();
        self.push(|| Ok(Op::Sum(self.id_of(a)?)), &[a], Vec::new(), vec![total])
    }

    pub fn mean(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let s = self.sum(a)?;
        self.scale(&s, S::one() / S::of_usize(a.numel()))
    }

    /// Sums over the last axis.
    pub fn sum_last(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (_, n) = last_dim(a.shape())?;
        let value = a.data().chunks(n).map(|r| r.iter().copied().sum()).collect();
        let mut shape = a.shape()[..a.shape().len() - 1].to_vec();
        if shape.is_empty() {
            shape = Vec::new();
        }
        self.push(|| Ok(Op::SumLast(self.id_of(a)?)), &[a], shape, value)
    }

    /// Rows of a `[V, d]` table selected by id: `[ids.len(), d]`.
    pub fn gather(&self, table: &Tensor<S>, ids: &[usize]) -> Result<Tensor<S>> {
        let s = table.shape();
        if s.len() != 2 {
            return Err(dim_err!("embedding table must be [V, d], got {:?}", s));
        }
        if ids.is_empty() {
            return Err(Error::Input("gather with no ids".into()));
        }
        let (v, d) = (s[0], s[1]);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("token id {id} outside table of {v} rows")));
            }
            value.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
        }
        self.push(|| Ok(Op::Gather { table: self.id_of(table)?, ids: ids.to_vec() }), &[table], vec![ids.len(), d], value)
    }

    /// Causal dilated 1-D convolution.
    ///
    /// `x` is `[batch, c_in, T]`, `w` is `[c_out, c_in, k]`. Tap `j` reads
    /// position `t - (k - 1 - j) * dilation`; taps before position 0 read zero.
    pub fn conv1d_causal(&self, x: &Tensor<S>, w: &Tensor<S>, dilation: usize) -> Result<Tensor<S>> {
        if dilation == 0 {
            return Err(Error::Parameter("dilation must be positive".into()));
        }
        let (sx, sw) = (x.shape(), w.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(dim_err!("conv1d_causal of input {:?} with weights {:?}", sx, sw));
        }
        let (batch, c_in, t_len) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        let mut out = vec![S::zero(); batch * c_out * t_len];
        conv_forward(x.data(), w.data(), &mut out, batch, c_in, c_out, t_len, k, dilation);
        self.push(
            || Ok(Op::Conv1dCausal { x: self.id_of(x)?, w: self.id_of(w)?, dilation }),
            &[x, w],
            vec![batch, c_out, t_len],
            out,
        )
    }

    /// Per-row `-log softmax(logits)[target]`; masked rows are zero.
    ///
    /// `logits` is `[N, V]`; the result has shape `[N]`.
    pub fn cross_entropy_rows(&self, logits: &Tensor<S>, targets: &[usize], mask: &[bool]) -> Result<Tensor<S>> {
        let s = logits.shape();
        if s.len() != 2 || targets.len() != s[0] || mask.len() != s[0] {
            return Err(dim_err!(
                "cross entropy over logits {:?} with {} targets and {} mask entries",
                s,
                targets.len(),
                mask.len()
            ));
        }
        let v = s[1];
        let mut probs = vec![S::zero(); s[0] * v];
        let mut losses = vec![S::zero(); s[0]];
        for (r, row) in logits.data().chunks(v).enumerate() {
            if targets[r] >= v {
                return Err(Error::Index(format!("target id {} at row {r} is not below {v}", targets[r])));
            }
            let lse = log_sum_exp(row);
            let p = &mut probs[r * v..(r + 1) * v];
            for (pi, &x) in p.iter_mut().zip(row) {
                *pi = (x - lse).exp();
            }
            if mask[r] {
                losses[r] = lse - row[targets[r]];
            }
        }
        self.push(
            || {
                Ok(Op::CrossEntropyRows {
                    logits: self.id_of(logits)?,
                    targets: targets.to_vec(),
                    mask: mask.to_vec(),
                    probs,
                })
            },
            &[logits],
            vec![s[0]],
            losses,
        )
    }

    /// Sum over unmasked rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&self, logits: &Tensor<S>, targets: &[usize], mask: &[bool]) -> Result<Tensor<S>> {
        let rows = self.cross_entropy_rows(logits, targets, mask)?;
        self.sum(&rows)
    }

    /// Softmax over the last axis.
    pub fn softmax(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (_, n) = last_dim(a.shape())?;
        let mut value = Vec::with_capacity(a.numel());
        for row in a.data().chunks(n) {
            let lse = log_sum_exp(row);
            value.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        self.push(|| Ok(Op::Softmax(self.id_of(a)?)), &[a], a.shape().to_vec(), value)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (_, n) = last_dim(a.shape())?;
        let mut value = Vec::with_capacity(a.numel());
        for row in a.data().chunks(n) {
            let lse = log_sum_exp(row);
            value.extend(row.iter().map(|&x| x - lse));
        }
        self.push(|| Ok(Op::LogSoftmax(self.id_of(a)?)), &[a], a.shape().to_vec(), value)
    }

    /// Inverted dropout: keeps each entry with probability `1 - rate` and
    /// scales kept entries by `1 / (1 - rate)`.
    pub fn dropout<R: rand::Rng + ?Sized>(&self, a: &Tensor<S>, rate: f64, rng: &mut R) -> Result<Tensor<S>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(a.clone());
        }
        let keep = S::c(1.0 / (1.0 - rate));
        let mask: Vec<S> = (0..a.numel())
            .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
            .collect();
        let mask = Tensor::new(a.shape().to_vec(), mask)?;
        self.mul(a, &mask)
    }

    /// Reverse pass from a single-element loss.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        if loss.numel() != 1 {
            return Err(dim_err!("backward needs a single-element loss, got {:?}", loss.shape()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<S>>> = (0..nodes.len()).map(|_| None).collect();
        let root = match loss.node() {
            Some(r) if r.tape == self.id => r.index,
            Some(_) => return Err(Error::Input("loss is recorded on a different tape".into())),
            None => return Ok(Gradients { tape: self.id, grads }),
        };
        grads[root] = Some(vec![S::one()]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&nodes, i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Gradients of one backward pass, looked up by the tensors of the forward pass.
#[derive(Debug)]
pub struct Gradients<S> {
    tape: u64,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `t`, or `None` if `t` is not reachable from the loss.
    pub fn wrt(&self, t: &Tensor<S>) -> Option<Tensor<S>> {
        let r = t.node()?;
        if r.tape != self.tape {
            return None;
        }
        let g = self.grads.get(r.index)?.as_ref()?;
        Some(Tensor::from_parts(t.shape().to_vec(), Arc::new(g.clone()), None))
    }

    /// Like [`Gradients::wrt`] but returns zeros for unreachable inputs.
    pub fn wrt_or_zero(&self, t: &Tensor<S>) -> Tensor<S> {
        self.wrt(t).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    m + row.iter().map(|&x| (x - m).exp()).sum::<S>().ln()
}

/// `out[m, n] += a[m, k] · b[k, n]`
fn matmul_acc<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn swap_last2_values<S: Scalar>(src: &[S], outer: usize, m: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); src.len()];
    for o in 0..outer {
        let base = o * m * n;
        for i in 0..m {
            for j in 0..n {
                out[base + j * m + i] = src[base + i * n + j];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_forward<S: Scalar>(x: &[S], w: &[S], out: &mut [S], batch: usize, c_in: usize, c_out: usize, t_len: usize, k: usize, dilation: usize) {
    for b in 0..batch {
        for o in 0..c_out {
            let orow = &mut out[(b * c_out + o) * t_len..(b * c_out + o + 1) * t_len];
            for i in 0..c_in {
                let xrow = &x[(b * c_in + i) * t_len..(b * c_in + i + 1) * t_len];
                for j in 0..k {
                    let wv = w[(o * c_in + i) * k + j];
                    let shift = (k - 1 - j) * dilation;
                    if shift >= t_len || wv == S::zero() {
                        continue;
                    }
                    for (y, &xv) in orow[shift..].iter_mut().zip(&xrow[..t_len - shift]) {
                        *y += wv * xv;
                    }
                }
            }
        }
    }
}

fn acc_into<S: Scalar>(
    nodes: &[Node<S>],
    grads: &mut [Option<Vec<S>>],
    id: usize,
    f: impl FnOnce(&mut [S]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let n = nodes[id].value.len();
    let g = grads[id].get_or_insert_with(|| vec![S::zero(); n]);
    f(g);
}

fn backprop_node<S: Scalar>(nodes: &[Node<S>], i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
    let node = &nodes[i];
    let out = &node.value;
    let val = |id: usize| -> &Vec<S> { &nodes[id].value };
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            acc_into(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
        }
        Op::Sub(a, b) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            acc_into(nodes, grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            acc_into(nodes, grads, *a, |ga| {
                for ((x, &gy), &bv) in ga.iter_mut().zip(g).zip(vb.iter()) {
                    *x += gy * bv;
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                for ((x, &gy), &av) in gb.iter_mut().zip(g).zip(va.iter()) {
                    *x += gy * av;
                }
            });
        }
        Op::Scale(a, c) => acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c)),
        Op::AddScalar(a) | Op::Reshape(a) => {
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y))
        }
        Op::AddRowBias(x, b) => {
            let n = nodes[*b].value.len();
            acc_into(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            acc_into(nodes, grads, *b, |gb| {
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                }
            });
        }
        Op::AddChannelBias(x, b) => {
            let s = &node.shape;
            let (c, t) = (s[1], s[2]);
            acc_into(nodes, grads, *x, |gx| gx.iter_mut().zip(g).for_each(|(x, &y)| *x += y));
            acc_into(nodes, grads, *b, |gb| {
                for (row, chunk) in g.chunks(t).enumerate() {
                    gb[row % c] += chunk.iter().copied().sum::<S>();
                }
            });
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (&nodes[*a].shape, &nodes[*b].shape);
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let (va, vb) = (val(*a), val(*b));
            acc_into(nodes, grads, *a, |ga| {
                // ga[m,k] += g[m,n] · b[k,n]^T
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &vb[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<S>();
                    }
                }
            });
            acc_into(nodes, grads, *b, |gb| {
                // gb[k,n] += a[m,k]^T · g[m,n]
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = va[i * k + p];
                        if av == S::zero() {
                            continue;
                        }
                        for (x, &gy) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *x += av * gy;
                        }
                    }
                }
            });
        }
        Op::Relu(a) => {
            let va = val(*a);
            acc_into(nodes, grads, *a, |ga| {
                for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(va.iter()) {
                    if v > S::zero() {
                        *x += gy;
                    }
                }
            });
        }
        Op::Sigmoid(a) => acc_into(nodes, grads, *a, |ga| {
            for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                *x += gy * y * (S::one() - y);
            }
        }),
        Op::Tanh(a) => acc_into(nodes, grads, *a, |ga| {
            for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                *x += gy * (S::one() - y * y);
            }
        }),
        Op::Exp(a) => acc_into(nodes, grads, *a, |ga| {
            for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                *x += gy * y;
            }
        }),
        Op::Log(a) => {
            let va = val(*a);
            acc_into(nodes, grads, *a, |ga| {
                for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(va.iter()) {
                    *x += gy / v;
                }
            });
        }
        Op::ClampMin(a, floor) => {
            let va = val(*a);
            acc_into(nodes, grads, *a, |ga| {
                for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(va.iter()) {
                    if v > *floor {
                        *x += gy;
                    }
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            for &p in inputs {
                let w = nodes[p].shape[*axis] * inner;
                acc_into(nodes, grads, p, |gp| {
                    for o in 0..outer {
                        let src = &g[o * total * inner + offset..o * total * inner + offset + w];
                        gp[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                    }
                });
                offset += w;
            }
        }
        Op::Slice { input, axis, start } => {
            let (outer, extent, inner) = split_axis(&nodes[*input].shape, *axis);
            let len = node.shape[*axis];
            acc_into(nodes, grads, *input, |ga| {
                for o in 0..outer {
                    let base = (o * extent + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    ga[base..base + len * inner].iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                }
            });
        }
        Op::SwapLast2(a) => {
            let s = &node.shape;
            let back = swap_last2_values(g, s[0], s[1], s[2]);
            acc_into(nodes, grads, *a, |ga| ga.iter_mut().zip(&back).for_each(|(x, &y)| *x += y));
        }
        Op::ExpandSteps(a) => {
            let s = &node.shape;
            let (steps, k) = (s[1], s[2]);
            acc_into(nodes, grads, *a, |ga| {
                for (b, row) in ga.chunks_mut(k).enumerate() {
                    for t in 0..steps {
                        let src = &g[(b * steps + t) * k..(b * steps + t + 1) * k];
                        row.iter_mut().zip(src).for_each(|(x, &y)| *x += y);
                    }
                }
            });
        }
        Op::Sum(a) => acc_into(nodes, grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        Op::SumLast(a) => {
            let n = *nodes[*a].shape.last().unwrap();
            acc_into(nodes, grads, *a, |ga| {
                for (row, &gy) in ga.chunks_mut(n).zip(g) {
                    row.iter_mut().for_each(|x| *x += gy);
                }
            });
        }
        Op::Gather { table, ids } => {
            let d = nodes[*table].shape[1];
            acc_into(nodes, grads, *table, |gt| {
                for (r, &id) in ids.iter().enumerate() {
                    gt[id * d..(id + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]).for_each(|(x, &y)| *x += y);
                }
            });
        }
        Op::Conv1dCausal { x, w, dilation } => {
            let (sx, sw) = (&nodes[*x].shape, &nodes[*w].shape);
            let (batch, c_in, t_len) = (sx[0], sx[1], sx[2]);
            let (c_out, k) = (sw[0], sw[2]);
            let (vx, vw) = (val(*x), val(*w));
            acc_into(nodes, grads, *x, |gx| {
                for b in 0..batch {
                    for o in 0..c_out {
                        let grow = &g[(b * c_out + o) * t_len..(b * c_out + o + 1) * t_len];
                        for i in 0..c_in {
                            let gxrow = &mut gx[(b * c_in + i) * t_len..(b * c_in + i + 1) * t_len];
                            for j in 0..k {
                                let wv = vw[(o * c_in + i) * k + j];
                                let shift = (k - 1 - j) * dilation;
                                if shift >= t_len || wv == S::zero() {
                                    continue;
                                }
                                for (xg, &gy) in gxrow[..t_len - shift].iter_mut().zip(&grow[shift..]) {
                                    *xg += wv * gy;
                                }
                            }
                        }
                    }
                }
            });
            acc_into(nodes, grads, *w, |gw| {
                for b in 0..batch {
                    for o in 0..c_out {
                        let grow = &g[(b * c_out + o) * t_len..(b * c_out + o + 1) * t_len];
                        for i in 0..c_in {
                            let xrow = &vx[(b * c_in + i) * t_len..(b * c_in + i + 1) * t_len];
                            for j in 0..k {
                                let shift = (k - 1 - j) * dilation;
                                if shift >= t_len {
                                    continue;
                                }
                                gw[(o * c_in + i) * k + j] +=
                                    grow[shift..].iter().zip(&xrow[..t_len - shift]).map(|(&a, &b)| a * b).sum::<S>();
                            }
                        }
                    }
                }
            });
        }
        Op::CrossEntropyRows { logits, targets, mask, probs } => {
            let v = nodes[*logits].shape[1];
            acc_into(nodes, grads, *logits, |gl| {
                for (r, &gy) in g.iter().enumerate() {
                    if !mask[r] || gy == S::zero() {
                        continue;
                    }
                    let row = &mut gl[r * v..(r + 1) * v];
                    for (x, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                        *x += gy * p;
                    }
                    row[targets[r]] -= gy;
                }
            });
        }
        Op::Softmax(a) => {
            let n = *node.shape.last().unwrap();
            acc_into(nodes, grads, *a, |ga| {
                for ((garow, grow), yrow) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let dot: S = grow.iter().zip(yrow).map(|(&x, &y)| x * y).sum();
                    for ((x, &gy), &y) in garow.iter_mut().zip(grow).zip(yrow) {
                        *x += y * (gy - dot);
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let n = *node.shape.last().unwrap();
            acc_into(nodes, grads, *a, |ga| {
                for ((garow, grow), yrow) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                    let total: S = grow.iter().copied().sum();
                    for ((x, &gy), &y) in garow.iter_mut().zip(grow).zip(yrow) {
                        *x += gy - y.exp() * total;
                    }
                }
            });
        }
    }
}
