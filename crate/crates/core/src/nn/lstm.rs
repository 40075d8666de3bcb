use super::linear::INIT_SCALE;
use super::params::{Bound, Init, ParamId, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Single-layer LSTM with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    /// `[input_dim, 4·hidden]`
    pub input_weight: ParamId,
    /// `[hidden, 4·hidden]`
    pub hidden_weight: ParamId,
    /// `[4·hidden]`, forget slice initialized to 1.
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, init: &mut Init, name: &str, input_dim: usize, hidden: usize) -> Result<Self> {
        let input_weight = store.add(&format!("{name}.input_weight"), init.uniform(&[input_dim, 4 * hidden], INIT_SCALE))?;
        let hidden_weight = store.add(&format!("{name}.hidden_weight"), init.uniform(&[hidden, 4 * hidden], INIT_SCALE))?;
        let mut b = vec![S::zero(); 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = S::one());
        let bias = store.add(&format!("{name}.bias"), Tensor::new(vec![4 * hidden], b)?)?;
        Ok(Self { input_weight, hidden_weight, bias, input_dim, hidden })
    }

    /// One step from the input projection `x·W_x` (`[B, 4H]`).
    fn step_projected<S: Scalar>(&self, p: &Bound<S>, xw: &Tensor<S>, h: &Tensor<S>, c: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let t = p.tape;
        let hw = t.matmul(h, p.var(self.hidden_weight))?;
        let pre = t.add_row_bias(&t.add(xw, &hw)?, p.var(self.bias))?;
        let n = self.hidden;
        let i = t.sigmoid(&t.slice(&pre, 1, 0, n)?)?;
        let f = t.sigmoid(&t.slice(&pre, 1, n, n)?)?;
        let g = t.tanh(&t.slice(&pre, 1, 2 * n, n)?)?;
        let o = t.sigmoid(&t.slice(&pre, 1, 3 * n, n)?)?;
        let c_next = t.add(&t.mul(&f, c)?, &t.mul(&i, &g)?)?;
        let h_next = t.mul(&o, &t.tanh(&c_next)?)?;
        Ok((h_next, c_next))
    }

    fn check_state<S: Scalar>(&self, h: &Tensor<S>, c: &Tensor<S>, batch: usize) -> Result<()> {
        let want = [batch, self.hidden];
        if h.shape() != want || c.shape() != want {
            return Err(dim_err!("LSTM state must be {:?}, got h {:?} and c {:?}", want, h.shape(), c.shape()));
        }
        Ok(())
    }

    /// `x_t: [B, input_dim]`, `h, c: [B, hidden]`.
    pub fn step<S: Scalar>(&self, p: &Bound<S>, x_t: &Tensor<S>, h: &Tensor<S>, c: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        if x_t.shape().len() != 2 || x_t.shape()[1] != self.input_dim {
            return Err(dim_err!("LSTM input must be [B, {}], got {:?}", self.input_dim, x_t.shape()));
        }
        self.check_state(h, c, x_t.shape()[0])?;
        let xw = p.tape.matmul(x_t, p.var(self.input_weight))?;
        self.step_projected(p, &xw, h, c)
    }

    /// Input projections for all steps at once: `[B, T, d] → T × [B, 4H]`.
    fn project_all<S: Scalar>(&self, p: &Bound<S>, xs: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let s = xs.shape();
        if s.len() != 3 || s[2] != self.input_dim {
            return Err(dim_err!("LSTM sequence input must be [B, T, {}], got {:?}", self.input_dim, s));
        }
        let (b, steps) = (s[0], s[1]);
        let t = p.tape;
        let flat = t.reshape(xs, vec![b * steps, self.input_dim])?;
        let proj = t.reshape(&t.matmul(&flat, p.var(self.input_weight))?, vec![b, steps, 4 * self.hidden])?;
        (0..steps)
            .map(|k| t.reshape(&t.slice(&proj, 1, k, 1)?, vec![b, 4 * self.hidden]))
            .collect()
    }

    /// Runs over every step from `(h0, c0)`; returns all hidden states.
    pub fn run<S: Scalar>(&self, p: &Bound<S>, xs: &Tensor<S>, h0: Tensor<S>, c0: Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let projected = self.project_all(p, xs)?;
        self.check_state(&h0, &c0, xs.shape()[0])?;
        let (mut h, mut c) = (h0, c0);
        let mut out = Vec::with_capacity(projected.len());
        for xw in &projected {
            (h, c) = self.step_projected(p, xw, &h, &c)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Hidden state at each sequence's last real position, from a zero state.
    ///
    /// Positions at or beyond a row's length leave that row's state untouched,
    /// so padding content never reaches the result.
    pub fn encode<S: Scalar>(&self, p: &Bound<S>, xs: &Tensor<S>, lengths: &[usize]) -> Result<Tensor<S>> {
        let s = xs.shape();
        if s.len() != 3 || lengths.len() != s[0] {
            return Err(dim_err!("{} lengths for input {:?}", lengths.len(), s));
        }
        let (b, steps) = (s[0], s[1]);
        if let Some(&bad) = lengths.iter().find(|&&l| l == 0 || l > steps) {
            return Err(Error::Input(format!("sequence length {bad} outside [1, {steps}]")));
        }
        let projected = self.project_all(p, xs)?;
        let t = p.tape;
        let n = self.hidden;
        let mut h = Tensor::zeros(vec![b, n]);
        let mut c = Tensor::zeros(vec![b, n]);
        let full = lengths.iter().all(|&l| l == steps);
        for (k, xw) in projected.iter().enumerate() {
            let (h_new, c_new) = self.step_projected(p, xw, &h, &c)?;
            if full || lengths.iter().all(|&l| k < l) {
                (h, c) = (h_new, c_new);
            } else {
                let keep: Vec<S> = lengths
                    .iter()
                    .flat_map(|&l| std::iter::repeat_n(if k < l { S::one() } else { S::zero() }, n))
                    .collect();
                let keep = Tensor::new(vec![b, n], keep)?;
                h = t.add(&h, &t.mul(&keep, &t.sub(&h_new, &h)?)?)?;
                c = t.add(&c, &t.mul(&keep, &t.sub(&c_new, &c)?)?)?;
            }
        }
        Ok(h)
    }
}
