use super::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of comparing tape gradients against central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input position, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-3)`. The floor keeps near-zero gradients
/// from amplifying finite-difference round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Compares the reverse-mode gradient of `f` against central differences
/// with step `h`, coordinate by coordinate, over every input.
///
/// `f` must be deterministic: it is re-run on a fresh tape for each probe.
pub fn grad_check<S, F>(f: F, inputs: &[Tensor<S>], h: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&Tape<S>, &[Tensor<S>]) -> Result<Tensor<S>>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor<S>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = f(&tape, &leaves)?;
    if !loss.all_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    let grads = tape.backward(&loss)?;

    let eval = |inputs: &[Tensor<S>]| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, inputs)?.item().as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric("loss is not finite under perturbation".into()))
        }
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    let mut probe: Vec<Tensor<S>> = inputs.iter().map(Tensor::detach).collect();
    for (pos, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt_or_zero(leaf);
        if !analytic.all_finite() {
            return Err(Error::Numeric(format!("gradient of input {pos} is not finite")));
        }
        let base = inputs[pos].to_vec();
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus[idx] = S::c(base[idx].as_f64() + h);
            probe[pos] = Tensor::new(inputs[pos].shape().to_vec(), plus)?;
            let fp = eval(&probe)?;
            let mut minus = base.clone();
            minus[idx] = S::c(base[idx].as_f64() - h);
            probe[pos] = Tensor::new(inputs[pos].shape().to_vec(), minus)?;
            let fm = eval(&probe)?;
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(analytic.data()[idx].as_f64(), numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pos, idx);
            }
            report.coordinates += 1;
        }
        probe[pos] = inputs[pos].detach();
    }
    Ok(report)
}
