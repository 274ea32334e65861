//! Softmax cross-entropy in the two accumulation semantics.
//!
//! Offline: the loss is applied once to the outputs summed over time.
//! Online: the loss is applied to every step's output and summed over time.
//! Both average over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Offline,
    Online,
}

/// Softmax cross-entropy with the given accumulation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossSpec {
    pub mode: LossMode,
}

impl LossSpec {
    pub fn offline() -> Self {
        LossSpec {
            mode: LossMode::Offline,
        }
    }

    pub fn online() -> Self {
        LossSpec {
            mode: LossMode::Online,
        }
    }
}

/// Batch-mean softmax cross-entropy of `logits` (`[batch, classes]`) and
/// its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(&[batch, classes]);
    let mut total = 0.0;
    let inv_b = 1.0 / batch as f64;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let z = logits.row(r);
        let arg = (0..classes).fold(0, |best, c| if z[c] > z[best] { c } else { best });
        let max = z[arg];
        // ln Σ exp(z − max) = ln(1 + rest); ln_1p keeps tiny losses exact.
        let rest: f64 = (0..classes).filter(|&c| c != arg).map(|c| (z[c] - max).exp()).sum();
        let log_sum = rest.ln_1p();
        let lse = max + log_sum;
        total += (max - z[label]) + log_sum;
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (z[c] - lse).exp();
            *gv = (p - if c == label { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    let loss = (total * inv_b).max(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, grad))
}

/// Sum of `outputs` (`[batch, T, C]`) over time.
pub fn accumulate_time(outputs: &Tensor) -> Tensor {
    let (b, t, c) = (outputs.shape()[0], outputs.shape()[1], outputs.shape()[2]);
    let mut acc = Tensor::zeros(&[b, c]);
    for ti in 0..t {
        acc.add_assign(&outputs.time_slice(ti));
    }
    acc
}

pub fn loss_offline(outputs: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(softmax_cross_entropy(&accumulate_time(outputs), labels)?.0)
}

pub fn loss_online_step(output_t: &Tensor, labels: &[usize]) -> Result<f64> {
    Ok(softmax_cross_entropy(output_t, labels)?.0)
}

/// Loss of a whole rollout's outputs under `spec`.
pub fn sequence_loss(spec: LossSpec, outputs: &Tensor, labels: &[usize]) -> Result<f64> {
    match spec.mode {
        LossMode::Offline => loss_offline(outputs, labels),
        LossMode::Online => {
            let mut total = 0.0;
            for t in 0..outputs.shape()[1] {
                total += loss_online_step(&outputs.time_slice(t), labels)?;
            }
            Ok(total)
        }
    }
}
