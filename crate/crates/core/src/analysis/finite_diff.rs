use crate::error::{Error, Result};
use crate::learning::{sequence_loss, Batch, LossSpec};
use crate::network::{Network, Params};
use crate::neuron::SpikeMode;

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Finite-difference gradient of the smooth-forward network's loss, in
/// canonical parameter order. Costs two rollouts per parameter.
pub fn finite_diff_grad(net: &Network, params: &Params, batch: &Batch, loss: LossSpec, h: f64) -> Result<Vec<f64>> {
    batch.validate(net)?;
    let smooth = net.clone().with_mode(SpikeMode::Smooth);
    let f = |flat: &[f64]| -> Result<f64> {
        let p = params.with_flat(flat)?;
        let r = smooth.rollout(&p, &batch.x)?;
        sequence_loss(loss, &r.outputs, &batch.labels)
    };
    central_difference(f, &params.flatten(), h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_toy() {
        let g = central_difference(|x| Ok(x[0] * x[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn zero_step_rejected() {
        assert!(central_difference(|x| Ok(x[0]), &[1.0], 0.0).is_err());
    }
}
