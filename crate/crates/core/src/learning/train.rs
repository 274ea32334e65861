//! Offline, online and online-deferred training loops.

use crate::error::{Error, Result};
use crate::network::{Network, Params};
use crate::tensor::Tensor;

use super::bptt::bptt_grad;
use super::fptt::{fptt_update, FpttConfig};
use super::loss::{sequence_loss, LossSpec};
use super::optim::{optimizer_step, OptState, OptimizerSpec};
use super::{Batch, Estimator, OnlineLearner};

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: Params,
    pub opt_state: OptState,
    /// `[batch, T, out]`
    pub outputs: Tensor,
    pub loss: f64,
    /// FPTT running mean θ̄ at the end of the sequence.
    pub fptt_mean: Option<Params>,
}

/// Forward pass only: loss and rollout.
pub fn evaluate(net: &Network, params: &Params, batch: &Batch, loss: LossSpec) -> Result<(f64, crate::network::Rollout)> {
    batch.validate(net)?;
    let rollout = net.rollout(params, &batch.x)?;
    let value = sequence_loss(loss, &rollout.outputs, &batch.labels)?;
    Ok((value, rollout))
}

/// One BPTT gradient and one optimizer step.
pub fn train_offline(
    net: &Network,
    params: &Params,
    opt: &OptimizerSpec,
    opt_state: &OptState,
    batch: &Batch,
    loss: LossSpec,
) -> Result<TrainOutput> {
    let g = bptt_grad(net, params, batch, loss)?;
    if !g.loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let (params, opt_state) = optimizer_step(opt, opt_state, params, &g.grads)?;
    Ok(TrainOutput {
        params,
        opt_state,
        outputs: g.rollout.outputs,
        loss: g.loss,
        fptt_mean: None,
    })
}

/// Gradient accumulated over the whole sequence by an online estimator,
/// with the parameters held fixed. Returns `(grads, total_loss, outputs)`.
pub fn deferred_grad(
    net: &Network,
    params: &Params,
    batch: &Batch,
    loss: LossSpec,
    estimator: Estimator,
) -> Result<(Params, f64, Tensor)> {
    batch.validate(net)?;
    let mut learner = OnlineLearner::new(estimator, net, params, batch.size())?;
    let mut acc = params.zeros_like();
    let mut total = 0.0;
    let mut outs = Vec::with_capacity(batch.timesteps());
    for t in 0..batch.timesteps() {
        let out = learner.step(net, params, &batch.x.time_slice(t), &batch.labels, loss)?;
        acc.add_assign(&out.grads);
        total += out.loss;
        outs.push(out.output);
    }
    Ok((acc, total, Tensor::stack_time(&outs)))
}

/// Estimator steps accumulate over the sequence; one optimizer step at the end.
pub fn train_online_deferred(
    net: &Network,
    params: &Params,
    opt: &OptimizerSpec,
    opt_state: &OptState,
    batch: &Batch,
    loss: LossSpec,
    estimator: Estimator,
) -> Result<TrainOutput> {
    let (grads, total, outputs) = deferred_grad(net, params, batch, loss, estimator)?;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let (params, opt_state) = optimizer_step(opt, opt_state, params, &grads)?;
    Ok(TrainOutput {
        params,
        opt_state,
        outputs,
        loss: total,
        fptt_mean: None,
    })
}

/// Parameters are updated after every timestep. With `fptt`, each update
/// goes through the FPTT regularizer, whose running mean starts at the
/// sequence's initial parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_online(
    net: &Network,
    params: &Params,
    opt: &OptimizerSpec,
    opt_state: &OptState,
    batch: &Batch,
    loss: LossSpec,
    estimator: Estimator,
    fptt: Option<&FpttConfig>,
) -> Result<TrainOutput> {
    batch.validate(net)?;
    if let Some(cfg) = fptt {
        cfg.validate()?;
    }
    let mut learner = OnlineLearner::new(estimator, net, params, batch.size())?;
    let mut params = params.clone();
    let mut opt_state = opt_state.clone();
    let mut mean = fptt.map(|_| params.clone());
    let mut total = 0.0;
    let mut outs = Vec::with_capacity(batch.timesteps());
    for t in 0..batch.timesteps() {
        let x_t = batch.x.time_slice(t);
        let snapshot = match fptt {
            Some(cfg) if !cfg.reuse_gradient => Some(learner.clone()),
            _ => None,
        };
        let out = learner.step(net, &params, &x_t, &batch.labels, loss)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        total += out.loss;
        outs.push(out.output);
        match (fptt, mean.as_mut()) {
            (Some(cfg), Some(bar)) => {
                let recompute = |p: &Params| -> Result<Params> {
                    let mut again = snapshot.clone().expect("snapshot kept when recomputing");
                    Ok(again.step(net, p, &x_t, &batch.labels, loss)?.grads)
                };
                let (next, next_bar, next_state) =
                    fptt_update(cfg, &out.grads, &params, bar, opt, &opt_state, recompute)?;
                params = next;
                *bar = next_bar;
                opt_state = next_state;
            }
            _ => {
                let (next, next_state) = optimizer_step(opt, &opt_state, &params, &out.grads)?;
                params = next;
                opt_state = next_state;
            }
        }
    }
    Ok(TrainOutput {
        params,
        opt_state,
        outputs: Tensor::stack_time(&outs),
        loss: total,
        fptt_mean: mean,
    })
}
