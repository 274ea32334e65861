//! Backpropagation through time over a recorded rollout.
//!
//! Adjoint recursion for a LIF layer at step `t`:
//!
//! ```text
//! g_vpre[t] = g_s[t]·σ'[t] + g_v[t]·(1 − v_th·σ'[t])     (factor 1 with detach_reset)
//! g_v[t−1]  = λ·g_vpre[t]
//! g_τ      += g_vpre[t]·v[t−1]·λ(1−λ)
//! ```
//!
//! Delayed `cat` edges hand their input adjoint to the source layer one
//! step earlier.

use crate::error::{Error, Result};
use crate::network::{LayerKind, LayerParams, Network, Params, Rollout, Source};
use crate::tensor::Tensor;

use super::loss::{accumulate_time, softmax_cross_entropy, LossMode, LossSpec};
use super::Batch;

#[derive(Debug, Clone)]
pub struct GradResult {
    pub grads: Params,
    pub loss: f64,
    pub rollout: Rollout,
}

/// Loss value and its gradient with respect to each step's network output.
pub(crate) fn output_adjoints(
    loss: LossSpec,
    outputs: &Tensor,
    labels: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let t_len = outputs.shape()[1];
    match loss.mode {
        LossMode::Offline => {
            let (l, g) = softmax_cross_entropy(&accumulate_time(outputs), labels)?;
            Ok((l, vec![g; t_len]))
        }
        LossMode::Online => {
            let mut total = 0.0;
            let mut gs = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let (l, g) = softmax_cross_entropy(&outputs.time_slice(t), labels)?;
                total += l;
                gs.push(g);
            }
            Ok((total, gs))
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, value: Tensor) {
    match slot {
        Some(t) => t.add_assign(&value),
        None => *slot = Some(value),
    }
}

pub fn bptt_grad(net: &Network, params: &Params, batch: &Batch, loss: LossSpec) -> Result<GradResult> {
    batch.validate(net)?;
    let rollout = net.rollout(params, &batch.x)?;
    let (loss_value, g_out) = output_adjoints(loss, &rollout.outputs, &batch.labels)?;
    let grads = backward(net, params, batch, &rollout, &g_out)?;
    Ok(GradResult {
        grads,
        loss: loss_value,
        rollout,
    })
}

/// Reverse sweep given adjoints of the network output at every step.
pub(crate) fn backward(
    net: &Network,
    params: &Params,
    batch: &Batch,
    rollout: &Rollout,
    g_out: &[Tensor],
) -> Result<Params> {
    let layers = net.layers();
    let n = layers.len();
    let t_len = rollout.records.len();
    let b = batch.x.shape()[0];
    let mut grads = params.zeros_like();
    let leaks: Vec<Option<Vec<f64>>> = (0..n)
        .map(|d| layers[d].lif_config().map(|_| net.leak(params, d)))
        .collect();

    let mut g_v: Vec<Option<Tensor>> = vec![None; n];
    let mut g_delay: Vec<Option<Tensor>> = vec![None; n];

    for t in (0..t_len).rev() {
        let rec = &rollout.records[t];
        let prev = if t > 0 {
            Some(&rollout.records[t - 1])
        } else {
            None
        };
        let x_t = batch.x.time_slice(t);
        let mut g_y = std::mem::replace(&mut g_delay, vec![None; n]);
        accumulate(&mut g_y[n - 1], g_out[t].clone());

        for d in (0..n).rev() {
            let layer = &layers[d];
            let g_in = match &layer.kind {
                LayerKind::Affine => {
                    let Some(gy) = g_y[d].take() else { continue };
                    let u = net.gather_input(d, &x_t, &rec.outputs, |s| prev.map(|p| &p.outputs[s]));
                    let LayerParams::Affine { w, .. } = &params.layers[d] else {
                        unreachable!()
                    };
                    let g_u = gy.matmul(w);
                    let (gw, gb) = grads.affine_mut(d);
                    gy.t_matmul_acc(&u, gw);
                    for (acc, v) in gb.data_mut().iter_mut().zip(gy.sum_rows()) {
                        *acc += v;
                    }
                    g_u
                }
                LayerKind::Lif(cfg) => {
                    let lif = rec.lif[d].as_ref().unwrap();
                    let leak = leaks[d].as_ref().unwrap();
                    let width = layer.out_width;
                    let gy = g_y[d].take();
                    let gv = g_v[d].take();
                    if gy.is_none() && gv.is_none() {
                        continue;
                    }
                    let mut g_vpre = Tensor::zeros(&[b, width]);
                    {
                        let sig = lif.sigma.data();
                        let out = g_vpre.data_mut();
                        if let Some(gy) = &gy {
                            for (o, (g, s)) in out.iter_mut().zip(gy.data().iter().zip(sig)) {
                                *o = g * s;
                            }
                        }
                        if let Some(gv) = &gv {
                            for (o, (g, s)) in out.iter_mut().zip(gv.data().iter().zip(sig)) {
                                *o += g * cfg.reset_factor(*s);
                            }
                        }
                    }
                    if !g_vpre.all_finite() {
                        return Err(Error::NonFiniteAdjoint { layer: d, t });
                    }
                    if t > 0 {
                        let mut carry = g_vpre.clone();
                        for r in 0..b {
                            for (c, l) in carry.row_mut(r).iter_mut().zip(leak) {
                                *c *= l;
                            }
                        }
                        g_v[d] = Some(carry);
                    }
                    if let Some(gtau) = grads.tau_mut(d) {
                        let gt = gtau.data_mut();
                        for r in 0..b {
                            let gp = g_vpre.row(r);
                            let vp = lif.v_prev.row(r);
                            for i in 0..width {
                                gt[i] += gp[i] * vp[i] * leak[i] * (1.0 - leak[i]);
                            }
                        }
                    }
                    g_vpre
                }
            };

            if !g_in.all_finite() {
                return Err(Error::NonFiniteAdjoint { layer: d, t });
            }
            let single = layer.inputs.len() == 1;
            for seg in &layer.inputs {
                let part = || {
                    if single {
                        g_in.clone()
                    } else {
                        g_in.col_slice(seg.offset, seg.width)
                    }
                };
                match seg.source {
                    Source::Input => {}
                    Source::Layer {
                        index,
                        delayed: false,
                    } => accumulate(&mut g_y[index], part()),
                    Source::Layer {
                        index,
                        delayed: true,
                    } => {
                        if t > 0 {
                            accumulate(&mut g_delay[index], part())
                        }
                    }
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, NetworkSpec};

    fn single_neuron(w: f64) -> (Network, Params) {
        let net = Network::new(NetworkSpec::chain(vec![LayerSpec::affine(1), LayerSpec::lif()]), 1).unwrap();
        let mut p = net.init_params(0);
        p.affine_mut(0).0.data_mut()[0] = w;
        (net, p)
    }

    // Loss = s at the single step, so the output adjoint is 1.
    fn spike_loss_grads(net: &Network, p: &Params, x: f64) -> Params {
        let batch = Batch::new(Tensor::from_vec(&[1, 1, 1], vec![x]).unwrap(), vec![0]).unwrap();
        let rollout = net.rollout(p, &batch.x).unwrap();
        backward(net, p, &batch, &rollout, &[Tensor::from_rows(&[vec![1.0]])]).unwrap()
    }

    #[test]
    fn hand_chain_rule_single_neuron() {
        let (net, p) = single_neuron(1.0);
        let g = spike_loss_grads(&net, &p, 1.04).flatten();
        assert!((g[0] - 0.26).abs() < 1e-12, "dL/dw = {}", g[0]);
        assert!((g[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_input_only_bias_path() {
        let (net, p) = single_neuron(0.7);
        let g = spike_loss_grads(&net, &p, 0.0).flatten();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1.0 / 676.0).abs() < 1e-15);
    }
}
