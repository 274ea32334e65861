//! Layer-local online rules: OSTL and OTTT.
//!
//! Both work on a chain of (affine, LIF) blocks. The gradient of block `ℓ`
//! at step `t` is a learning signal `L_ℓ[t] = ∂L_t/∂s_ℓ[t]`, obtained by
//! backpropagating the step loss through the downstream blocks at the same
//! step only, combined with a forward-running trace of the block's own
//! history:
//!
//! - OSTL keeps the membrane eligibility `E = ∂v/∂θ` of the block. For `W`
//!   the entries `∂v_i/∂W_jk` with `j ≠ i` vanish, so `E` is stored as
//!   `[batch, out, in]` instead of `[batch, out, out·in]`.
//! - OTTT keeps a leaky trace of the block input, `â = leak·â + a_in`, and
//!   uses `(L ⊙ σ') ⊗ â`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LayerKind, NetState, Network, Params, Source, StepRecord};
use crate::tensor::Tensor;

use super::loss::{softmax_cross_entropy, LossMode, LossSpec};
use super::StepOutput;

/// Leak used by the OTTT presynaptic trace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceLeak {
    /// The block's own LIF leak `logistic(τ)`.
    #[default]
    NeuronLeak,
    Fixed(f64),
}

/// Affine/LIF layer pair of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainBlock {
    pub affine: usize,
    pub lif: usize,
}

/// Splits `net` into (affine, LIF) blocks. `cat` edges are only allowed
/// into a block's affine layer from that same block (delayed feedback).
pub fn chain_blocks(net: &Network) -> Result<Vec<ChainBlock>> {
    let err = || Error::Topology("OSTL requires a layer chain".into());
    let layers = net.layers();
    if !layers.len().is_multiple_of(2) {
        return Err(err());
    }
    let mut blocks = Vec::with_capacity(layers.len() / 2);
    for k in 0..layers.len() / 2 {
        let (a, l) = (2 * k, 2 * k + 1);
        if !layers[a].is_affine() || layers[l].lif_config().is_none() {
            return Err(err());
        }
        if layers[l].inputs.len() != 1 {
            return Err(err());
        }
        for seg in &layers[a].inputs[1..] {
            match seg.source {
                Source::Layer { index, .. } if index == a || index == l => {}
                _ => return Err(err()),
            }
        }
        blocks.push(ChainBlock { affine: a, lif: l });
    }
    Ok(blocks)
}

/// `∂L_t/∂s_ℓ[t]` for every block, treating membranes as constants.
pub fn learning_signals(
    net: &Network,
    params: &Params,
    blocks: &[ChainBlock],
    rec: &StepRecord,
    g_out: &Tensor,
) -> Vec<Tensor> {
    let mut signals = vec![Tensor::zeros(&[0]); blocks.len()];
    let mut g = g_out.clone();
    for m in (0..blocks.len()).rev() {
        if m > 0 {
            let sigma = &rec.lif[blocks[m].lif].as_ref().unwrap().sigma;
            let gv = g.zip_map(sigma, |a, b| a * b);
            let (w, _) = params.affine(blocks[m].affine);
            let ga = gv.matmul(w);
            let width = net.layers()[blocks[m - 1].lif].out_width;
            let next = if ga.cols() == width {
                ga
            } else {
                ga.col_slice(0, width)
            };
            signals[m] = std::mem::replace(&mut g, next);
        } else {
            signals[m] = std::mem::replace(&mut g, Tensor::zeros(&[0]));
        }
    }
    signals
}

fn check_online(loss: LossSpec) -> Result<()> {
    if loss.mode != LossMode::Online {
        return Err(Error::OfflineLossUnsupported);
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct OstlBlockTrace {
    /// `[batch·out, in]`
    weight: Tensor,
    /// `[batch, out]`
    bias: Tensor,
    tau: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct OstlTraces {
    state: NetState,
    blocks: Vec<ChainBlock>,
    traces: Vec<OstlBlockTrace>,
    batch: usize,
}

impl OstlTraces {
    pub fn new(net: &Network, params: &Params, batch: usize) -> Result<Self> {
        net.check_params(params)?;
        let blocks = chain_blocks(net)?;
        let traces = blocks
            .iter()
            .map(|blk| {
                let a = &net.layers()[blk.affine];
                OstlBlockTrace {
                    weight: Tensor::zeros(&[batch * a.out_width, a.in_width]),
                    bias: Tensor::zeros(&[batch, a.out_width]),
                    tau: net.layers()[blk.lif]
                        .lif_config()
                        .filter(|c| c.trainable_tau)
                        .map(|_| Tensor::zeros(&[batch, a.out_width])),
                }
            })
            .collect();
        Ok(OstlTraces {
            state: net.init_state(batch)?,
            blocks,
            traces,
            batch,
        })
    }

    pub fn state(&self) -> &NetState {
        &self.state
    }

    /// Compressed weight eligibility of block `k`, `[batch·out, in]`.
    pub fn weight_eligibility(&self, k: usize) -> &Tensor {
        &self.traces[k].weight
    }

    pub fn step(
        &mut self,
        net: &Network,
        params: &Params,
        x_t: &Tensor,
        labels: &[usize],
        loss: LossSpec,
    ) -> Result<StepOutput> {
        check_online(loss)?;
        if x_t.rows() != self.batch {
            return Err(Error::Shape(format!(
                "OSTL traces built for batch {}, got {}",
                self.batch,
                x_t.rows()
            )));
        }
        let (next_state, y, rec) = net.forward_step(params, &self.state, x_t)?;
        let (loss_t, g_out) = softmax_cross_entropy(&y, labels)?;
        let signals = learning_signals(net, params, &self.blocks, &rec, &g_out);
        let mut grads = params.zeros_like();
        let b = self.batch;

        for (k, blk) in self.blocks.iter().enumerate() {
            let layer = &net.layers()[blk.affine];
            let LayerKind::Lif(cfg) = &net.layers()[blk.lif].kind else {
                unreachable!()
            };
            let (out_w, in_w) = (layer.out_width, layer.in_width);
            let u = net.gather_input(blk.affine, x_t, &rec.outputs, |s| self.state.prev_out[s].as_ref());
            let lif = rec.lif[blk.lif].as_ref().unwrap();
            let leak = net.leak(params, blk.lif);
            let sig = &signals[k];
            let tr = &mut self.traces[k];

            let (gw, gb) = grads.affine_mut(blk.affine);
            for s in 0..b {
                let urow = u.row(s);
                for i in 0..out_w {
                    let lam = leak[i];
                    let sigma = lif.sigma.get2(s, i);
                    let keep = cfg.reset_factor(sigma);
                    let l = sig.get2(s, i);
                    let scale = l * sigma;
                    let erow = tr.weight.row_mut(s * out_w + i);
                    let grow = gw.row_mut(i);
                    for kx in 0..in_w {
                        let pre = lam * erow[kx] + urow[kx];
                        erow[kx] = keep * pre;
                        grow[kx] += scale * pre;
                    }
                    let eb = tr.bias.get2(s, i);
                    let pre = lam * eb + 1.0;
                    tr.bias.set2(s, i, keep * pre);
                    gb.data_mut()[i] += scale * pre;
                }
            }
            if let Some(et) = tr.tau.as_mut() {
                let gt = grads.tau_mut(blk.lif).unwrap();
                for s in 0..b {
                    for i in 0..out_w {
                        let lam = leak[i];
                        let sigma = lif.sigma.get2(s, i);
                        let pre = lam * et.get2(s, i) + lam * (1.0 - lam) * lif.v_prev.get2(s, i);
                        et.set2(s, i, cfg.reset_factor(sigma) * pre);
                        gt.data_mut()[i] += sig.get2(s, i) * sigma * pre;
                    }
                }
            }
        }
        self.state = next_state;
        Ok(StepOutput {
            grads,
            loss: loss_t,
            output: y,
            record: rec,
        })
    }
}

#[derive(Debug, Clone)]
pub struct OtttTraces {
    state: NetState,
    blocks: Vec<ChainBlock>,
    trace_leak: TraceLeak,
    /// Per block `[batch, in]`.
    input_traces: Vec<Tensor>,
    /// Per block, trace of the constant bias input.
    bias_traces: Vec<f64>,
    batch: usize,
}

impl OtttTraces {
    pub fn new(net: &Network, params: &Params, batch: usize, trace_leak: TraceLeak) -> Result<Self> {
        net.check_params(params)?;
        if let TraceLeak::Fixed(l) = trace_leak {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("fixed trace leak must lie in (0, 1), got {l}")));
            }
        }
        let blocks = chain_blocks(net)?;
        let input_traces = blocks
            .iter()
            .map(|blk| Tensor::zeros(&[batch, net.layers()[blk.affine].in_width]))
            .collect();
        Ok(OtttTraces {
            state: net.init_state(batch)?,
            bias_traces: vec![0.0; blocks.len()],
            blocks,
            trace_leak,
            input_traces,
            batch,
        })
    }

    pub fn state(&self) -> &NetState {
        &self.state
    }

    /// Presynaptic trace of block `k`, `[batch, in]`.
    pub fn input_trace(&self, k: usize) -> &Tensor {
        &self.input_traces[k]
    }

    fn block_leak(&self, net: &Network, params: &Params, blk: &ChainBlock) -> Result<f64> {
        match self.trace_leak {
            TraceLeak::Fixed(l) => Ok(l),
            TraceLeak::NeuronLeak => {
                let leak = net.leak(params, blk.lif);
                let first = leak[0];
                if leak.iter().any(|&l| l != first) {
                    return Err(Error::Topology(format!(
                        "OTTT neuron-leak traces need a uniform leak in layer {}",
                        blk.lif
                    )));
                }
                Ok(first)
            }
        }
    }

    pub fn step(
        &mut self,
        net: &Network,
        params: &Params,
        x_t: &Tensor,
        labels: &[usize],
        loss: LossSpec,
    ) -> Result<StepOutput> {
        check_online(loss)?;
        if x_t.rows() != self.batch {
            return Err(Error::Shape(format!(
                "OTTT traces built for batch {}, got {}",
                self.batch,
                x_t.rows()
            )));
        }
        let (next_state, y, rec) = net.forward_step(params, &self.state, x_t)?;
        let (loss_t, g_out) = softmax_cross_entropy(&y, labels)?;
        let signals = learning_signals(net, params, &self.blocks, &rec, &g_out);
        let mut grads = params.zeros_like();

        for k in 0..self.blocks.len() {
            let blk = self.blocks[k];
            let leak = self.block_leak(net, params, &blk)?;
            let u = net.gather_input(blk.affine, x_t, &rec.outputs, |s| self.state.prev_out[s].as_ref());
            let trace = &mut self.input_traces[k];
            for (a, &x) in trace.data_mut().iter_mut().zip(u.data()) {
                *a = leak * *a + x;
            }
            self.bias_traces[k] = leak * self.bias_traces[k] + 1.0;
            let sigma = &rec.lif[blk.lif].as_ref().unwrap().sigma;
            let delta = signals[k].zip_map(sigma, |l, s| l * s);
            let bias_trace = self.bias_traces[k];
            let (gw, gb) = grads.affine_mut(blk.affine);
            delta.t_matmul_acc(trace, gw);
            for (g, v) in gb.data_mut().iter_mut().zip(delta.sum_rows()) {
                *g += v * bias_trace;
            }
        }
        self.state = next_state;
        Ok(StepOutput {
            grads,
            loss: loss_t,
            output: y,
            record: rec,
        })
    }
}
