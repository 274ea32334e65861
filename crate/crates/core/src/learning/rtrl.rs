//! Real-time recurrent learning.
//!
//! Carries the full sensitivity of every state variable with respect to
//! every trainable parameter: `S_ℓ = ∂v_ℓ/∂θ` for LIF membranes, plus the
//! sensitivity of every output consumed through a delayed `cat` edge.
//!
//! Sensitivities of an `n`-wide quantity are stored as `[n, batch·P]`, one
//! row per neuron and one `P`-long stretch per sample. Concatenating layer
//! inputs then stacks rows, and pushing a sensitivity through an affine
//! layer is a single `W · S` product.

use crate::error::{Error, Result};
use crate::network::{BlockKind, LayerKind, NetState, Network, Params, Source};
use crate::tensor::Tensor;

use super::loss::{softmax_cross_entropy, LossMode, LossSpec};
use super::StepOutput;

#[derive(Debug, Clone)]
pub struct RtrlTraces {
    state: NetState,
    batch: usize,
    num_params: usize,
    /// Per layer: offsets of its W, b (affine) or τ (LIF) blocks.
    offsets: Vec<LayerOffsets>,
    lif_sens: Vec<Option<Tensor>>,
    delayed_sens: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone, Copy, Default)]
struct LayerOffsets {
    weight: Option<usize>,
    bias: Option<usize>,
    tau: Option<usize>,
}

impl RtrlTraces {
    pub fn new(net: &Network, params: &Params, batch: usize) -> Result<Self> {
        net.check_params(params)?;
        let mut offsets = vec![LayerOffsets::default(); net.num_layers()];
        for blk in params.blocks() {
            let o = &mut offsets[blk.layer];
            match blk.kind {
                BlockKind::Weight => o.weight = Some(blk.offset),
                BlockKind::Bias => o.bias = Some(blk.offset),
                BlockKind::Tau => o.tau = Some(blk.offset),
            }
        }
        let num_params = params.num_params();
        let cols = batch * num_params;
        let lif_sens = net
            .layers()
            .iter()
            .map(|l| l.lif_config().map(|_| Tensor::zeros(&[l.out_width, cols])))
            .collect();
        let delayed_sens = (0..net.num_layers())
            .map(|d| {
                net.is_delayed_source(d)
                    .then(|| Tensor::zeros(&[net.layers()[d].out_width, cols]))
            })
            .collect();
        Ok(RtrlTraces {
            state: net.init_state(batch)?,
            batch,
            num_params,
            offsets,
            lif_sens,
            delayed_sens,
        })
    }

    pub fn state(&self) -> &NetState {
        &self.state
    }

    /// Membrane sensitivity `∂v_ℓ/∂θ` of LIF layer `layer`, `[n, batch·P]`.
    pub fn membrane_sensitivity(&self, layer: usize) -> Option<&Tensor> {
        self.lif_sens[layer].as_ref()
    }

    pub fn step(
        &mut self,
        net: &Network,
        params: &Params,
        x_t: &Tensor,
        labels: &[usize],
        loss: LossSpec,
    ) -> Result<StepOutput> {
        if loss.mode != LossMode::Online {
            return Err(Error::OfflineLossUnsupported);
        }
        if x_t.rows() != self.batch || params.num_params() != self.num_params {
            return Err(Error::Shape(format!(
                "RTRL traces built for batch {} with {} parameters, got batch {} with {}",
                self.batch,
                self.num_params,
                x_t.rows(),
                params.num_params()
            )));
        }
        let (next_state, y, rec) = net.forward_step(params, &self.state, x_t)?;
        let (b, p) = (self.batch, self.num_params);
        let cols = b * p;
        let layers = net.layers();
        let mut out_sens: Vec<Option<Tensor>> = vec![None; layers.len()];

        for (d, layer) in layers.iter().enumerate() {
            // Sensitivity of the concatenated input.
            let mut in_sens: Option<Tensor> = None;
            for seg in &layer.inputs {
                let src = match seg.source {
                    Source::Input => None,
                    Source::Layer { index, delayed: false } => out_sens[index].as_ref(),
                    Source::Layer { index, delayed: true } => self.delayed_sens[index].as_ref(),
                };
                if let Some(src) = src {
                    if layer.inputs.len() == 1 {
                        in_sens = Some(src.clone());
                    } else {
                        let dst = in_sens.get_or_insert_with(|| Tensor::zeros(&[layer.in_width, cols]));
                        let start = seg.offset * cols;
                        dst.data_mut()[start..start + seg.width * cols].copy_from_slice(src.data());
                    }
                }
            }

            let sens = match &layer.kind {
                LayerKind::Affine => {
                    let (w, _) = params.affine(d);
                    let mut ys = match &in_sens {
                        Some(s) => w.matmul(s),
                        None => Tensor::zeros(&[layer.out_width, cols]),
                    };
                    let u = net.gather_input(d, x_t, &rec.outputs, |s| self.state.prev_out[s].as_ref());
                    let off = self.offsets[d];
                    let (ow, ob) = (off.weight.unwrap(), off.bias.unwrap());
                    let in_w = layer.in_width;
                    for i in 0..layer.out_width {
                        let row = ys.row_mut(i);
                        for s in 0..b {
                            let base = s * p;
                            let wstart = base + ow + i * in_w;
                            for (dst, &uk) in row[wstart..wstart + in_w].iter_mut().zip(u.row(s)) {
                                *dst += uk;
                            }
                            row[base + ob + i] += 1.0;
                        }
                    }
                    ys
                }
                LayerKind::Lif(cfg) => {
                    let lif = rec.lif[d].as_ref().unwrap();
                    let leak = net.leak(params, d);
                    let s_prev = self.lif_sens[d].as_ref().unwrap();
                    let mut pmat = in_sens.unwrap_or_else(|| Tensor::zeros(&[layer.out_width, cols]));
                    for i in 0..layer.out_width {
                        let lam = leak[i];
                        for (dst, &sv) in pmat.row_mut(i).iter_mut().zip(s_prev.row(i)) {
                            *dst += lam * sv;
                        }
                    }
                    if let Some(ot) = self.offsets[d].tau {
                        for i in 0..layer.out_width {
                            let lam = leak[i];
                            let row = pmat.row_mut(i);
                            for s in 0..b {
                                row[s * p + ot + i] += lam * (1.0 - lam) * lif.v_prev.get2(s, i);
                            }
                        }
                    }
                    let mut s_new = pmat.clone();
                    for i in 0..layer.out_width {
                        let (prow, srow) = (pmat.row_mut(i), s_new.row_mut(i));
                        for s in 0..b {
                            let sig = lif.sigma.get2(s, i);
                            let keep = cfg.reset_factor(sig);
                            let r = s * p..(s + 1) * p;
                            prow[r.clone()].iter_mut().for_each(|x| *x *= sig);
                            srow[r].iter_mut().for_each(|x| *x *= keep);
                        }
                    }
                    self.lif_sens[d] = Some(s_new);
                    pmat
                }
            };
            out_sens[d] = Some(sens);
        }

        let (loss_t, g) = softmax_cross_entropy(&y, labels)?;
        let ys = out_sens.last().unwrap().as_ref().unwrap();
        let mut flat = vec![0.0; p];
        for s in 0..b {
            for c in 0..g.cols() {
                let gv = g.get2(s, c);
                if gv == 0.0 {
                    continue;
                }
                let src = &ys.row(c)[s * p..(s + 1) * p];
                for (f, v) in flat.iter_mut().zip(src) {
                    *f += gv * v;
                }
            }
        }
        for d in 0..layers.len() {
            if net.is_delayed_source(d) {
                self.delayed_sens[d] = out_sens[d].take();
            }
        }
        self.state = next_state;
        Ok(StepOutput {
            grads: params.with_flat(&flat)?,
            loss: loss_t,
            output: y,
            record: rec,
        })
    }
}
