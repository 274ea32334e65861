use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{bptt_grad, deferred_grad, Batch, Estimator, LossSpec};
use crate::network::{BlockKind, Network, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cosine {
    pub value: f64,
    /// Set when either vector has zero norm; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCosine {
    pub name: String,
    pub layers: Vec<usize>,
    pub cosine: f64,
    pub degenerate: bool,
    pub norm_a: f64,
    pub norm_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub estimators: [String; 2],
    /// One entry per parameter tensor, canonical order.
    pub blocks: Vec<BlockCosine>,
    /// One entry per affine layer, joined with the τ of a directly following LIF.
    pub groups: Vec<BlockCosine>,
    pub global_cosine: f64,
    pub global_degenerate: bool,
    pub norm_a: f64,
    pub norm_b: f64,
}

impl GradReport {
    pub fn group(&self, affine_layer: usize) -> Option<&BlockCosine> {
        self.groups.iter().find(|g| g.layers.first() == Some(&affine_layer))
    }
}

/// Gradient of one estimator; online estimators accumulate over the
/// sequence without updating the parameters.
pub fn estimator_grad(
    net: &Network,
    params: &Params,
    batch: &Batch,
    loss: LossSpec,
    estimator: Estimator,
) -> Result<Params> {
    match estimator {
        Estimator::Bptt => Ok(bptt_grad(net, params, batch, loss)?.grads),
        online => Ok(deferred_grad(net, params, batch, loss, online)?.0),
    }
}

pub fn compare_grads(
    net: &Network,
    params: &Params,
    batch: &Batch,
    loss: LossSpec,
    est_a: Estimator,
    est_b: Estimator,
) -> Result<GradReport> {
    let ga = estimator_grad(net, params, batch, loss, est_a)?.flatten();
    let gb = estimator_grad(net, params, batch, loss, est_b)?.flatten();
    let entry = |name: String, layers: Vec<usize>, ranges: &[(usize, usize)]| -> Result<BlockCosine> {
        let pick = |g: &[f64]| -> Vec<f64> {
            ranges.iter().flat_map(|&(o, l)| g[o..o + l].iter().copied()).collect()
        };
        let (a, b) = (pick(&ga), pick(&gb));
        let c = cosine_similarity(&a, &b)?;
        Ok(BlockCosine {
            name,
            layers,
            cosine: c.value,
            degenerate: c.degenerate,
            norm_a: norm(&a),
            norm_b: norm(&b),
        })
    };

    let info = params.blocks();
    let mut blocks = Vec::with_capacity(info.len());
    for blk in &info {
        blocks.push(entry(blk.name(), vec![blk.layer], &[(blk.offset, blk.len)])?);
    }

    let mut groups = Vec::new();
    let mut i = 0;
    while i < info.len() {
        let layer = info[i].layer;
        let mut ranges = Vec::new();
        let mut layers = vec![layer];
        while i < info.len() && info[i].layer == layer {
            ranges.push((info[i].offset, info[i].len));
            i += 1;
        }
        let affine = net.layers()[layer].is_affine();
        if affine && i < info.len() && info[i].kind == BlockKind::Tau && info[i].layer == layer + 1 {
            ranges.push((info[i].offset, info[i].len));
            layers.push(layer + 1);
            i += 1;
        }
        groups.push(entry(format!("layer{layer}"), layers, &ranges)?);
    }

    let global = cosine_similarity(&ga, &gb)?;
    Ok(GradReport {
        estimators: [est_a.to_string(), est_b.to_string()],
        blocks,
        groups,
        global_cosine: global.value,
        global_degenerate: global.degenerate,
        norm_a: norm(&ga),
        norm_b: norm(&gb),
    })
}
