use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::accumulate_time;
use crate::network::{Network, StepRecord};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    /// `1 − nonzero / total` over every LIF output, step and sample.
    pub activation_sparsity: f64,
    /// LIF neurons × timesteps × batch.
    pub neuron_updates: u64,
    /// Σ over affine layers of non-zero inputs × fan-out.
    pub synaptic_ops: u64,
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn metrics(net: &Network, records: &[StepRecord], outputs: &Tensor, labels: &[usize]) -> Result<MetricSummary> {
    if outputs.shape().len() != 3 || outputs.shape()[0] != labels.len() {
        return Err(Error::Shape(format!(
            "outputs {:?} for {} labels",
            outputs.shape(),
            labels.len()
        )));
    }
    let batch = labels.len();
    let summed = accumulate_time(outputs);
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(summed.row(i)) == l)
        .count();

    let lif_width: usize = net
        .layers()
        .iter()
        .filter(|l| l.lif_config().is_some())
        .map(|l| l.out_width)
        .sum();
    let steps = records.len();
    let total = (lif_width * steps * batch) as u64;
    let mut nonzero = 0u64;
    let mut syn = 0u64;
    for rec in records {
        for (d, layer) in net.layers().iter().enumerate() {
            if layer.lif_config().is_some() {
                nonzero += rec.spike_counts[d] as u64;
            } else {
                syn += (rec.input_counts[d] * layer.out_width) as u64;
            }
        }
    }
    Ok(MetricSummary {
        accuracy: if batch == 0 { 0.0 } else { correct as f64 / batch as f64 },
        activation_sparsity: if total == 0 { 1.0 } else { 1.0 - nonzero as f64 / total as f64 },
        neuron_updates: total,
        synaptic_ops: syn,
    })
}
