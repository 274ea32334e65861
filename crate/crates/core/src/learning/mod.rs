//! Losses, gradient estimators, optimizers and training loops.

mod bptt;
mod fptt;
mod local;
mod loss;
mod optim;
mod rtrl;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, Params, StepRecord};
use crate::tensor::Tensor;

pub use bptt::{bptt_grad, GradResult};
pub use fptt::{fptt_update, FpttConfig};
pub use local::{chain_blocks, learning_signals, ChainBlock, OstlTraces, OtttTraces, TraceLeak};
pub use loss::{
    accumulate_time, loss_offline, loss_online_step, sequence_loss, softmax_cross_entropy, LossMode,
    LossSpec,
};
pub use optim::{optimizer_step, OptState, OptimizerSpec};
pub use rtrl::RtrlTraces;
pub use train::{
    deferred_grad, evaluate, train_offline, train_online, train_online_deferred, TrainOutput,
};

/// Spike raster `[batch, T, features]` with one class label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(x: Tensor, labels: Vec<usize>) -> Result<Self> {
        if x.shape().len() != 3 {
            return Err(Error::Shape(format!("batch input {:?} is not [batch, T, features]", x.shape())));
        }
        if x.shape()[0] != labels.len() {
            return Err(Error::Shape(format!(
                "{} samples but {} labels",
                x.shape()[0],
                labels.len()
            )));
        }
        Ok(Batch { x, labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn timesteps(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.x.shape().len() != 3 || self.x.shape()[2] != net.input_width() {
            return Err(Error::Shape(format!(
                "batch input {:?}, network expects {} features",
                self.x.shape(),
                net.input_width()
            )));
        }
        if self.labels.len() != self.x.shape()[0] {
            return Err(Error::Shape("label count differs from batch size".into()));
        }
        let classes = net.output_width();
        if let Some(&label) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    /// Samples at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Bptt,
    Rtrl,
    Ostl,
    Ottt {
        #[serde(default)]
        trace_leak: TraceLeak,
    },
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Bptt => "bptt",
            Estimator::Rtrl => "rtrl",
            Estimator::Ostl => "ostl",
            Estimator::Ottt { .. } => "ottt",
        }
    }

    pub fn ottt() -> Self {
        Estimator::Ottt {
            trace_leak: TraceLeak::NeuronLeak,
        }
    }

    pub fn is_online(&self) -> bool {
        !matches!(self, Estimator::Bptt)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bptt" => Ok(Estimator::Bptt),
            "rtrl" => Ok(Estimator::Rtrl),
            "ostl" => Ok(Estimator::Ostl),
            "ottt" => Ok(Estimator::ottt()),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Result of one online estimator step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Gradient of this step's loss.
    pub grads: Params,
    pub loss: f64,
    pub output: Tensor,
    pub record: StepRecord,
}

/// Running state of an online estimator.
#[derive(Debug, Clone)]
pub enum OnlineLearner {
    Rtrl(RtrlTraces),
    Ostl(OstlTraces),
    Ottt(OtttTraces),
}

impl OnlineLearner {
    pub fn new(estimator: Estimator, net: &Network, params: &Params, batch: usize) -> Result<Self> {
        Ok(match estimator {
            Estimator::Bptt => return Err(Error::NotOnline),
            Estimator::Rtrl => OnlineLearner::Rtrl(RtrlTraces::new(net, params, batch)?),
            Estimator::Ostl => OnlineLearner::Ostl(OstlTraces::new(net, params, batch)?),
            Estimator::Ottt { trace_leak } => {
                OnlineLearner::Ottt(OtttTraces::new(net, params, batch, trace_leak)?)
            }
        })
    }

    pub fn step(
        &mut self,
        net: &Network,
        params: &Params,
        x_t: &Tensor,
        labels: &[usize],
        loss: LossSpec,
    ) -> Result<StepOutput> {
        match self {
            OnlineLearner::Rtrl(t) => t.step(net, params, x_t, labels, loss),
            OnlineLearner::Ostl(t) => t.step(net, params, x_t, labels, loss),
            OnlineLearner::Ottt(t) => t.step(net, params, x_t, labels, loss),
        }
    }
}

/// Checks that `estimator` can run on `net` with `loss` before any work.
pub fn check_estimator(estimator: Estimator, net: &Network, loss: LossSpec) -> Result<()> {
    if estimator.is_online() && loss.mode != LossMode::Online {
        return Err(Error::OfflineLossUnsupported);
    }
    if matches!(estimator, Estimator::Ostl | Estimator::Ottt { .. }) {
        chain_blocks(net)?;
    }
    Ok(())
}
