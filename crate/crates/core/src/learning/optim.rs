//! SGD and Adamax over the canonical parameter flattening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Params;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
    },
    Adamax {
        #[serde(default = "adamax_lr")]
        lr: f64,
        #[serde(default = "adamax_beta1")]
        beta1: f64,
        #[serde(default = "adamax_beta2")]
        beta2: f64,
        #[serde(default = "adamax_eps")]
        eps: f64,
    },
}

fn adamax_lr() -> f64 {
    0.001
}
fn adamax_beta1() -> f64 {
    0.9
}
fn adamax_beta2() -> f64 {
    0.999
}
fn adamax_eps() -> f64 {
    1e-8
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::adamax(0.001)
    }
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec::Sgd { lr }
    }

    pub fn adamax(lr: f64) -> Self {
        OptimizerSpec::Adamax {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `lr = 0` is accepted: it freezes the parameters, which tests use.
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerSpec::Sgd { lr } if !(lr >= 0.0 && lr.is_finite()) => {
                Err(Error::Config(format!("learning rate must be >= 0, got {lr}")))
            }
            OptimizerSpec::Adamax {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr >= 0.0 && lr.is_finite()) {
                    return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::Config("Adamax betas must lie in [0, 1)".into()));
                }
                if !(eps >= 0.0) {
                    return Err(Error::Config("Adamax eps must be >= 0".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn init(&self, params: &Params) -> OptState {
        let n = params.num_params();
        match self {
            OptimizerSpec::Sgd { .. } => OptState {
                step: 0,
                m: Vec::new(),
                u: Vec::new(),
            },
            OptimizerSpec::Adamax { .. } => OptState {
                step: 0,
                m: vec![0.0; n],
                u: vec![0.0; n],
            },
        }
    }
}

/// Moment buffers (empty for SGD) and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
}

pub fn optimizer_step(
    opt: &OptimizerSpec,
    state: &OptState,
    params: &Params,
    grads: &Params,
) -> Result<(Params, OptState)> {
    let theta = params.flatten();
    let g = grads.flatten();
    if theta.len() != g.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            g.len(),
            theta.len()
        )));
    }
    let mut next = state.clone();
    next.step += 1;
    let updated: Vec<f64> = match *opt {
        OptimizerSpec::Sgd { lr } => theta.iter().zip(&g).map(|(p, g)| p - lr * g).collect(),
        OptimizerSpec::Adamax {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            if state.m.len() != theta.len() || state.u.len() != theta.len() {
                return Err(Error::Shape(format!(
                    "Adamax state for {} parameters, got {}",
                    state.m.len(),
                    theta.len()
                )));
            }
            let step_size = lr / (1.0 - beta1.powi(next.step as i32));
            let mut out = Vec::with_capacity(theta.len());
            for i in 0..theta.len() {
                let m = beta1 * state.m[i] + (1.0 - beta1) * g[i];
                let u = (beta2 * state.u[i]).max(g[i].abs());
                next.m[i] = m;
                next.u[i] = u;
                let denom = u + eps;
                let delta = if denom > 0.0 { step_size * m / denom } else { 0.0 };
                out.push(theta[i] - delta);
            }
            out
        }
    };
    Ok((params.with_flat(&updated)?, next))
}
