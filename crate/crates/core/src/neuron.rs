//! Leaky integrate-and-fire cells and surrogate spike functions.
//!
//! One step of a LIF layer with leak `λ = logistic(τ)`:
//!
//! ```text
//! v_pre = λ·v_prev + I
//! s     = H(v_pre − v_th)
//! v     = v_pre − s·v_th
//! ```
//!
//! `H` is the Heaviside step in the forward pass. Gradient engines use the
//! surrogate derivative `σ'(v_pre − v_th)` in its place; the step returns it
//! alongside the spikes so that no engine has to recompute it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurrogateSpec {
    /// SuperSpike fast sigmoid, `1 / (slope·|u| + 1)²`.
    FastSigmoid {
        #[serde(default = "default_slope")]
        slope: f64,
    },
    /// Arctangent, `(width/2) / (1 + ((π/2)·width·u)²)`.
    Atan {
        #[serde(default = "default_width")]
        width: f64,
    },
}

fn default_slope() -> f64 {
    25.0
}

fn default_width() -> f64 {
    2.0
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec::FastSigmoid { slope: 25.0 }
    }
}

impl SurrogateSpec {
    pub fn fast_sigmoid() -> Self {
        SurrogateSpec::FastSigmoid { slope: 25.0 }
    }

    pub fn atan() -> Self {
        SurrogateSpec::Atan { width: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SurrogateSpec::FastSigmoid { slope } if !(slope > 0.0 && slope.is_finite()) => {
                Err(Error::Config(format!("surrogate slope must be > 0, got {slope}")))
            }
            SurrogateSpec::Atan { width } if !(width > 0.0 && width.is_finite()) => {
                Err(Error::Config(format!("surrogate width must be > 0, got {width}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn grad(&self, u: f64) -> f64 {
        match *self {
            SurrogateSpec::FastSigmoid { slope } => {
                let d = slope * u.abs() + 1.0;
                1.0 / (d * d)
            }
            SurrogateSpec::Atan { width } => {
                let z = std::f64::consts::FRAC_PI_2 * width * u;
                0.5 * width / (1.0 + z * z)
            }
        }
    }

    /// Smooth stand-in for the step function, used by the smooth-forward mode.
    ///
    /// Fast sigmoid: `½(1 + u/(1 + slope·|u|))`, whose derivative is `½·grad(u)`.
    /// Atan: `½ + atan((π/2)·width·u)/π`, whose derivative is exactly `grad(u)`.
    #[inline]
    pub fn smooth_value(&self, u: f64) -> f64 {
        match *self {
            SurrogateSpec::FastSigmoid { slope } => 0.5 * (1.0 + u / (1.0 + slope * u.abs())),
            SurrogateSpec::Atan { width } => {
                0.5 + (std::f64::consts::FRAC_PI_2 * width * u).atan() / std::f64::consts::PI
            }
        }
    }

    #[inline]
    pub fn smooth_grad(&self, u: f64) -> f64 {
        match self {
            SurrogateSpec::FastSigmoid { .. } => 0.5 * self.grad(u),
            SurrogateSpec::Atan { .. } => self.grad(u),
        }
    }
}

/// How the forward pass turns the shifted membrane into an output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// Binary spikes, surrogate derivative in the backward pass.
    #[default]
    Heaviside,
    /// Differentiable primitive whose true derivative is what the backward
    /// pass uses. Lets finite differences check the gradient engines.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    pub tau_init: f64,
    pub v_threshold: f64,
    /// Kept for configuration compatibility; the subtract reset ignores it.
    pub v_reset: f64,
    pub surrogate: SurrogateSpec,
    pub trainable_tau: bool,
    /// Treat the reset term `−s·v_th` as a constant when differentiating.
    pub detach_reset: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            tau_init: 2.0,
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate: SurrogateSpec::default(),
            trainable_tau: false,
            detach_reset: false,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_threshold > 0.0 && self.v_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "v_threshold must be > 0, got {}",
                self.v_threshold
            )));
        }
        if !self.tau_init.is_finite() {
            return Err(Error::Config("tau_init must be finite".into()));
        }
        self.surrogate.validate()
    }

    /// Derivative of the post-reset membrane with respect to `v_pre`.
    #[inline]
    pub fn reset_factor(&self, sigma: f64) -> f64 {
        if self.detach_reset {
            1.0
        } else {
            1.0 - self.v_threshold * sigma
        }
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub v: Tensor,
}

pub fn lif_init_state(batch: usize, features: usize) -> Result<LifState> {
    if batch == 0 || features == 0 {
        return Err(Error::Shape(format!(
            "LIF state needs non-zero dimensions, got ({batch}, {features})"
        )));
    }
    Ok(LifState {
        v: Tensor::zeros(&[batch, features]),
    })
}

pub fn heaviside(u: &Tensor) -> Result<Tensor> {
    if !u.all_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(u.map(|x| if x >= 0.0 { 1.0 } else { 0.0 }))
}

pub fn surrogate_grad(spec: &SurrogateSpec, u: &Tensor) -> Result<Tensor> {
    if !u.all_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(u.map(|x| spec.grad(x)))
}

/// Output of one LIF step.
#[derive(Debug, Clone)]
pub struct LifStep {
    pub state: LifState,
    pub spikes: Tensor,
    pub v_pre: Tensor,
    /// Surrogate derivative at `v_pre − v_th`.
    pub sigma: Tensor,
}

/// One step with a scalar time constant shared by every neuron.
pub fn lif_step(config: &LifConfig, tau: f64, state: &LifState, current: &Tensor) -> Result<LifStep> {
    let leak = [logistic(tau)];
    lif_step_with(config, &leak, state, current, SpikeMode::Heaviside, 0)
}

/// One step with per-neuron leak factors (`leak.len()` is 1 or the feature
/// count). `layer` only labels errors.
pub fn lif_step_with(
    config: &LifConfig,
    leak: &[f64],
    state: &LifState,
    current: &Tensor,
    mode: SpikeMode,
    layer: usize,
) -> Result<LifStep> {
    if !state.v.same_shape(current) {
        return Err(Error::Shape(format!(
            "layer {layer}: membrane {:?} vs current {:?}",
            state.v.shape(),
            current.shape()
        )));
    }
    let features = current.cols();
    if leak.len() != 1 && leak.len() != features {
        return Err(Error::Shape(format!(
            "layer {layer}: {} leak factors for {features} neurons",
            leak.len()
        )));
    }
    let th = config.v_threshold;
    let sg = config.surrogate;
    let n = current.len();
    let mut v_pre = vec![0.0; n];
    let mut spikes = vec![0.0; n];
    let mut sigma = vec![0.0; n];
    let mut v = vec![0.0; n];
    let vp = state.v.data();
    let cur = current.data();
    for idx in 0..n {
        let lam = if leak.len() == 1 { leak[0] } else { leak[idx % features] };
        let pre = lam * vp[idx] + cur[idx];
        if !pre.is_finite() {
            return Err(Error::NonFiniteMembrane { layer });
        }
        let u = pre - th;
        let (s, g) = match mode {
            SpikeMode::Heaviside => (if u >= 0.0 { 1.0 } else { 0.0 }, sg.grad(u)),
            SpikeMode::Smooth => (sg.smooth_value(u), sg.smooth_grad(u)),
        };
        v_pre[idx] = pre;
        spikes[idx] = s;
        sigma[idx] = g;
        v[idx] = pre - s * th;
    }
    let shape = current.shape();
    Ok(LifStep {
        state: LifState {
            v: Tensor::from_vec(shape, v)?,
        },
        spikes: Tensor::from_vec(shape, spikes)?,
        v_pre: Tensor::from_vec(shape, v_pre)?,
        sigma: Tensor::from_vec(shape, sigma)?,
    })
}
