//! Forward propagation through time: a dynamic regularizer wrapped around
//! any per-step gradient.
//!
//! ```text
//! g̃  = g + α·(θ − θ̄)
//! θ' = optimizer_step(θ, g̃)
//! θ̄' = ½(θ̄ + θ') − ĝ/(2α)
//! ```
//!
//! `ĝ` is `g` itself when `reuse_gradient` is set, otherwise a gradient
//! recomputed at `θ'`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Params;

use super::optim::{optimizer_step, OptState, OptimizerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpttConfig {
    pub alpha: f64,
    pub reuse_gradient: bool,
}

impl Default for FpttConfig {
    fn default() -> Self {
        FpttConfig {
            alpha: 0.5,
            reuse_gradient: true,
        }
    }
}

impl FpttConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("FPTT alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// One regularized update. Returns `(θ', θ̄', opt_state')`.
///
/// `recompute` is only called when `reuse_gradient` is off.
pub fn fptt_update(
    cfg: &FpttConfig,
    inner_grads: &Params,
    params: &Params,
    running_mean: &Params,
    opt: &OptimizerSpec,
    opt_state: &OptState,
    recompute: impl FnOnce(&Params) -> Result<Params>,
) -> Result<(Params, Params, OptState)> {
    cfg.validate()?;
    let theta = params.flatten();
    let bar = running_mean.flatten();
    let g = inner_grads.flatten();
    if bar.len() != theta.len() || g.len() != theta.len() {
        return Err(Error::Shape("FPTT buffers do not match the parameters".into()));
    }
    let effective: Vec<f64> = (0..theta.len())
        .map(|i| g[i] + cfg.alpha * (theta[i] - bar[i]))
        .collect();
    let (next, next_state) = optimizer_step(opt, opt_state, params, &params.with_flat(&effective)?)?;
    let g_hat = if cfg.reuse_gradient {
        g
    } else {
        recompute(&next)?.flatten()
    };
    let theta_next = next.flatten();
    let inv = 1.0 / (2.0 * cfg.alpha);
    let bar_next: Vec<f64> = (0..theta.len())
        .map(|i| 0.5 * (bar[i] + theta_next[i]) - inv * g_hat[i])
        .collect();
    Ok((next, params.with_flat(&bar_next)?, next_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LayerParams;
    use crate::tensor::Tensor;

    fn scalar(v: f64) -> Params {
        Params {
            layers: vec![LayerParams::Lif {
                tau: Some(Tensor::from_vec(&[1], vec![v]).unwrap()),
            }],
        }
    }

    fn no_recompute(_: &Params) -> Result<Params> {
        unreachable!()
    }

    #[test]
    fn hand_evaluated_scalar_update() {
        let cfg = FpttConfig {
            alpha: 2.0,
            reuse_gradient: true,
        };
        let opt = OptimizerSpec::sgd(0.1);
        let p = scalar(1.0);
        let (p2, bar, _) =
            fptt_update(&cfg, &scalar(0.0), &p, &scalar(0.0), &opt, &opt.init(&p), no_recompute).unwrap();
        assert!((p2.flatten()[0] - 0.8).abs() < 1e-15);
        assert!((bar.flatten()[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn fixed_point() {
        let cfg = FpttConfig::default();
        let opt = OptimizerSpec::sgd(0.1);
        let p = scalar(0.3);
        let (p2, bar, _) =
            fptt_update(&cfg, &scalar(0.0), &p, &p, &opt, &opt.init(&p), no_recompute).unwrap();
        assert_eq!(p2, p);
        assert_eq!(bar, p);
    }

    #[test]
    fn strong_alpha_pulls_towards_mean() {
        let cfg = FpttConfig {
            alpha: 5.0,
            reuse_gradient: true,
        };
        let opt = OptimizerSpec::sgd(0.1);
        let mean = scalar(0.0);
        let mut p = scalar(1.0);
        let mut st = opt.init(&p);
        let mut dist = 1.0;
        for _ in 0..10 {
            // keep the anchor fixed to isolate the pull
            let (next, _, s) = fptt_update(&cfg, &scalar(0.0), &p, &mean, &opt, &st, no_recompute).unwrap();
            let d = next.flatten()[0].abs();
            assert!(d < dist);
            dist = d;
            p = next;
            st = s;
        }
    }

    #[test]
    fn recompute_path_is_used() {
        let cfg = FpttConfig {
            alpha: 1.0,
            reuse_gradient: false,
        };
        let opt = OptimizerSpec::sgd(0.5);
        let p = scalar(1.0);
        let (p2, bar, _) =
            fptt_update(&cfg, &scalar(0.0), &p, &p, &opt, &opt.init(&p), |_| Ok(scalar(1.0))).unwrap();
        assert_eq!(p2, p);
        // ½(1 + 1) − 1/2
        assert!((bar.flatten()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_alpha() {
        let cfg = FpttConfig {
            alpha: 0.0,
            reuse_gradient: true,
        };
        let opt = OptimizerSpec::sgd(0.1);
        let p = scalar(1.0);
        assert!(fptt_update(&cfg, &p, &p, &p, &opt, &opt.init(&p), no_recompute).is_err());
    }
}
