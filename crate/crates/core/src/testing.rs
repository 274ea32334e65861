//! Random small networks and comparison helpers for tests.

use crate::learning::Batch;
use crate::network::{LayerSpec, Network, NetworkSpec, Params};
use crate::neuron::{LifConfig, SurrogateSpec};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Which `cat` edges a random network may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatKind {
    None,
    /// Delayed feedback from a block's LIF into its own affine layer.
    InBlock,
    /// Any mix of in-block and cross-block recurrence and skip edges,
    /// including skips into LIF layers. At least one edge is added.
    Any,
}

#[derive(Debug, Clone)]
pub struct CaseOptions {
    pub blocks: (usize, usize),
    pub width: (usize, usize),
    pub input: (usize, usize),
    pub timesteps: (usize, usize),
    pub batch: usize,
    pub max_params: usize,
    pub cat: CatKind,
    pub trainable_tau: bool,
    /// Per-neuron random τ (needs `trainable_tau`).
    pub random_tau: bool,
    pub detach_reset: bool,
    /// Draw the surrogate per layer instead of the default.
    pub random_surrogate: bool,
    /// Multiplier on the initial weights so spikes actually occur.
    pub gain: f64,
    /// Range of the random biases.
    pub bias: (f64, f64),
    /// Real-valued inputs in `[0, 1)` instead of 0/1 spikes.
    pub real_input: bool,
}

impl Default for CaseOptions {
    fn default() -> Self {
        CaseOptions {
            blocks: (1, 3),
            width: (2, 4),
            input: (1, 3),
            timesteps: (2, 8),
            batch: 3,
            max_params: 50,
            cat: CatKind::None,
            trainable_tau: false,
            random_tau: false,
            detach_reset: false,
            random_surrogate: false,
            gain: 2.0,
            bias: (0.0, 0.6),
            real_input: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomCase {
    pub net: Network,
    pub params: Params,
    pub batch: Batch,
}

fn between(rng: &mut CounterRng, (lo, hi): (usize, usize)) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Deterministic random network, parameters and batch for `seed`.
pub fn random_case(seed: u64, opts: &CaseOptions) -> RandomCase {
    for attempt in 0.. {
        let mut rng = CounterRng::stream(seed, attempt);
        if let Some(case) = try_case(&mut rng, opts) {
            return case;
        }
    }
    unreachable!()
}

fn try_case(rng: &mut CounterRng, opts: &CaseOptions) -> Option<RandomCase> {
    let blocks = between(rng, opts.blocks);
    let input = between(rng, opts.input);
    let mut layers = Vec::with_capacity(2 * blocks);
    for k in 0..blocks {
        let out = if k + 1 == blocks {
            between(rng, (opts.width.0.max(2), opts.width.1.max(2)))
        } else {
            between(rng, opts.width)
        };
        layers.push(LayerSpec::affine(out));
        let surrogate = if opts.random_surrogate && rng.below(2) == 1 {
            SurrogateSpec::atan()
        } else {
            SurrogateSpec::fast_sigmoid()
        };
        layers.push(LayerSpec::Lif {
            config: LifConfig {
                trainable_tau: opts.trainable_tau,
                detach_reset: opts.detach_reset,
                surrogate,
                ..LifConfig::default()
            },
        });
    }
    let mut spec = NetworkSpec::chain(layers);
    let n = spec.layers.len();
    match opts.cat {
        CatKind::None => {}
        CatKind::InBlock => {
            for k in 0..blocks {
                if rng.below(2) == 1 || k + 1 == blocks {
                    spec.cat.insert(2 * k, vec![2 * k + 1]);
                }
            }
        }
        CatKind::Any => {
            let edges = 1 + rng.below(2);
            for _ in 0..edges {
                let d = rng.below(n);
                let s = if d % 2 == 0 {
                    // Any source into an affine layer.
                    rng.below(n)
                } else if d >= 2 {
                    // Skip into a LIF layer, from an earlier layer.
                    rng.below(d - 1)
                } else {
                    continue;
                };
                if s + 1 == d {
                    continue;
                }
                spec.cat.entry(d).or_default().push(s);
            }
            if spec.cat.is_empty() {
                return None;
            }
        }
    }

    let net = Network::new(spec, input).ok()?;
    if net.output_width() < 2 {
        return None;
    }
    let mut params = net.init_params(rng.next_u64());
    if params.num_params() > opts.max_params {
        return None;
    }
    for d in 0..n {
        if net.layers()[d].is_affine() {
            let (w, b) = params.affine_mut(d);
            w.scale(opts.gain);
            for v in b.data_mut() {
                *v = rng.uniform(opts.bias.0, opts.bias.1);
            }
        } else if opts.random_tau {
            if let Some(t) = params.tau_mut(d) {
                for v in t.data_mut() {
                    *v = rng.uniform(-1.0, 3.0);
                }
            }
        }
    }

    let t_len = between(rng, opts.timesteps);
    let b = opts.batch;
    let data = (0..b * t_len * input)
        .map(|_| {
            if opts.real_input {
                rng.next_f64()
            } else {
                (rng.below(2)) as f64
            }
        })
        .collect();
    let x = Tensor::from_vec(&[b, t_len, input], data).ok()?;
    let classes = net.output_width();
    let labels = (0..b).map(|_| rng.below(classes)).collect();
    Some(RandomCase {
        batch: Batch::new(x, labels).ok()?,
        net,
        params,
    })
}

/// Normwise relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`; 0 for two zero
/// vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared vectors differ in length");
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Largest gradient magnitude, to make sure a comparison is not vacuous.
pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Flat slice of `params` belonging to `layers`.
pub fn layer_slice(params: &Params, layers: &[usize]) -> Vec<f64> {
    let flat = params.flatten();
    params
        .blocks()
        .iter()
        .filter(|b| layers.contains(&b.layer))
        .flat_map(|b| flat[b.offset..b.offset + b.len].to_vec())
        .collect()
}
