//! Random-manifold spike datasets.
//!
//! Each class owns a smooth random map from `[0,1]^D` into `R^M`, a product
//! over intrinsic dimensions of truncated Fourier series with `k^{−α}`
//! amplitude decay. Points drawn uniformly on the intrinsic cube are mapped,
//! min–max normalized per unit, and turned into spikes either by timing
//! (one spike per unit) or by rate (spike count ∝ value, random times).
//!
//! Two seeds keep the manifolds and the sampled points independent:
//! `manifold_seed` fixes the maps, `sample_seed` the points, the shuffle and
//! the rate-coded spike times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::Batch;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Child streams of the sample seed beyond the per-class point streams.
const SHUFFLE_STREAM: u64 = u64::MAX;
const RATE_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Encoding {
    #[default]
    Time,
    Rate {
        #[serde(default = "default_p_max")]
        p_max: f64,
    },
}

fn default_p_max() -> f64 {
    0.5
}

impl Encoding {
    pub fn rate() -> Self {
        Encoding::Rate { p_max: default_p_max() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandmanConfig {
    pub classes: usize,
    pub units: usize,
    pub intrinsic_dim: usize,
    pub alpha: f64,
    pub cutoff: usize,
    pub timesteps: usize,
    pub samples_per_class: usize,
    pub encoding: Encoding,
    pub manifold_seed: u64,
    pub sample_seed: u64,
}

impl Default for RandmanConfig {
    fn default() -> Self {
        RandmanConfig {
            classes: 10,
            units: 20,
            intrinsic_dim: 1,
            alpha: 2.0,
            cutoff: 5,
            timesteps: 50,
            samples_per_class: 100,
            encoding: Encoding::Time,
            manifold_seed: 0,
            sample_seed: 1,
        }
    }
}

impl RandmanConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("units", self.units),
            ("intrinsic_dim", self.intrinsic_dim),
            ("cutoff", self.cutoff),
            ("timesteps", self.timesteps),
            ("samples_per_class", self.samples_per_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("randman {name} must be ≥ 1")));
            }
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("randman alpha must be ≥ 0, got {}", self.alpha)));
        }
        if let Encoding::Rate { p_max } = self.encoding {
            if !(p_max > 0.0 && p_max <= 1.0) {
                return Err(Error::Config(format!("rate p_max must lie in (0, 1], got {p_max}")));
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.classes * self.samples_per_class
    }
}

/// Amplitudes and phases, indexed `[class][((m·D + j)·K + k)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldParams {
    pub classes: usize,
    pub units: usize,
    pub intrinsic_dim: usize,
    pub cutoff: usize,
    pub alpha: f64,
    pub amplitude: Vec<Vec<f64>>,
    pub phase: Vec<Vec<f64>>,
}

impl ManifoldParams {
    /// Draws every class from its own child stream of `manifold_seed`.
    pub fn draw(cfg: &RandmanConfig) -> Result<Self> {
        cfg.validate()?;
        let per_class = cfg.units * cfg.intrinsic_dim * cfg.cutoff;
        let root = CounterRng::new(cfg.manifold_seed);
        let mut amplitude = Vec::with_capacity(cfg.classes);
        let mut phase = Vec::with_capacity(cfg.classes);
        for c in 0..cfg.classes {
            let mut rng = root.split(c as u64);
            let (mut a, mut p) = (Vec::with_capacity(per_class), Vec::with_capacity(per_class));
            for _ in 0..per_class {
                a.push(rng.next_f64());
                p.push(rng.next_f64());
            }
            amplitude.push(a);
            phase.push(p);
        }
        Ok(ManifoldParams {
            classes: cfg.classes,
            units: cfg.units,
            intrinsic_dim: cfg.intrinsic_dim,
            cutoff: cfg.cutoff,
            alpha: cfg.alpha,
            amplitude,
            phase,
        })
    }

    fn index(&self, m: usize, j: usize, k: usize) -> usize {
        (m * self.intrinsic_dim + j) * self.cutoff + k
    }
}

/// `f_m(z) = Π_j Σ_k a·k^{−α}·sin(2π(k·z_j + φ))` for every unit `m`.
pub fn manifold_eval(params: &ManifoldParams, class: usize, z: &[f64]) -> Result<Vec<f64>> {
    if class >= params.classes {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: params.classes,
        });
    }
    if z.len() != params.intrinsic_dim {
        return Err(Error::Shape(format!(
            "manifold point of dimension {}, expected {}",
            z.len(),
            params.intrinsic_dim
        )));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let (a, ph) = (&params.amplitude[class], &params.phase[class]);
    Ok((0..params.units)
        .map(|m| {
            let mut prod = 1.0;
            for (j, &zj) in z.iter().enumerate() {
                let mut sum = 0.0;
                for k in 0..params.cutoff {
                    let i = params.index(m, j, k);
                    let freq = (k + 1) as f64;
                    sum += a[i] * freq.powf(-params.alpha) * (tau * (freq * zj + ph[i])).sin();
                }
                prod *= sum;
            }
            prod
        })
        .collect())
}

/// Per-unit min–max normalization fitted on a generated set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit(values: &[Vec<f64>], units: usize) -> Self {
        let mut min = vec![f64::INFINITY; units];
        let mut max = vec![f64::NEG_INFINITY; units];
        for v in values {
            for m in 0..units {
                min[m] = min[m].min(v[m]);
                max[m] = max[m].max(v[m]);
            }
        }
        let norm = Normalization { min, max };
        for m in 0..units {
            if norm.is_degenerate(m) {
                log::warn!("randman unit {m} is constant over the generated set; normalized to 0.5");
            }
        }
        norm
    }

    fn is_degenerate(&self, m: usize) -> bool {
        !(self.max[m] > self.min[m])
    }

    /// Maps raw values into `[0, 1]`; values outside the fitted range clamp.
    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(m, &v)| {
                if self.is_degenerate(m) {
                    0.5
                } else {
                    ((v - self.min[m]) / (self.max[m] - self.min[m])).clamp(0.0, 1.0)
                }
            })
            .collect()
    }
}

/// One spike per unit at step `round(v·(T−1))`. Output `[T, M]`.
pub fn time_encode(values: &[f64], timesteps: usize) -> Result<Tensor> {
    check_values(values, timesteps)?;
    let m = values.len();
    let mut out = Tensor::zeros(&[timesteps, m]);
    for (i, &v) in values.iter().enumerate() {
        let t = (v * (timesteps - 1) as f64).round() as usize;
        out.set2(t, i, 1.0);
    }
    Ok(out)
}

/// `round(v·p_max·T)` spikes per unit at distinct uniformly drawn steps.
/// Output `[T, M]`.
pub fn rate_encode(values: &[f64], timesteps: usize, p_max: f64, rng: &mut CounterRng) -> Result<Tensor> {
    check_values(values, timesteps)?;
    if !(p_max > 0.0 && p_max <= 1.0) {
        return Err(Error::Config(format!("rate p_max must lie in (0, 1], got {p_max}")));
    }
    if p_max * (timesteps as f64) < 1.0 {
        log::warn!("p_max·T = {} < 1: low values encode to zero spikes", p_max * timesteps as f64);
    }
    let m = values.len();
    let mut out = Tensor::zeros(&[timesteps, m]);
    for (i, &v) in values.iter().enumerate() {
        let n = (v * p_max * timesteps as f64).round() as usize;
        for t in rng.sample_without_replacement(timesteps, n.min(timesteps)) {
            out.set2(t, i, 1.0);
        }
    }
    Ok(out)
}

fn check_values(values: &[f64], timesteps: usize) -> Result<()> {
    if timesteps == 0 {
        return Err(Error::Config("encoding needs at least one timestep".into()));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!("encoder value {v} outside [0, 1]")));
    }
    Ok(())
}

/// Binary spike data `[batch, T, M]` with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeRaster {
    pub data: Tensor,
    pub labels: Vec<usize>,
}

impl SpikeRaster {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn timesteps(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn units(&self) -> usize {
        self.data.shape()[2]
    }

    /// Spike count of every (sample, unit), `[batch, M]`.
    pub fn spike_counts(&self) -> Tensor {
        crate::learning::accumulate_time(&self.data)
    }

    pub fn to_batch(&self) -> Batch {
        Batch {
            x: self.data.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn into_batch(self) -> Batch {
        Batch {
            x: self.data,
            labels: self.labels,
        }
    }
}

/// A generated set plus everything needed to encode a consistent test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raster: SpikeRaster,
    /// Intrinsic points `[batch, D]`, in the shuffled sample order.
    pub points: Tensor,
    /// Normalized values `[batch, M]`, same order.
    pub values: Tensor,
    pub normalization: Normalization,
    pub manifold: ManifoldParams,
}

pub fn generate(cfg: &RandmanConfig) -> Result<SpikeRaster> {
    Ok(generate_dataset(cfg, None)?.raster)
}

/// Generates a set. With `normalization = None` it is fitted on this set;
/// passing a train set's normalization encodes a consistent test split.
pub fn generate_dataset(cfg: &RandmanConfig, normalization: Option<&Normalization>) -> Result<Dataset> {
    cfg.validate()?;
    let manifold = ManifoldParams::draw(cfg)?;
    let n = cfg.num_samples();
    let root = CounterRng::new(cfg.sample_seed);

    let mut raw = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..cfg.classes {
        let mut rng = root.split(c as u64);
        for _ in 0..cfg.samples_per_class {
            let z: Vec<f64> = (0..cfg.intrinsic_dim).map(|_| rng.next_f64()).collect();
            raw.push(manifold_eval(&manifold, c, &z)?);
            zs.push(z);
            labels.push(c);
        }
    }
    let normalization = match normalization {
        Some(norm) => {
            if norm.min.len() != cfg.units || norm.max.len() != cfg.units {
                return Err(Error::Shape(format!(
                    "normalization for {} units, config has {}",
                    norm.min.len(),
                    cfg.units
                )));
            }
            norm.clone()
        }
        None => Normalization::fit(&raw, cfg.units),
    };

    let mut order: Vec<usize> = (0..n).collect();
    root.split(SHUFFLE_STREAM).shuffle(&mut order);

    let (t_len, m) = (cfg.timesteps, cfg.units);
    let rate_root = root.split(RATE_STREAM);
    let mut data = Vec::with_capacity(n * t_len * m);
    let mut values = Vec::with_capacity(n * m);
    let mut points = Vec::with_capacity(n * cfg.intrinsic_dim);
    let mut out_labels = Vec::with_capacity(n);
    for &src in &order {
        let v = normalization.apply(&raw[src]);
        let enc = match cfg.encoding {
            Encoding::Time => time_encode(&v, t_len)?,
            Encoding::Rate { p_max } => rate_encode(&v, t_len, p_max, &mut rate_root.split(src as u64))?,
        };
        data.extend_from_slice(enc.data());
        values.extend_from_slice(&v);
        points.extend_from_slice(&zs[src]);
        out_labels.push(labels[src]);
    }
    Ok(Dataset {
        raster: SpikeRaster {
            data: Tensor::from_vec(&[n, t_len, m], data)?,
            labels: out_labels,
        },
        points: Tensor::from_vec(&[n, cfg.intrinsic_dim], points)?,
        values: Tensor::from_vec(&[n, m], values)?,
        normalization,
        manifold,
    })
}
