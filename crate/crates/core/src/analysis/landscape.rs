//! Filter-normalized loss landscapes and trajectory projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{evaluate, Batch, LossSpec};
use crate::network::{BlockKind, Network, Params};
use crate::rng::CounterRng;

/// Rescales `direction` so each W row, and each bias and τ block as a whole,
/// has the norm of the matching part of `params`. Zero parts stay zero.
pub fn filter_normalize(direction: &[f64], params: &Params) -> Result<Vec<f64>> {
    let flat = params.flatten();
    if direction.len() != flat.len() {
        return Err(Error::Shape(format!(
            "direction of length {} for {} parameters",
            direction.len(),
            flat.len()
        )));
    }
    let mut out = direction.to_vec();
    let rescale = |out: &mut [f64], reference: &[f64]| {
        let dn = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dn == 0.0 {
            return;
        }
        let pn = reference.iter().map(|x| x * x).sum::<f64>().sqrt();
        let k = pn / dn;
        out.iter_mut().for_each(|x| *x *= k);
    };
    for blk in params.blocks() {
        let range = blk.offset..blk.offset + blk.len;
        match blk.kind {
            BlockKind::Weight => {
                let cols = blk.shape[1];
                for r in 0..blk.shape[0] {
                    let s = blk.offset + r * cols;
                    rescale(&mut out[s..s + cols], &flat[s..s + cols]);
                }
            }
            BlockKind::Bias | BlockKind::Tau => rescale(&mut out[range.clone()], &flat[range]),
        }
    }
    Ok(out)
}

/// Two unit-variance Gaussian directions from streams 0 and 1 of `dir_seed`,
/// filter-normalized against `params`.
pub fn random_directions(params: &Params, dir_seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = params.num_params();
    let draw = |stream| {
        let mut rng = CounterRng::stream(dir_seed, stream);
        (0..n).map(|_| rng.normal()).collect::<Vec<_>>()
    };
    Ok((filter_normalize(&draw(0), params)?, filter_normalize(&draw(1), params)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LandscapeOptions {
    /// Worker threads for the grid; results do not depend on it.
    pub threads: usize,
}

impl Default for LandscapeOptions {
    fn default() -> Self {
        LandscapeOptions { threads: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub resolution: usize,
    pub range: f64,
    /// Lattice coordinates, shared by both axes; the middle one is exactly 0.
    pub coords: Vec<f64>,
    /// `losses[i * R + j]` is the loss at `θ* + coords[i]·δ + coords[j]·η`;
    /// non-finite points are stored as `+∞`.
    pub losses: Vec<f64>,
    pub delta: Vec<f64>,
    pub eta: Vec<f64>,
    pub center: Vec<f64>,
    pub center_loss: f64,
    /// Seed of the random directions; `None` for supplied directions.
    pub dir_seed: Option<u64>,
}

impl LandscapeGrid {
    pub fn loss(&self, i: usize, j: usize) -> f64 {
        self.losses[i * self.resolution + j]
    }

    pub fn center_index(&self) -> usize {
        self.resolution / 2
    }

    /// Grid points whose loss could not be evaluated.
    pub fn flagged(&self) -> usize {
        self.losses.iter().filter(|l| !l.is_finite()).count()
    }

    /// Projects checkpoints into this grid's `(δ, η)` frame.
    pub fn project(&self, checkpoints: &[Params]) -> Result<Vec<(f64, f64)>> {
        project_trajectory_onto(checkpoints, &self.center, &self.delta, &self.eta)
    }
}

pub fn loss_landscape(
    net: &Network,
    params: &Params,
    batch: &Batch,
    loss: LossSpec,
    resolution: usize,
    range: f64,
    dir_seed: u64,
) -> Result<LandscapeGrid> {
    loss_landscape_with(net, params, batch, loss, resolution, range, dir_seed, LandscapeOptions::default())
}

fn point_loss(net: &Network, params: &Params, batch: &Batch, loss: LossSpec) -> Result<f64> {
    match evaluate(net, params, batch, loss) {
        Ok((l, _)) if l.is_finite() => Ok(l),
        Ok(_) => Ok(f64::INFINITY),
        Err(e) if e.is_numeric() => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn loss_landscape_with(
    net: &Network,
    params: &Params,
    batch: &Batch,
    loss: LossSpec,
    resolution: usize,
    range: f64,
    dir_seed: u64,
    opts: LandscapeOptions,
) -> Result<LandscapeGrid> {
    net.check_params(params)?;
    let (delta, eta) = random_directions(params, dir_seed)?;
    let mut grid = loss_landscape_along(net, params, batch, loss, resolution, range, delta, eta, opts)?;
    grid.dir_seed = Some(dir_seed);
    Ok(grid)
}

/// Grid over caller-supplied directions, e.g. from [`pca_directions`].
#[allow(clippy::too_many_arguments)]
pub fn loss_landscape_along(
    net: &Network,
    params: &Params,
    batch: &Batch,
    loss: LossSpec,
    resolution: usize,
    range: f64,
    delta: Vec<f64>,
    eta: Vec<f64>,
    opts: LandscapeOptions,
) -> Result<LandscapeGrid> {
    if resolution == 0 || resolution.is_multiple_of(2) {
        return Err(Error::Config(format!("landscape resolution must be odd, got {resolution}")));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Config(format!("landscape range must be > 0, got {range}")));
    }
    if opts.threads == 0 {
        return Err(Error::Config("landscape needs at least one thread".into()));
    }
    net.check_params(params)?;
    batch.validate(net)?;
    if delta.len() != params.num_params() || eta.len() != params.num_params() {
        return Err(Error::Shape(format!(
            "landscape directions of length {} and {} for {} parameters",
            delta.len(),
            eta.len(),
            params.num_params()
        )));
    }

    let center = params.flatten();
    let r = resolution;
    let coords: Vec<f64> = if r == 1 {
        vec![0.0]
    } else {
        (0..r)
            .map(|i| range * (2.0 * i as f64 - (r - 1) as f64) / (r - 1) as f64)
            .collect()
    };

    let cell = |idx: usize| -> Result<f64> {
        let (x, y) = (coords[idx / r], coords[idx % r]);
        if x == 0.0 && y == 0.0 {
            return point_loss(net, params, batch, loss);
        }
        let flat: Vec<f64> = center
            .iter()
            .zip(delta.iter().zip(&eta))
            .map(|(c, (d, e))| c + x * d + y * e)
            .collect();
        point_loss(net, &params.with_flat(&flat)?, batch, loss)
    };

    let total = r * r;
    let threads = opts.threads.min(total);
    let losses: Vec<f64> = if threads == 1 {
        (0..total).map(cell).collect::<Result<_>>()?
    } else {
        let chunk = total.div_ceil(threads);
        let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let cell = &cell;
                    scope.spawn(move || (w * chunk..((w + 1) * chunk).min(total)).map(cell).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("landscape worker panicked")).collect()
        });
        let mut all = Vec::with_capacity(total);
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let center_loss = losses[(r / 2) * r + r / 2];
    Ok(LandscapeGrid {
        resolution: r,
        range,
        coords,
        losses,
        delta,
        eta,
        center,
        center_loss,
        dir_seed: None,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maps each checkpoint to `(⟨θ−θ*, δ⟩/‖δ‖², ⟨θ−θ*, η⟩/‖η‖²)`.
pub fn project_trajectory(checkpoints: &[Params], grid: &LandscapeGrid) -> Result<Vec<(f64, f64)>> {
    grid.project(checkpoints)
}

pub fn project_trajectory_onto(
    checkpoints: &[Params],
    center: &[f64],
    d1: &[f64],
    d2: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let (n1, n2) = (dot(d1, d1), dot(d2, d2));
    checkpoints
        .iter()
        .map(|p| {
            let flat = p.flatten();
            if flat.len() != center.len() || d1.len() != center.len() || d2.len() != center.len() {
                return Err(Error::Shape(format!(
                    "checkpoint with {} parameters projected onto a {}-parameter frame",
                    flat.len(),
                    center.len()
                )));
            }
            let diff: Vec<f64> = flat.iter().zip(center).map(|(a, b)| a - b).collect();
            let x = if n1 == 0.0 { 0.0 } else { dot(&diff, d1) / n1 };
            let y = if n2 == 0.0 { 0.0 } else { dot(&diff, d2) / n2 };
            Ok((x, y))
        })
        .collect()
}

/// Top two principal components of the checkpoint differences `θ_t − θ*`
/// (mean-centered), as unit vectors. Missing components are zero vectors.
pub fn pca_directions(checkpoints: &[Params], center: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = center.len();
    let mut diffs = Vec::with_capacity(checkpoints.len());
    for c in checkpoints {
        let flat = c.flatten();
        if flat.len() != p {
            return Err(Error::Shape(format!("checkpoint with {} parameters, expected {p}", flat.len())));
        }
        diffs.push(flat.iter().zip(center).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let n = diffs.len();
    if n == 0 {
        return Ok((vec![0.0; p], vec![0.0; p]));
    }
    let mut mean = vec![0.0; p];
    for d in &diffs {
        mean.iter_mut().zip(d).for_each(|(m, v)| *m += v / n as f64);
    }
    for d in &mut diffs {
        d.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    // Eigen-decompose the small n×n Gram matrix instead of the P×P covariance.
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let g = dot(&diffs[i], &diffs[j]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let (vals, vecs) = jacobi_eigen(gram, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let component = |k: usize| -> Vec<f64> {
        let Some(&idx) = order.get(k) else {
            return vec![0.0; p];
        };
        if vals[idx] <= 1e-12 * vals[order[0]].max(f64::MIN_POSITIVE) {
            return vec![0.0; p];
        }
        let mut v = vec![0.0; p];
        for (i, d) in diffs.iter().enumerate() {
            let c = vecs[i * n + idx];
            v.iter_mut().zip(d).for_each(|(x, y)| *x += c * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    };
    Ok((component(0), component(1)))
}

/// Cyclic Jacobi eigensolver for a symmetric `n×n` matrix (row-major).
/// Returns eigenvalues and eigenvectors as the columns of a row-major matrix.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for pi in 0..n {
            for q in pi + 1..n {
                let apq = a[pi * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[pi * n + pi]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + pi], a[k * n + q]);
                    a[k * n + pi] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[pi * n + k], a[q * n + k]);
                    a[pi * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + pi], v[k * n + q]);
                    v[k * n + pi] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}
