//! Subcommand implementations. Human-readable output goes to stdout, data
//! to files under the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use snnkit::analysis::{
    compare_grads, loss_landscape_along, loss_landscape_with, metrics, pca_directions, GradReport,
    LandscapeOptions, MetricSummary,
};
use snnkit::learning::{
    accumulate_time, bptt_grad, evaluate, train_offline, train_online, train_online_deferred, Batch,
    Estimator, LossMode, LossSpec, TrainOutput,
};
use snnkit::randman::{generate, Encoding, SpikeRaster};
use snnkit::{CounterRng, LayerSpec, Network, NetworkSpec, Params, Tensor};

use crate::config::{thread_count, DatasetConfig, RunConfig, TrainMode};
use crate::error::{CliError, CliResult};
use crate::io::{
    create_dir, find_trajectories, read_params, read_raster, write_bytes, write_json, write_params, write_raster,
    Provenance, RasterHeader,
};

/// Flags shared by every config-driven command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Common {
    pub fn load(&self) -> CliResult<(RunConfig, PathBuf)> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.validate()?;
        let out = cfg.output_dir(self.out.as_deref());
        Ok((cfg, out))
    }
}

fn seeds(cfg: &RunConfig) -> Vec<(&'static str, u64)> {
    let mut s = vec![("run", cfg.run.seed)];
    if let DatasetConfig::Randman(r) = &cfg.dataset {
        s.push(("manifold", r.manifold_seed));
        s.push(("sample", r.sample_seed));
    }
    s
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance::new(cfg.hash(), &seeds(cfg))
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<SpikeRaster> {
    match &cfg.dataset {
        DatasetConfig::Randman(r) => Ok(generate(r)?),
        DatasetConfig::Raster(dir) => Ok(read_raster(dir)?.1),
    }
}

/// The first `n` samples (all when `None`).
fn head(raster: &SpikeRaster, n: Option<usize>) -> CliResult<Batch> {
    let batch = raster.to_batch();
    match n {
        None => Ok(batch),
        Some(0) => Err(CliError::Config("--samples must be >= 1".into())),
        Some(n) if n >= batch.size() => Ok(batch),
        Some(n) => Ok(batch.select(&(0..n).collect::<Vec<_>>())),
    }
}

/// `--params` if given, else `<out>/params.bin` if present, else the
/// network's initial parameters for `run.seed`.
fn resolve_params(net: &Network, cfg: &RunConfig, out: &Path, flag: Option<&Path>) -> CliResult<Params> {
    if let Some(p) = flag {
        return Ok(read_params(p, net)?.1);
    }
    let default = out.join("params.bin");
    if default.is_file() {
        return Ok(read_params(&default, net)?.1);
    }
    println!("warning: no params file, using initial parameters (seed {})", cfg.run.seed);
    Ok(net.init_params(cfg.run.seed))
}

fn correct(outputs: &Tensor, labels: &[usize]) -> usize {
    let counts = accumulate_time(outputs);
    labels
        .iter()
        .enumerate()
        .filter(|&(s, &l)| {
            let row = counts.row(s);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best == l
        })
        .count()
}

// ---------------------------------------------------------------- randman-gen

pub fn randman_gen(common: &Common) -> CliResult<()> {
    let (cfg, out) = common.load()?;
    let DatasetConfig::Randman(rcfg) = &cfg.dataset else {
        return Err(CliError::Config("randman-gen needs a `randman` dataset section".into()));
    };
    let raster = generate(rcfg)?;
    let prov = Provenance::new(cfg.hash(), &[("manifold", rcfg.manifold_seed), ("sample", rcfg.sample_seed)]);
    let header = RasterHeader::new(rcfg, raster.len(), prov);
    write_raster(&out, &raster, &header)?;
    println!("{}", serde_json::to_string_pretty(&header).expect("header serializes"));
    if rcfg.encoding == Encoding::Time {
        let counts = raster.spike_counts();
        let ok = (0..raster.len())
            .filter(|&s| counts.row(s).iter().all(|&c| c == 1.0))
            .count();
        println!("verify: {ok}/{} samples with exactly one spike per neuron", raster.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
struct EpochMetrics {
    epoch: usize,
    loss: f64,
    accuracy: f64,
    wall_ms: u64,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    provenance: Provenance,
    config: &'a RunConfig,
    samples: usize,
    num_params: usize,
    epochs_completed: usize,
    final_loss: Option<f64>,
    final_accuracy: Option<f64>,
}

/// Removes checkpoints of an earlier run in the same directory.
fn clear_checkpoints(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        let mut stale = crate::io::checkpoint_files(dir)?;
        stale.push(dir.join("last_good.bin"));
        for f in stale.iter().filter(|f| f.is_file()) {
            std::fs::remove_file(f).map_err(|e| CliError::io(f, e))?;
        }
    }
    Ok(())
}

fn train_step(cfg: &RunConfig, net: &Network, params: &Params, state: &snnkit::learning::OptState, batch: &Batch) -> snnkit::Result<TrainOutput> {
    let l = &cfg.learning;
    let loss = l.loss_spec();
    match l.mode {
        TrainMode::Offline => train_offline(net, params, &cfg.optimizer, state, batch, loss),
        TrainMode::Online => train_online(net, params, &cfg.optimizer, state, batch, loss, l.estimator, l.fptt.as_ref()),
        TrainMode::Deferred => train_online_deferred(net, params, &cfg.optimizer, state, batch, loss, l.estimator),
    }
}

pub fn train(common: &Common) -> CliResult<()> {
    let (cfg, out) = common.load()?;
    let raster = load_dataset(&cfg)?;
    let net = cfg.network(raster.units())?;
    let data = raster.into_batch();
    let n = data.size();
    let prov = provenance(&cfg);
    let ckpt_dir = out.join("checkpoints");
    create_dir(&out)?;
    clear_checkpoints(&ckpt_dir)?;

    let mut params = match &cfg.run.init_params {
        Some(path) => read_params(path, &net)?.1,
        None => net.init_params(cfg.run.seed),
    };
    let mut opt_state = cfg.optimizer.init(&params);
    let loss = cfg.learning.loss_spec();
    let every = cfg.run.checkpoint_every;
    let mut lines = String::new();
    let metrics_path = out.join("metrics.jsonl");

    // Epoch 0: forward pass of the initial parameters over the same
    // mini-batches, as the baseline for the training curve.
    let started = Instant::now();
    let (mut total, mut right) = (0.0, 0);
    for chunk in (0..n).collect::<Vec<_>>().chunks(cfg.run.batch_size) {
        let sub = data.select(chunk);
        let (l, rollout) = evaluate(&net, &params, &sub, loss)?;
        total += l * sub.size() as f64;
        right += correct(&rollout.outputs, &sub.labels);
    }
    let record = |m: EpochMetrics, lines: &mut String| -> CliResult<()> {
        println!("epoch {:>4}  loss {:.6}  accuracy {:.4}", m.epoch, m.loss, m.accuracy);
        lines.push_str(&serde_json::to_string(&m).expect("metrics serialize"));
        lines.push('\n');
        write_bytes(&metrics_path, lines.as_bytes())
    };
    record(
        EpochMetrics {
            epoch: 0,
            loss: total / n as f64,
            accuracy: right as f64 / n as f64,
            wall_ms: started.elapsed().as_millis() as u64,
        },
        &mut lines,
    )?;
    if every > 0 {
        write_params(&ckpt_dir.join("epoch_0000.bin"), &params, &prov, Some(0))?;
    }

    let mut last = None;
    for epoch in 1..=cfg.run.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        CounterRng::stream(cfg.run.seed, epoch as u64).shuffle(&mut order);
        let (mut total, mut right) = (0.0, 0);
        for chunk in order.chunks(cfg.run.batch_size) {
            let sub = data.select(chunk);
            let step = train_step(&cfg, &net, &params, &opt_state, &sub)
                .map_err(CliError::from)
                .and_then(|o| {
                    if o.params.all_finite() && o.loss.is_finite() {
                        Ok(o)
                    } else {
                        Err(CliError::Numeric("non-finite parameters or loss".into()))
                    }
                });
            let o = match step {
                Ok(o) => o,
                Err(CliError::Numeric(msg)) => {
                    let path = ckpt_dir.join("last_good.bin");
                    write_params(&path, &params, &prov, Some(epoch - 1))?;
                    return Err(CliError::Numeric(format!(
                        "{msg} in epoch {epoch}; last good parameters in {}",
                        path.display()
                    )));
                }
                Err(e) => return Err(e),
            };
            total += o.loss * sub.size() as f64;
            right += correct(&o.outputs, &sub.labels);
            params = o.params;
            opt_state = o.opt_state;
        }
        let m = EpochMetrics {
            epoch,
            loss: total / n as f64,
            accuracy: right as f64 / n as f64,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        last = Some((m.loss, m.accuracy));
        record(m, &mut lines)?;
        if every > 0 && epoch % every == 0 {
            write_params(&ckpt_dir.join(format!("epoch_{epoch:04}.bin")), &params, &prov, Some(epoch))?;
        }
    }

    write_params(&out.join("params.bin"), &params, &prov, Some(cfg.run.epochs))?;
    write_json(
        &out.join("run.json"),
        &RunRecord {
            provenance: prov,
            config: &cfg,
            samples: n,
            num_params: params.num_params(),
            epochs_completed: cfg.run.epochs,
            final_loss: last.map(|l| l.0),
            final_accuracy: last.map(|l| l.1),
        },
    )?;
    println!("wrote {}", out.display());
    Ok(())
}

// ----------------------------------------------------------------------- eval

#[derive(Debug, Serialize)]
struct EvalRecord {
    provenance: Provenance,
    samples: usize,
    loss_mode: LossMode,
    loss: f64,
    metrics: MetricSummary,
}

pub fn eval(common: &Common, params_path: Option<&Path>, samples: Option<usize>) -> CliResult<()> {
    let (cfg, out) = common.load()?;
    let raster = load_dataset(&cfg)?;
    let net = Network::new(cfg.network.clone(), raster.units())?;
    let params = resolve_params(&net, &cfg, &out, params_path)?;
    let batch = head(&raster, samples)?;
    let (loss, rollout) = evaluate(&net, &params, &batch, cfg.learning.loss_spec())?;
    let summary = metrics(&net, &rollout.records, &rollout.outputs, &batch.labels)?;
    write_json(
        &out.join("eval.json"),
        &EvalRecord {
            provenance: provenance(&cfg),
            samples: batch.size(),
            loss_mode: cfg.learning.loss,
            loss,
            metrics: summary.clone(),
        },
    )?;
    println!("loss {loss}");
    println!("accuracy {}", summary.accuracy);
    println!("activation_sparsity {}", summary.activation_sparsity);
    println!("neuron_updates {}", summary.neuron_updates);
    println!("synaptic_ops {}", summary.synaptic_ops);
    Ok(())
}

// -------------------------------------------------------------- compare-grads

#[derive(Debug, Serialize)]
struct CompareRecord {
    provenance: Provenance,
    samples: usize,
    loss_mode: LossMode,
    report: GradReport,
}

pub fn compare(
    common: &Common,
    a: Estimator,
    b: Estimator,
    loss_mode: Option<LossMode>,
    params_path: Option<&Path>,
    samples: Option<usize>,
) -> CliResult<()> {
    let (cfg, out) = common.load()?;
    let raster = load_dataset(&cfg)?;
    let net = Network::new(cfg.network.clone(), raster.units())?;
    let loss = LossSpec {
        mode: loss_mode.unwrap_or(cfg.learning.loss),
    };
    for est in [a, b] {
        snnkit::learning::check_estimator(est, &net, loss)?;
    }
    let params = resolve_params(&net, &cfg, &out, params_path)?;
    let batch = head(&raster, Some(samples.unwrap_or(cfg.run.batch_size)))?;
    let report = compare_grads(&net, &params, &batch, loss, a, b)?;
    println!("global cosine {}", report.global_cosine);
    for g in &report.groups {
        println!("  {:<8} cosine {}", g.name, g.cosine);
    }
    write_json(
        &out.join("grad_report.json"),
        &CompareRecord {
            provenance: provenance(&cfg),
            samples: batch.size(),
            loss_mode: loss.mode,
            report,
        },
    )?;
    Ok(())
}

// ------------------------------------------------------------------ landscape

#[derive(Debug, Clone, Default)]
pub struct LandscapeArgs {
    pub params: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub resolution: usize,
    pub range: f64,
    pub dir_seed: Option<u64>,
    pub pca: bool,
    pub threads: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Serialize)]
struct LandscapeRecord {
    provenance: Provenance,
    samples: usize,
    loss_mode: LossMode,
    resolution: usize,
    range: f64,
    directions: &'static str,
    dir_seed: Option<u64>,
    coords: Vec<f64>,
    center_loss: f64,
    flagged: usize,
    trajectories: Vec<String>,
}

fn csv_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "inf".into()
    }
}

pub fn landscape(common: &Common, args: &LandscapeArgs) -> CliResult<()> {
    let (cfg, out) = common.load()?;
    let threads = thread_count(args.threads)?;
    let raster = load_dataset(&cfg)?;
    let net = Network::new(cfg.network.clone(), raster.units())?;
    let params = resolve_params(&net, &cfg, &out, args.params.as_deref())?;
    let batch = head(&raster, Some(args.samples.unwrap_or(cfg.run.batch_size)))?;
    let loss = cfg.learning.loss_spec();
    let opts = LandscapeOptions { threads };

    let root = args.checkpoints.clone().unwrap_or_else(|| out.join("checkpoints"));
    let mut trajectories = Vec::new();
    for (name, files) in find_trajectories(&root)? {
        let ckpts = files
            .iter()
            .map(|f| read_params(f, &net).map(|(h, p)| (h.epoch, p)))
            .collect::<CliResult<Vec<_>>>()?;
        trajectories.push((name, ckpts));
    }
    if trajectories.is_empty() {
        println!("warning: no checkpoints under {}; writing the grid only", root.display());
    }

    let dir_seed = args.dir_seed.unwrap_or(cfg.run.seed);
    let (grid, directions) = match trajectories.first() {
        Some((_, ckpts)) if args.pca => {
            let ps: Vec<Params> = ckpts.iter().map(|(_, p)| p.clone()).collect();
            let (d1, d2) = pca_directions(&ps, &params.flatten())?;
            let g = loss_landscape_along(&net, &params, &batch, loss, args.resolution, args.range, d1, d2, opts)?;
            (g, "pca")
        }
        _ => {
            if args.pca {
                println!("warning: --pca without checkpoints; using random directions");
            }
            let g = loss_landscape_with(&net, &params, &batch, loss, args.resolution, args.range, dir_seed, opts)?;
            (g, "random")
        }
    };

    let mut csv = String::from("x,y,loss\n");
    for i in 0..grid.resolution {
        for j in 0..grid.resolution {
            csv.push_str(&format!("{},{},{}\n", grid.coords[i], grid.coords[j], csv_num(grid.loss(i, j))));
        }
    }
    write_bytes(&out.join("landscape.csv"), csv.as_bytes())?;

    for (name, ckpts) in &trajectories {
        let ps: Vec<Params> = ckpts.iter().map(|(_, p)| p.clone()).collect();
        let xy = grid.project(&ps)?;
        let mut csv = String::from("step,epoch,x,y\n");
        for (k, ((epoch, _), (x, y))) in ckpts.iter().zip(xy).enumerate() {
            let e = epoch.map(|e| e.to_string()).unwrap_or_default();
            csv.push_str(&format!("{k},{e},{x},{y}\n"));
        }
        write_bytes(&out.join(format!("trajectory_{name}.csv")), csv.as_bytes())?;
    }

    write_json(
        &out.join("landscape.json"),
        &LandscapeRecord {
            provenance: provenance(&cfg),
            samples: batch.size(),
            loss_mode: loss.mode,
            resolution: grid.resolution,
            range: grid.range,
            directions,
            dir_seed: grid.dir_seed,
            coords: grid.coords.clone(),
            center_loss: grid.center_loss,
            flagged: grid.flagged(),
            trajectories: trajectories.iter().map(|(n, _)| n.clone()).collect(),
        },
    )?;
    println!(
        "grid {0}x{0} ({1} directions), center loss {2}, {3} flagged",
        grid.resolution,
        directions,
        grid.center_loss,
        grid.flagged()
    );
    for (name, c) in &trajectories {
        println!("trajectory {name}: {} checkpoints", c.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------- bench

#[derive(Debug, Clone, Serialize)]
pub struct BenchArgs {
    pub layers: usize,
    pub width: usize,
    pub time: usize,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Input spike probability per (sample, step, feature).
    pub input_rate: f64,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs {
            layers: 3,
            width: 64,
            time: 500,
            batch: 64,
            repeats: 20,
            seed: 0,
            input_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub mean_s: f64,
    pub std_s: f64,
    pub runs_s: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct BenchRecord<'a> {
    provenance: Provenance,
    args: &'a BenchArgs,
    result: &'a BenchResult,
}

/// Mean and sample standard deviation; σ is 0 for fewer than two runs.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Times one offline BPTT forward+backward pass per repeat, after a warm-up.
pub fn bench_run(args: &BenchArgs) -> CliResult<BenchResult> {
    if args.layers == 0 || args.width == 0 || args.time == 0 || args.batch == 0 || args.repeats == 0 {
        return Err(CliError::Config("bench sizes must all be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&args.input_rate) {
        return Err(CliError::Config("input rate must lie in [0, 1]".into()));
    }
    let layers = (0..args.layers)
        .flat_map(|_| [LayerSpec::affine(args.width), LayerSpec::lif()])
        .collect();
    let net = Network::new(NetworkSpec::chain(layers), args.width)?;
    let params = net.init_params(args.seed);
    let mut rng = CounterRng::new(args.seed).split(1);
    let x: Vec<f64> = (0..args.batch * args.time * args.width)
        .map(|_| f64::from(u8::from(rng.next_f64() < args.input_rate)))
        .collect();
    let labels = (0..args.batch).map(|_| rng.below(args.width)).collect();
    let batch = Batch::new(Tensor::from_vec(&[args.batch, args.time, args.width], x)?, labels)?;
    let loss = LossSpec::offline();

    bptt_grad(&net, &params, &batch, loss)?;
    let mut runs = Vec::with_capacity(args.repeats);
    for _ in 0..args.repeats {
        let t0 = Instant::now();
        let g = bptt_grad(&net, &params, &batch, loss)?;
        runs.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(g);
    }
    let (mean_s, std_s) = mean_std(&runs);
    Ok(BenchResult { mean_s, std_s, runs_s: runs })
}

pub fn bench(args: &BenchArgs, out: Option<&Path>) -> CliResult<BenchResult> {
    let r = bench_run(args)?;
    println!(
        "bench layers={} width={} T={} batch={} repeats={}: mean {:.6} s, std {:.6} s",
        args.layers, args.width, args.time, args.batch, args.repeats, r.mean_s, r.std_s
    );
    if let Some(dir) = out {
        let hash = {
            use sha2::{Digest, Sha256};
            hex::encode(Sha256::digest(serde_json::to_vec(args).expect("args serialize")))
        };
        write_json(
            &dir.join("bench.json"),
            &BenchRecord {
                provenance: Provenance::new(hash, &[("seed", args.seed)]),
                args,
                result: &r,
            },
        )?;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_single_run_has_zero_sigma() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn correct_counts_time_summed_argmax() {
        let outputs = Tensor::from_vec(&[2, 2, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(correct(&outputs, &[0, 1]), 2);
        assert_eq!(correct(&outputs, &[1, 0]), 0);
    }

    #[test]
    fn bench_rejects_zero_sizes() {
        let args = BenchArgs {
            repeats: 0,
            ..BenchArgs::default()
        };
        assert!(matches!(bench_run(&args), Err(CliError::Config(_))));
    }
}
