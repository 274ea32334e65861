//! Layer graphs of affine and LIF layers joined by `cat` connections.
//!
//! Layer `d` receives the concatenation of its sequential predecessor's
//! output (the network input for `d = 0`) and the outputs of every source
//! listed in `cat[d]`, in list order. A source `s < d` contributes its output
//! from the current step (skip connection). A source `s ≥ d` contributes
//! its output from the previous step, zeros at `t = 0` (recurrent edge).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::{lif_init_state, logistic, lif_step_with, LifConfig, LifState, SpikeMode};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Affine {
        out_features: usize,
    },
    Lif {
        #[serde(default)]
        config: LifConfig,
    },
}

impl LayerSpec {
    pub fn affine(out_features: usize) -> Self {
        LayerSpec::Affine { out_features }
    }

    pub fn lif() -> Self {
        LayerSpec::Lif {
            config: LifConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub cat: BTreeMap<usize, Vec<usize>>,
}

impl NetworkSpec {
    pub fn chain(layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            layers,
            cat: BTreeMap::new(),
        }
    }

    pub fn with_cat(mut self, dest: usize, sources: Vec<usize>) -> Self {
        self.cat.insert(dest, sources);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer { index: usize, delayed: bool },
}

/// One concatenated piece of a layer's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub source: Source,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Affine,
    Lif(LifConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedLayer {
    pub kind: LayerKind,
    pub inputs: Vec<Segment>,
    pub in_width: usize,
    pub out_width: usize,
}

impl ResolvedLayer {
    pub fn lif_config(&self) -> Option<&LifConfig> {
        match &self.kind {
            LayerKind::Lif(c) => Some(c),
            LayerKind::Affine => None,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, LayerKind::Affine)
    }
}

/// A validated network with every layer width resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    input_width: usize,
    layers: Vec<ResolvedLayer>,
    delayed: Vec<bool>,
    mode: SpikeMode,
}

impl Network {
    pub fn new(spec: NetworkSpec, input_width: usize) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        if input_width == 0 {
            return Err(Error::Config("input width must be >= 1".into()));
        }
        let n = spec.layers.len();
        for layer in &spec.layers {
            match layer {
                LayerSpec::Affine { out_features } if *out_features == 0 => {
                    return Err(Error::Config("affine out_features must be >= 1".into()))
                }
                LayerSpec::Lif { config } => config.validate()?,
                _ => {}
            }
        }
        for (&d, sources) in &spec.cat {
            if d >= n {
                return Err(Error::Config(format!("cat destination {d} is not a layer")));
            }
            if let Some(&s) = sources.iter().find(|&&s| s >= n) {
                return Err(Error::Config(format!("cat source {s} is not a layer")));
            }
        }

        // Widths: affine outputs are fixed, LIF outputs equal their input
        // width. Resolve to a fixed point; anything left is a cycle.
        let mut out: Vec<Option<usize>> = spec
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Affine { out_features } => Some(*out_features),
                LayerSpec::Lif { .. } => None,
            })
            .collect();
        let sources_of = |d: usize| -> Vec<Source> {
            let mut v = vec![if d == 0 {
                Source::Input
            } else {
                Source::Layer {
                    index: d - 1,
                    delayed: false,
                }
            }];
            if let Some(cs) = spec.cat.get(&d) {
                v.extend(cs.iter().map(|&s| Source::Layer {
                    index: s,
                    delayed: s >= d,
                }));
            }
            v
        };
        let width_of = |src: &Source, out: &[Option<usize>]| match src {
            Source::Input => Some(input_width),
            Source::Layer { index, .. } => out[*index],
        };
        let mut in_w: Vec<Option<usize>> = vec![None; n];
        loop {
            let mut progressed = false;
            for d in 0..n {
                if in_w[d].is_some() {
                    continue;
                }
                let srcs = sources_of(d);
                let ws: Option<Vec<usize>> = srcs.iter().map(|s| width_of(s, &out)).collect();
                if let Some(ws) = ws {
                    let total = ws.iter().sum();
                    in_w[d] = Some(total);
                    if out[d].is_none() {
                        out[d] = Some(total);
                    }
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        if let Some(d) = in_w.iter().position(Option::is_none) {
            return Err(Error::UnresolvableCycle { layer: d });
        }

        let mut delayed = vec![false; n];
        let mut layers = Vec::with_capacity(n);
        for d in 0..n {
            let mut offset = 0;
            let mut inputs = Vec::new();
            for src in sources_of(d) {
                let width = width_of(&src, &out).unwrap();
                if let Source::Layer { index, delayed: true } = src {
                    delayed[index] = true;
                }
                inputs.push(Segment {
                    source: src,
                    offset,
                    width,
                });
                offset += width;
            }
            let kind = match &spec.layers[d] {
                LayerSpec::Affine { .. } => LayerKind::Affine,
                LayerSpec::Lif { config } => LayerKind::Lif(config.clone()),
            };
            layers.push(ResolvedLayer {
                kind,
                inputs,
                in_width: in_w[d].unwrap(),
                out_width: out[d].unwrap(),
            });
        }
        Ok(Network {
            spec,
            input_width,
            layers,
            delayed,
            mode: SpikeMode::Heaviside,
        })
    }

    /// Same network with a different forward spike mode.
    pub fn with_mode(mut self, mode: SpikeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mode(&self) -> SpikeMode {
        self.mode
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().out_width
    }

    pub fn layers(&self) -> &[ResolvedLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Whether layer `d`'s output is consumed one step late somewhere.
    pub fn is_delayed_source(&self, d: usize) -> bool {
        self.delayed[d]
    }

    pub fn init_params(&self, seed: u64) -> Params {
        let root = CounterRng::new(seed);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(d, l)| match &l.kind {
                LayerKind::Affine => {
                    let mut rng = root.split(d as u64);
                    let bound = (1.0 / l.in_width as f64).sqrt();
                    let data = (0..l.out_width * l.in_width)
                        .map(|_| rng.uniform(-bound, bound))
                        .collect();
                    LayerParams::Affine {
                        w: Tensor::from_vec(&[l.out_width, l.in_width], data).unwrap(),
                        b: Tensor::zeros(&[l.out_width]),
                    }
                }
                LayerKind::Lif(cfg) => LayerParams::Lif {
                    tau: cfg
                        .trainable_tau
                        .then(|| Tensor::full(&[l.out_width], cfg.tau_init)),
                },
            })
            .collect();
        Params { layers }
    }

    /// Checks that `params` has this network's layout.
    pub fn check_params(&self, params: &Params) -> Result<()> {
        if params.layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "params have {} layers, network has {}",
                params.layers.len(),
                self.layers.len()
            )));
        }
        for (d, (l, p)) in self.layers.iter().zip(&params.layers).enumerate() {
            match (&l.kind, p) {
                (LayerKind::Affine, LayerParams::Affine { w, b }) => {
                    if w.shape() != [l.out_width, l.in_width] || b.shape() != [l.out_width] {
                        return Err(Error::Shape(format!(
                            "layer {d}: W {:?} b {:?}, expected W [{}, {}]",
                            w.shape(),
                            b.shape(),
                            l.out_width,
                            l.in_width
                        )));
                    }
                }
                (LayerKind::Lif(cfg), LayerParams::Lif { tau }) => match tau {
                    Some(t) if t.shape() != [l.out_width] => {
                        return Err(Error::Shape(format!("layer {d}: tau {:?}", t.shape())))
                    }
                    None if cfg.trainable_tau => {
                        return Err(Error::Shape(format!("layer {d}: missing trainable tau")))
                    }
                    _ => {}
                },
                _ => return Err(Error::Shape(format!("layer {d}: parameter kind mismatch"))),
            }
        }
        Ok(())
    }

    /// Per-neuron leak factors `logistic(τ)` of LIF layer `d`.
    pub fn leak(&self, params: &Params, d: usize) -> Vec<f64> {
        let l = &self.layers[d];
        let cfg = l.lif_config().expect("leak of a non-LIF layer");
        match &params.layers[d] {
            LayerParams::Lif { tau: Some(t) } => t.data().iter().map(|&x| logistic(x)).collect(),
            _ => vec![logistic(cfg.tau_init); l.out_width],
        }
    }

    pub fn init_state(&self, batch: usize) -> Result<NetState> {
        let mut lif = Vec::with_capacity(self.layers.len());
        let mut prev_out = Vec::with_capacity(self.layers.len());
        for (d, l) in self.layers.iter().enumerate() {
            lif.push(match l.kind {
                LayerKind::Lif(_) => Some(lif_init_state(batch, l.out_width)?),
                LayerKind::Affine => None,
            });
            prev_out.push(self.delayed[d].then(|| Tensor::zeros(&[batch, l.out_width])));
        }
        Ok(NetState { lif, prev_out })
    }

    /// Concatenated input of layer `d`. `current` holds this step's outputs
    /// of layers `< d`; `prev` yields last step's outputs (`None` = zeros).
    pub fn gather_input<'a>(
        &self,
        d: usize,
        x_t: &Tensor,
        current: &[Tensor],
        prev: impl Fn(usize) -> Option<&'a Tensor>,
    ) -> Tensor {
        let l = &self.layers[d];
        if l.inputs.len() == 1 {
            return match l.inputs[0].source {
                Source::Input => x_t.clone(),
                Source::Layer { index, .. } => current[index].clone(),
            };
        }
        let batch = x_t.rows();
        let mut missing = Vec::new();
        for (k, seg) in l.inputs.iter().enumerate() {
            if let Source::Layer { index, delayed: true } = seg.source {
                if prev(index).is_none() {
                    missing.push(k);
                }
            }
        }
        let zeros: Vec<Tensor> = missing
            .iter()
            .map(|&k| Tensor::zeros(&[batch, l.inputs[k].width]))
            .collect();
        let mut parts: Vec<&Tensor> = Vec::with_capacity(l.inputs.len());
        let mut z = zeros.iter();
        for seg in &l.inputs {
            parts.push(match seg.source {
                Source::Input => x_t,
                Source::Layer { index, delayed: false } => &current[index],
                Source::Layer { index, delayed: true } => match prev(index) {
                    Some(t) => t,
                    None => z.next().unwrap(),
                },
            });
        }
        Tensor::hcat(&parts)
    }

    pub fn forward_step(
        &self,
        params: &Params,
        state: &NetState,
        x_t: &Tensor,
    ) -> Result<(NetState, Tensor, StepRecord)> {
        if x_t.shape().len() != 2 || x_t.cols() != self.input_width {
            return Err(Error::Shape(format!(
                "input {:?}, expected [batch, {}]",
                x_t.shape(),
                self.input_width
            )));
        }
        let batch = x_t.rows();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut lif_records = Vec::with_capacity(self.layers.len());
        let mut new_lif = Vec::with_capacity(self.layers.len());
        let mut spike_counts = Vec::with_capacity(self.layers.len());
        let mut input_counts = Vec::with_capacity(self.layers.len());
        for (d, l) in self.layers.iter().enumerate() {
            let u = self.gather_input(d, x_t, &outputs, |s| state.prev_out[s].as_ref());
            input_counts.push(u.count_nonzero());
            match (&l.kind, &params.layers[d]) {
                (LayerKind::Affine, LayerParams::Affine { w, b }) => {
                    if w.shape() != [l.out_width, u.cols()] {
                        return Err(Error::Shape(format!(
                            "layer {d}: W {:?} against input width {}",
                            w.shape(),
                            u.cols()
                        )));
                    }
                    let mut y = u.matmul_t(w);
                    let bias = b.data();
                    for r in 0..batch {
                        for (y, b) in y.row_mut(r).iter_mut().zip(bias) {
                            *y += b;
                        }
                    }
                    outputs.push(y);
                    lif_records.push(None);
                    new_lif.push(None);
                    spike_counts.push(0);
                }
                (LayerKind::Lif(cfg), LayerParams::Lif { .. }) => {
                    let st = state.lif[d]
                        .as_ref()
                        .ok_or_else(|| Error::Shape(format!("layer {d}: missing LIF state")))?;
                    let leak = self.leak(params, d);
                    let step = lif_step_with(cfg, &leak, st, &u, self.mode, d)?;
                    spike_counts.push(step.spikes.count_nonzero());
                    lif_records.push(Some(LifRecord {
                        v_prev: st.v.clone(),
                        v_pre: step.v_pre,
                        sigma: step.sigma,
                    }));
                    new_lif.push(Some(step.state));
                    outputs.push(step.spikes);
                }
                _ => return Err(Error::Shape(format!("layer {d}: parameter kind mismatch"))),
            }
        }
        let prev_out = (0..self.layers.len())
            .map(|d| self.delayed[d].then(|| outputs[d].clone()))
            .collect();
        let y = outputs.last().unwrap().clone();
        Ok((
            NetState {
                lif: new_lif,
                prev_out,
            },
            y,
            StepRecord {
                outputs,
                lif: lif_records,
                spike_counts,
                input_counts,
            },
        ))
    }

    /// Runs `x` (`[batch, T, features]`) from a fresh state.
    pub fn rollout(&self, params: &Params, x: &Tensor) -> Result<Rollout> {
        if x.shape().len() != 3 || x.shape()[1] == 0 {
            return Err(Error::Shape(format!(
                "rollout input {:?}, expected [batch, T >= 1, features]",
                x.shape()
            )));
        }
        self.check_params(params)?;
        let (batch, t_len) = (x.shape()[0], x.shape()[1]);
        let mut state = self.init_state(batch)?;
        let mut outs = Vec::with_capacity(t_len);
        let mut records = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (next, y, rec) = self.forward_step(params, &state, &x.time_slice(t))?;
            state = next;
            outs.push(y);
            records.push(rec);
        }
        Ok(Rollout {
            outputs: Tensor::stack_time(&outs),
            records,
        })
    }
}

/// Builds the network for `spec` with the input width of `sample_input`
/// (`[batch, features]` or `[batch, T, features]`) and initializes it.
pub fn init_params(spec: &NetworkSpec, sample_input: &Tensor, seed: u64) -> Result<Params> {
    let width = *sample_input
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("sample input has no feature axis".into()))?;
    Ok(Network::new(spec.clone(), width)?.init_params(seed))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Affine { w: Tensor, b: Tensor },
    Lif { tau: Option<Tensor> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Weight,
    Bias,
    Tau,
}

impl BlockKind {
    pub fn short(self) -> &'static str {
        match self {
            BlockKind::Weight => "w",
            BlockKind::Bias => "b",
            BlockKind::Tau => "tau",
        }
    }
}

/// Position of one parameter tensor in the canonical flattening.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub layer: usize,
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

impl BlockInfo {
    pub fn name(&self) -> String {
        format!("layer{}.{}", self.layer, self.kind.short())
    }
}

/// Trainable parameters, also used for gradients of the same layout.
///
/// Canonical order: layer ascending, then `W` (row-major), `b`, `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::Affine { w, b } => {
                    v.push(w);
                    v.push(b);
                }
                LayerParams::Lif { tau: Some(t) } => v.push(t),
                LayerParams::Lif { tau: None } => {}
            }
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::Affine { w, b } => {
                    v.push(w);
                    v.push(b);
                }
                LayerParams::Lif { tau: Some(t) } => v.push(t),
                LayerParams::Lif { tau: None } => {}
            }
        }
        v
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (d, l) in self.layers.iter().enumerate() {
            let mut push = |kind, t: &Tensor| {
                out.push(BlockInfo {
                    layer: d,
                    kind,
                    offset,
                    len: t.len(),
                    shape: t.shape().to_vec(),
                });
                offset += t.len();
            };
            match l {
                LayerParams::Affine { w, b } => {
                    push(BlockKind::Weight, w);
                    push(BlockKind::Bias, b);
                }
                LayerParams::Lif { tau: Some(t) } => push(BlockKind::Tau, t),
                LayerParams::Lif { tau: None } => {}
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            v.extend_from_slice(t.data());
        }
        v
    }

    /// Same layout as `self`, values from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Params> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut out = self.clone();
        let mut pos = 0;
        for t in out.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> Params {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    pub fn affine(&self, d: usize) -> (&Tensor, &Tensor) {
        match &self.layers[d] {
            LayerParams::Affine { w, b } => (w, b),
            _ => panic!("layer {d} is not affine"),
        }
    }

    pub fn affine_mut(&mut self, d: usize) -> (&mut Tensor, &mut Tensor) {
        match &mut self.layers[d] {
            LayerParams::Affine { w, b } => (w, b),
            _ => panic!("layer {d} is not affine"),
        }
    }

    pub fn tau_mut(&mut self, d: usize) -> Option<&mut Tensor> {
        match &mut self.layers[d] {
            LayerParams::Lif { tau } => tau.as_mut(),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Per-step recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub lif: Vec<Option<LifState>>,
    /// Last step's output of every layer that feeds a delayed cat edge.
    pub prev_out: Vec<Option<Tensor>>,
}

/// LIF quantities the gradient engines replay.
#[derive(Debug, Clone, PartialEq)]
pub struct LifRecord {
    /// Post-reset membrane of the previous step.
    pub v_prev: Tensor,
    pub v_pre: Tensor,
    pub sigma: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub outputs: Vec<Tensor>,
    pub lif: Vec<Option<LifRecord>>,
    /// Non-zero outputs per layer (0 for affine layers).
    pub spike_counts: Vec<usize>,
    /// Non-zero entries of each layer's concatenated input.
    pub input_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `[batch, T, out]`
    pub outputs: Tensor,
    pub records: Vec<StepRecord>,
}
