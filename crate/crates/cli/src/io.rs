//! On-disk formats.
//!
//! - Params file: `u64` LE header length, JSON [`ParamsHeader`], then the
//!   flat parameters in canonical block order as LE `f64`.
//! - Raster export: `raster.json` ([`RasterHeader`]), `raster.bin` with one
//!   byte (0 or 1) per value in `(sample, timestep, unit)` order, so each
//!   row of `units` bytes is one (sample, timestep) pair, and `labels.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use snnkit::randman::{Encoding, RandmanConfig, SpikeRaster};
use snnkit::{Network, Params, Tensor};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "snnkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const PARAMS_FORMAT: &str = "snnkit-params";
pub const RASTER_FORMAT: &str = "snnkit-raster";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
}

impl Provenance {
    pub fn new(config_sha256: String, seeds: &[(&str, u64)]) -> Self {
        Provenance {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_sha256,
            seeds: seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: malformed JSON: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    /// Epoch the parameters were taken at, if from training.
    pub epoch: Option<usize>,
    pub num_params: usize,
    pub blocks: Vec<BlockEntry>,
}

pub fn encode_params(params: &Params, provenance: &Provenance, epoch: Option<usize>) -> Vec<u8> {
    let header = ParamsHeader {
        format: PARAMS_FORMAT.into(),
        version: 1,
        provenance: provenance.clone(),
        epoch,
        num_params: params.num_params(),
        blocks: params
            .blocks()
            .into_iter()
            .map(|b| BlockEntry {
                name: b.name(),
                shape: b.shape.clone(),
                offset: b.offset,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let flat = params.flatten();
    let mut out = Vec::with_capacity(8 + json.len() + 8 * flat.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_params(path: &Path, params: &Params, provenance: &Provenance, epoch: Option<usize>) -> CliResult<()> {
    write_bytes(path, &encode_params(params, provenance, epoch))
}

/// Parses a params file and checks it against `net`'s parameter layout.
pub fn decode_params(bytes: &[u8], net: &Network) -> CliResult<(ParamsHeader, Params)> {
    let bad = |msg: String| CliError::Io(format!("params file: {msg}"));
    if bytes.len() < 8 {
        return Err(bad("truncated header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body_start = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: ParamsHeader =
        serde_json::from_slice(&bytes[8..body_start]).map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.format != PARAMS_FORMAT || header.version != 1 {
        return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let body = &bytes[body_start..];
    if body.len() != 8 * header.num_params {
        return Err(bad(format!("body holds {} bytes, header says {} values", body.len(), header.num_params)));
    }
    let template = net.init_params(0);
    let expected: Vec<(String, Vec<usize>, usize)> = template
        .blocks()
        .into_iter()
        .map(|b| (b.name(), b.shape.clone(), b.offset))
        .collect();
    let found: Vec<(String, Vec<usize>, usize)> = header
        .blocks
        .iter()
        .map(|b| (b.name.clone(), b.shape.clone(), b.offset))
        .collect();
    if expected != found {
        return Err(CliError::Config(
            "params file layout does not match the configured network".into(),
        ));
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = template.with_flat(&flat)?;
    Ok((header, params))
}

pub fn read_params(path: &Path, net: &Network) -> CliResult<(ParamsHeader, Params)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_params(&bytes, net).map_err(|e| match e {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RasterHeader {
    pub format: String,
    pub C: usize,
    pub M: usize,
    pub D: usize,
    pub alpha: f64,
    pub K: usize,
    pub T: usize,
    pub encoding: Encoding,
    pub seeds: BTreeMap<String, u64>,
    pub count: usize,
    pub body: String,
    pub labels: String,
    pub provenance: Provenance,
}

impl RasterHeader {
    pub fn new(cfg: &RandmanConfig, count: usize, provenance: Provenance) -> Self {
        RasterHeader {
            format: RASTER_FORMAT.into(),
            C: cfg.classes,
            M: cfg.units,
            D: cfg.intrinsic_dim,
            alpha: cfg.alpha,
            K: cfg.cutoff,
            T: cfg.timesteps,
            encoding: cfg.encoding,
            seeds: provenance.seeds.clone(),
            count,
            body: "raster.bin".into(),
            labels: "labels.csv".into(),
            provenance,
        }
    }
}

pub fn write_raster(dir: &Path, raster: &SpikeRaster, header: &RasterHeader) -> CliResult<()> {
    create_dir(dir)?;
    let body: Vec<u8> = raster.data.data().iter().map(|&v| u8::from(v != 0.0)).collect();
    write_bytes(&dir.join(&header.body), &body)?;
    let mut labels = String::from("sample,label\n");
    for (i, l) in raster.labels.iter().enumerate() {
        labels.push_str(&format!("{i},{l}\n"));
    }
    write_bytes(&dir.join(&header.labels), labels.as_bytes())?;
    write_json(&dir.join("raster.json"), header)
}

pub fn read_raster(dir: &Path) -> CliResult<(RasterHeader, SpikeRaster)> {
    let header: RasterHeader = read_json(&dir.join("raster.json"))?;
    if header.format != RASTER_FORMAT {
        return Err(CliError::Io(format!("{}: not a raster export", dir.display())));
    }
    let body_path = dir.join(&header.body);
    let body = fs::read(&body_path).map_err(|e| CliError::io(&body_path, e))?;
    let expected = header.count * header.T * header.M;
    if body.len() != expected {
        return Err(CliError::Io(format!(
            "{}: {} bytes, header implies {expected}",
            body_path.display(),
            body.len()
        )));
    }
    if body.iter().any(|&b| b > 1) {
        return Err(CliError::Io(format!("{}: values other than 0/1", body_path.display())));
    }
    let labels_path = dir.join(&header.labels);
    let text = fs::read_to_string(&labels_path).map_err(|e| CliError::io(&labels_path, e))?;
    let mut labels = Vec::with_capacity(header.count);
    for (n, line) in text.lines().skip(1).enumerate() {
        let label = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&l| l < header.C)
            .ok_or_else(|| CliError::Io(format!("{}: bad line {}", labels_path.display(), n + 2)))?;
        labels.push(label);
    }
    if labels.len() != header.count {
        return Err(CliError::Io(format!(
            "{}: {} labels for {} samples",
            labels_path.display(),
            labels.len(),
            header.count
        )));
    }
    let data = Tensor::from_vec(
        &[header.count, header.T, header.M],
        body.into_iter().map(f64::from).collect(),
    )?;
    Ok((header, SpikeRaster { data, labels }))
}

/// `epoch_XXXX.bin` files of a directory, in epoch order.
pub fn checkpoint_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_file() && name.starts_with("epoch_") && name.ends_with(".bin") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Trajectories below a checkpoint root: the root itself if it holds
/// checkpoints, plus every subdirectory that does. Sorted by name.
pub fn find_trajectories(root: &Path) -> CliResult<Vec<(String, Vec<PathBuf>)>> {
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    let own = checkpoint_files(root)?;
    if !own.is_empty() {
        let name = root.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string();
        out.push((name, own));
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| CliError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for dir in subdirs {
        let files = checkpoint_files(&dir)?;
        if !files.is_empty() {
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string();
            out.push((name, files));
        }
    }
    Ok(out)
}
