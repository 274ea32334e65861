//! JSON run configuration. Every section and field is optional; missing
//! values take the defaults documented on each field. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use snnkit::learning::{check_estimator, Estimator, FpttConfig, LossMode, LossSpec, OptimizerSpec};
use snnkit::randman::RandmanConfig;
use snnkit::{LayerSpec, Network, NetworkSpec};

use crate::error::{CliError, CliResult};

/// Overrides `run.output_dir`.
pub const OUT_ENV: &str = "SNNKIT_OUT";
/// Worker threads for the parallel-safe regions (landscape grid).
pub const THREADS_ENV: &str = "SNNKIT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Default: Dense 50 → LIF → Dense 10 → LIF.
    pub network: NetworkSpec,
    pub learning: LearningConfig,
    /// Default: Adamax, lr 0.001.
    pub optimizer: OptimizerSpec,
    pub dataset: DatasetConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            network: NetworkSpec::chain(vec![
                LayerSpec::affine(50),
                LayerSpec::lif(),
                LayerSpec::affine(10),
                LayerSpec::lif(),
            ]),
            learning: LearningConfig::default(),
            optimizer: OptimizerSpec::default(),
            dataset: DatasetConfig::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// BPTT over the whole sequence, one update per batch.
    #[default]
    Offline,
    /// An update after every timestep.
    Online,
    /// Online gradient accumulation, one update at the last timestep.
    Deferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    /// Default `bptt`.
    pub estimator: Estimator,
    /// Default `offline`.
    pub mode: TrainMode,
    /// Loss accumulation, default `offline` (on time-summed outputs).
    pub loss: LossMode,
    /// FPTT regularizer around online updates; default off.
    pub fptt: Option<FpttConfig>,
}

impl LearningConfig {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec { mode: self.loss }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generate in memory.
    Randman(RandmanConfig),
    /// Directory written by `randman-gen`.
    Raster(PathBuf),
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Randman(RandmanConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Default 10.
    pub epochs: usize,
    /// Default 32.
    pub batch_size: usize,
    /// Parameter init and per-epoch shuffling; default 0.
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and at epoch 0);
    /// 0 disables checkpoints. Default 1.
    pub checkpoint_every: usize,
    /// Default `runs/default`; `SNNKIT_OUT` and `--out` override it.
    pub output_dir: PathBuf,
    /// Start training from this params file instead of a fresh
    /// initialization; default none.
    pub init_params: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            checkpoint_every: 1,
            output_dir: PathBuf::from("runs/default"),
            init_params: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> CliResult<()> {
        self.optimizer.validate()?;
        if self.run.batch_size == 0 {
            return Err(CliError::Config("run.batch_size must be >= 1".into()));
        }
        if let DatasetConfig::Randman(r) = &self.dataset {
            r.validate()?;
        }
        let l = &self.learning;
        match l.mode {
            TrainMode::Offline => {
                if l.estimator != Estimator::Bptt {
                    return Err(CliError::Config(format!(
                        "offline mode trains with bptt, got estimator `{}`",
                        l.estimator
                    )));
                }
            }
            TrainMode::Online | TrainMode::Deferred => {
                if l.estimator == Estimator::Bptt {
                    return Err(CliError::Config("BPTT is not an online estimator".into()));
                }
            }
        }
        if let Some(f) = &l.fptt {
            if l.mode != TrainMode::Online {
                return Err(CliError::Config("fptt requires mode `online`".into()));
            }
            f.validate()?;
        }
        Ok(())
    }

    /// Builds the network for `inputs` features and checks that the
    /// estimator supports it.
    pub fn network(&self, inputs: usize) -> CliResult<Network> {
        let net = Network::new(self.network.clone(), inputs)?;
        if self.learning.mode != TrainMode::Offline {
            check_estimator(self.learning.estimator, &net, self.learning.loss_spec())?;
        }
        Ok(net)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_ENV) {
            Some(p) if !p.is_empty() => PathBuf::from(p),
            _ => self.run.output_dir.clone(),
        }
    }
}

/// `--threads` if given, else `SNNKIT_THREADS`, else 1.
pub fn thread_count(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.is_empty() => v
                .parse()
                .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
            _ => 1,
        },
    };
    if n == 0 {
        return Err(CliError::Config("thread count must be >= 1".into()));
    }
    Ok(n)
}
