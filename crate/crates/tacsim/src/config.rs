//! On-disk TOML configuration.
//!
//! Every section is optional and every key has a default, so the empty file
//! is a valid config; unknown sections or keys are rejected rather than
//! silently ignored. The same file drives generation, training, and sweeps.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result};
use crate::evaluation::SweepConfig;
use crate::learn::{Task, TrainConfig};
use crate::representations::RepKind;
use crate::scenarios::{GenSpec, RandomizationSpec, SimSettings};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "TACSIM_CONFIG";

/// Root of the TOML file; sections mirror the library's config structs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dynamics: DynamicsParams,
    pub randomization: RandomizationSection,
    pub task: TaskSection,
    pub noise: NoiseSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub sim: SimSettings,
}

/// `[randomization]` — the baseline it scales lives in `[dynamics]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationSection {
    pub factor: f64,
    pub per_parameter: bool,
}

impl Default for RandomizationSection {
    fn default() -> Self {
        RandomizationSection {
            factor: 0.0,
            per_parameter: true,
        }
    }
}

/// `[task]` — what to generate or train on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub name: Task,
    pub rep: RepKind,
    /// Episodes (joint task) or samples (single-target tasks).
    pub count: usize,
    pub seed: u64,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            name: Task::EdgeOffset,
            rep: RepKind::PinPositions,
            count: 1000,
            seed: 0,
        }
    }
}

/// `[noise]` — pin-position noise injected into generated training data.
/// Defaults to the pseudo-real observation sigma so that training data
/// carries the same noise the evaluation environment will apply.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            sigma: crate::scenarios::DEFAULT_ENV_SIGMA,
        }
    }
}

/// `[sweep]` — grid axes and evaluation knobs of the factor sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub representations: Vec<RepKind>,
    pub factors: Vec<f64>,
    pub seeds: Vec<u64>,
    pub test_factor: f64,
    pub test_count: usize,
    pub env_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        SweepSection {
            representations: d.representations,
            factors: d.factors,
            seeds: d.seeds,
            test_factor: d.test_factor,
            test_count: d.test_count,
            env_seed: d.env_seed,
        }
    }
}

impl FileConfig {
    /// Parses a TOML string, rejecting unknown keys.
    pub fn from_toml(text: &str, origin: &str) -> Result<FileConfig> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    /// Loads the explicit path, else the `TACSIM_CONFIG` file, else defaults.
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let chosen = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(Into::into),
        };
        match chosen {
            Some(p) => {
                let text =
                    fs::read_to_string(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
                FileConfig::from_toml(&text, &p.display().to_string())
            }
            None => Ok(FileConfig::default()),
        }
    }

    /// Dataset-generation spec assembled from the sections.
    pub fn gen_spec(&self) -> GenSpec {
        GenSpec {
            task: self.task.name,
            rep_kind: self.task.rep,
            count: self.task.count,
            randomization: RandomizationSpec {
                baseline: self.dynamics,
                factor: self.randomization.factor,
                per_parameter: self.randomization.per_parameter,
            },
            noise_sigma: self.noise.sigma,
            seed: self.task.seed,
            sim: self.sim.clone(),
        }
    }

    /// Sweep definition assembled from the sections.
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            task: self.task.name,
            representations: self.sweep.representations.clone(),
            factors: self.sweep.factors.clone(),
            seeds: self.sweep.seeds.clone(),
            count: self.task.count,
            baseline: self.dynamics,
            per_parameter: self.randomization.per_parameter,
            noise_sigma: self.noise.sigma,
            test_factor: self.sweep.test_factor,
            test_count: self.sweep.test_count,
            env_seed: self.sweep.env_seed,
            train: self.train.clone(),
            sim: self.sim.clone(),
        }
    }
}
