//! The on-disk experiment description.
//!
//! A run is described by one TOML document. Every field has a default, so an
//! empty file is a valid (blobs, MLP) experiment; command-line flags are
//! applied on top and the resolved document is written next to the outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use moped_core::data::{load_idx, make_synthetic_with, Dataset, SyntheticKind, SyntheticSpec};
use moped_core::eval::{default_fractions, default_thresholds, DEFAULT_BINS};
use moped_core::moped::MopedConfig;
use moped_core::nn::{Architecture, MleConfig, ModelGraph};
use moped_core::predictive::UncertaintyKind;
use moped_core::variational::ViConfig;

/// Environment variable naming the default directory for IDX files.
pub const DATA_DIR_ENV: &str = "MOPED_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub out: PathBuf,
    /// Monte Carlo draws at evaluation time.
    pub mc_samples: usize,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub mle: MleConfig,
    pub vi: ViConfig,
    pub moped: MopedConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            mc_samples: 40,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            mle: MleConfig::default(),
            vi: ViConfig::default(),
            moped: MopedConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Hidden width of the MLP.
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Mlp,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory against which relative IDX paths resolve; defaults to
    /// `$MOPED_DATA_DIR`, then `data`.
    pub dir: Option<PathBuf>,
    /// Seed of the synthetic generators (independent of the run seed so that
    /// changing the run seed keeps the data fixed).
    pub seed: u64,
    pub synthetic: SyntheticSpec,
    pub train: DatasetSource,
    pub test: DatasetSource,
    /// Out-of-distribution set for `ood`.
    pub ood: Option<DatasetSource>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            seed: 0,
            synthetic: SyntheticSpec::default(),
            train: DatasetSource::Synthetic {
                generator: SyntheticKind::Blobs,
                n: 600,
                split: "train".into(),
            },
            test: DatasetSource::Synthetic {
                generator: SyntheticKind::Blobs,
                n: 300,
                split: "test".into(),
            },
            ood: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` examples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Synthetic {
        generator: SyntheticKind,
        n: usize,
        split: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fractions: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub bins: usize,
    /// Score used by `ood`.
    pub ood_uncertainty: UncertaintyKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fractions: default_fractions(),
            thresholds: default_thresholds(),
            bins: DEFAULT_BINS,
            ood_uncertainty: UncertaintyKind::Bald,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Propagates the root seed into every stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.mle.seed = seed;
        self.vi.seed = seed;
        self.moped.seed = seed;
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data
            .dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn load_dataset(&self, source: &DatasetSource) -> Result<Dataset> {
        match source {
            DatasetSource::Idx { images, labels, limit } => {
                let dir = self.data_dir();
                let data = load_idx(dir.join(images), dir.join(labels))?;
                Ok(match limit {
                    Some(n) => data.head(*n),
                    None => data,
                })
            }
            DatasetSource::Synthetic { generator, n, split } => {
                Ok(make_synthetic_with(*generator, &self.data.synthetic, *n, self.data.seed, split)?)
            }
        }
    }

    pub fn graph(&self, input_shape: [usize; 3], classes: usize) -> Result<ModelGraph> {
        Ok(match self.model.architecture {
            Architecture::Mlp => ModelGraph::mlp(input_shape, self.model.hidden, classes)?,
            arch => ModelGraph::build(arch, input_shape, classes)?,
        })
    }
}
