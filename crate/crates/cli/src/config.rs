//! Run configuration read from TOML. Every key is optional; omitted keys take
//! the defaults documented on each field. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use dipme_core::classifier::{MceConfig, TrainConfig};
use dipme_core::evaluation::Protocol;
use dipme_core::mapping::GridConfig;
use dipme_core::preprocess::{PreprocessConfig, RECOGNITION_LENGTHS};
use dipme_core::simulator::{OperatorProfile, SimConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for dataset generation, splits and training. Default 0.
    pub seed: u64,
    /// Output directory. Default `runs/latest`.
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    /// Simulator parameters; defaults as in the core library.
    pub simulator: SimConfig,
    /// Gravity compensation, filter and resampling; core defaults
    /// (5th-order 5 Hz low-pass, 0.05 m/s nominal speed, 251-sample series).
    pub preprocess: PreprocessConfig,
    /// Encoder shape; core defaults (N = 128, d_model 64, 4 heads).
    pub mce: MceConfig,
    /// Optimizer; core defaults (Adam, lr 3e-4, batch 16, 100 epochs).
    /// Its `seed` is replaced by the master seed.
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub mapping: MappingSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/latest"),
            dataset: DatasetConfig::default(),
            simulator: SimConfig::default(),
            preprocess: PreprocessConfig::default(),
            mce: MceConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            mapping: MappingSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Recordings per class and operator. Default 40.
    pub n_per_class: usize,
    /// Number of operators. 1 (default) uses the default operator profile,
    /// more draw a cohort of distinct profiles.
    pub operators: usize,
    /// Seed of the operator cohort. Default 0.
    pub cohort_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_per_class: 40,
            operators: 1,
            cohort_seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn profiles(&self) -> Vec<OperatorProfile> {
        if self.operators == 1 {
            vec![OperatorProfile::default()]
        } else {
            OperatorProfile::cohort(self.operators, self.cohort_seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Default `holdout`.
    pub protocol: Protocol,
    /// Folds of `kfold`. Default 10.
    pub folds: usize,
    /// Test recordings of the stratified `holdout`. Default 40.
    pub holdout_test: usize,
    /// Operators held out together per `loo` split. Default 1.
    pub loo_group: usize,
    /// Folders of `folder-holdout` and how many are held out. Default 7 and 3.
    pub folders: usize,
    pub folders_held_out: usize,
    /// Recognition lengths of `sweep`. Default 32, 64, 128, 251.
    pub lengths: Vec<usize>,
    /// Neighbours of the DTW baseline, 0 to skip it. Default 1.
    pub dtw_k: usize,
    /// Stride of sliding-window training augmentation; off by default.
    pub augment_stride: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            protocol: Protocol::Holdout,
            folds: 10,
            holdout_test: 40,
            loo_group: 1,
            folders: 7,
            folders_held_out: 3,
            lengths: RECOGNITION_LENGTHS.to_vec(),
            dtw_k: 1,
            augment_stride: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MappingSection {
    /// Map grid and interpolation; default 1 cm cells over the 40 x 18 cm box,
    /// dips 5 cm apart, radius 1.5 dip spacings.
    pub grid: GridConfig,
    /// Single-medium training dips per class for the node model. Default 40.
    pub node_per_class: usize,
    /// Training dips through random layered scenes. Default 1200.
    pub node_scene_dips: usize,
    /// Dips of `map-demo`, spread evenly over the box. Default 8.
    pub demo_dips: usize,
}

impl Default for MappingSection {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            node_per_class: 40,
            node_scene_dips: 1200,
            demo_dips: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServeSection {
    /// Default `127.0.0.1`.
    pub host: String,
    /// Default 8080.
    pub port: u16,
    /// Answer dips at once instead of after the 1.28 s acquisition time.
    pub instant_sampling: bool,
    /// Session persistence file; none by default.
    pub persist: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            instant_sampling: false,
            persist: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }

    /// Training settings with the master seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = |e: String| Err(CliError::Validation(e));
        self.simulator.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.mce.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.preprocess.filter.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        self.mapping.grid.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if self.dataset.n_per_class == 0 {
            return v("dataset.n_per_class must be at least 1".into());
        }
        if self.dataset.operators == 0 {
            return v("dataset.operators must be at least 1".into());
        }
        if self.eval.lengths.is_empty() || self.eval.lengths.contains(&0) {
            return v("eval.lengths must be non-empty and positive".into());
        }
        if self.eval.augment_stride == Some(0) {
            return v("eval.augment_stride must be positive".into());
        }
        if self.mapping.demo_dips == 0 {
            return v("mapping.demo_dips must be at least 1".into());
        }
        Ok(())
    }
}
