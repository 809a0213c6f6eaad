use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierError, History, MceParams, TrainConfig};
use crate::preprocess::{ChannelStats, PreprocessConfig};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Everything needed to classify raw recordings with a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub format_version: u32,
    pub params: MceParams<T>,
    pub norm: ChannelStats<T>,
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub history: Option<History>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: MceParams<T>, norm: ChannelStats<T>, preprocess: PreprocessConfig) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params,
            norm,
            preprocess,
            train_config: None,
            history: None,
        }
    }

    pub fn to_json(&self) -> Result<String, ClassifierError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifierError> {
        Self::checked(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let r = BufReader::new(File::open(path)?);
        Self::checked(serde_json::from_reader(r)?)
    }

    fn checked(ck: Self) -> Result<Self, ClassifierError> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ClassifierError::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.params.validate()?;
        if ck.norm.std.iter().any(|s| !(s.as_f64() > 0.0)) {
            return Err(ClassifierError::Checkpoint("normalization std must be positive".into()));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::MceConfig;

    #[test]
    fn round_trip_is_exact() {
        let params = MceParams::<f32>::init(&MceConfig::tiny(16), 3).unwrap();
        let norm = ChannelStats {
            mean: [0.1, -0.2, 7.5],
            std: [0.03, 0.04, 5.0],
        };
        let ck = Checkpoint::new(params, norm, PreprocessConfig::default());
        let back = Checkpoint::<f32>::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back.params, ck.params);
        assert_eq!(back.norm, ck.norm);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::<f32>::load(&path).unwrap().params, ck.params);
    }

    #[test]
    fn wrong_version_rejected() {
        let params = MceParams::<f64>::init(&MceConfig::tiny(8), 0).unwrap();
        let mut ck = Checkpoint::new(params, ChannelStats::identity(), PreprocessConfig::default());
        ck.format_version = 99;
        let err = Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, ClassifierError::Checkpoint(_)));
    }
}
