//! Multi-channel encoder classifier and the DTW+KNN baseline.

mod checkpoint;
mod config;
mod dtw;
pub mod model;
mod params;
mod train;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use config::{inverse_frequency_weights, Activation, ConvConfig, MceConfig, TrainConfig};
pub use dtw::{dtw_distance, dtw_knn_predict, multivariate_dtw, sakoe_chiba_band};
pub use model::{backward, forward_batch, weighted_log_loss, Backward, BatchOutput, Cache, Mode};
pub use params::{ChannelParams, MceParams};
pub use train::{accuracy, argmax, train, train_from, Adam, EpochRecord, History, TrainOutcome};

use crate::matrix::Matrix;
use crate::preprocess::ProcessedWindow;
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match expected {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite activation in {layer} layer")]
    NonFinite { layer: String },
    #[error("activation cache from parameter version {cache} used with version {params}")]
    StaleCache { cache: u64, params: u64 },
    #[error("label {0} out of range")]
    InvalidLabel(usize),
    #[error("window has no label")]
    MissingLabel,
    #[error("empty batch")]
    EmptyBatch,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub class: usize,
    /// Wall-clock time of the forward pass alone.
    pub latency_ms: f64,
}

impl Prediction {
    fn from_row<T: Scalar>(row: &[T], latency_ms: f64) -> Self {
        Self {
            probs: row.iter().map(|p| p.as_f64()).collect(),
            class: argmax(row),
            latency_ms,
        }
    }
}

/// Single-window forward pass. In training mode batch statistics are taken
/// over this one window and dropout uses seed 0.
pub fn forward<T: Scalar>(
    params: &MceParams<T>,
    window: &ProcessedWindow<T>,
    training: bool,
) -> Result<Prediction, ClassifierError> {
    let mode = if training {
        Mode::Train { dropout_seed: 0 }
    } else {
        Mode::Infer
    };
    let start = Instant::now();
    let out = forward_batch(params, &[&window.data], mode)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Prediction::from_row(out.probs.row(0), ms))
}

/// Inference-mode prediction of one window.
pub fn predict<T: Scalar>(params: &MceParams<T>, window: &ProcessedWindow<T>) -> Result<Prediction, ClassifierError> {
    forward(params, window, false)
}

/// Inference over many windows in chunks; the reported latency is the
/// per-window share of each chunk's forward time.
pub fn predict_batch<T: Scalar>(
    params: &MceParams<T>,
    windows: &[ProcessedWindow<T>],
) -> Result<Vec<Prediction>, ClassifierError> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(32) {
        let inputs: Vec<&Matrix<T>> = chunk.iter().map(|w| &w.data).collect();
        let start = Instant::now();
        let res = forward_batch(params, &inputs, Mode::Infer)?;
        let ms = start.elapsed().as_secs_f64() * 1e3 / chunk.len() as f64;
        out.extend((0..chunk.len()).map(|i| Prediction::from_row(res.probs.row(i), ms)));
    }
    Ok(out)
}
