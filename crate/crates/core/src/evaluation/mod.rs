//! Metrics, split protocols and evaluation runs.

mod metrics;
mod protocol;
mod report;
mod splits;

pub use metrics::{confusion, metrics, ConfusionMatrix, MetricReport};
pub use protocol::{
    evaluate, labels_of, length_sweep, operators_of, prepare, run_split, train_full, EvalConfig,
    MethodSummary, ProtocolReport, Sample, SplitOutcome, SweepRow,
};
pub use report::{confusion_csv, confusion_png, metrics_table, sweep_table};
pub use splits::{folder_holdout, kfold, leave_one_operator_out, stratified_holdout, Protocol, Split, SplitPlan};

use crate::classifier::ClassifierError;
use crate::preprocess::PreprocessError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("label {0} out of range")]
    LabelOutOfRange(usize),
    #[error("confusion matrix is empty")]
    EmptyConfusion,
    #[error("{0}")]
    Protocol(String),
    #[error("recording {0:#x} has no label")]
    MissingLabel(u64),
    #[error("recording {id:#x} has {len} aligned samples, fewer than the window of {window}")]
    SeriesTooShort { id: u64, len: usize, window: usize },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}
