use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{confusion, metrics, ConfusionMatrix, EvalError, MetricReport, Protocol, Split, SplitPlan};
use crate::classifier::{
    dtw_knn_predict, predict, predict_batch, train, Checkpoint, History, MceConfig, TrainConfig,
};
use crate::preprocess::{normalize, sliding_windows, ChannelStats, PreprocessConfig, ProcessedWindow, WrenchSeries};
use crate::recording::RawRecording;
use crate::scalar::Scalar;
use crate::simulator::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mce: MceConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    /// Adds sliding windows at this stride to each training series.
    pub augment_stride: Option<usize>,
    /// Neighbours of the DTW baseline; 0 skips it.
    pub dtw_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mce: MceConfig::default(),
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
            augment_stride: None,
            dtw_k: 1,
        }
    }
}

/// One onset-aligned recording ready for windowing.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub series: WrenchSeries<T>,
    pub label: usize,
    pub operator: usize,
    pub id: u64,
}

pub fn prepare<T: Scalar>(recordings: &[RawRecording], pc: &PreprocessConfig) -> Result<Vec<Sample<T>>, EvalError> {
    recordings
        .iter()
        .map(|r| {
            let label = r.label.ok_or(EvalError::MissingLabel(r.id()))?;
            Ok(Sample {
                series: pc.onset_aligned::<T>(r)?,
                label,
                operator: r.operator,
                id: r.id(),
            })
        })
        .collect()
}

pub fn labels_of<T>(samples: &[Sample<T>]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

pub fn operators_of<T>(samples: &[Sample<T>]) -> Vec<usize> {
    samples.iter().map(|s| s.operator).collect()
}

/// The onset window of length `len`, plus augmentation windows if `stride`.
fn windows_of<T: Scalar>(
    samples: &[Sample<T>],
    ids: &[usize],
    len: usize,
    stride: Option<usize>,
) -> Result<Vec<ProcessedWindow<T>>, EvalError> {
    let mut out = Vec::with_capacity(ids.len());
    for &i in ids {
        let s = &samples[i];
        let ws = sliding_windows(&s.series, len, stride.unwrap_or(usize::MAX), Some(s.label), s.id)?;
        if ws.is_empty() {
            return Err(EvalError::SeriesTooShort {
                id: s.id,
                len: s.series.len(),
                window: len,
            });
        }
        out.extend(ws);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub test_ids: Vec<usize>,
    pub labels: Vec<usize>,
    pub preds: Vec<usize>,
    pub probs: Vec<Vec<f64>>,
    pub dtw_preds: Option<Vec<usize>>,
    pub history: History,
    /// Median single-window forward time over the test windows.
    pub inference_ms: f64,
}

impl SplitOutcome {
    pub fn accuracy(&self) -> f64 {
        hit_rate(&self.preds, &self.labels)
    }

    pub fn dtw_accuracy(&self) -> Option<f64> {
        self.dtw_preds.as_ref().map(|p| hit_rate(p, &self.labels))
    }
}

fn hit_rate(preds: &[usize], labels: &[usize]) -> f64 {
    preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len().max(1) as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Trains on the training side of `split` with windows of `len` samples and
/// classifies the onset window of every test recording.
pub fn run_split<T: Scalar>(
    samples: &[Sample<T>],
    split: &Split,
    len: usize,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(SplitOutcome, Checkpoint<T>), EvalError> {
    let mut train_w = windows_of(samples, &split.train, len, cfg.augment_stride)?;
    let mut test_w = windows_of(samples, &split.test, len, None)?;
    let stats = normalize(&mut train_w, None);
    normalize(&mut test_w, Some(&stats));

    let mce = MceConfig {
        window_len: len,
        ..cfg.mce.clone()
    };
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let started = Instant::now();
    let outcome = train(&train_w, None, &mce, &tc)?;
    tracing::info!(
        len,
        n_train = train_w.len(),
        secs = started.elapsed().as_secs_f64(),
        "split trained"
    );

    let preds = predict_batch(&outcome.params, &test_w)?;
    let timings = test_w
        .iter()
        .map(|w| predict(&outcome.params, w).map(|p| p.latency_ms))
        .collect::<Result<Vec<_>, _>>()?;
    let dtw_preds = if cfg.dtw_k > 0 {
        // The baseline sees the onset windows only, never augmentation.
        let mut base = windows_of(samples, &split.train, len, None)?;
        normalize(&mut base, Some(&stats));
        let k = cfg.dtw_k.min(base.len());
        Some(test_w.iter().map(|w| dtw_knn_predict(&base, w, k)).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };

    let mut ck = Checkpoint::new(outcome.params, stats, cfg.preprocess.clone());
    ck.train_config = Some(tc);
    ck.history = Some(outcome.history.clone());
    Ok((
        SplitOutcome {
            test_ids: split.test.clone(),
            labels: test_w.iter().map(|w| w.label.expect("labelled")).collect(),
            preds: preds.iter().map(|p| p.class).collect(),
            probs: preds.into_iter().map(|p| p.probs).collect(),
            dtw_preds,
            history: outcome.history,
            inference_ms: median(timings),
        },
        ck,
    ))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodSummary {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
    pub split_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl MethodSummary {
    fn build(preds: &[&[usize]], labels: &[&[usize]]) -> Result<Self, EvalError> {
        let mut cm = ConfusionMatrix::default();
        let mut accs = Vec::new();
        for (p, y) in preds.iter().zip(labels) {
            cm.merge(&confusion(p, y)?);
            accs.push(hit_rate(p, y));
        }
        let n = accs.len() as f64;
        let mean = accs.iter().sum::<f64>() / n;
        let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self {
            metrics: metrics(&cm)?,
            confusion: cm,
            split_accuracy: accs,
            mean_accuracy: mean,
            std_accuracy: std,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub protocol: Protocol,
    pub window_len: usize,
    pub n_samples: usize,
    pub mce: MethodSummary,
    pub dtw: Option<MethodSummary>,
    pub inference_ms: f64,
    pub splits: Vec<SplitOutcome>,
}

pub fn evaluate<T: Scalar>(
    samples: &[Sample<T>],
    plan: &SplitPlan,
    len: usize,
    cfg: &EvalConfig,
) -> Result<ProtocolReport, EvalError> {
    if plan.splits.is_empty() {
        return Err(EvalError::Protocol("plan has no splits".into()));
    }
    let mut outcomes = Vec::with_capacity(plan.splits.len());
    for (i, split) in plan.splits.iter().enumerate() {
        let (out, _) = run_split(samples, split, len, cfg, derive_seed(cfg.train.seed, i as u64))?;
        tracing::info!(
            split = i,
            accuracy = out.accuracy(),
            dtw = ?out.dtw_accuracy(),
            "split evaluated"
        );
        outcomes.push(out);
    }
    let labels: Vec<&[usize]> = outcomes.iter().map(|o| o.labels.as_slice()).collect();
    let preds: Vec<&[usize]> = outcomes.iter().map(|o| o.preds.as_slice()).collect();
    let dtw = if outcomes.iter().all(|o| o.dtw_preds.is_some()) {
        let dp: Vec<&[usize]> = outcomes.iter().map(|o| o.dtw_preds.as_deref().expect("checked")).collect();
        Some(MethodSummary::build(&dp, &labels)?)
    } else {
        None
    };
    Ok(ProtocolReport {
        protocol: plan.protocol,
        window_len: len,
        n_samples: samples.len(),
        mce: MethodSummary::build(&preds, &labels)?,
        dtw,
        inference_ms: median(outcomes.iter().map(|o| o.inference_ms).collect()),
        splits: outcomes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub length: usize,
    pub accuracy: Option<f64>,
    pub dtw_accuracy: Option<f64>,
    /// Time to collect `length` samples at the recording rate.
    pub sampling_s: f64,
    pub inference_ms: Option<f64>,
    pub error: Option<String>,
}

/// One model per recognition length on the same split. A failing length is
/// recorded and the sweep continues.
pub fn length_sweep<T: Scalar>(
    samples: &[Sample<T>],
    split: &Split,
    lengths: &[usize],
    cfg: &EvalConfig,
) -> Vec<SweepRow> {
    let rate = samples.first().map_or(100.0, |s| s.series.rate_hz.as_f64());
    lengths
        .iter()
        .map(|&len| {
            let sampling_s = len as f64 / rate;
            match run_split(samples, split, len, cfg, cfg.train.seed) {
                Ok((out, _)) => SweepRow {
                    length: len,
                    accuracy: Some(out.accuracy()),
                    dtw_accuracy: out.dtw_accuracy(),
                    sampling_s,
                    inference_ms: Some(out.inference_ms),
                    error: None,
                },
                Err(e) => {
                    tracing::warn!(len, error = %e, "sweep length failed");
                    SweepRow {
                        length: len,
                        accuracy: None,
                        dtw_accuracy: None,
                        sampling_s,
                        inference_ms: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

/// Trains a deployable model on every sample.
pub fn train_full<T: Scalar>(samples: &[Sample<T>], len: usize, cfg: &EvalConfig) -> Result<Checkpoint<T>, EvalError> {
    let all: Vec<usize> = (0..samples.len()).collect();
    let mut ws = windows_of(samples, &all, len, cfg.augment_stride)?;
    let stats: ChannelStats<T> = normalize(&mut ws, None);
    let mce = MceConfig {
        window_len: len,
        ..cfg.mce.clone()
    };
    let outcome = train(&ws, None, &mce, &cfg.train)?;
    let mut ck = Checkpoint::new(outcome.params, stats, cfg.preprocess.clone());
    ck.train_config = Some(cfg.train.clone());
    ck.history = Some(outcome.history);
    Ok(ck)
}
