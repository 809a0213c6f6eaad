use serde::{Deserialize, Serialize};

use super::{MapError, Scene};
use crate::classifier::{predict_batch, train, Checkpoint, MceConfig, TrainConfig};
use crate::evaluation::EvalError;
use crate::preprocess::{centered_window, normalize, PreprocessConfig, ProcessedWindow, WrenchSeries};
use crate::recording::RawRecording;
use crate::scalar::Scalar;
use crate::simulator::N_CLASSES;

/// Nodes sampled per dip.
pub const NODES_PER_DIP: usize = 5;

/// A node's depth span must hold at least this share of a window.
const MIN_SPAN_OF_WINDOW: f64 = 0.25;

/// Classified point along one dip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Metres below the surface, at the centre of the node's span.
    pub depth: f64,
    pub probs: [f64; N_CLASSES],
}

impl Node {
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(p: &[f64; N_CLASSES]) -> usize {
    (0..N_CLASSES).fold(0, |best, c| if p[c] > p[best] { c } else { best })
}

/// One classified dip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DipEvent {
    pub surface_x: f64,
    /// Penetration range `(top, bottom)` in metres, split evenly among nodes.
    pub depth_span: (f64, f64),
    /// Up to five nodes, shallowest first.
    pub nodes: Vec<Node>,
    /// Seconds since the session started.
    pub timestamp: f64,
}

impl DipEvent {
    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: String| Err(MapError::InvalidEvent(m));
        if self.nodes.is_empty() || self.nodes.len() > NODES_PER_DIP {
            return bad(format!("{} nodes, expected 1 to {NODES_PER_DIP}", self.nodes.len()));
        }
        if !self.surface_x.is_finite() || !(self.depth_span.1 > self.depth_span.0) {
            return bad(format!("bad position x = {} span = {:?}", self.surface_x, self.depth_span));
        }
        if self.nodes.windows(2).any(|w| !(w[1].depth > w[0].depth)) {
            return bad("node depths must strictly increase".into());
        }
        for n in &self.nodes {
            let sum: f64 = n.probs.iter().sum();
            if n.probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return bad(format!("node at {} m has probabilities {:?}", n.depth, n.probs));
            }
        }
        Ok(())
    }
}

/// Anything that turns raw (unnormalized) windows into class probabilities.
pub trait WindowClassifier<T: Scalar> {
    fn window_len(&self) -> usize;
    fn preprocess(&self) -> &PreprocessConfig;
    fn classify(&self, windows: &[ProcessedWindow<T>]) -> Result<Vec<[f64; N_CLASSES]>, MapError>;
}

impl<T: Scalar> WindowClassifier<T> for Checkpoint<T> {
    fn window_len(&self) -> usize {
        self.params.config.window_len
    }

    fn preprocess(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    fn classify(&self, windows: &[ProcessedWindow<T>]) -> Result<Vec<[f64; N_CLASSES]>, MapError> {
        let mut ws = windows.to_vec();
        ws.iter_mut().for_each(|w| self.norm.apply(w));
        Ok(predict_batch(&self.params, &ws)?
            .into_iter()
            .map(|p| std::array::from_fn(|c| p.probs[c]))
            .collect())
    }
}

/// Node layout of a processed dip: `(centre depth, centre index)` per node
/// and the penetration range, which spans the whole depth-resampled series.
#[allow(clippy::type_complexity)]
fn node_layout<T: Scalar>(
    series: &WrenchSeries<T>,
    window: usize,
) -> Result<(Vec<(f64, usize)>, (f64, f64)), MapError> {
    let n = series.len();
    if n < 2 {
        return Err(MapError::TooShallow { samples: n });
    }
    let (top, bottom) = (series.depth[0].as_f64(), series.depth[n - 1].as_f64());
    let fit = (n as f64 / (MIN_SPAN_OF_WINDOW * window as f64)).floor() as usize;
    let count = fit.clamp(1, NODES_PER_DIP);
    if count < NODES_PER_DIP {
        tracing::warn!(samples = n, nodes = count, "dip too shallow for {NODES_PER_DIP} nodes");
    }
    let span = (bottom - top) / count as f64;
    let nodes = (0..count)
        .map(|k| {
            let depth = top + (k as f64 + 0.5) * span;
            let idx = series.depth.partition_point(|d| d.as_f64() < depth).min(n - 1);
            (depth, idx)
        })
        .collect();
    Ok((nodes, (top, bottom)))
}

/// Node windows of one processed dip, centred in equal depth spans of the
/// penetration range and padded by reflection at the ends of the series.
pub fn node_windows<T: Scalar>(
    series: &WrenchSeries<T>,
    window: usize,
    label: Option<usize>,
    source: u64,
) -> Result<(Vec<(f64, ProcessedWindow<T>)>, (f64, f64)), MapError> {
    let (layout, span) = node_layout(series, window)?;
    let ws = layout
        .into_iter()
        .map(|(depth, idx)| Ok((depth, centered_window(series, idx, window, label, source)?)))
        .collect::<Result<Vec<_>, MapError>>()?;
    Ok((ws, span))
}

/// Preprocesses a dip, classifies its nodes and returns the event.
pub fn record_dip<T: Scalar, C: WindowClassifier<T> + ?Sized>(
    classifier: &C,
    surface_x: f64,
    recording: &RawRecording,
    timestamp: f64,
) -> Result<DipEvent, MapError> {
    let series = classifier.preprocess().process::<T>(recording)?;
    let (windows, depth_span) = node_windows(&series, classifier.window_len(), None, recording.id())?;
    let (depths, ws): (Vec<f64>, Vec<ProcessedWindow<T>>) = windows.into_iter().unzip();
    let probs = classifier.classify(&ws)?;
    let event = DipEvent {
        surface_x,
        depth_span,
        nodes: depths.into_iter().zip(probs).map(|(depth, probs)| Node { depth, probs }).collect(),
        timestamp,
    };
    event.validate()?;
    Ok(event)
}

/// Where a training dip's node labels come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DipTruth {
    /// Every node takes the recording's own label.
    Uniform,
    /// Each node takes the scene's class at its depth below `x`.
    Scene { scene: Scene, x: f64 },
}

/// A recording with the ground truth for its nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDip {
    pub recording: RawRecording,
    pub truth: DipTruth,
}

impl From<RawRecording> for TrainingDip {
    fn from(recording: RawRecording) -> Self {
        Self {
            recording,
            truth: DipTruth::Uniform,
        }
    }
}

/// Trains a classifier on node windows, so that every node depth and every
/// kind of layer boundary inside a window is seen in training.
pub fn train_node_model<T: Scalar>(
    dips: &[TrainingDip],
    preprocess: &PreprocessConfig,
    mce: &MceConfig,
    tc: &TrainConfig,
) -> Result<Checkpoint<T>, MapError> {
    let mut windows = Vec::with_capacity(dips.len() * NODES_PER_DIP);
    for dip in dips {
        let r = &dip.recording;
        let series = preprocess.process::<T>(r)?;
        let (ws, _) = node_windows(&series, mce.window_len, None, r.id())?;
        for (depth, mut w) in ws {
            let label = match &dip.truth {
                DipTruth::Uniform => r.label.ok_or(EvalError::MissingLabel(r.id()))?,
                DipTruth::Scene { scene, x } => scene
                    .class_at(*x, depth.clamp(0.0, scene.depth))
                    .ok_or_else(|| MapError::OutOfBounds(format!("x = {x} m outside the scene")))?
                    .index(),
            };
            w.label = Some(label);
            windows.push(w);
        }
    }
    let stats = normalize(&mut windows, None);
    let outcome = train(&windows, None, mce, tc)?;
    let mut ck = Checkpoint::new(outcome.params, stats, preprocess.clone());
    ck.train_config = Some(tc.clone());
    ck.history = Some(outcome.history);
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize, step: f64) -> WrenchSeries<f64> {
        WrenchSeries {
            mx: vec![0.0; n],
            my: vec![0.0; n],
            fz: (0..n).map(|i| i as f64).collect(),
            depth: (0..n).map(|i| i as f64 * step).collect(),
            rate_hz: 100.0,
        }
    }

    #[test]
    fn five_nodes_cover_the_penetration_range() {
        let s = series(361, 5e-4);
        let (ws, span) = node_windows(&s, 128, None, 0).unwrap();
        assert_eq!(ws.len(), 5);
        assert_eq!(span, (0.0, 360.0 * 5e-4));
        let width = (span.1 - span.0) / 5.0;
        for (k, (depth, w)) in ws.iter().enumerate() {
            assert!((depth - (span.0 + (k as f64 + 0.5) * width)).abs() < 1e-12);
            assert_eq!(w.len(), 128);
        }
        // The middle window is centred on its node.
        let mid = &ws[2].1;
        assert!((mid.data.get(2, 64) - 180.0).abs() <= 1.0);
    }

    #[test]
    fn shallow_dip_gets_fewer_nodes() {
        assert_eq!(node_windows(&series(100, 5e-4), 128, None, 0).unwrap().0.len(), 3);
        assert_eq!(node_windows(&series(20, 5e-4), 128, None, 0).unwrap().0.len(), 1);
        assert!(matches!(
            node_windows(&series(1, 5e-4), 128, None, 0),
            Err(MapError::TooShallow { .. })
        ));
    }

    #[test]
    fn event_validation() {
        let node = |depth: f64, c: usize| Node {
            depth,
            probs: std::array::from_fn(|i| if i == c { 1.0 } else { 0.0 }),
        };
        let mut e = DipEvent {
            surface_x: 0.1,
            depth_span: (0.0, 0.18),
            nodes: (0..5).map(|k| node(0.02 + 0.03 * k as f64, k)).collect(),
            timestamp: 0.0,
        };
        e.validate().unwrap();
        assert_eq!(e.nodes[3].argmax(), 3);
        e.nodes.swap(0, 1);
        assert!(e.validate().is_err());
        e.nodes.swap(0, 1);
        e.nodes[2].probs[0] = 0.5;
        assert!(e.validate().is_err());
    }
}
