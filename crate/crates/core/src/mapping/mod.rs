//! Subsurface cross-section maps from classified dips.

mod composite;
mod dip;
mod scene;

pub use composite::{composite, Cell, ColorMap, Grid, GridConfig, SubsurfaceMap, CONFIDENT_ALPHA};
pub use dip::{
    node_windows, record_dip, train_node_model, DipEvent, DipTruth, Node, TrainingDip, WindowClassifier, NODES_PER_DIP,
};
pub use scene::{Region, Scene};

use crate::classifier::ClassifierError;
use crate::evaluation::EvalError;
use crate::preprocess::PreprocessError;
use crate::recording::RawRecording;
use crate::sensor::CalibrationParams;
use crate::simulator::{derive_seed, generate_dataset, MediaModel, OperatorProfile, SimError, Simulator};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid dip event: {0}")]
    InvalidEvent(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid colour map: {0}")]
    InvalidColorMap(String),
    #[error("out of bounds: {0}")]
    OutOfBounds(String),
    #[error("dip too shallow for a node ({samples} samples)")]
    TooShallow { samples: usize },
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Simulates a dip at `x` through the scene's layer column.
pub fn simulate_scene_dip(
    sim: &Simulator,
    scene: &Scene,
    library: &[MediaModel],
    x: f64,
    op: &OperatorProfile,
    calib: &CalibrationParams<f64>,
    seed: u64,
) -> Result<RawRecording, MapError> {
    let column = scene.column_at(x, library)?;
    Ok(sim.simulate_column(&column, x, op, calib, seed)?)
}

/// Training dips for a node model: `per_class` single-medium dips per class
/// and operator, plus `n_scene_dips` dips at random points of random scenes.
pub fn node_training_set(
    sim: &Simulator,
    library: &[MediaModel],
    per_class: usize,
    n_scene_dips: usize,
    operators: &[OperatorProfile],
    calib: &CalibrationParams<f64>,
    seed: u64,
) -> Result<Vec<TrainingDip>, MapError> {
    let mut dips: Vec<TrainingDip> = generate_dataset(sim, library, per_class, operators, calib, derive_seed(seed, 0))?
        .into_iter()
        .map(TrainingDip::from)
        .collect();
    for i in 0..n_scene_dips as u64 {
        let s = derive_seed(seed, i + 1);
        let scene = Scene::random(s);
        // Stay off the box walls; the position is a pure function of the seed.
        let x = scene.width * (0.05 + 0.9 * (s >> 11) as f64 / (1u64 << 53) as f64);
        let op = &operators[i as usize % operators.len()];
        let mut recording = simulate_scene_dip(sim, &scene, library, x, op, calib, s)?;
        recording.operator = i as usize % operators.len();
        dips.push(TrainingDip {
            recording,
            truth: DipTruth::Scene { scene, x },
        });
    }
    Ok(dips)
}
