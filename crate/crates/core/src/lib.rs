//! Haptic recognition of granular media from a dipping probe.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training and
//! deployment default to `f32`; the aliases below name those instantiations.
//! Simulation, compositing and metrics always run in `f64`.

pub mod classifier;
pub mod evaluation;
pub mod mapping;
pub mod matrix;
pub mod preprocess;
pub mod recording;
pub mod scalar;
pub mod sensor;
pub mod simulator;

pub use scalar::Scalar;

/// Deployment-precision model checkpoint.
pub type Checkpoint = classifier::Checkpoint<f32>;
/// Deployment-precision encoder parameters.
pub type MceParams = classifier::MceParams<f32>;
/// Deployment-precision classifier input.
pub type ProcessedWindow = preprocess::ProcessedWindow<f32>;
/// Deployment-precision preprocessed dip.
pub type WrenchSeries = preprocess::WrenchSeries<f32>;

/// Any failure from the crate's modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Sensor(#[from] sensor::SensorError),
    #[error(transparent)]
    Simulation(#[from] simulator::SimError),
    #[error(transparent)]
    Preprocess(#[from] preprocess::PreprocessError),
    #[error(transparent)]
    Classifier(#[from] classifier::ClassifierError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Map(#[from] mapping::MapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error comes from invalid input or configuration rather
    /// than from a failure while running.
    pub fn is_validation(&self) -> bool {
        use classifier::ClassifierError as C;
        use mapping::MapError as M;
        match self {
            Error::Sensor(_) | Error::Simulation(_) | Error::Preprocess(_) => true,
            Error::Classifier(e) => matches!(e, C::Config(_) | C::Shape { .. } | C::InvalidLabel(_) | C::MissingLabel),
            Error::Eval(e) => !matches!(e, evaluation::EvalError::Classifier(C::NonFinite { .. })),
            Error::Map(e) => !matches!(e, M::Image(_) | M::Classifier(C::NonFinite { .. })),
            Error::Io(_) => false,
        }
    }
}
