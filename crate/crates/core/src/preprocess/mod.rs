//! Raw recording to classifier windows: gravity compensation, low-pass
//! filtering, velocity resampling, normalization and windowing.

mod filter;
mod gravity;
mod normalize;
mod resample;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{analytic_magnitude, FilterMode, FilterSpec, Section, Sos};
pub use gravity::{gravity_compensate, gravity_wrench, DeviceModel, STANDARD_GRAVITY};
pub use normalize::{normalize, ChannelStats};
pub use resample::velocity_resample;
pub use window::{centered_window, sliding_windows, ProcessedWindow, RECOGNITION_LENGTHS};

use crate::recording::RawRecording;
use crate::scalar::Scalar;
use crate::sensor::{CalibrationParams, FZ_NOISE_SIGMA_N};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("series too short: {len} samples, need more than {min}")]
    TooShort { len: usize, min: usize },
    #[error("no dip motion: net penetration is zero")]
    NoDipMotion,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value in channel {0}")]
    NonFinite(&'static str),
}

/// Channel order of every series and window.
pub const CHANNEL_NAMES: [&str; 3] = ["mx", "my", "fz"];

/// Equal-length `(mx, my, fz)` channels with the probe depth of each sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrenchSeries<T> {
    pub mx: Vec<T>,
    pub my: Vec<T>,
    pub fz: Vec<T>,
    /// Metres below the surface.
    pub depth: Vec<T>,
    pub rate_hz: T,
}

impl<T: Scalar> WrenchSeries<T> {
    pub fn len(&self) -> usize {
        self.fz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fz.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        match c {
            0 => &self.mx,
            1 => &self.my,
            2 => &self.fz,
            _ => panic!("channel index {c} out of range"),
        }
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut Vec<T> {
        match c {
            0 => &mut self.mx,
            1 => &mut self.my,
            2 => &mut self.fz,
            _ => panic!("channel index {c} out of range"),
        }
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        let n = self.len();
        if self.mx.len() != n || self.my.len() != n || self.depth.len() != n {
            return Err(PreprocessError::LengthMismatch(format!(
                "mx={} my={} fz={} depth={}",
                self.mx.len(),
                self.my.len(),
                n,
                self.depth.len()
            )));
        }
        for c in 0..3 {
            if !self.channel(c).iter().all(|v| v.is_finite()) {
                return Err(PreprocessError::NonFinite(CHANNEL_NAMES[c]));
            }
        }
        Ok(())
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            mx: self.mx[start..end].to_vec(),
            my: self.my[start..end].to_vec(),
            fz: self.fz[start..end].to_vec(),
            depth: self.depth[start..end].to_vec(),
            rate_hz: self.rate_hz,
        }
    }
}

/// Applies the low-pass filter to every channel independently.
pub fn butterworth_lpf<T: Scalar>(
    series: &WrenchSeries<T>,
    spec: &FilterSpec,
) -> Result<WrenchSeries<T>, PreprocessError> {
    let min = 3 * spec.order;
    if series.len() <= min {
        return Err(PreprocessError::TooShort {
            len: series.len(),
            min,
        });
    }
    let sos = Sos::<T>::butterworth_lowpass(spec)?;
    let run = |x: &[T]| match spec.mode {
        FilterMode::Causal => sos.filter(x),
        FilterMode::ZeroPhase => sos.filtfilt(x),
    };
    Ok(WrenchSeries {
        mx: run(&series.mx),
        my: run(&series.my),
        fz: run(&series.fz),
        depth: series.depth.clone(),
        rate_hz: series.rate_hz,
    })
}

/// First sample whose axial force exceeds `threshold`.
pub fn onset_index<T: Scalar>(series: &WrenchSeries<T>, threshold: T) -> Option<usize> {
    series.fz.iter().position(|&f| f > threshold)
}

/// Parameters of the full preprocessing chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub device: DeviceModel,
    pub calibration: CalibrationParams<f64>,
    pub filter: FilterSpec,
    /// Constant dip speed the resampled series emulates, m/s.
    pub nominal_speed: f64,
    /// Onset fires when the axial force exceeds this many noise sigmas.
    pub onset_sigmas: f64,
    /// Length of the onset-aligned series kept per recording.
    pub series_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            device: DeviceModel::default(),
            calibration: CalibrationParams::default(),
            filter: FilterSpec::default(),
            nominal_speed: 0.05,
            onset_sigmas: 5.0,
            series_len: 251,
        }
    }
}

impl PreprocessConfig {
    pub fn onset_threshold(&self) -> f64 {
        self.onset_sigmas * FZ_NOISE_SIGMA_N
    }

    /// Gravity compensation, low-pass filter and velocity resampling over the
    /// whole dip.
    pub fn process<T: Scalar>(&self, rec: &RawRecording) -> Result<WrenchSeries<T>, PreprocessError> {
        let calib = CalibrationParams {
            kx: T::lit(self.calibration.kx),
            ky: T::lit(self.calibration.ky),
            bias_fz: T::lit(self.calibration.bias_fz),
            bias_mx: T::lit(self.calibration.bias_mx),
            bias_my: T::lit(self.calibration.bias_my),
        };
        let compensated = gravity_compensate(rec, &self.device, &calib)?;
        let filtered = butterworth_lpf(&compensated, &self.filter)?;
        velocity_resample(&filtered, &rec.trajectory, self.nominal_speed)
    }

    /// Resampled series cut to `series_len` samples from dip onset. Falls back
    /// to the dip start when the force never crosses the onset threshold.
    pub fn onset_aligned<T: Scalar>(&self, rec: &RawRecording) -> Result<WrenchSeries<T>, PreprocessError> {
        let series = self.process::<T>(rec)?;
        let start = onset_index(&series, T::lit(self.onset_threshold())).unwrap_or(0);
        Ok(series.slice(start, start + self.series_len))
    }

    /// Onset-aligned sliding windows of one recording, labelled with the
    /// recording's class.
    pub fn windows<T: Scalar>(
        &self,
        rec: &RawRecording,
        len: usize,
        stride: usize,
    ) -> Result<Vec<ProcessedWindow<T>>, PreprocessError> {
        let series = self.onset_aligned::<T>(rec)?;
        sliding_windows(&series, len, stride, rec.label, rec.id())
    }
}
