//! Four-load-cell force/torque sensor: wrench composition, calibration and
//! measuring-range checks.
//!
//! The cells sit in a square. Their sum gives the axial force, and the
//! differences of opposite pairs scaled by a torque coefficient give the two
//! lateral torques:
//!
//! ```text
//! fz = f1 + f2 + f3 + f4 + bias_fz
//! mx = kx (f3 - f4)      + bias_mx
//! my = ky (f2 - f1)      + bias_my
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Range of a single load cell, newtons (symmetric).
pub const CELL_RANGE_N: f64 = 40.0;
/// Axial force measuring range, newtons.
pub const FZ_RANGE_N: (f64, f64) = (0.0, 100.0);
/// Lateral torque measuring range, newton-metres.
pub const TORQUE_RANGE_NM: (f64, f64) = (-1.0, 1.0);
/// Axial accuracy: 1.5 % of the 100 N full scale.
pub const FZ_ACCURACY_N: f64 = 0.015 * 100.0;
/// Torque accuracy: 2 % of the 1 Nm full scale.
pub const TORQUE_ACCURACY_NM: f64 = 0.02 * 1.0;
/// Axial noise sigma; the accuracy band is read as a 3-sigma bound.
pub const FZ_NOISE_SIGMA_N: f64 = FZ_ACCURACY_N / 3.0;
/// Torque noise sigma; the accuracy band is read as a 3-sigma bound.
pub const TORQUE_NOISE_SIGMA_NM: f64 = TORQUE_ACCURACY_NM / 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("invalid calibration: torque coefficients must be positive (kx={kx}, ky={ky})")]
    InvalidCalibration { kx: f64, ky: f64 },
    #[error("insufficient calibration poses: {0}")]
    InsufficientPoses(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadCellReading<T> {
    /// Cell forces `f1..f4` in newtons.
    pub forces: [T; 4],
    /// Seconds.
    pub t: T,
}

impl<T: Scalar> LoadCellReading<T> {
    pub fn new(forces: [T; 4], t: T) -> Self {
        Self { forces, t }
    }

    /// Clamps every cell to its measuring range; the flag reports whether any
    /// cell saturated.
    pub fn saturate(self) -> (Self, bool) {
        let lim = T::lit(CELL_RANGE_N);
        let mut clipped = false;
        let forces = self.forces.map(|f| {
            if f > lim {
                clipped = true;
                lim
            } else if f < -lim {
                clipped = true;
                -lim
            } else {
                f
            }
        });
        (Self { forces, t: self.t }, clipped)
    }
}

/// Torque coefficients (metres) and per-axis constant offsets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams<T> {
    pub kx: T,
    pub ky: T,
    pub bias_fz: T,
    pub bias_mx: T,
    pub bias_my: T,
}

impl<T: Scalar> CalibrationParams<T> {
    pub fn new(kx: T, ky: T) -> Result<Self, SensorError> {
        let c = Self {
            kx,
            ky,
            bias_fz: T::zero(),
            bias_mx: T::zero(),
            bias_my: T::zero(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.kx > T::zero() && self.ky > T::zero() {
            Ok(())
        } else {
            Err(SensorError::InvalidCalibration {
                kx: self.kx.as_f64(),
                ky: self.ky.as_f64(),
            })
        }
    }

    /// Cell forces whose composition reproduces `w` exactly.
    ///
    /// The inverse is not unique: `common` is the split between the (1,2) and
    /// (3,4) pairs, which the composition cannot see.
    pub fn decompose(&self, w: &WrenchSample<T>, common: T) -> LoadCellReading<T> {
        let four = T::lit(4.0);
        let two = T::lit(2.0);
        let base = (w.fz - self.bias_fz) / four;
        let dx = (w.mx - self.bias_mx) / (two * self.kx);
        let dy = (w.my - self.bias_my) / (two * self.ky);
        LoadCellReading {
            forces: [
                base - dy + common,
                base + dy + common,
                base + dx - common,
                base - dx - common,
            ],
            t: w.t,
        }
    }
}

impl Default for CalibrationParams<f64> {
    /// Cells on a square with 17.5 mm lever arm to the centre.
    fn default() -> Self {
        Self {
            kx: 0.0175,
            ky: 0.0175,
            bias_fz: 0.0,
            bias_mx: 0.0,
            bias_my: 0.0,
        }
    }
}

/// Fitted calibration plus the fit quality. Serializes flat:
/// `{kx, ky, bias_fz, bias_mx, bias_my, residual_rms}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration<T> {
    #[serde(flatten)]
    pub params: CalibrationParams<T>,
    pub residual_rms: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WrenchSample<T> {
    pub fz: T,
    pub mx: T,
    pub my: T,
    pub t: T,
}

impl<T: Scalar> WrenchSample<T> {
    pub fn new(fz: T, mx: T, my: T, t: T) -> Self {
        Self { fz, mx, my, t }
    }

    pub fn in_range(&self) -> RangeFlags {
        check_range(self)
    }
}

/// Per-axis measuring-range flags; `true` means inside the range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeFlags {
    pub fz: bool,
    pub mx: bool,
    pub my: bool,
}

impl RangeFlags {
    pub fn all(&self) -> bool {
        self.fz && self.mx && self.my
    }
}

pub fn compose_wrench<T: Scalar>(
    reading: &LoadCellReading<T>,
    calib: &CalibrationParams<T>,
) -> WrenchSample<T> {
    let [f1, f2, f3, f4] = reading.forces;
    WrenchSample {
        fz: f1 + f2 + f3 + f4 + calib.bias_fz,
        mx: calib.kx * (f3 - f4) + calib.bias_mx,
        my: calib.ky * (f2 - f1) + calib.bias_my,
        t: reading.t,
    }
}

/// Inclusive range check against the sensor's measuring ranges.
pub fn check_range<T: Scalar>(w: &WrenchSample<T>) -> RangeFlags {
    let within = |v: T, (lo, hi): (f64, f64)| {
        let v = v.as_f64();
        v >= lo && v <= hi
    };
    RangeFlags {
        fz: within(w.fz, FZ_RANGE_N),
        mx: within(w.mx, TORQUE_RANGE_NM),
        my: within(w.my, TORQUE_RANGE_NM),
    }
}

/// Least-squares fit of torque coefficients and biases from standard loads.
///
/// The axial bias is the mean axial residual; each torque axis is an
/// independent two-parameter line fit `m = k * diff + bias`.
pub fn calibrate<T: Scalar>(
    known_loads: &[(LoadCellReading<T>, WrenchSample<T>)],
) -> Result<Calibration<T>, SensorError> {
    if known_loads.len() < 3 {
        return Err(SensorError::InsufficientPoses(format!(
            "need at least 3 known loads, got {}",
            known_loads.len()
        )));
    }
    let n = T::from_count(known_loads.len());

    let bias_fz = known_loads
        .iter()
        .map(|(r, w)| w.fz - r.forces.iter().copied().sum::<T>())
        .sum::<T>()
        / n;

    let fit_axis = |axis: &str, x: &dyn Fn(&LoadCellReading<T>) -> T, y: &dyn Fn(&WrenchSample<T>) -> T| {
        let mean_x = known_loads.iter().map(|(r, _)| x(r)).sum::<T>() / n;
        let mean_y = known_loads.iter().map(|(_, w)| y(w)).sum::<T>() / n;
        let mut sxx = T::zero();
        let mut sxy = T::zero();
        let mut scale = T::zero();
        for (r, w) in known_loads {
            let dx = x(r) - mean_x;
            sxx += dx * dx;
            sxy += dx * (y(w) - mean_y);
            scale = scale.max(x(r).abs());
        }
        // Centered sum of squares relative to the data magnitude.
        let tol = T::lit(1e-10) * n * (scale * scale).max(T::lit(1e-30));
        if sxx <= tol {
            return Err(SensorError::InsufficientPoses(format!(
                "{axis}: loads do not excite the opposing-cell difference"
            )));
        }
        let k = sxy / sxx;
        Ok((k, mean_y - k * mean_x))
    };

    let (kx, bias_mx) = fit_axis("mx", &|r| r.forces[2] - r.forces[3], &|w| w.mx)?;
    let (ky, bias_my) = fit_axis("my", &|r| r.forces[1] - r.forces[0], &|w| w.my)?;
    let params = CalibrationParams {
        kx,
        ky,
        bias_fz,
        bias_mx,
        bias_my,
    };
    params.validate()?;

    let mut sq = T::zero();
    for (r, w) in known_loads {
        let c = compose_wrench(r, &params);
        sq += (c.fz - w.fz).powi(2) + (c.mx - w.mx).powi(2) + (c.my - w.my).powi(2);
    }
    let residual_rms = (sq / (n * T::lit(3.0))).sqrt();
    Ok(Calibration {
        params,
        residual_rms,
    })
}
