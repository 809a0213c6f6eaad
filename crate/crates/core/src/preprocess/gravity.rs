use serde::{Deserialize, Serialize};

use super::{PreprocessError, WrenchSeries};
use crate::recording::{Quat, RawRecording};
use crate::scalar::Scalar;
use crate::sensor::{compose_wrench, CalibrationParams};

pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Deviation of a pose quaternion norm from one that triggers a warning.
const QUAT_NORM_TOLERANCE: f64 = 1e-3;

/// Mass properties of the part of the device below the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    pub sensing_mass_kg: f64,
    /// Distance from the sensor to the sensing side's centre of mass, along
    /// the device axis toward the tip.
    pub com_offset_m: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self {
            sensing_mass_kg: 0.12,
            com_offset_m: 0.05,
        }
    }
}

/// Wrench `(fz, mx, my)` that the sensing side's weight puts on the sensor.
///
/// Sensor z runs along the device axis from tip to handle, so a vertical
/// device sees `fz = -m g` and no torque.
pub fn gravity_wrench(orientation: &Quat, device: &DeviceModel) -> [f64; 3] {
    let weight = [0.0, 0.0, -device.sensing_mass_kg * STANDARD_GRAVITY];
    let g = orientation.conj().rotate(weight);
    // Centre of mass at (0, 0, -L) in the sensor frame: torque = r x F.
    let l = device.com_offset_m;
    [g[2], l * g[1], -l * g[0]]
}

/// Composes the cell readings and removes the sensing side's gravity wrench
/// at each sample's orientation.
pub fn gravity_compensate<T: Scalar>(
    rec: &RawRecording,
    device: &DeviceModel,
    calib: &CalibrationParams<T>,
) -> Result<WrenchSeries<T>, PreprocessError> {
    calib
        .validate()
        .map_err(|e| PreprocessError::Parameter(e.to_string()))?;
    let poses = &rec.trajectory.samples;
    if poses.len() != rec.cells.len() {
        return Err(PreprocessError::LengthMismatch(format!(
            "{} cell readings vs {} poses",
            rec.cells.len(),
            poses.len()
        )));
    }
    let n = rec.cells.len();
    let mut out = WrenchSeries {
        mx: Vec::with_capacity(n),
        my: Vec::with_capacity(n),
        fz: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        rate_hz: T::lit(rec.rate_hz),
    };
    let mut warned = false;
    for (cell, pose) in rec.cells.iter().zip(poses) {
        let mut q = pose.orientation;
        let norm = q.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(PreprocessError::Parameter(format!(
                "degenerate orientation quaternion at t={}",
                pose.t
            )));
        }
        if (norm - 1.0).abs() > QUAT_NORM_TOLERANCE && !warned {
            tracing::warn!(norm, t = pose.t, "non-unit pose quaternion, normalizing");
            warned = true;
        }
        q = q.normalized();
        let reading = crate::sensor::LoadCellReading {
            forces: cell.forces.map(T::lit),
            t: T::lit(cell.t),
        };
        let w = compose_wrench(&reading, calib);
        let [gfz, gmx, gmy] = gravity_wrench(&q, device);
        out.fz.push(w.fz - T::lit(gfz));
        out.mx.push(w.mx - T::lit(gmx));
        out.my.push(w.my - T::lit(gmy));
        out.depth.push(T::lit(pose.depth()));
    }
    Ok(out)
}
