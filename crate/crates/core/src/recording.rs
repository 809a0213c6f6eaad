//! Raw dip recordings: load-cell series plus probe pose trajectory, and their
//! JSONL wire format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::sensor::LoadCellReading;

/// Sampling rate of the acquisition card.
pub const SAMPLE_RATE_HZ: f64 = 100.0;

/// Unit quaternion `(w, x, y, z)` mapping sensor-frame vectors to world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Quat {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    /// Tilt of `tilt` radians away from vertical, leaning toward `azimuth`.
    pub fn tilt(tilt: f64, azimuth: f64) -> Self {
        // Rotating +z toward (cos az, sin az, 0) is a rotation about z x dir.
        Self::from_axis_angle([-azimuth.sin(), azimuth.cos(), 0.0], tilt)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quat {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn conj(&self) -> Self {
        Quat {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Rotates `v` by this (assumed unit) quaternion.
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let q = [self.x, self.y, self.z];
        let t = [
            2.0 * (q[1] * v[2] - q[2] * v[1]),
            2.0 * (q[2] * v[0] - q[0] * v[2]),
            2.0 * (q[0] * v[1] - q[1] * v[0]),
        ];
        [
            v[0] + self.w * t[0] + (q[1] * t[2] - q[2] * t[1]),
            v[1] + self.w * t[1] + (q[2] * t[0] - q[0] * t[2]),
            v[2] + self.w * t[2] + (q[0] * t[1] - q[1] * t[0]),
        ]
    }

    /// Angle between the rotated sensor z axis and world vertical.
    pub fn tilt_angle(&self) -> f64 {
        let axis = self.normalized().rotate([0.0, 0.0, 1.0]);
        axis[2].clamp(-1.0, 1.0).acos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    /// Probe tip position in metres; world z points up, the surface is z = 0.
    pub position: [f64; 3],
    pub orientation: Quat,
    pub t: f64,
}

impl PoseSample {
    /// Vertical penetration below the surface (never negative).
    pub fn depth(&self) -> f64 {
        (-self.position[2]).max(0.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrajectory {
    pub samples: Vec<PoseSample>,
}

impl ProbeTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn depths(&self) -> Vec<f64> {
        self.samples.iter().map(PoseSample::depth).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub cells: Vec<LoadCellReading<f64>>,
    pub trajectory: ProbeTrajectory,
    /// Media class index, absent for layered scenes.
    pub label: Option<usize>,
    pub operator: usize,
    pub seed: u64,
    pub rate_hz: f64,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Stable identifier derived from operator and seed.
    pub fn id(&self) -> u64 {
        self.seed ^ ((self.operator as u64) << 56)
    }

    pub fn to_line(&self) -> RecordingLine {
        RecordingLine {
            cells: self.cells.iter().map(|c| c.forces).collect(),
            pose: self
                .trajectory
                .samples
                .iter()
                .map(|p| {
                    let q = p.orientation;
                    [
                        p.t,
                        p.position[0],
                        p.position[1],
                        p.position[2],
                        q.w,
                        q.x,
                        q.y,
                        q.z,
                    ]
                })
                .collect(),
            label: self.label,
            operator: self.operator,
            seed: self.seed,
            rate_hz: self.rate_hz,
        }
    }
}

/// One JSONL line of a recording dataset. Pose rows are
/// `[t, x, y, z, qw, qx, qy, qz]`; cell rows share the pose timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingLine {
    pub cells: Vec<[f64; 4]>,
    pub pose: Vec<[f64; 8]>,
    pub label: Option<usize>,
    pub operator: usize,
    pub seed: u64,
    pub rate_hz: f64,
}

impl TryFrom<RecordingLine> for RawRecording {
    type Error = String;

    fn try_from(line: RecordingLine) -> Result<Self, Self::Error> {
        if line.cells.len() != line.pose.len() {
            return Err(format!(
                "cells ({}) and pose ({}) lengths differ",
                line.cells.len(),
                line.pose.len()
            ));
        }
        let samples: Vec<PoseSample> = line
            .pose
            .iter()
            .map(|p| PoseSample {
                position: [p[1], p[2], p[3]],
                orientation: Quat {
                    w: p[4],
                    x: p[5],
                    y: p[6],
                    z: p[7],
                },
                t: p[0],
            })
            .collect();
        let cells = line
            .cells
            .iter()
            .zip(&samples)
            .map(|(f, p)| LoadCellReading::new(*f, p.t))
            .collect();
        Ok(RawRecording {
            cells,
            trajectory: ProbeTrajectory { samples },
            label: line.label,
            operator: line.operator,
            seed: line.seed,
            rate_hz: line.rate_hz,
        })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, recordings: &[RawRecording]) -> std::io::Result<()> {
    for r in recordings {
        serde_json::to_writer(&mut w, &r.to_line())?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<Vec<RawRecording>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordingLine = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        let rec = RawRecording::try_from(parsed).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tilt_quaternion_leans_axis() {
        let q = Quat::tilt(10f64.to_radians(), 0.3);
        assert!((q.tilt_angle() - 10f64.to_radians()).abs() < 1e-12);
        let axis = q.rotate([0.0, 0.0, 1.0]);
        let az = axis[1].atan2(axis[0]);
        assert!((az - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rotate_matches_conjugate_inverse() {
        let q = Quat::from_axis_angle([0.2, -0.5, 0.7], 1.1);
        let v = [0.3, -1.2, 2.0];
        let back = q.conj().rotate(q.rotate(v));
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
    }
}
