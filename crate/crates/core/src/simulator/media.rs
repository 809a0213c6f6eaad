//! Granular media classes and their penetration-resistance models.

use serde::{Deserialize, Serialize};

use super::SimError;

pub const N_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MediaClass {
    NuSoil,
    Millet,
    Cement,
    Sand,
    Mung,
    SimuSoil,
}

impl MediaClass {
    pub const ALL: [MediaClass; N_CLASSES] = [
        MediaClass::NuSoil,
        MediaClass::Millet,
        MediaClass::Cement,
        MediaClass::Sand,
        MediaClass::Mung,
        MediaClass::SimuSoil,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MediaClass::NuSoil => "NuSoil",
            MediaClass::Millet => "Millet",
            MediaClass::Cement => "Cement",
            MediaClass::Sand => "Sand",
            MediaClass::Mung => "Mung",
            MediaClass::SimuSoil => "SimuSoil",
        }
    }
}

impl std::fmt::Display for MediaClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MediaClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown media class {s:?}"))
    }
}

/// Resistance model of one medium: mean axial force `k * depth^alpha` plus
/// depth-locked fluctuation, stick-slip drops and lateral torque.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaModel {
    pub class: MediaClass,
    /// Particle size interval, millimetres.
    pub particle_size_band: (f64, f64),
    /// Newtons per metre^alpha.
    pub resistance_gain: f64,
    pub resistance_exponent: f64,
    /// Standard deviation of the fluctuation term, newtons.
    pub fluctuation_scale: f64,
    /// Stick-slip events per centimetre of penetration.
    pub stickslip_rate: f64,
    /// Mean stick-slip force drop, newtons.
    pub stickslip_magnitude: f64,
    pub lateral_asymmetry: f64,
}

impl MediaModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = self.particle_size_band;
        let bad = |msg: String| Err(SimError::InvalidMedia(format!("{}: {msg}", self.class)));
        if !(self.resistance_gain > 0.0) {
            return bad(format!("resistance gain {} must be positive", self.resistance_gain));
        }
        if !(self.resistance_exponent > 0.0 && self.resistance_exponent <= 3.0) {
            return bad(format!("exponent {} outside (0, 3]", self.resistance_exponent));
        }
        if !(self.fluctuation_scale >= 0.0) {
            return bad("fluctuation scale must be non-negative".into());
        }
        if !(self.stickslip_rate >= 0.0 && self.stickslip_magnitude >= 0.0) {
            return bad("stick-slip parameters must be non-negative".into());
        }
        if !(lo < hi) {
            return bad(format!("particle band [{lo}, {hi}] is empty"));
        }
        Ok(())
    }

    pub fn particle_size_mid(&self) -> f64 {
        (self.particle_size_band.0 + self.particle_size_band.1) / 2.0
    }

    /// Depth-correlation length of the fluctuation field, metres.
    pub fn correlation_length(&self) -> f64 {
        (3.0 + 1.5 * self.particle_size_mid()) * 1e-3
    }

    pub fn mean_resistance(&self, depth: f64) -> f64 {
        if depth <= 0.0 {
            0.0
        } else {
            self.resistance_gain * depth.powf(self.resistance_exponent)
        }
    }
}

/// Fluctuation grows with the square root of the particle-size midpoint.
pub fn fluctuation_for_particle_size(mid_mm: f64) -> f64 {
    0.1 + 1.4 * mid_mm.sqrt()
}

/// Default table, version 2. Particle bands are the published ones; the
/// resistance parameters are synthetic and chosen so neighbouring classes
/// overlap at the tails once per-dip packing variation is applied.
pub const MEDIA_TABLE_VERSION: u32 = 2;

pub fn default_media_library() -> Vec<MediaModel> {
    // (class, band mm, force at 10 cm [N], exponent, stick-slip /cm, drop N, asymmetry)
    let rows: [(MediaClass, (f64, f64), f64, f64, f64, f64, f64); N_CLASSES] = [
        (MediaClass::NuSoil, (0.0, 0.002), 10.0, 1.0, 0.05, 0.5, 0.10),
        (MediaClass::Millet, (0.007, 0.033), 18.0, 1.3, 0.30, 1.0, 0.16),
        (MediaClass::Cement, (0.01, 0.02), 14.0, 1.6, 0.10, 0.5, 0.06),
        (MediaClass::Sand, (0.063, 2.0), 25.0, 1.4, 0.40, 1.5, 0.22),
        (MediaClass::Mung, (3.0, 4.0), 32.0, 1.1, 1.00, 2.5, 0.34),
        (MediaClass::SimuSoil, (7.0, 8.0), 18.0, 0.8, 0.60, 4.0, 0.70),
    ];
    rows.iter()
        .map(|&(class, band, f10, alpha, rate, drop, asym)| MediaModel {
            class,
            particle_size_band: band,
            resistance_gain: f10 / 0.1f64.powf(alpha),
            resistance_exponent: alpha,
            fluctuation_scale: fluctuation_for_particle_size((band.0 + band.1) / 2.0),
            stickslip_rate: rate,
            stickslip_magnitude: drop,
            lateral_asymmetry: asym,
        })
        .collect()
}

pub fn media_model(class: MediaClass) -> MediaModel {
    default_media_library().swap_remove(class.index())
}

/// Motion habits of one (simulated) operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorProfile {
    /// m/s along the device axis.
    pub nominal_speed: f64,
    /// Relative amplitude of slow speed variation.
    pub speed_jitter: f64,
    /// Degrees from vertical.
    pub tilt_deg: f64,
    /// Physiological tremor amplitude, newtons.
    pub tremor_amplitude: f64,
    /// Habitual rotation of the handle about its own axis, degrees. It turns
    /// the lateral load of the medium in the sensor frame.
    pub grip_offset_deg: f64,
    /// Half-width of the uniform dip-to-dip spread around the habitual grip.
    pub grip_spread_deg: f64,
}

impl Default for OperatorProfile {
    fn default() -> Self {
        Self {
            nominal_speed: 0.05,
            speed_jitter: 0.1,
            tilt_deg: 3.0,
            tremor_amplitude: 0.2,
            grip_offset_deg: 0.0,
            grip_spread_deg: 90.0,
        }
    }
}

impl OperatorProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.nominal_speed >= 0.0) {
            return Err(SimError::InvalidOperator(format!(
                "nominal speed {} must be non-negative",
                self.nominal_speed
            )));
        }
        if !(0.0..=30.0).contains(&self.tilt_deg) {
            return Err(SimError::InvalidOperator(format!(
                "tilt {} deg outside [0, 30]",
                self.tilt_deg
            )));
        }
        if !(self.speed_jitter >= 0.0 && self.speed_jitter < 1.0 && self.tremor_amplitude >= 0.0) {
            return Err(SimError::InvalidOperator(
                "jitter must lie in [0, 1) and tremor be non-negative".into(),
            ));
        }
        if !((-180.0..=180.0).contains(&self.grip_offset_deg) && (0.0..=180.0).contains(&self.grip_spread_deg)) {
            return Err(SimError::InvalidOperator(
                "grip offset must lie in [-180, 180] and spread in [0, 180] degrees".into(),
            ));
        }
        Ok(())
    }

    /// A deterministic cohort of `n` distinct operators spanning slow and
    /// fast, steady and shaky, upright and leaning styles. Each holds the
    /// handle at a habitual angle with a narrower spread than the default.
    pub fn cohort(n: usize, seed: u64) -> Vec<OperatorProfile> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_55ed);
        (0..n)
            .map(|_| OperatorProfile {
                nominal_speed: rng.random_range(0.035..0.07),
                speed_jitter: rng.random_range(0.05..0.3),
                tilt_deg: rng.random_range(0.0..12.0),
                tremor_amplitude: rng.random_range(0.1..0.8),
                grip_offset_deg: rng.random_range(-90.0..90.0),
                grip_spread_deg: rng.random_range(20.0..50.0),
            })
            .collect()
    }
}
