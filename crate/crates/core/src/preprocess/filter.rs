//! Butterworth low-pass filter realized as cascaded second-order sections.
//!
//! Design is by bilinear transform with frequency pre-warping, so the digital
//! magnitude response is exactly
//! `|H|^2 = 1 / (1 + (tan(pi f / fs) / tan(pi fc / fs))^(2n))`.

use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    Causal,
    ZeroPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub mode: FilterMode,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            order: 5,
            cutoff_hz: 5.0,
            sample_rate_hz: 100.0,
            mode: FilterMode::ZeroPhase,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let nyquist = self.sample_rate_hz / 2.0;
        if self.order == 0 {
            return Err(PreprocessError::Parameter("filter order must be >= 1".into()));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(PreprocessError::Parameter(format!(
                "cutoff {} Hz outside (0, {nyquist}) Hz",
                self.cutoff_hz
            )));
        }
        Ok(())
    }
}

/// One biquad, `a[0] == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section<T> {
    pub b: [T; 3],
    pub a: [T; 3],
}

impl<T: Scalar> Section<T> {
    fn dc_gain(&self) -> T {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Roots of `z^2 + a1 z + a2`, as (re, im) pairs.
    pub fn poles(&self) -> [(f64, f64); 2] {
        let a1 = self.a[1].as_f64();
        let a2 = self.a[2].as_f64();
        let disc = a1 * a1 - 4.0 * a2;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [((-a1 + s) / 2.0, 0.0), ((-a1 - s) / 2.0, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [(-a1 / 2.0, s / 2.0), (-a1 / 2.0, -s / 2.0)]
        }
    }
}

/// Cascade of second-order sections; first-order stages use `b[2] = a[2] = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sos<T> {
    pub sections: Vec<Section<T>>,
}

#[derive(Clone, Copy, Debug)]
struct Cx(f64, f64);

impl Cx {
    fn mul(self, o: Cx) -> Cx {
        Cx(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: Cx) -> Cx {
        let d = o.0 * o.0 + o.1 * o.1;
        Cx((self.0 * o.0 + self.1 * o.1) / d, (self.1 * o.0 - self.0 * o.1) / d)
    }
    fn add(self, o: Cx) -> Cx {
        Cx(self.0 + o.0, self.1 + o.1)
    }
    fn abs(self) -> f64 {
        self.0.hypot(self.1)
    }
}

impl<T: Scalar> Sos<T> {
    /// Low-pass Butterworth design.
    pub fn butterworth_lowpass(spec: &FilterSpec) -> Result<Self, PreprocessError> {
        spec.validate()?;
        let n = spec.order;
        let fs2 = 2.0 * spec.sample_rate_hz;
        let wc = fs2 * (std::f64::consts::PI * spec.cutoff_hz / spec.sample_rate_hz).tan();
        let bilinear = |p: Cx| Cx(fs2 + p.0, p.1).div(Cx(fs2 - p.0, -p.1));

        let mut sections = Vec::with_capacity(n.div_ceil(2));
        // Upper-half-plane poles of each conjugate pair, then the real pole.
        for k in 0..n / 2 {
            let theta = std::f64::consts::PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            let z = bilinear(Cx(wc * theta.cos(), wc * theta.sin()));
            let a1 = -2.0 * z.0;
            let a2 = z.0 * z.0 + z.1 * z.1;
            let g = (1.0 + a1 + a2) / 4.0;
            sections.push(Section {
                b: [T::lit(g), T::lit(2.0 * g), T::lit(g)],
                a: [T::one(), T::lit(a1), T::lit(a2)],
            });
        }
        if n % 2 == 1 {
            let z = bilinear(Cx(-wc, 0.0)).0;
            let g = (1.0 - z) / 2.0;
            sections.push(Section {
                b: [T::lit(g), T::lit(g), T::zero()],
                a: [T::one(), T::lit(-z), T::zero()],
            });
        }
        Ok(Self { sections })
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        // z^-1 and z^-2 on the unit circle.
        let z1 = Cx(w.cos(), -w.sin());
        let z2 = z1.mul(z1);
        let mut h = Cx(1.0, 0.0);
        for s in &self.sections {
            let c = |v: T| v.as_f64();
            let num = Cx(c(s.b[0]), 0.0)
                .add(z1.mul(Cx(c(s.b[1]), 0.0)))
                .add(z2.mul(Cx(c(s.b[2]), 0.0)));
            let den = Cx(1.0, 0.0)
                .add(z1.mul(Cx(c(s.a[1]), 0.0)))
                .add(z2.mul(Cx(c(s.a[2]), 0.0)));
            h = h.mul(num.div(den));
        }
        h.abs()
    }

    /// Largest pole radius over all sections; < 1 means stable.
    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|(re, im)| re.hypot(im))
            .fold(0.0, f64::max)
    }

    /// Steady-state section states for a constant input `x0`.
    fn steady_state(&self, x0: T) -> Vec<[T; 2]> {
        let mut x = x0;
        self.sections
            .iter()
            .map(|s| {
                let y = s.dc_gain() * x;
                let z1 = (s.b[1] + s.b[2]) * x - (s.a[1] + s.a[2]) * y;
                let z2 = s.b[2] * x - s.a[2] * y;
                x = y;
                [z1, z2]
            })
            .collect()
    }

    /// Causal filtering (direct form II transposed), initialized at the
    /// steady state of the first sample so a constant passes unchanged.
    pub fn filter(&self, x: &[T]) -> Vec<T> {
        let mut out = x.to_vec();
        if let Some(&x0) = x.first() {
            let mut state = self.steady_state(x0);
            self.run(&mut out, &mut state);
        }
        out
    }

    fn run(&self, buf: &mut [T], state: &mut [[T; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            for v in buf.iter_mut() {
                let xin = *v;
                let y = s.b[0] * xin + z[0];
                z[0] = s.b[1] * xin - s.a[1] * y + z[1];
                z[1] = s.b[2] * xin - s.a[2] * y;
                *v = y;
            }
        }
    }

    /// Number of samples mirrored at each end for forward-backward filtering.
    pub fn pad_len(&self) -> usize {
        let first_order = self
            .sections
            .iter()
            .filter(|s| s.b[2] == T::zero() && s.a[2] == T::zero())
            .count();
        3 * (2 * self.sections.len() + 1 - first_order)
    }

    /// Forward-backward filtering with odd-reflection padding: zero phase,
    /// squared magnitude.
    pub fn filtfilt(&self, x: &[T]) -> Vec<T> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.pad_len().min(n - 1);
        let two = T::lit(2.0);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| two * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| two * x[n - 1] - x[n - 1 - i]));

        let mut state = self.steady_state(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        let mut state = self.steady_state(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    /// `{"sos": [[b0, b1, b2, a0, a1, a2], ...]}`, the common cross-tool layout.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<[f64; 6]> = self
            .sections
            .iter()
            .map(|s| {
                [
                    s.b[0].as_f64(),
                    s.b[1].as_f64(),
                    s.b[2].as_f64(),
                    s.a[0].as_f64(),
                    s.a[1].as_f64(),
                    s.a[2].as_f64(),
                ]
            })
            .collect();
        serde_json::json!({ "sos": rows })
    }
}

/// Analytic Butterworth magnitude for the pre-warped bilinear design.
pub fn analytic_magnitude(spec: &FilterSpec, freq_hz: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let ratio = (pi * freq_hz / spec.sample_rate_hz).tan() / (pi * spec.cutoff_hz / spec.sample_rate_hz).tan();
    (1.0 / (1.0 + ratio.powi(2 * spec.order as i32))).sqrt()
}
