use super::{PreprocessError, WrenchSeries};
use crate::recording::ProbeTrajectory;
use crate::scalar::Scalar;

/// Re-parameterizes the dip segment by depth and samples it on the uniform
/// depth grid a constant-speed dip at `nominal_speed` would produce.
///
/// The dip segment runs from the last stationary sample before penetration
/// to the first sample at maximum depth. Depth is made monotone with a running
/// maximum; plateaus are skipped and channels are linearly interpolated.
pub fn velocity_resample<T: Scalar>(
    series: &WrenchSeries<T>,
    traj: &ProbeTrajectory,
    nominal_speed: f64,
) -> Result<WrenchSeries<T>, PreprocessError> {
    if !(nominal_speed > 0.0) {
        return Err(PreprocessError::Parameter(format!(
            "nominal speed must be positive, got {nominal_speed}"
        )));
    }
    if traj.len() != series.len() {
        return Err(PreprocessError::LengthMismatch(format!(
            "{} series samples vs {} poses",
            series.len(),
            traj.len()
        )));
    }
    if series.is_empty() {
        return Err(PreprocessError::NoDipMotion);
    }

    let mut depth = traj.depths();
    for i in 1..depth.len() {
        depth[i] = depth[i].max(depth[i - 1]);
    }
    let max_depth = depth[depth.len() - 1];
    let end = depth.iter().position(|&d| d >= max_depth).unwrap_or(0);
    let start = depth[..=end]
        .iter()
        .rposition(|&d| d <= depth[0])
        .unwrap_or(0);
    let (d0, d1) = (depth[start], depth[end]);
    if !(d1 > d0) {
        return Err(PreprocessError::NoDipMotion);
    }

    let rate = series.rate_hz.as_f64();
    let step = nominal_speed / rate;
    let span = d1 - d0;
    // Tolerate rounding when the span is an exact multiple of the step.
    let count = ((span / step) * (1.0 + 1e-12)).floor() as usize + 1;

    let mut out = WrenchSeries {
        mx: Vec::with_capacity(count),
        my: Vec::with_capacity(count),
        fz: Vec::with_capacity(count),
        depth: Vec::with_capacity(count),
        rate_hz: series.rate_hz,
    };
    let mut j = start;
    for k in 0..count {
        let target = (d0 + k as f64 * step).min(d1);
        while j < end && depth[j + 1] < target {
            j += 1;
        }
        let (i0, i1, frac) = if j == end || depth[j] >= target {
            (j, j, 0.0)
        } else {
            (j, j + 1, (target - depth[j]) / (depth[j + 1] - depth[j]))
        };
        let w1 = T::lit(frac);
        let w0 = T::lit(1.0 - frac);
        for c in 0..3 {
            let x = series.channel(c);
            let v = if i0 == i1 { x[i0] } else { w0 * x[i0] + w1 * x[i1] };
            out.channel_mut(c).push(v);
        }
        out.depth.push(T::lit(target));
    }
    Ok(out)
}
