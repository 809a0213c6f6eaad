use serde::{Deserialize, Serialize};

use super::window::ProcessedWindow;
use super::CHANNEL_NAMES;
use crate::scalar::Scalar;

/// Per-channel z-score statistics, frozen once computed on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats<T> {
    pub mean: [T; 3],
    pub std: [T; 3],
}

impl<T: Scalar> ChannelStats<T> {
    pub fn identity() -> Self {
        Self {
            mean: [T::zero(); 3],
            std: [T::one(); 3],
        }
    }

    /// Population mean and standard deviation over every sample of every window.
    pub fn fit(windows: &[ProcessedWindow<T>]) -> Self {
        let mut mean = [T::zero(); 3];
        let mut std = [T::one(); 3];
        for c in 0..3 {
            let count: usize = windows.iter().map(|w| w.data.cols()).sum();
            if count == 0 {
                continue;
            }
            let n = T::from_count(count);
            let m = windows.iter().flat_map(|w| w.data.row(c)).copied().sum::<T>() / n;
            let var = windows
                .iter()
                .flat_map(|w| w.data.row(c))
                .map(|&x| (x - m) * (x - m))
                .sum::<T>()
                / n;
            mean[c] = m;
            // Rounding leaves a residue of order eps * mean^2 on constant channels.
            let floor = T::epsilon() * (m * m + T::one()) * T::lit(16.0);
            std[c] = if var > floor {
                var.sqrt()
            } else {
                tracing::warn!(channel = CHANNEL_NAMES[c], "zero variance channel, using unit divisor");
                T::one()
            };
        }
        Self { mean, std }
    }

    pub fn apply(&self, window: &mut ProcessedWindow<T>) {
        for c in 0..3 {
            let (m, s) = (self.mean[c], self.std[c]);
            for x in window.data.row_mut(c) {
                *x = (*x - m) / s;
            }
        }
    }
}

/// Z-scores `windows` in place. With `stats == None` the statistics are fitted
/// on these windows first; otherwise the given statistics are reused verbatim.
pub fn normalize<T: Scalar>(
    windows: &mut [ProcessedWindow<T>],
    stats: Option<&ChannelStats<T>>,
) -> ChannelStats<T> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ChannelStats::fit(windows),
    };
    for w in windows.iter_mut() {
        stats.apply(w);
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn window(f: impl Fn(usize, usize) -> f64) -> ProcessedWindow<f64> {
        ProcessedWindow {
            data: Matrix::from_fn(3, 32, f),
            label: Some(0),
            source: 0,
            start: 0,
        }
    }

    #[test]
    fn training_partition_is_standardized() {
        let mut ws: Vec<_> = (0..5)
            .map(|k| window(|c, t| (c as f64 + 1.0) * ((t * (k + 1)) as f64 * 0.3).sin() + 7.0 * c as f64))
            .collect();
        normalize(&mut ws, None);
        for c in 0..3 {
            let vals: Vec<f64> = ws.iter().flat_map(|w| w.data.row(c).to_vec()).collect();
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_stats_do_not_recentre() {
        let mut train = vec![window(|_, t| t as f64)];
        let stats = normalize(&mut train, None);
        let mut test = vec![window(|_, t| t as f64 + 100.0)];
        normalize(&mut test, Some(&stats));
        let m: f64 = test[0].data.row(0).iter().sum::<f64>() / 32.0;
        assert!((m - 100.0 / stats.std[0]).abs() < 1e-9);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut ws = vec![window(|c, t| if c == 1 { 4.2 } else { t as f64 })];
        let stats = normalize(&mut ws, None);
        assert_eq!(stats.std[1], 1.0);
        assert!(ws[0].data.row(1).iter().all(|&x| x.abs() < 1e-12));
        assert!(ws[0].data.is_finite());
    }
}
