//! Dynamic time warping with a Sakoe-Chiba band and a k-nearest-neighbour
//! vote. Serves as the baseline the encoder is compared against.

use super::ClassifierError;
use crate::matrix::Matrix;
use crate::preprocess::ProcessedWindow;
use crate::scalar::Scalar;

/// Band half-width used for windows of `n` samples: 10% of `n`, at least 1.
pub fn sakoe_chiba_band(n: usize) -> usize {
    ((n as f64 * 0.1).round() as usize).max(1)
}

/// Square root of the minimal summed squared difference over warping paths
/// that stay within `band` of the (rescaled) diagonal.
pub fn dtw_distance<T: Scalar>(a: &[T], b: &[T], band: usize) -> f64 {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return if n == m { 0.0 } else { f64::INFINITY };
    }
    let w = band.max(n.abs_diff(m));
    let inf = f64::INFINITY;
    let mut prev = vec![inf; m + 1];
    let mut cur = vec![inf; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.fill(inf);
        // Diagonal position of row i on the j axis.
        let centre = (i * m) as f64 / n as f64;
        let lo = ((centre - w as f64).ceil() as isize).max(1) as usize;
        let hi = ((centre + w as f64).floor() as usize).min(m);
        for j in lo..=hi {
            let diff = a[i - 1].as_f64() - b[j - 1].as_f64();
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = diff * diff + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m].sqrt()
}

/// Sum of per-channel DTW distances of two `channels x N` matrices.
pub fn multivariate_dtw<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, band: usize) -> f64 {
    (0..a.rows().min(b.rows()))
        .map(|c| dtw_distance(a.row(c), b.row(c), band))
        .sum()
}

/// Majority vote of the `k` nearest training windows. Ties between classes
/// go to the class with the smallest mean distance among the `k`.
pub fn dtw_knn_predict<T: Scalar>(
    train: &[ProcessedWindow<T>],
    test: &ProcessedWindow<T>,
    k: usize,
) -> Result<usize, ClassifierError> {
    if train.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if k == 0 || k > train.len() {
        return Err(ClassifierError::Config(format!(
            "k = {k} must lie in 1..={}",
            train.len()
        )));
    }
    let band = sakoe_chiba_band(test.len());
    let mut dist: Vec<(f64, usize)> = train
        .iter()
        .map(|w| {
            let label = w.label.ok_or(ClassifierError::MissingLabel)?;
            Ok((multivariate_dtw(&w.data, &test.data, band), label))
        })
        .collect::<Result<_, ClassifierError>>()?;
    dist.sort_by(|x, y| x.0.total_cmp(&y.0));

    let n_classes = dist.iter().map(|d| d.1).max().unwrap_or(0) + 1;
    let mut votes = vec![0usize; n_classes];
    let mut sums = vec![0.0; n_classes];
    for &(d, l) in &dist[..k] {
        votes[l] += 1;
        sums[l] += d;
    }
    let best = (0..n_classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then((sums[a] / votes[a] as f64).total_cmp(&(sums[b] / votes[b] as f64)))
        })
        .expect("k >= 1");
    Ok(best)
}
