use serde::{Deserialize, Serialize};

use super::{PreprocessError, WrenchSeries};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Recognition lengths of the standard length sweep.
pub const RECOGNITION_LENGTHS: [usize; 4] = [32, 64, 128, 251];

/// A `3 x N` classifier input, rows ordered `(mx, my, fz)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessedWindow<T> {
    pub data: Matrix<T>,
    pub label: Option<usize>,
    /// Identifier of the recording the samples came from.
    pub source: u64,
    /// Offset of the first sample in the source series.
    pub start: usize,
}

impl<T: Scalar> ProcessedWindow<T> {
    pub fn len(&self) -> usize {
        self.data.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.cols() == 0
    }

    /// Same window in another scalar type.
    pub fn cast<U: Scalar>(&self) -> ProcessedWindow<U> {
        ProcessedWindow {
            data: Matrix::from_vec(
                3,
                self.data.cols(),
                self.data.as_slice().iter().map(|v| U::lit(v.as_f64())).collect(),
            ),
            label: self.label,
            source: self.source,
            start: self.start,
        }
    }
}

fn extract<T: Scalar>(series: &WrenchSeries<T>, idx: impl Fn(usize) -> usize, len: usize) -> Matrix<T> {
    Matrix::from_fn(3, len, |c, t| series.channel(c)[idx(t)])
}

/// Windows of `len` samples at offsets `0, stride, 2*stride, ...` that fit
/// entirely inside the series.
pub fn sliding_windows<T: Scalar>(
    series: &WrenchSeries<T>,
    len: usize,
    stride: usize,
    label: Option<usize>,
    source: u64,
) -> Result<Vec<ProcessedWindow<T>>, PreprocessError> {
    if len == 0 || stride == 0 {
        return Err(PreprocessError::Parameter(format!(
            "window length ({len}) and stride ({stride}) must be positive"
        )));
    }
    if series.len() < len {
        tracing::warn!(series_len = series.len(), window = len, "series shorter than window");
        return Ok(Vec::new());
    }
    Ok((0..=series.len() - len)
        .step_by(stride)
        .map(|start| ProcessedWindow {
            data: extract(series, |t| start + t, len),
            label,
            source,
            start,
        })
        .collect())
}

/// Reflects an out-of-range index back into `[0, n)`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Window of `len` samples centred on `center`, padded by reflection where it
/// runs past either end of the series. `start` may be negative.
pub fn centered_window<T: Scalar>(
    series: &WrenchSeries<T>,
    center: usize,
    len: usize,
    label: Option<usize>,
    source: u64,
) -> Result<ProcessedWindow<T>, PreprocessError> {
    if series.is_empty() || len == 0 {
        return Err(PreprocessError::TooShort {
            len: series.len(),
            min: 0,
        });
    }
    let first = center as isize - (len / 2) as isize;
    let n = series.len();
    Ok(ProcessedWindow {
        data: extract(series, |t| reflect(first + t as isize, n), len),
        label,
        source,
        start: first.max(0) as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> WrenchSeries<f64> {
        WrenchSeries {
            mx: (0..n).map(|i| i as f64).collect(),
            my: (0..n).map(|i| -(i as f64)).collect(),
            fz: (0..n).map(|i| 2.0 * i as f64).collect(),
            depth: vec![0.0; n],
            rate_hz: 100.0,
        }
    }

    #[test]
    fn full_length_gives_one_window() {
        for stride in [1, 7, 64, 1000] {
            assert_eq!(sliding_windows(&ramp(251), 251, stride, None, 0).unwrap().len(), 1);
        }
    }

    #[test]
    fn offsets_follow_stride() {
        let ws = sliding_windows(&ramp(251), 128, 41, Some(3), 9).unwrap();
        let starts: Vec<_> = ws.iter().map(|w| w.start).collect();
        assert_eq!(starts, [0, 41, 82, 123]);
        assert!(ws.iter().all(|w| w.label == Some(3) && w.source == 9));
        assert_eq!(ws[2].data.get(0, 0), 82.0);
        assert_eq!(ws[2].data.get(2, 127), 2.0 * 209.0);
    }

    #[test]
    fn short_series_gives_nothing() {
        assert!(sliding_windows(&ramp(100), 128, 64, None, 0).unwrap().is_empty());
    }

    #[test]
    fn zero_stride_is_an_error() {
        assert!(sliding_windows(&ramp(100), 32, 0, None, 0).is_err());
    }

    #[test]
    fn reflection_padding() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-3, 5), 3);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(7, 5), 1);
        let w = centered_window(&ramp(10), 1, 6, None, 0).unwrap();
        assert_eq!(w.data.row(0), &[2.0, 1.0, 0.0, 1.0, 2.0, 3.0]);
        let w = centered_window(&ramp(10), 9, 4, None, 0).unwrap();
        assert_eq!(w.data.row(0), &[7.0, 8.0, 9.0, 8.0]);
    }
}
