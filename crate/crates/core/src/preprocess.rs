//! Mean-variance normalization and overlapped sliding-window segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TimeSeries;

/// Default overlap ratio `stride / width`.
pub const DEFAULT_OVERLAP_RATIO: f64 = 0.5;
/// Default window width in units of the series period.
pub const DEFAULT_PERIODS_PER_WINDOW: usize = 3;

/// Z-score normalization over the whole series using the population
/// standard deviation. A constant series maps to all zeros.
pub fn normalize(x: &TimeSeries) -> TimeSeries {
    let values = normalize_values(x.values());
    TimeSeries::new(x.name(), values)
        .expect("normalized values of a valid series are finite")
        .with_period_hint(x.period_hint())
}

pub(crate) fn normalize_values(values: &[f64]) -> Vec<f64> {
    // a rounded mean can leave a tiny spurious spread on constant input
    if values.iter().all(|&v| v == values[0]) {
        return vec![0.0; values.len()];
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 || !std.is_finite() {
        return vec![0.0; values.len()];
    }
    let mut z: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
    // when the spread is tiny next to the offset, the mean's rounding error
    // is magnified by 1/std; one more centering pass removes it
    let drift = z.iter().sum::<f64>() / n;
    for v in &mut z {
        *v -= drift;
    }
    z
}

/// Segmentation of a series into fixed-width overlapping windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub width: usize,
    pub stride: usize,
    pub series_len: usize,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    /// Plans windows at `0, stride, 2*stride, ...`; if those leave a tail
    /// uncovered, one more window is anchored at `series_len - width`.
    pub fn new(series_len: usize, width: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidInput("window stride must be positive".into()));
        }
        if width == 0 || width > series_len {
            return Err(Error::InvalidInput(format!(
                "window width {width} must be in 1..={series_len}"
            )));
        }
        if stride >= width {
            return Err(Error::InvalidInput(format!(
                "stride {stride} must be smaller than width {width} (overlap ratio < 1)"
            )));
        }
        let last_start = series_len - width;
        let mut starts: Vec<usize> = (0..=last_start).step_by(stride).collect();
        if *starts.last().expect("at least start 0") < last_start {
            starts.push(last_start);
        }
        Ok(Self {
            width,
            stride,
            series_len,
            starts,
        })
    }

    /// Default plan: width `3 * period` (clamped to the series), overlap 0.5.
    pub fn for_period(series_len: usize, period: usize) -> Result<Self> {
        let width = (DEFAULT_PERIODS_PER_WINDOW * period.max(1)).min(series_len);
        let stride = ((width as f64 * DEFAULT_OVERLAP_RATIO) as usize).max(1);
        if width <= 1 {
            return Err(Error::InvalidInput(format!(
                "series of length {series_len} is too short to window"
            )));
        }
        Self::new(series_len, width, stride)
    }

    /// Shared fraction of consecutive windows, `1 - stride / width`.
    pub fn overlap_ratio(&self) -> f64 {
        1.0 - self.stride as f64 / self.width as f64
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// One slice of the normalized series.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: usize,
    pub start: usize,
    pub values: Vec<f64>,
}

impl Window {
    pub fn width(&self) -> usize {
        self.values.len()
    }

    /// Global index of the last point in the window.
    pub fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }
}

/// Segments `x` into windows of `width` taken every `stride` points.
pub fn make_windows(x: &TimeSeries, width: usize, stride: usize) -> Result<(WindowPlan, Vec<Window>)> {
    let plan = WindowPlan::new(x.len(), width, stride)?;
    let windows = windows_for_plan(x, &plan);
    Ok((plan, windows))
}

pub fn windows_for_plan(x: &TimeSeries, plan: &WindowPlan) -> Vec<Window> {
    plan.starts
        .iter()
        .enumerate()
        .map(|(index, &start)| Window {
            index,
            start,
            values: x.values()[start..start + plan.width].to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(v: Vec<f64>) -> TimeSeries {
        TimeSeries::new("t", v).unwrap()
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let big = TimeSeries::new("c", vec![123456.789; 7]).unwrap();
        assert!(normalize(&big).values().iter().all(|&v| v == 0.0));
        assert_eq!(normalize(&series(vec![5.0, 5.0, 5.0])).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn large_offset_small_spread() {
        let values: Vec<f64> = (0..2466).map(|i| 9876.5 + 1e-4 * ((i * 7919 % 1000) as f64 / 1000.0)).collect();
        let z = normalize(&series(values));
        let n = z.len() as f64;
        let mean = z.values().iter().sum::<f64>() / n;
        let std = (z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-12, "{mean}");
        assert!((std - 1.0).abs() <= 1e-9, "{std}");
    }

    #[test]
    fn normalizes_small_series() {
        let out = normalize(&series(vec![1.0, 2.0, 3.0]));
        // mean 2, population std sqrt(2/3)
        let z = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z - 1.224_744_871_391_589).abs() < 1e-12);
        let expected = [-z, 0.0, z];
        for (a, b) in out.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_input_is_a_fixed_point() {
        let v = vec![-1.0, 1.0, -1.0, 1.0];
        let out = normalize(&series(v.clone()));
        for (a, b) in out.values().iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn window_starts() {
        let plan = WindowPlan::new(1200, 600, 300).unwrap();
        assert_eq!(plan.starts, vec![0, 300, 600]);
        let plan = WindowPlan::new(10, 4, 2).unwrap();
        assert_eq!(plan.starts, vec![0, 2, 4, 6]);
        let plan = WindowPlan::new(600, 600, 300).unwrap();
        assert_eq!(plan.starts, vec![0]);
    }

    #[test]
    fn tail_window_is_anchored() {
        let plan = WindowPlan::new(11, 4, 3).unwrap();
        assert_eq!(plan.starts, vec![0, 3, 6, 7]);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(WindowPlan::new(10, 11, 2).is_err());
        assert!(WindowPlan::new(10, 4, 4).is_err());
        assert!(WindowPlan::new(10, 4, 5).is_err());
        assert!(WindowPlan::new(10, 4, 0).is_err());
    }

    #[test]
    fn default_plan_uses_three_periods() {
        let plan = WindowPlan::for_period(3000, 100).unwrap();
        assert_eq!(plan.width, 300);
        assert_eq!(plan.stride, 150);
        assert!((plan.overlap_ratio() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn windows_cover_and_copy_exactly(
            values in proptest::collection::vec(-1e3f64..1e3, 2..400),
            w_frac in 0.01f64..1.0,
            s_frac in 0.01f64..0.99,
        ) {
            let t = values.len();
            let width = ((t as f64 * w_frac) as usize).clamp(2, t);
            let stride = ((width as f64 * s_frac) as usize).clamp(1, width - 1);
            let x = series(values);
            let (plan, windows) = make_windows(&x, width, stride).unwrap();
            prop_assert!(plan.overlap_ratio() < 1.0);
            prop_assert!(plan.starts.windows(2).all(|p| p[0] < p[1]));
            let mut covered = vec![false; t];
            for w in &windows {
                prop_assert_eq!(w.values.len(), width);
                prop_assert_eq!(&w.values[..], &x.values()[w.start..w.start + width]);
                covered[w.start..=w.end()].fill(true);
            }
            prop_assert!(covered.iter().all(|&c| c));
        }
    }
}
