//! Shared domain types: series, labels, anomaly intervals and detections.
//!
//! All indices are 0-based and intervals are inclusive on both ends.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A univariate series of finite values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period_hint: Option<usize>,
}

impl TimeSeries {
    /// Builds a series, rejecting empty input and non-finite values.
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::InvalidInput(format!("series `{name}` is empty")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "series `{name}` has a non-finite value at index {i}"
            )));
        }
        Ok(Self {
            name,
            values,
            period_hint: None,
        })
    }

    pub fn with_period_hint(mut self, period: Option<usize>) -> Self {
        self.period_hint = period.filter(|&p| p > 0);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn period_hint(&self) -> Option<usize> {
        self.period_hint
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-point ground-truth anomaly flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSeries {
    flags: Vec<bool>,
}

impl LabelSeries {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn all_normal(len: usize) -> Self {
        Self {
            flags: vec![false; len],
        }
    }

    /// Rasterizes inclusive intervals onto a series of `len` points.
    pub fn from_intervals(len: usize, intervals: &[AnomalyInterval]) -> Result<Self> {
        let mut flags = vec![false; len];
        for iv in intervals {
            if iv.end() >= len {
                return Err(Error::InvalidInput(format!(
                    "interval {iv} exceeds series length {len}"
                )));
            }
            flags[iv.start()..=iv.end()].fill(true);
        }
        Ok(Self { flags })
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Fails unless the label length matches `series_len`.
    pub fn check_length(&self, series_len: usize) -> Result<()> {
        if self.flags.len() != series_len {
            return Err(Error::InvalidInput(format!(
                "label length {} does not match series length {series_len}",
                self.flags.len()
            )));
        }
        Ok(())
    }

    pub fn to_intervals(&self) -> Vec<AnomalyInterval> {
        labels_to_intervals(self)
    }
}

/// Canonical anomaly taxonomy.
///
/// The declaration order doubles as the tie-break order for class voting.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyType {
    Point,
    Shapelet,
    Seasonal,
    Trend,
}

impl AnomalyType {
    pub const ALL: [AnomalyType; 4] = [
        AnomalyType::Point,
        AnomalyType::Shapelet,
        AnomalyType::Seasonal,
        AnomalyType::Trend,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyType::Point => "point",
            AnomalyType::Shapelet => "shapelet",
            AnomalyType::Seasonal => "seasonal",
            AnomalyType::Trend => "trend",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AnomalyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyType {
    type Err = Error;

    /// Parses canonical names only; model vocabulary goes through
    /// [`crate::respparse::normalize_label`].
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "point" => Ok(AnomalyType::Point),
            "shapelet" => Ok(AnomalyType::Shapelet),
            "seasonal" => Ok(AnomalyType::Seasonal),
            "trend" => Ok(AnomalyType::Trend),
            other => Err(Error::InvalidInput(format!("unknown anomaly type `{other}`"))),
        }
    }
}

/// Inclusive index range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct AnomalyInterval {
    start: usize,
    end: usize,
}

impl AnomalyInterval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInput(format!(
                "interval start {start} is after end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn point(index: usize) -> Self {
        Self {
            start: index,
            end: index,
        }
    }

    /// Builds an interval from endpoints in either order.
    pub fn spanning(a: usize, b: usize) -> Self {
        Self {
            start: a.min(b),
            end: a.max(b),
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    // an inclusive interval always holds at least one index
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        interval_length(*self)
    }

    pub fn is_point(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn overlap(&self, other: &AnomalyInterval) -> usize {
        interval_overlap(*self, *other)
    }

    /// Intersection with `other`, if non-empty.
    pub fn intersect(&self, other: &AnomalyInterval) -> Option<AnomalyInterval> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (start <= end).then_some(AnomalyInterval { start, end })
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

impl fmt::Display for AnomalyInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

impl TryFrom<(usize, usize)> for AnomalyInterval {
    type Error = Error;

    fn try_from((start, end): (usize, usize)) -> Result<Self> {
        AnomalyInterval::new(start, end)
    }
}

impl From<AnomalyInterval> for (usize, usize) {
    fn from(iv: AnomalyInterval) -> Self {
        (iv.start, iv.end)
    }
}

/// Confidence level reported with a detection, always in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Confidence(u8);

impl Confidence {
    pub const MIN: Confidence = Confidence(1);
    pub const MAX: Confidence = Confidence(4);

    pub fn new(level: u8) -> Result<Self> {
        if (1..=4).contains(&level) {
            Ok(Confidence(level))
        } else {
            Err(Error::InvalidInput(format!(
                "confidence {level} outside 1..=4"
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Confidence {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Confidence::new(v)
    }
}

impl From<Confidence> for u8 {
    fn from(c: Confidence) -> u8 {
        c.0
    }
}

/// One detected anomaly: where, how sure, and what kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub interval: AnomalyInterval,
    pub confidence: Confidence,
    pub kind: AnomalyType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl Detection {
    pub fn new(interval: AnomalyInterval, confidence: Confidence, kind: AnomalyType) -> Self {
        Self {
            interval,
            confidence,
            kind,
            explanation: None,
        }
    }
}

/// Number of indices covered by `iv`.
pub fn interval_length(iv: AnomalyInterval) -> usize {
    iv.end - iv.start + 1
}

/// Number of indices shared by `a` and `b`.
pub fn interval_overlap(a: AnomalyInterval, b: AnomalyInterval) -> usize {
    a.intersect(&b).map_or(0, interval_length)
}

/// Maximal runs of `true` flags, sorted by start.
pub fn labels_to_intervals(labels: &LabelSeries) -> Vec<AnomalyInterval> {
    flags_to_intervals(labels.flags())
}

pub(crate) fn flags_to_intervals(flags: &[bool]) -> Vec<AnomalyInterval> {
    let mut out = Vec::new();
    let mut run_start = None;
    for (i, &f) in flags.iter().enumerate() {
        match (f, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                out.push(AnomalyInterval { start: s, end: i - 1 });
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        out.push(AnomalyInterval {
            start: s,
            end: flags.len() - 1,
        });
    }
    out
}
