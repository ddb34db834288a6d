//! Results aggregation: window-local detections are shifted to global
//! indices, their confidences summed pointwise, and classes voted.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::pipeline::WindowAnalysis;
use crate::types::{AnomalyInterval, AnomalyType, Detection};

/// Default detection threshold: any single detection counts.
pub const DEFAULT_THRESHOLD: f64 = 1.0;

/// Pointwise summed confidence; doubles as the anomaly score sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceSequence(pub Vec<u32>);

impl ConfidenceSequence {
    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_scores(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

/// Pointwise voted class; `None` wherever no detection covers the point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSequence(pub Vec<Option<AnomalyType>>);

impl ClassSequence {
    pub fn values(&self) -> &[Option<AnomalyType>] {
        &self.0
    }
}

/// How covering detections vote on a point's class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteWeighting {
    /// Each detection votes with its confidence.
    #[default]
    Confidence,
    /// Each detection casts one vote.
    Count,
}

/// Shifts a window-local detection by `window_start`, clamping to the series.
pub fn to_global(d: &Detection, window_start: usize, series_len: usize) -> Detection {
    let last = series_len.saturating_sub(1);
    let start = (d.interval.start() + window_start).min(last);
    let end = (d.interval.end() + window_start).min(last);
    Detection {
        interval: AnomalyInterval::spanning(start, end),
        ..d.clone()
    }
}

/// A globalized detection together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenancedDetection {
    pub window_index: usize,
    pub local_interval: AnomalyInterval,
    pub detection: Detection,
}

/// Globalizes every detection in `analyses`, in window order.
pub fn globalize(analyses: &[WindowAnalysis], series_len: usize) -> Vec<ProvenancedDetection> {
    analyses
        .iter()
        .flat_map(|a| {
            a.detections.iter().map(move |d| ProvenancedDetection {
                window_index: a.window_index,
                local_interval: d.interval,
                detection: to_global(d, a.window_start, series_len),
            })
        })
        .collect()
}

/// Accumulates confidences and votes classes over already-global detections.
pub fn accumulate_detections<'a, I>(
    detections: I,
    series_len: usize,
    weighting: VoteWeighting,
) -> (ConfidenceSequence, ClassSequence)
where
    I: IntoIterator<Item = &'a Detection>,
{
    // difference arrays: one for total confidence, one per type for votes
    let n = series_len;
    let mut conf_delta = vec![0i64; n + 1];
    let mut vote_delta = vec![[0i64; 4]; n + 1];
    for d in detections {
        let (s, e) = (d.interval.start(), d.interval.end());
        if s >= n {
            continue;
        }
        let e = e.min(n - 1);
        let c = d.confidence.get() as i64;
        conf_delta[s] += c;
        conf_delta[e + 1] -= c;
        let w = match weighting {
            VoteWeighting::Confidence => c,
            VoteWeighting::Count => 1,
        };
        vote_delta[s][d.kind.index()] += w;
        vote_delta[e + 1][d.kind.index()] -= w;
    }
    let mut conf = Vec::with_capacity(n);
    let mut classes = Vec::with_capacity(n);
    let mut running = 0i64;
    let mut votes = [0i64; 4];
    for t in 0..n {
        running += conf_delta[t];
        for (v, dv) in votes.iter_mut().zip(vote_delta[t]) {
            *v += dv;
        }
        conf.push(running as u32);
        classes.push(if running > 0 { winner(&votes) } else { None });
    }
    (ConfidenceSequence(conf), ClassSequence(classes))
}

/// Highest vote wins; ties go to the type declared first.
fn winner(votes: &[i64; 4]) -> Option<AnomalyType> {
    let mut best: Option<(AnomalyType, i64)> = None;
    for t in AnomalyType::ALL {
        let v = votes[t.index()];
        if v > 0 && best.is_none_or(|(_, bv)| v > bv) {
            best = Some((t, v));
        }
    }
    best.map(|(t, _)| t)
}

/// Builds the pointwise confidence and class sequences for a series.
pub fn accumulate(
    analyses: &[WindowAnalysis],
    series_len: usize,
    weighting: VoteWeighting,
) -> (ConfidenceSequence, ClassSequence) {
    let global = globalize(analyses, series_len);
    accumulate_detections(global.iter().map(|p| &p.detection), series_len, weighting)
}

/// Indices whose accumulated confidence reaches `c0`.
pub fn threshold(conf: &ConfidenceSequence, c0: f64) -> BTreeSet<usize> {
    conf.0
        .iter()
        .enumerate()
        .filter(|(_, &c)| c as f64 >= c0)
        .map(|(t, _)| t)
        .collect()
}

/// Aggregated outcome for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub series: String,
    pub series_len: usize,
    pub threshold: f64,
    pub anomaly_points: BTreeSet<usize>,
    pub confidence: ConfidenceSequence,
    pub classes: ClassSequence,
    pub detections: Vec<ProvenancedDetection>,
}

impl FinalResult {
    pub fn from_analyses(
        series: &str,
        analyses: &[WindowAnalysis],
        series_len: usize,
        c0: f64,
        weighting: VoteWeighting,
    ) -> Self {
        let detections = globalize(analyses, series_len);
        let (confidence, classes) =
            accumulate_detections(detections.iter().map(|p| &p.detection), series_len, weighting);
        let anomaly_points = threshold(&confidence, c0);
        Self {
            series: series.to_string(),
            series_len,
            threshold: c0,
            anomaly_points,
            confidence,
            classes,
            detections,
        }
    }

    /// Anomalous points grouped into maximal runs.
    pub fn anomaly_intervals(&self) -> Vec<AnomalyInterval> {
        let mut flags = vec![false; self.series_len];
        for &t in &self.anomaly_points {
            flags[t] = true;
        }
        crate::types::flags_to_intervals(&flags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Confidence;

    fn det(s: usize, e: usize, c: u8, k: AnomalyType) -> Detection {
        Detection::new(AnomalyInterval::new(s, e).unwrap(), Confidence::new(c).unwrap(), k)
    }

    #[test]
    fn shifts_to_global() {
        let d = det(10, 20, 3, AnomalyType::Trend);
        assert_eq!(to_global(&d, 300, 1200).interval, AnomalyInterval::new(310, 320).unwrap());
        let d = det(590, 599, 3, AnomalyType::Trend);
        assert_eq!(to_global(&d, 600, 1200).interval, AnomalyInterval::new(1190, 1199).unwrap());
    }

    #[test]
    fn clamps_overhang() {
        let d = det(598, 599, 1, AnomalyType::Point);
        let g = to_global(&d, 900, 1000);
        assert_eq!(g.interval, AnomalyInterval::new(999, 999).unwrap());
    }

    #[test]
    fn sums_overlapping_confidences() {
        let ds = [det(100, 100, 3, AnomalyType::Point), det(100, 100, 4, AnomalyType::Point)];
        let (c, y) = accumulate_detections(ds.iter(), 200, VoteWeighting::Confidence);
        assert_eq!(c.values()[100], 7);
        assert_eq!(c.values()[99], 0);
        assert_eq!(y.values()[100], Some(AnomalyType::Point));
    }

    #[test]
    fn confidence_weighted_vote() {
        let ds = [det(5, 5, 4, AnomalyType::Shapelet), det(0, 9, 3, AnomalyType::Trend)];
        let (_, y) = accumulate_detections(ds.iter(), 10, VoteWeighting::Confidence);
        assert_eq!(y.values()[5], Some(AnomalyType::Shapelet));
        assert_eq!(y.values()[4], Some(AnomalyType::Trend));
    }

    #[test]
    fn count_vote_and_tie_break() {
        let ds = [
            det(0, 0, 4, AnomalyType::Trend),
            det(0, 0, 1, AnomalyType::Seasonal),
            det(0, 0, 1, AnomalyType::Seasonal),
        ];
        let (_, y) = accumulate_detections(ds.iter(), 1, VoteWeighting::Count);
        assert_eq!(y.values()[0], Some(AnomalyType::Seasonal));
        // 4 vs 4 under confidence weighting: Point precedes Trend
        let ds = [det(0, 0, 4, AnomalyType::Trend), det(0, 0, 4, AnomalyType::Point)];
        let (_, y) = accumulate_detections(ds.iter(), 1, VoteWeighting::Confidence);
        assert_eq!(y.values()[0], Some(AnomalyType::Point));
    }

    #[test]
    fn empty_accumulation() {
        let (c, y) = accumulate_detections(std::iter::empty(), 5, VoteWeighting::Confidence);
        assert_eq!(c.values(), &[0; 5]);
        assert!(y.values().iter().all(Option::is_none));
    }

    #[test]
    fn thresholds() {
        let c = ConfidenceSequence(vec![0, 3, 7, 0]);
        assert_eq!(threshold(&c, 4.0), BTreeSet::from([2]));
        assert_eq!(threshold(&c, 0.0), BTreeSet::from([0, 1, 2, 3]));
        assert!(threshold(&c, 8.0).is_empty());
    }
}
