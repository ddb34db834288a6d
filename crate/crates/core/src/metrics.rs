//! Point-adjusted evaluation.
//!
//! Point adjustment with threshold `alpha` (PAT) marks a whole true interval
//! as detected once the predicted points inside it number strictly more
//! than `alpha * len`. `alpha = 0` is classic point adjustment (any hit
//! counts); `alpha = 1` leaves the prediction untouched.
//!
//! F1 is the harmonic mean `2PR / (P + R)`. Conventions for empty sets:
//! precision is 1 when nothing is predicted, recall is 1 when nothing is
//! anomalous, and F1 is 0 when `P + R = 0`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregate::ClassSequence;
use crate::error::{Error, Result};
use crate::types::{flags_to_intervals, AnomalyInterval, AnomalyType};

/// How predictions are treated before counting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "alpha")]
pub enum PaMode {
    Raw,
    Adjusted(f64),
}

impl PaMode {
    fn alpha(self) -> Option<f64> {
        match self {
            PaMode::Raw => None,
            PaMode::Adjusted(a) => Some(a),
        }
    }
}

/// Default PAT grid `{0, 0.1, ..., 1.0}`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha {alpha} outside [0, 1]")))
    }
}

/// Whether `hits` predicted points inside an interval of `len` points
/// trigger adjustment of the whole interval.
fn adjusts(hits: usize, len: usize, alpha: f64) -> bool {
    hits as f64 > alpha * len as f64
}

/// Expands `pred` with every true interval it overlaps by more than
/// `alpha` of that interval's length.
pub fn point_adjust(
    truth: &[AnomalyInterval],
    pred: &BTreeSet<usize>,
    alpha: f64,
) -> Result<BTreeSet<usize>> {
    check_alpha(alpha)?;
    let mut out = pred.clone();
    for iv in truth {
        let hits = pred.range(iv.start()..=iv.end()).count();
        if adjusts(hits, iv.len(), alpha) {
            out.extend(iv.indices());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        Prf {
            precision,
            recall,
            f1: harmonic_f1(precision, recall),
        }
    }
}

pub fn harmonic_f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn rasterize(truth: &[AnomalyInterval], len: usize) -> Vec<bool> {
    let mut flags = vec![false; len];
    for iv in truth {
        let end = iv.end().min(len.saturating_sub(1));
        if iv.start() < len {
            flags[iv.start()..=end].fill(true);
        }
    }
    flags
}

/// Per-point precision, recall and F1 of `pred` against the true intervals.
pub fn prf(truth: &[AnomalyInterval], pred: &BTreeSet<usize>, series_len: usize) -> Prf {
    let truth_flags = rasterize(truth, series_len);
    let positives = truth_flags.iter().filter(|&&f| f).count();
    let tp = pred.iter().filter(|&&t| t < series_len && truth_flags[t]).count();
    let fp = pred.len() - tp;
    Prf::from_counts(tp, fp, positives - tp)
}

/// Confusion counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
}

/// Sweeps every distinct score as a threshold (highest first), returning
/// counts for the empty prediction followed by one entry per threshold.
fn sweep_counts(scores: &[f64], truth: &[AnomalyInterval], mode: PaMode) -> (Vec<Counts>, usize) {
    let n = scores.len();
    // merge overlapping truth so each point belongs to at most one interval
    let truth_flags = rasterize(truth, n);
    let merged = flags_to_intervals(&truth_flags);
    let mut owner = vec![usize::MAX; n];
    for (i, iv) in merged.iter().enumerate() {
        owner[iv.start()..=iv.end()].fill(i);
    }
    let positives = truth_flags.iter().filter(|&&f| f).count();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut hits = vec![0usize; merged.len()];
    let mut adjusted = vec![false; merged.len()];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut out = vec![Counts { tp: 0, fp: 0 }];
    let mut i = 0;
    while i < n {
        let v = scores[order[i]];
        while i < n && scores[order[i]] == v {
            let t = order[i];
            match owner[t] {
                usize::MAX => fp += 1,
                k => {
                    hits[k] += 1;
                    if !adjusted[k] {
                        tp += 1;
                        if let Some(alpha) = mode.alpha() {
                            if adjusts(hits[k], merged[k].len(), alpha) {
                                adjusted[k] = true;
                                tp += merged[k].len() - hits[k];
                            }
                        }
                    }
                }
            }
            i += 1;
        }
        out.push(Counts { tp, fp });
    }
    (out, positives)
}

fn trapezoid(points: &mut [(f64, f64)]) -> f64 {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Area under the precision-recall curve, integrated trapezoidally from
/// the `(recall 0, precision 1)` anchor. Returns 0 when nothing is anomalous.
pub fn auc_pr(scores: &[f64], truth: &[AnomalyInterval], mode: PaMode) -> Result<f64> {
    if let Some(a) = mode.alpha() {
        check_alpha(a)?;
    }
    let (counts, positives) = sweep_counts(scores, truth, mode);
    if positives == 0 {
        return Ok(0.0);
    }
    let mut points: Vec<(f64, f64)> = counts
        .iter()
        .map(|c| {
            let p = Prf::from_counts(c.tp, c.fp, positives - c.tp);
            (p.recall, p.precision)
        })
        .collect();
    Ok(trapezoid(&mut points))
}

/// Area under the ROC curve. Returns 0.5 when either class is absent.
pub fn auc_roc(scores: &[f64], truth: &[AnomalyInterval], mode: PaMode) -> Result<f64> {
    if let Some(a) = mode.alpha() {
        check_alpha(a)?;
    }
    let (counts, positives) = sweep_counts(scores, truth, mode);
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Ok(0.5);
    }
    let mut points: Vec<(f64, f64)> = counts
        .iter()
        .map(|c| (c.fp as f64 / negatives as f64, c.tp as f64 / positives as f64))
        .collect();
    Ok(trapezoid(&mut points))
}

/// Unadjusted F1 per anomaly type. Types absent from both truth and
/// prediction are omitted.
pub fn per_type_f1(
    type_truth: &[Option<AnomalyType>],
    final_points: &BTreeSet<usize>,
    classes: &ClassSequence,
) -> BTreeMap<AnomalyType, f64> {
    let mut out = BTreeMap::new();
    for kind in AnomalyType::ALL {
        let truth: BTreeSet<usize> = type_truth
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Some(kind))
            .map(|(i, _)| i)
            .collect();
        let pred: BTreeSet<usize> = final_points
            .iter()
            .copied()
            .filter(|&t| classes.values().get(t).copied().flatten() == Some(kind))
            .collect();
        if truth.is_empty() && pred.is_empty() {
            continue;
        }
        let tp = pred.intersection(&truth).count();
        let p = Prf::from_counts(tp, pred.len() - tp, truth.len() - tp);
        out.insert(kind, p.f1);
    }
    out
}

/// One row of a PAT sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatPoint {
    pub alpha: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_pr: f64,
    pub auc_roc: f64,
}

/// F1 at the threshold `c0` and the AUCs, each under PAT `alpha`, for every
/// alpha in the grid.
pub fn pat_sweep(
    scores: &[f64],
    truth: &[AnomalyInterval],
    alphas: &[f64],
    c0: f64,
) -> Result<Vec<PatPoint>> {
    let pred: BTreeSet<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= c0)
        .map(|(t, _)| t)
        .collect();
    alphas
        .iter()
        .map(|&alpha| {
            let adjusted = point_adjust(truth, &pred, alpha)?;
            let p = prf(truth, &adjusted, scores.len());
            Ok(PatPoint {
                alpha,
                precision: p.precision,
                recall: p.recall,
                f1: p.f1,
                auc_pr: auc_pr(scores, truth, PaMode::Adjusted(alpha))?,
                auc_roc: auc_roc(scores, truth, PaMode::Adjusted(alpha))?,
            })
        })
        .collect()
}

/// Everything needed to score one series.
#[derive(Debug, Clone)]
pub struct EvalInput<'a> {
    pub truth: &'a [AnomalyInterval],
    pub scores: &'a [f64],
    pub threshold: f64,
    pub type_truth: Option<&'a [Option<AnomalyType>]>,
    pub classes: Option<&'a ClassSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub series: String,
    pub series_len: usize,
    /// PAT used for the headline precision/recall/F1.
    pub alpha: f64,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Unadjusted F1 at the same threshold.
    pub f1_raw: f64,
    /// AUCs with the same PAT applied at every threshold.
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub auc_pr_raw: f64,
    pub auc_roc_raw: f64,
    pub per_type_f1: BTreeMap<AnomalyType, f64>,
    pub pat_curve: Vec<PatPoint>,
}

pub fn evaluate(series: &str, input: &EvalInput<'_>, alpha: f64, alphas: &[f64]) -> Result<EvalReport> {
    check_alpha(alpha)?;
    for &a in alphas {
        check_alpha(a)?;
    }
    let n = input.scores.len();
    if let Some(iv) = input.truth.iter().find(|iv| iv.end() >= n) {
        return Err(Error::InvalidInput(format!(
            "truth interval {iv} exceeds series length {n}"
        )));
    }
    let pred: BTreeSet<usize> = input
        .scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= input.threshold)
        .map(|(t, _)| t)
        .collect();
    let headline = prf(input.truth, &point_adjust(input.truth, &pred, alpha)?, n);
    let raw = prf(input.truth, &pred, n);
    let per_type = match (input.type_truth, input.classes) {
        (Some(tt), Some(cls)) => per_type_f1(tt, &pred, cls),
        _ => BTreeMap::new(),
    };
    Ok(EvalReport {
        series: series.to_string(),
        series_len: n,
        alpha,
        threshold: input.threshold,
        precision: headline.precision,
        recall: headline.recall,
        f1: headline.f1,
        f1_raw: raw.f1,
        auc_pr: auc_pr(input.scores, input.truth, PaMode::Adjusted(alpha))?,
        auc_roc: auc_roc(input.scores, input.truth, PaMode::Adjusted(alpha))?,
        auc_pr_raw: auc_pr(input.scores, input.truth, PaMode::Raw)?,
        auc_roc_raw: auc_roc(input.scores, input.truth, PaMode::Raw)?,
        per_type_f1: per_type,
        pat_curve: pat_sweep(input.scores, input.truth, alphas, input.threshold)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: usize, e: usize) -> AnomalyInterval {
        AnomalyInterval::new(s, e).unwrap()
    }

    fn set(it: impl IntoIterator<Item = usize>) -> BTreeSet<usize> {
        it.into_iter().collect()
    }

    #[test]
    fn full_adjustment_from_one_hit() {
        let out = point_adjust(&[iv(10, 20)], &set([15]), 0.0).unwrap();
        assert_eq!(out, set(10..=20));
    }

    #[test]
    fn pat_threshold_is_strict() {
        // overlap 3 against 0.25 * 10 = 2.5 and 0.5 * 10 = 5
        let truth = [iv(0, 9)];
        let pred = set([0, 1, 2]);
        assert_eq!(point_adjust(&truth, &pred, 0.25).unwrap(), set(0..=9));
        assert_eq!(point_adjust(&truth, &pred, 0.5).unwrap(), pred);
        // 3 > 0.3 * 10 is false
        assert_eq!(point_adjust(&truth, &pred, 0.3).unwrap(), pred);
    }

    #[test]
    fn empty_prediction_stays_empty() {
        for a in default_alpha_grid() {
            assert!(point_adjust(&[iv(3, 8)], &BTreeSet::new(), a).unwrap().is_empty());
        }
    }

    #[test]
    fn alpha_one_is_identity_and_range_checked() {
        let pred = set([3, 4, 5, 6, 7, 8]);
        assert_eq!(point_adjust(&[iv(3, 8)], &pred, 1.0).unwrap(), pred);
        assert!(point_adjust(&[iv(3, 8)], &pred, 1.5).is_err());
        assert!(point_adjust(&[iv(3, 8)], &pred, -0.1).is_err());
    }

    #[test]
    fn prf_cases() {
        let truth = [iv(10, 20)];
        let p = prf(&truth, &set(10..=20), 100);
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));

        let p = prf(&truth, &set(std::iter::once(5).chain(10..=20)), 100);
        assert_eq!(p.precision, 11.0 / 12.0);
        assert_eq!(p.recall, 1.0);
        assert!((p.f1 - 22.0 / 23.0).abs() < 1e-15);

        let p = prf(&truth, &BTreeSet::new(), 100);
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn auc_perfect_and_reversed() {
        let scores = [0.9, 0.1];
        assert_eq!(auc_roc(&scores, &[iv(0, 0)], PaMode::Raw).unwrap(), 1.0);
        assert_eq!(auc_pr(&scores, &[iv(0, 0)], PaMode::Raw).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.1, 0.9], &[iv(0, 0)], PaMode::Raw).unwrap(), 0.0);
    }

    #[test]
    fn auc_roc_pairwise_case() {
        // positives at 0 and 2 with scores 3 and 1; negatives score 2 and 0:
        // pairs (3>2, 3>0, 1<2, 1>0) give 3 of 4
        let scores = [3.0, 2.0, 1.0, 0.0];
        let truth = [iv(0, 0), iv(2, 2)];
        assert!((auc_roc(&scores, &truth, PaMode::Raw).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_pr_hand_case() {
        // curve: (0,1) (0.5,1) (0.5,0.5) (1,2/3) (1,0.5)
        // area = 0.5 * 1 + 0.5 * (0.5 + 2/3) / 2
        let scores = [3.0, 2.0, 1.0, 0.0];
        let truth = [iv(0, 0), iv(2, 2)];
        let expected = 0.5 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((auc_pr(&scores, &truth, PaMode::Raw).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_prevalence() {
        let scores = [0.0; 10];
        let truth = [iv(2, 4)];
        // single operating point (recall 1, precision 0.3) after the anchor
        let area = auc_pr(&scores, &truth, PaMode::Raw).unwrap();
        assert!((area - (1.0 + 0.3) / 2.0).abs() < 1e-12);
        assert_eq!(auc_roc(&scores, &truth, PaMode::Raw).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_classes() {
        assert_eq!(auc_pr(&[1.0, 2.0], &[], PaMode::Raw).unwrap(), 0.0);
        assert_eq!(auc_roc(&[1.0, 2.0], &[], PaMode::Raw).unwrap(), 0.5);
        assert_eq!(auc_roc(&[1.0, 2.0], &[iv(0, 1)], PaMode::Raw).unwrap(), 0.5);
    }

    #[test]
    fn per_type_cases() {
        use AnomalyType::*;
        let types = vec![None, Some(Shapelet), Some(Shapelet), None, Some(Trend)];
        let cls = ClassSequence(types.clone());
        let pred = set([1, 2, 4]);
        let f = per_type_f1(&types, &pred, &cls);
        assert_eq!(f, BTreeMap::from([(Shapelet, 1.0), (Trend, 1.0)]));

        let wrong = ClassSequence(vec![None, Some(Trend), Some(Trend), None, Some(Trend)]);
        let f = per_type_f1(&types, &pred, &wrong);
        assert_eq!(f[&Shapelet], 0.0);
        assert!(!f.contains_key(&Point));
    }

    #[test]
    fn pat_endpoints() {
        let scores = [0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let truth = [iv(1, 4)];
        let curve = pat_sweep(&scores, &truth, &[0.0, 1.0], 1.0).unwrap();
        assert_eq!(curve[0].f1, 1.0);
        let raw = prf(&truth, &set([2]), scores.len());
        assert_eq!(curve[1].f1, raw.f1);
        assert_eq!(curve[1].auc_pr, auc_pr(&scores, &truth, PaMode::Raw).unwrap());
    }
}
