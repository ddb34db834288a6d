use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, RequestMeta, Stage};
use crate::respparse::{parse_index_list, serialize_index_list, INDEX_KEY};
use crate::types::{AnomalyInterval, AnomalyType, Confidence, Detection, LabelSeries};

/// Marker opening the text part that carries a prior prediction in
/// reflection requests.
pub const PREDICTION_MARKER: &str = "<Prediction>:";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleFidelity {
    Perfect,
    /// Endpoints move by up to `jitter` samples; each window gains one
    /// spurious low-confidence detection with probability `fp_rate`.
    Noisy { seed: u64, jitter: usize, fp_rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionBehavior {
    /// Return the prior prediction unchanged.
    #[default]
    Echo,
    /// Drop prior detections that touch no true anomaly.
    PruneUnsupported,
    /// Answer as the analyze stage would at Perfect fidelity.
    Truth,
}

/// Typed ground truth for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    intervals: Vec<(AnomalyInterval, AnomalyType)>,
    len: usize,
}

impl GroundTruth {
    /// Runs of equal type become intervals. Labeled points without a type
    /// are treated as point anomalies when isolated and shapelets otherwise.
    pub fn new(labels: &LabelSeries, types: Option<&[Option<AnomalyType>]>) -> crate::Result<Self> {
        if let Some(t) = types {
            if t.len() != labels.len() {
                return Err(crate::Error::InvalidInput(format!(
                    "type map has {} entries, labels have {}",
                    t.len(),
                    labels.len()
                )));
            }
        }
        let mut intervals = Vec::new();
        for iv in labels.to_intervals() {
            let mut run_start = iv.start();
            let kind_at = |t: usize| types.and_then(|ty| ty[t]);
            for t in iv.indices() {
                let last = t == iv.end();
                if last || kind_at(t + 1) != kind_at(t) {
                    let run = AnomalyInterval::spanning(run_start, t);
                    let kind = kind_at(t).unwrap_or(if run.is_point() {
                        AnomalyType::Point
                    } else {
                        AnomalyType::Shapelet
                    });
                    intervals.push((run, kind));
                    run_start = t + 1;
                }
            }
        }
        Ok(Self {
            intervals,
            len: labels.len(),
        })
    }

    pub fn intervals(&self) -> &[(AnomalyInterval, AnomalyType)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Truth restricted to `[start, start + width - 1]`, in local indices.
    pub fn local(&self, start: usize, width: usize) -> Vec<(AnomalyInterval, AnomalyType)> {
        if width == 0 {
            return Vec::new();
        }
        let window = AnomalyInterval::spanning(start, start + width - 1);
        self.intervals
            .iter()
            .filter_map(|(iv, k)| {
                iv.intersect(&window)
                    .map(|x| (AnomalyInterval::spanning(x.start() - start, x.end() - start), *k))
            })
            .collect()
    }
}

/// Offline stand-in for the model that answers from ground truth.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: GroundTruth,
    fidelity: OracleFidelity,
    reflection: ReflectionBehavior,
}

impl OracleBackend {
    pub fn new(truth: GroundTruth, fidelity: OracleFidelity) -> Self {
        Self {
            truth,
            fidelity,
            reflection: ReflectionBehavior::default(),
        }
    }

    pub fn with_reflection(mut self, behavior: ReflectionBehavior) -> Self {
        self.reflection = behavior;
        self
    }
}

impl ChatBackend for OracleBackend {
    fn id(&self) -> &str {
        "oracle"
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        oracle_respond(req, &self.truth, self.fidelity, self.reflection)
    }
}

fn conf(level: u8) -> Confidence {
    Confidence::new(level).expect("oracle confidence levels are in range")
}

fn perfect(truth: &GroundTruth, start: usize, width: usize) -> Vec<Detection> {
    truth
        .local(start, width)
        .into_iter()
        .map(|(iv, k)| Detection::new(iv, conf(4), k))
        .collect()
}

fn noisy(truth: &GroundTruth, start: usize, width: usize, seed: u64, jitter: usize, fp_rate: f64) -> Vec<Detection> {
    // the truth fingerprint keeps series that share window placements from
    // sharing noise draws
    let fingerprint = truth.intervals().iter().fold(truth.len() as u64, |h, (iv, k)| {
        let x = (iv.start() as u64) ^ (iv.end() as u64).rotate_left(24) ^ (k.index() as u64).rotate_left(48);
        (h ^ x).wrapping_mul(0x100_0000_01B3).rotate_left(17)
    });
    let mix = seed
        ^ (start as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (width as u64).rotate_left(32)
        ^ fingerprint.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let last = width as i64 - 1;
    let j = jitter as i64;
    let shift = |x: usize, rng: &mut ChaCha8Rng| (x as i64 + rng.random_range(-j..=j)).clamp(0, last) as usize;
    let mut out: Vec<Detection> = truth
        .local(start, width)
        .into_iter()
        .map(|(iv, k)| {
            let a = shift(iv.start(), &mut rng);
            let b = shift(iv.end(), &mut rng);
            Detection::new(AnomalyInterval::spanning(a, b), conf(4), k)
        })
        .collect();
    if width > 0 && rng.random_bool(fp_rate.clamp(0.0, 1.0)) {
        let len = rng.random_range(1..=10usize.min(width));
        let s = rng.random_range(0..=width - len);
        let kind = AnomalyType::ALL[rng.random_range(0..AnomalyType::ALL.len())];
        let level = rng.random_range(1..=2u8);
        out.push(Detection::new(AnomalyInterval::spanning(s, s + len - 1), conf(level), kind));
    }
    out
}

fn describe(dets: &[Detection]) -> (String, String) {
    if dets.is_empty() {
        return ("No abnormality found in this window.".into(), String::new());
    }
    let desc = dets
        .iter()
        .map(|d| format!("Samples {}..={} deviate from the reference pattern.", d.interval.start(), d.interval.end()))
        .collect::<Vec<_>>()
        .join(" ");
    let types = dets
        .iter()
        .map(|d| format!("{}..={} is a {} anomaly.", d.interval.start(), d.interval.end(), d.kind.as_str()))
        .collect::<Vec<_>>()
        .join(" ");
    (desc, types)
}

fn prior_detections(req: &ChatRequest, width: usize) -> Result<Vec<Detection>, GatewayError> {
    let body = req
        .texts()
        .find_map(|t| t.trim_start().strip_prefix(PREDICTION_MARKER))
        .ok_or_else(|| GatewayError::Oracle("reflection request carries no prior prediction".into()))?;
    let v: serde_json::Value =
        serde_json::from_str(body.trim()).map_err(|e| GatewayError::Oracle(format!("prior prediction: {e}")))?;
    let list = v.get(INDEX_KEY).and_then(|x| x.as_str()).unwrap_or("[]");
    Ok(parse_index_list(list, width).detections)
}

/// Synthesizes a schema-conformant answer from ground truth.
pub fn oracle_respond(
    req: &ChatRequest,
    truth: &GroundTruth,
    fidelity: OracleFidelity,
    reflection: ReflectionBehavior,
) -> Result<ChatResponse, GatewayError> {
    let meta = req
        .metadata()
        .ok_or_else(|| GatewayError::Oracle("request carries no placement metadata".into()))?;
    let doc = match meta.stage {
        Stage::Reference => json!({
            "normal_pattern": format!(
                "The reference slices show a stable periodic signal with no level shift. \
                 {} images were provided.",
                req.image_count()
            )
        }),
        Stage::Analyze | Stage::Reflect => {
            let (start, width) = placement(&meta)?;
            let dets = match (meta.stage, reflection) {
                (Stage::Analyze | Stage::Reference, _) | (Stage::Reflect, ReflectionBehavior::Truth) => match fidelity {
                    OracleFidelity::Perfect => perfect(truth, start, width),
                    OracleFidelity::Noisy { seed, jitter, fp_rate } => {
                        noisy(truth, start, width, seed, jitter, fp_rate)
                    }
                },
                (_, ReflectionBehavior::Echo) => prior_detections(req, width)?,
                (_, ReflectionBehavior::PruneUnsupported) => {
                    let local = truth.local(start, width);
                    prior_detections(req, width)?
                        .into_iter()
                        .filter(|d| local.iter().any(|(iv, _)| iv.overlap(&d.interval) > 0))
                        .collect()
                }
            };
            let index = serialize_index_list(&dets);
            let (desc, type_desc) = describe(&dets);
            if meta.stage == Stage::Analyze {
                json!({
                    "abnormal_index": index,
                    "abnormal_description": desc,
                    "abnormal_type_description": type_desc,
                })
            } else {
                json!({
                    "corrected_abnormal_index": index,
                    "abnormal_description": desc,
                    "abnormal_type_description": type_desc,
                })
            }
        }
    };
    Ok(ChatResponse {
        text: doc.to_string(),
        usage: None,
        backend_id: "oracle".into(),
    })
}

fn placement(meta: &RequestMeta) -> Result<(usize, usize), GatewayError> {
    match (meta.window_start, meta.window_width) {
        (Some(s), Some(w)) => Ok((s, w)),
        _ => Err(GatewayError::Oracle("request metadata lacks window start/width".into())),
    }
}
