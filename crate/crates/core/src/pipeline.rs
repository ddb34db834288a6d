//! The three model-facing stages over one series: reference learning,
//! per-window analysis and zoomed self-reflection.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::aggregate::VoteWeighting;
use crate::error::{Error, Result};
use crate::gateway::{ChatParams, Gateway, GatewayError, MessagePart, RequestMeta, Stage, PREDICTION_MARKER};
use crate::plotrender::{self, PlotConfig, RenderedImage};
use crate::preprocess::{normalize, windows_for_plan, Window, WindowPlan};
use crate::respparse::{
    parse_analysis, parse_reference_summary, serialize_index_list, Diagnostic, INDEX_KEY,
};
use crate::types::{Detection, TimeSeries};

pub const ZRAW_SCHEMA: &str = "tama.zraw/v1";
pub const SUMMARY_PLACEHOLDER: &str = "{{normal_pattern}}";
/// Summary used when reference learning is skipped.
pub const NO_REFERENCE_SUMMARY: &str = "No normal reference slices were provided.";

const BUILTIN_REFERENCE: &str = include_str!("../assets/prompts/reference.txt");
const BUILTIN_ANALYZE: &str = include_str!("../assets/prompts/analyze.txt");
const BUILTIN_REFLECT: &str = include_str!("../assets/prompts/reflect.txt");

/// Prompt texts for the three stages. The analyze and reflect templates
/// receive the learned summary in place of `{{normal_pattern}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub reference: String,
    pub analyze: String,
    pub reflect: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            reference: BUILTIN_REFERENCE.to_string(),
            analyze: BUILTIN_ANALYZE.to_string(),
            reflect: BUILTIN_REFLECT.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Built-in templates, with any of `reference.txt`, `analyze.txt` or
    /// `reflect.txt` found in `dir` taking their place.
    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("reference.txt", &mut t.reference),
            ("analyze.txt", &mut t.analyze),
            ("reflect.txt", &mut t.reflect),
        ] {
            let p = dir.join(name);
            if p.exists() {
                *slot = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(t)
    }

    /// Hex SHA-256 over all three templates.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.reference, &self.analyze, &self.reflect] {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn fill(template: &str, summary: &ReferenceSummary) -> String {
        template.replace(SUMMARY_PLACEHOLDER, &summary.normal_pattern)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "paths", rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Windows sampled from the anomaly-free prefix `[0, train_split)`.
    #[default]
    TrainSplit,
    /// Pre-rendered PNG files.
    Images(Vec<PathBuf>),
    /// Skip reference learning.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Number of reference images.
    pub n_r: usize,
    /// Window width; derived from the period when unset.
    pub window: Option<usize>,
    /// Window stride; half the width when unset.
    pub stride: Option<usize>,
    /// Period used to size windows when `window` is unset and the series
    /// carries no hint.
    pub period: Option<usize>,
    pub reflection_enabled: bool,
    /// Margin added on each side of a zoomed region, as a fraction of its length.
    pub zoom_margin_frac: f64,
    pub plot: PlotConfig,
    pub reference_source: ReferenceSource,
    /// Length of the anomaly-free prefix, set per series.
    pub train_split: Option<usize>,
    pub seed: u64,
    pub reflection_resend_reference_images: bool,
    pub vote_weighting: VoteWeighting,
    #[serde(skip)]
    pub templates: PromptTemplates,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_r: 3,
            window: None,
            stride: None,
            period: None,
            reflection_enabled: true,
            zoom_margin_frac: 0.25,
            plot: PlotConfig::default(),
            reference_source: ReferenceSource::TrainSplit,
            train_split: None,
            seed: 0,
            reflection_resend_reference_images: false,
            vote_weighting: VoteWeighting::default(),
            templates: PromptTemplates::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.plot.validate()?;
        if !(self.zoom_margin_frac >= 0.0 && self.zoom_margin_frac.is_finite()) {
            return Err(Error::Config(format!("invalid zoom margin {}", self.zoom_margin_frac)));
        }
        if let (Some(w), Some(s)) = (self.window, self.stride) {
            if s == 0 || s >= w {
                return Err(Error::Config(format!("stride {s} must be in 1..{w}")));
            }
        }
        if self.window == Some(0) || self.period == Some(0) {
            return Err(Error::Config("window and period must be positive".into()));
        }
        Ok(())
    }

    /// Window plan for a series of length `len` whose period hint is `hint`.
    pub fn plan(&self, len: usize, hint: Option<usize>) -> Result<WindowPlan> {
        match self.window {
            Some(w) => {
                let s = self.stride.unwrap_or((w / 2).max(1));
                WindowPlan::new(len, w, s)
            }
            None => {
                let period = self.period.or(hint).ok_or_else(|| {
                    Error::Config("set a window width or a period (none given and the series has no hint)".into())
                })?;
                let plan = WindowPlan::for_period(len, period)?;
                match self.stride {
                    Some(s) => WindowPlan::new(len, plan.width, s),
                    None => Ok(plan),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub normal_pattern: String,
    pub source_image_ids: Vec<String>,
}

impl ReferenceSummary {
    pub fn sentinel() -> Self {
        Self {
            normal_pattern: NO_REFERENCE_SUMMARY.to_string(),
            source_image_ids: Vec::new(),
        }
    }
}

/// The reflection pass applied to a window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    /// Detections before reflection.
    pub prior: Vec<Detection>,
    pub raw_response: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    /// Set when reflection failed and the prior was kept.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowAnalysis {
    pub window_index: usize,
    pub window_start: usize,
    pub window_width: usize,
    /// Local indices in `[0, window_width - 1]`.
    pub detections: Vec<Detection>,
    pub abnormal_description: String,
    pub abnormal_type_description: String,
    pub raw_response: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub reflection: Option<ReflectionRecord>,
    /// Set when the window could not be analyzed; detections are then empty.
    pub failure: Option<String>,
}

impl WindowAnalysis {
    fn failed(w: &Window, raw: Option<String>, reason: String) -> Self {
        Self {
            window_index: w.index,
            window_start: w.start,
            window_width: w.width(),
            detections: Vec::new(),
            abnormal_description: String::new(),
            abnormal_type_description: String::new(),
            raw_response: raw,
            diagnostics: Vec::new(),
            reflection: None,
            failure: Some(reason),
        }
    }
}

/// Everything a run produced for one series, minus images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZRaw {
    pub schema: String,
    pub series: String,
    pub series_len: usize,
    pub plan: WindowPlan,
    pub config: PipelineConfig,
    pub chat: ChatParams,
    pub prompt_digest: String,
    pub summary: ReferenceSummary,
    pub analyses: Vec<WindowAnalysis>,
}

impl ZRaw {
    pub fn failed_windows(&self) -> usize {
        self.analyses.iter().filter(|a| a.failure.is_some()).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowImages {
    pub window: Vec<u8>,
    pub zooms: Vec<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub zraw: ZRaw,
    pub reference_images: Vec<(String, Vec<u8>)>,
    pub window_images: Vec<WindowImages>,
}

fn gateway_err(e: GatewayError) -> Error {
    Error::Gateway(e)
}

/// Sends the reference prompt with every image and extracts the summary.
pub fn learn_references(
    images: &[(String, Vec<u8>)],
    templates: &PromptTemplates,
    gateway: &Gateway,
) -> Result<ReferenceSummary> {
    if images.is_empty() {
        return Ok(ReferenceSummary::sentinel());
    }
    let mut parts = vec![MessagePart::Text(templates.reference.clone())];
    parts.extend(images.iter().map(|(_, png)| MessagePart::Image(png.clone())));
    parts.push(MessagePart::Text(RequestMeta::reference().to_text()));
    let resp = gateway.complete(&gateway.request(parts)).map_err(gateway_err)?;
    Ok(ReferenceSummary {
        normal_pattern: parse_reference_summary(&resp.text)?,
        source_image_ids: images.iter().map(|(id, _)| id.clone()).collect(),
    })
}

/// Runs the analyze prompt on one rendered window. Only fatal gateway
/// errors are returned; anything else yields a failed analysis.
pub fn analyze_window(
    w: &Window,
    image: &RenderedImage,
    summary: &ReferenceSummary,
    templates: &PromptTemplates,
    gateway: &Gateway,
) -> std::result::Result<WindowAnalysis, GatewayError> {
    let parts = vec![
        MessagePart::Text(PromptTemplates::fill(&templates.analyze, summary)),
        MessagePart::Image(image.png.clone()),
        MessagePart::Text(RequestMeta::window(Stage::Analyze, w.index, w.start, w.width()).to_text()),
    ];
    let resp = match gateway.complete(&gateway.request(parts)) {
        Ok(r) => r,
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => {
            tracing::warn!(window = w.index, "analysis failed: {e}");
            return Ok(WindowAnalysis::failed(w, None, e.to_string()));
        }
    };
    match parse_analysis(&resp.text, w.width()) {
        Ok(p) => Ok(WindowAnalysis {
            window_index: w.index,
            window_start: w.start,
            window_width: w.width(),
            detections: p.detections,
            abnormal_description: p.abnormal_description,
            abnormal_type_description: p.abnormal_type_description,
            raw_response: Some(resp.text),
            diagnostics: p.diagnostics,
            reflection: None,
            failure: None,
        }),
        Err(e) => {
            tracing::warn!(window = w.index, "unparseable analysis: {e}");
            Ok(WindowAnalysis::failed(w, Some(resp.text), e.to_string()))
        }
    }
}

/// Zoomed plots of each prior detection, with window-local x labels.
pub fn render_zooms(w: &Window, prior: &WindowAnalysis, margin_frac: f64, cfg: &PlotConfig) -> Result<Vec<RenderedImage>> {
    prior
        .detections
        .iter()
        .map(|d| {
            let (lo, hi) = plotrender::zoom_domain(w.width(), d.interval, margin_frac)?;
            plotrender::render_values(&w.values[lo..=hi], lo, cfg)
        })
        .collect()
}

/// Re-checks a window's detections on zoomed plots. The prior is kept
/// whenever reflection fails for a non-fatal reason.
#[allow(clippy::too_many_arguments)]
pub fn reflect(
    w: &Window,
    prior: WindowAnalysis,
    window_image: &RenderedImage,
    zooms: &[RenderedImage],
    summary: &ReferenceSummary,
    reference_images: &[(String, Vec<u8>)],
    cfg: &PipelineConfig,
    gateway: &Gateway,
) -> std::result::Result<WindowAnalysis, GatewayError> {
    let mut parts = vec![MessagePart::Text(PromptTemplates::fill(&cfg.templates.reflect, summary))];
    if cfg.reflection_resend_reference_images {
        parts.extend(reference_images.iter().map(|(_, png)| MessagePart::Image(png.clone())));
    }
    parts.push(MessagePart::Image(window_image.png.clone()));
    parts.extend(zooms.iter().map(|z| MessagePart::Image(z.png.clone())));
    let prediction = json!({
        INDEX_KEY: serialize_index_list(&prior.detections),
        "abnormal_description": prior.abnormal_description,
    });
    parts.push(MessagePart::Text(format!("{PREDICTION_MARKER}\n{prediction}")));
    parts.push(MessagePart::Text(
        RequestMeta::window(Stage::Reflect, w.index, w.start, w.width()).to_text(),
    ));

    let keep = |mut prior: WindowAnalysis, raw: Option<String>, reason: String| {
        tracing::warn!(window = w.index, "reflection failed, keeping prior: {reason}");
        prior.reflection = Some(ReflectionRecord {
            prior: prior.detections.clone(),
            raw_response: raw,
            diagnostics: Vec::new(),
            failure: Some(reason),
        });
        prior
    };
    let resp = match gateway.complete(&gateway.request(parts)) {
        Ok(r) => r,
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => return Ok(keep(prior, None, e.to_string())),
    };
    match parse_analysis(&resp.text, w.width()) {
        Ok(p) => {
            let record = ReflectionRecord {
                prior: prior.detections.clone(),
                raw_response: Some(resp.text),
                diagnostics: p.diagnostics,
                failure: None,
            };
            Ok(WindowAnalysis {
                detections: p.detections,
                abnormal_description: if p.abnormal_description.is_empty() {
                    prior.abnormal_description.clone()
                } else {
                    p.abnormal_description
                },
                abnormal_type_description: if p.abnormal_type_description.is_empty() {
                    prior.abnormal_type_description.clone()
                } else {
                    p.abnormal_type_description
                },
                reflection: Some(record),
                ..prior
            })
        }
        Err(e) => Ok(keep(prior, Some(resp.text), e.to_string())),
    }
}

/// Start indices of reference windows: `n` distinct starts drawn without
/// replacement from `[0, split - width]`, sorted.
pub fn sample_reference_starts(split: usize, width: usize, n: usize, seed: u64) -> Vec<usize> {
    if width == 0 || split < width || n == 0 {
        return Vec::new();
    }
    let eligible = split - width + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = sample(&mut rng, eligible, n.min(eligible)).into_vec();
    starts.sort_unstable();
    starts
}

fn reference_images(normalized: &TimeSeries, plan: &WindowPlan, cfg: &PipelineConfig) -> Result<Vec<(String, Vec<u8>)>> {
    if cfg.n_r == 0 {
        return Ok(Vec::new());
    }
    match &cfg.reference_source {
        ReferenceSource::None => Ok(Vec::new()),
        ReferenceSource::Images(paths) => paths
            .iter()
            .take(cfg.n_r)
            .map(|p| {
                let png = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                let (w, h, _) = plotrender::decode_png(&png)?;
                if w > plotrender::MAX_WIDTH_PX || h > plotrender::MAX_HEIGHT_PX {
                    return Err(Error::Config(format!("reference image {} is {w}x{h}, above the cap", p.display())));
                }
                let id = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((id, png))
            })
            .collect(),
        ReferenceSource::TrainSplit => {
            let split = cfg.train_split.unwrap_or(0).min(normalized.len());
            let starts = sample_reference_starts(split, plan.width, cfg.n_r, cfg.seed);
            if starts.is_empty() {
                tracing::warn!(
                    series = normalized.name(),
                    split,
                    width = plan.width,
                    "no anomaly-free prefix long enough for a reference window; skipping reference learning"
                );
            }
            starts
                .into_iter()
                .map(|s| {
                    let img = plotrender::render_values(&normalized.values()[s..s + plan.width], 0, &cfg.plot)?;
                    Ok((format!("train@{s}"), img.png))
                })
                .collect()
        }
    }
}

/// Runs all stages on `series`. Analyses come back ordered by window
/// index; only failures that would repeat for every window abort the run.
pub fn run(series: &TimeSeries, cfg: &PipelineConfig, gateway: &Gateway) -> Result<RunOutput> {
    cfg.validate()?;
    let normalized = normalize(series);
    let plan = cfg.plan(series.len(), series.period_hint())?;

    let refs = reference_images(&normalized, &plan, cfg)?;
    let summary = learn_references(&refs, &cfg.templates, gateway)?;

    let windows = windows_for_plan(&normalized, &plan);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(gateway.max_in_flight())
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(WindowAnalysis, WindowImages)> = pool.install(|| {
        windows
            .par_iter()
            .map(|w| process_window(w, &summary, &refs, cfg, gateway))
            .collect::<Result<Vec<_>>>()
    })?;

    let (analyses, window_images): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(RunOutput {
        zraw: ZRaw {
            schema: ZRAW_SCHEMA.to_string(),
            series: series.name().to_string(),
            series_len: series.len(),
            plan,
            config: cfg.clone(),
            chat: gateway.params().clone(),
            prompt_digest: cfg.templates.digest(),
            summary,
            analyses,
        },
        reference_images: refs,
        window_images,
    })
}

fn process_window(
    w: &Window,
    summary: &ReferenceSummary,
    refs: &[(String, Vec<u8>)],
    cfg: &PipelineConfig,
    gateway: &Gateway,
) -> Result<(WindowAnalysis, WindowImages)> {
    let image = plotrender::render_window(w, &cfg.plot)?;
    let analysis = analyze_window(w, &image, summary, &cfg.templates, gateway).map_err(gateway_err)?;
    let mut images = WindowImages {
        window: image.png.clone(),
        zooms: Vec::new(),
    };
    if !cfg.reflection_enabled || analysis.detections.is_empty() || analysis.failure.is_some() {
        return Ok((analysis, images));
    }
    let zooms = render_zooms(w, &analysis, cfg.zoom_margin_frac, &cfg.plot)?;
    let reflected = reflect(w, analysis, &image, &zooms, summary, refs, cfg, gateway).map_err(gateway_err)?;
    images.zooms = zooms.into_iter().map(|z| z.png).collect();
    Ok((reflected, images))
}
