use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tama_core::aggregate::FinalResult;
use tama_core::gateway::{
    CacheMode, CachedBackend, ChatBackend, Gateway, GroundTruth, HttpBackend, OracleBackend, ResponseCache,
};
use tama_core::ingest::{DatasetManifest, LoadedEntry, ManifestEntry};
use tama_core::pipeline::{self, PromptTemplates, RunOutput};

use crate::config::{BackendKind, RunConfig, CONFIG_SNAPSHOT};
use crate::{eval, is_config_error, series_dirs, write_file, write_json, CliError};

pub const RUN_SCHEMA: &str = "tama.run/v1";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ZRAW_FILE: &str = "zraw.json";
pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesOutcome {
    pub name: String,
    pub dir: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub windows: usize,
    pub failed_windows: usize,
    pub anomaly_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub series: Vec<SeriesOutcome>,
}

impl RunSummary {
    pub fn failed(&self) -> usize {
        self.series.iter().filter(|s| !s.ok).count()
    }
}

/// Produces the gateway used for one series.
enum Backends {
    Shared(Gateway),
    Oracle {
        cache: Option<Arc<ResponseCache>>,
        mode: CacheMode,
    },
}

fn cache_for(cfg: &RunConfig, out: &Path) -> Result<Arc<ResponseCache>, CliError> {
    let dir = cfg.resolved_cache_dir(out);
    ResponseCache::open(&dir)
        .map(Arc::new)
        .map_err(|e| CliError::Config(format!("cache {}: {e}", dir.display())))
}

impl Backends {
    fn build(cfg: &RunConfig, out: &Path) -> Result<Self, CliError> {
        let g = &cfg.gateway;
        let gateway = |b: Arc<dyn ChatBackend>| Gateway::new(b, g.chat.clone(), g.max_in_flight);
        Ok(match g.backend {
            BackendKind::Http => {
                let live: Arc<dyn ChatBackend> =
                    Arc::new(HttpBackend::from_env(g.http.clone()).map_err(|e| CliError::Config(e.to_string()))?);
                let backend: Arc<dyn ChatBackend> = match g.cache_mode {
                    CacheMode::Off => live,
                    mode => Arc::new(CachedBackend::new(Some(live), cache_for(cfg, out)?, mode)?),
                };
                Backends::Shared(gateway(backend))
            }
            BackendKind::Replay => Backends::Shared(gateway(Arc::new(CachedBackend::new(
                None,
                cache_for(cfg, out)?,
                CacheMode::Strict,
            )?))),
            BackendKind::Oracle => Backends::Oracle {
                cache: match g.cache_mode {
                    CacheMode::Off => None,
                    _ => Some(cache_for(cfg, out)?),
                },
                mode: g.cache_mode,
            },
        })
    }

    fn for_series(&self, cfg: &RunConfig, loaded: &LoadedEntry) -> Result<Gateway, tama_core::Error> {
        match self {
            Backends::Shared(g) => Ok(g.clone()),
            Backends::Oracle { cache, mode } => {
                let labels = loaded.labels.as_ref().ok_or_else(|| {
                    tama_core::Error::InvalidInput(format!(
                        "series `{}` has no labels for the oracle backend",
                        loaded.entry.name
                    ))
                })?;
                let truth = GroundTruth::new(labels, loaded.types.as_deref())?;
                let oracle: Arc<dyn ChatBackend> = Arc::new(
                    OracleBackend::new(truth, cfg.gateway.oracle.fidelity)
                        .with_reflection(cfg.gateway.oracle.reflection),
                );
                let backend: Arc<dyn ChatBackend> = match cache {
                    Some(c) => Arc::new(CachedBackend::new(Some(oracle), c.clone(), *mode)?),
                    None => oracle,
                };
                Ok(Gateway::new(backend, cfg.gateway.chat.clone(), cfg.gateway.max_in_flight))
            }
        }
    }
}

fn write_images(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    for (i, (_, png)) in out.reference_images.iter().enumerate() {
        write_file(&dir.join(format!("ref_{i}.png")), png)?;
    }
    for (k, imgs) in out.window_images.iter().enumerate() {
        write_file(&dir.join(format!("{k}.png")), &imgs.window)?;
        for (i, z) in imgs.zooms.iter().enumerate() {
            write_file(&dir.join(format!("{k}_zoom_{i}.png")), z)?;
        }
    }
    Ok(())
}

fn run_series(
    cfg: &RunConfig,
    templates: &PromptTemplates,
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    dir: &Path,
    backends: &Backends,
) -> Result<SeriesOutcome, CliError> {
    let loaded = manifest.load_entry(entry)?;
    let gateway = backends.for_series(cfg, &loaded)?;
    let mut pcfg = cfg.pipeline.clone();
    pcfg.train_split = entry.train_split;
    pcfg.templates = templates.clone();
    let out = pipeline::run(&loaded.series, &pcfg, &gateway)?;

    let z = &out.zraw;
    let result = FinalResult::from_analyses(
        loaded.series.name(),
        &z.analyses,
        loaded.series.len(),
        cfg.threshold,
        pcfg.vote_weighting,
    );
    write_file(&dir.join(ZRAW_FILE), z.to_json()? + "\n")?;
    write_json(&dir.join(RESULT_FILE), &result)?;
    write_images(dir, &out)?;
    Ok(SeriesOutcome {
        name: entry.name.clone(),
        dir: String::new(),
        ok: true,
        error: None,
        windows: z.analyses.len(),
        failed_windows: z.failed_windows(),
        anomaly_points: result.anomaly_points.len(),
    })
}

/// Runs every manifest series and writes the run directory.
pub fn cmd_detect(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let manifest_path = cfg
        .manifest
        .clone()
        .ok_or_else(|| CliError::Config("no manifest given".into()))?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Config("no output directory given".into()))?;
    let manifest = DatasetManifest::load(&manifest_path).map_err(|e| CliError::Config(e.to_string()))?;
    let templates = match &cfg.prompt_dir {
        Some(d) => PromptTemplates::with_overrides(d).map_err(|e| CliError::Config(e.to_string()))?,
        None => PromptTemplates::default(),
    };
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let backends = Backends::build(cfg, &out)?;

    let mut snapshot = cfg.clone();
    snapshot.manifest = Some(absolute(&manifest_path));
    snapshot.output_dir = Some(absolute(&out));
    if cfg.gateway.backend != BackendKind::Oracle || cfg.gateway.cache_mode != CacheMode::Off {
        snapshot.gateway.cache_dir = Some(absolute(&cfg.resolved_cache_dir(&out)));
    }
    write_file(&out.join(CONFIG_SNAPSHOT), snapshot.to_toml()?)?;

    let dirs = series_dirs(manifest.entries.iter().map(|e| e.name.as_str()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel_series)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<(SeriesOutcome, Option<CliError>)> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(entry, dir)| {
                tracing::info!(series = %entry.name, "detecting");
                match run_series(cfg, &templates, &manifest, entry, &out.join(dir), &backends) {
                    Ok(o) => (SeriesOutcome { dir: dir.clone(), ..o }, None),
                    Err(e) => {
                        tracing::error!(series = %entry.name, "failed: {e}");
                        let outcome = SeriesOutcome {
                            name: entry.name.clone(),
                            dir: dir.clone(),
                            ok: false,
                            error: Some(e.to_string()),
                            windows: 0,
                            failed_windows: 0,
                            anomaly_points: 0,
                        };
                        (outcome, Some(e))
                    }
                }
            })
            .collect()
    });

    let mut fatal = None;
    let mut series = Vec::with_capacity(results.len());
    for (outcome, err) in results {
        if let Some(e) = err {
            let config_class = match &e {
                CliError::Core(c) => is_config_error(c),
                CliError::Config(_) => true,
                _ => false,
            };
            if fatal.is_none() && config_class {
                fatal = Some(e);
            }
        }
        series.push(outcome);
    }
    let summary = RunSummary {
        schema: RUN_SCHEMA.to_string(),
        series,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    if let Some(e) = fatal {
        return Err(e);
    }

    let labeled = manifest.entries.iter().any(|e| e.label_path.is_some());
    if labeled {
        let opts = eval::EvalOptions {
            alpha: cfg.alpha,
            alphas: cfg.alphas.clone(),
            threshold: cfg.threshold,
        };
        eval::evaluate_run(&out, &manifest, &opts)?.write(&out.join(eval::EVAL_DIR))?;
    }
    match summary.failed() {
        0 => Ok(summary),
        failed => Err(CliError::Partial {
            failed,
            total: summary.series.len(),
        }),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}
