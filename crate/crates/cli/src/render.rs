use std::path::PathBuf;

use tama_core::ingest::load_series;
use tama_core::plotrender::{render_window, render_zoom};
use tama_core::preprocess::{normalize, windows_for_plan};
use tama_core::AnomalyInterval;

use crate::args::RenderArgs;
use crate::config::RunConfig;
use crate::{write_file, CliError};

/// Renders every window of a normalized series as `<out>/<k>.png`, plus
/// `zoom.png` when a zoom region is given. Returns the files written.
pub fn cmd_render(args: &RenderArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut pcfg = match &args.config {
        Some(p) => RunConfig::load(p)?.pipeline,
        None => Default::default(),
    };
    if args.window.is_some() {
        pcfg.window = args.window;
    }
    if args.stride.is_some() {
        pcfg.stride = args.stride;
    }
    if args.period.is_some() {
        pcfg.period = args.period;
    }
    if args.no_grid {
        pcfg.plot.grid = false;
    }
    pcfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let series = normalize(&load_series(&args.series, args.column)?);
    let plan = pcfg
        .plan(series.len(), series.period_hint())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut written = Vec::new();
    for w in windows_for_plan(&series, &plan) {
        let path = args.out.join(format!("{}.png", w.index));
        write_file(&path, render_window(&w, &pcfg.plot)?.png)?;
        written.push(path);
    }
    if let Some((a, b)) = args.zoom {
        let region = AnomalyInterval::new(a, b).map_err(|e| CliError::Config(e.to_string()))?;
        let img = render_zoom(&series, region, pcfg.zoom_margin_frac, &pcfg.plot)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let path = args.out.join("zoom.png");
        write_file(&path, img.png)?;
        written.push(path);
    }
    Ok(written)
}
