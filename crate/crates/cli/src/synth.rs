use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tama_core::ingest::{format_label_intervals, format_series, format_types, DatasetManifest, ManifestEntry};
use tama_core::synthgen::{generate, standard_layout, GeneratorConfig, NOISE_ALGORITHM};

use crate::args::SynthArgs;
use crate::{sanitize_name, write_file, write_json, CliError};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METADATA_FILE: &str = "metadata.json";

/// One series of a dataset spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    pub name: String,
    #[serde(flatten)]
    pub config: GeneratorConfig,
}

/// Contents of a `gen-synth --config` file: a list of `[[series]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub series: Vec<SynthEntry>,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    noise_algorithm: &'a str,
    series: &'a [SynthEntry],
}

impl SynthSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// `count` series in the standard layout, series `i` seeded with `seed + i`.
    pub fn standard(count: usize, length: usize, period: usize, sigma: f64, seed: u64) -> Result<Self, CliError> {
        let series = (0..count)
            .map(|i| {
                let config = standard_layout(length, period, sigma, seed.wrapping_add(i as u64))
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Ok(SynthEntry {
                    name: format!("synth_{i:03}"),
                    config,
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok(Self { series })
    }
}

/// Writes every series with its labels and types, `metadata.json` and a
/// manifest whose train split ends at the first anomaly.
pub fn write_dataset(spec: &SynthSpec, out: &Path) -> Result<PathBuf, CliError> {
    let mut manifest = DatasetManifest {
        entries: Vec::with_capacity(spec.series.len()),
        base_dir: out.to_path_buf(),
    };
    for entry in &spec.series {
        let file = sanitize_name(&entry.name);
        let s = generate(&entry.name, &entry.config)
            .map_err(|e| CliError::Config(format!("series `{}`: {e}", entry.name)))?;
        let intervals = s.labels.to_intervals();
        let series_path = PathBuf::from(format!("{file}.txt"));
        let label_path = PathBuf::from(format!("{file}.labels.txt"));
        let types_path = PathBuf::from(format!("{file}.types.txt"));
        write_file(&out.join(&series_path), format_series(s.series.values()))?;
        write_file(&out.join(&label_path), format_label_intervals(&intervals))?;
        write_file(&out.join(&types_path), format_types(&s.types))?;
        manifest.entries.push(ManifestEntry {
            name: entry.name.clone(),
            series_path,
            column: None,
            label_path: Some(label_path),
            types_path: Some(types_path),
            train_split: Some(intervals.first().map_or(entry.config.length, |iv| iv.start())),
            period_hint: Some(entry.config.base_period),
        });
    }
    manifest.validate()?;
    write_json(
        &out.join(METADATA_FILE),
        &Metadata {
            noise_algorithm: NOISE_ALGORITHM,
            series: &spec.series,
        },
    )?;
    let path = out.join(MANIFEST_FILE);
    write_file(&path, manifest.to_toml_string()?)?;
    Ok(path)
}

pub fn cmd_gen_synth(args: &SynthArgs) -> Result<PathBuf, CliError> {
    let spec = match &args.config {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::standard(args.count, args.length, args.period, args.sigma, args.seed)?,
    };
    let mut names = std::collections::BTreeSet::new();
    for e in &spec.series {
        if !names.insert(sanitize_name(&e.name)) {
            return Err(CliError::Config(format!("duplicate series name `{}`", e.name)));
        }
    }
    write_dataset(&spec, &args.out)
}
