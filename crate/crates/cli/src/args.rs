use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tama_core::gateway::{CacheMode, OracleFidelity, ReflectionBehavior};

use crate::config::{BackendKind, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "tama", version, about = "Time series anomaly detection with multimodal chat models")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline over every series of a manifest.
    Detect(DetectArgs),
    /// Score a finished run against its manifest labels.
    Eval(EvalArgs),
    /// Write the PAT sweep of a finished run as CSV.
    SweepPat(SweepArgs),
    /// Generate a labeled synthetic dataset and its manifest.
    GenSynth(SynthArgs),
    /// Render window plots of a series without calling a model.
    Render(RenderArgs),
    /// Inspect or purge a response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// TOML run configuration; flags below override its values.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub manifest: Option<PathBuf>,
    /// Run directory to create.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_cache_mode)]
    pub cache_mode: Option<CacheMode>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub parallel_series: Option<usize>,
    /// Confidence threshold c_0.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of reference images.
    #[arg(long)]
    pub n_r: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Period used to size windows when no width is given.
    #[arg(long)]
    pub period: Option<usize>,
    #[arg(long)]
    pub no_reflection: bool,
    #[arg(long)]
    pub prompt_dir: Option<PathBuf>,
    /// Oracle answer quality: `perfect` or `noisy:<seed>:<jitter>:<fp_rate>`.
    #[arg(long, value_parser = parse_fidelity)]
    pub oracle_fidelity: Option<OracleFidelity>,
    #[arg(long, value_parser = parse_reflection)]
    pub oracle_reflection: Option<ReflectionBehavior>,
}

impl DetectArgs {
    /// File values (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if self.manifest.is_some() {
            cfg.manifest = self.manifest.clone();
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        if self.cache_dir.is_some() {
            cfg.gateway.cache_dir = self.cache_dir.clone();
        }
        if self.prompt_dir.is_some() {
            cfg.prompt_dir = self.prompt_dir.clone();
        }
        set!(self.backend, cfg.gateway.backend);
        set!(self.base_url, cfg.gateway.http.base_url);
        set!(self.model, cfg.gateway.chat.model_name);
        set!(self.api_key_env, cfg.gateway.http.api_key_env);
        set!(self.cache_mode, cfg.gateway.cache_mode);
        set!(self.max_in_flight, cfg.gateway.max_in_flight);
        set!(self.parallel_series, cfg.parallel_series);
        set!(self.threshold, cfg.threshold);
        set!(self.seed, cfg.pipeline.seed);
        set!(self.n_r, cfg.pipeline.n_r);
        set!(self.oracle_fidelity, cfg.gateway.oracle.fidelity);
        set!(self.oracle_reflection, cfg.gateway.oracle.reflection);
        if self.window.is_some() {
            cfg.pipeline.window = self.window;
        }
        if self.stride.is_some() {
            cfg.pipeline.stride = self.stride;
        }
        if self.period.is_some() {
            cfg.pipeline.period = self.period;
        }
        if self.no_reflection {
            cfg.pipeline.reflection_enabled = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `detect`.
    pub run: PathBuf,
    /// Manifest to score against; defaults to the one in the run's config snapshot.
    #[arg(short, long)]
    pub manifest: Option<PathBuf>,
    /// Comma-separated PAT grid, e.g. `0,0.2,0.4,0.6,0.8,1`.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    /// PAT for the headline metrics.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output directory; defaults to `<run>/eval`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub run: PathBuf,
    #[arg(short, long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// CSV file to write; defaults to `<run>/eval/pat.csv`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset directory to create.
    #[arg(short, long)]
    pub out: PathBuf,
    /// TOML dataset spec; overrides the layout flags below.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 3000)]
    pub length: usize,
    #[arg(long, default_value_t = tama_core::synthgen::DEFAULT_BASE_PERIOD)]
    pub period: usize,
    #[arg(long, default_value_t = tama_core::synthgen::DEFAULT_NOISE_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Series file (one value per row, or columns).
    pub series: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub column: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub period: Option<usize>,
    /// Also render a zoom on `start,end` (global indices).
    #[arg(long, value_parser = parse_span)]
    pub zoom: Option<(usize, usize)>,
    /// TOML run configuration supplying `[pipeline.plot]` settings.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub no_grid: bool,
}

#[derive(Debug, Subcommand)]
pub enum CacheAction {
    /// Summarize the entries of a cache directory.
    Inspect {
        /// Defaults to `TAMA_CACHE_DIR`.
        dir: Option<PathBuf>,
    },
    /// Delete every entry of a cache directory.
    Purge { dir: Option<PathBuf> },
}

fn parse_cache_mode(s: &str) -> Result<CacheMode, String> {
    match s {
        "off" => Ok(CacheMode::Off),
        "record" => Ok(CacheMode::Record),
        "read_through" | "read-through" => Ok(CacheMode::ReadThrough),
        "strict" => Ok(CacheMode::Strict),
        _ => Err(format!("unknown cache mode `{s}` (off, record, read-through, strict)")),
    }
}

fn parse_reflection(s: &str) -> Result<ReflectionBehavior, String> {
    match s {
        "echo" => Ok(ReflectionBehavior::Echo),
        "prune" | "prune_unsupported" => Ok(ReflectionBehavior::PruneUnsupported),
        "truth" => Ok(ReflectionBehavior::Truth),
        _ => Err(format!("unknown reflection behavior `{s}` (echo, prune, truth)")),
    }
}

fn parse_span(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `start,end`, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

pub fn parse_fidelity(s: &str) -> Result<OracleFidelity, String> {
    if s == "perfect" {
        return Ok(OracleFidelity::Perfect);
    }
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["noisy", seed, jitter, fp] => Ok(OracleFidelity::Noisy {
            seed: seed.parse().map_err(|e| format!("seed: {e}"))?,
            jitter: jitter.parse().map_err(|e| format!("jitter: {e}"))?,
            fp_rate: fp.parse().map_err(|e| format!("fp_rate: {e}"))?,
        }),
        _ => Err(format!("expected `perfect` or `noisy:<seed>:<jitter>:<fp_rate>`, got `{s}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fidelity_syntax() {
        assert_eq!(parse_fidelity("perfect"), Ok(OracleFidelity::Perfect));
        assert_eq!(
            parse_fidelity("noisy:3:5:0.02"),
            Ok(OracleFidelity::Noisy {
                seed: 3,
                jitter: 5,
                fp_rate: 0.02
            })
        );
        assert!(parse_fidelity("noisy:3").is_err());
        assert_eq!(parse_span("100, 140"), Ok((100, 140)));
        assert!(parse_span("100").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "threshold = 3.0\n[pipeline]\nn_r = 1\n").unwrap();
        let cli = Cli::try_parse_from([
            "tama", "detect", "--config", p.to_str().unwrap(), "--threshold", "2", "--no-reflection",
        ])
        .unwrap();
        let Command::Detect(args) = cli.command else { panic!() };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.threshold, 2.0);
        assert_eq!(cfg.pipeline.n_r, 1);
        assert!(!cfg.pipeline.reflection_enabled);
    }
}
