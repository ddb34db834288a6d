use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tama_core::aggregate::FinalResult;
use tama_core::ingest::DatasetManifest;
use tama_core::metrics::{evaluate, EvalInput, EvalReport};
use tama_core::AnomalyType;

use crate::args::{EvalArgs, SweepArgs};
use crate::config::{RunConfig, CONFIG_SNAPSHOT};
use crate::detect::RESULT_FILE;
use crate::{read_json, series_dirs, write_file, write_json, CliError};

pub const EVAL_DIR: &str = "eval";
pub const PAT_CSV: &str = "pat.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub alpha: f64,
    pub alphas: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_raw: f64,
    pub auc_pr: f64,
    pub auc_roc: f64,
    pub auc_pr_raw: f64,
    pub auc_roc_raw: f64,
}

impl MetricSet {
    fn of(r: &EvalReport) -> Self {
        Self {
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            f1_raw: r.f1_raw,
            auc_pr: r.auc_pr,
            auc_roc: r.auc_roc,
            auc_pr_raw: r.auc_pr_raw,
            auc_roc_raw: r.auc_roc_raw,
        }
    }

    fn fields(&self) -> [f64; 8] {
        [
            self.precision,
            self.recall,
            self.f1,
            self.f1_raw,
            self.auc_pr,
            self.auc_roc,
            self.auc_pr_raw,
            self.auc_roc_raw,
        ]
    }

    fn from_fields(f: [f64; 8]) -> Self {
        Self {
            precision: f[0],
            recall: f[1],
            f1: f[2],
            f1_raw: f[3],
            auc_pr: f[4],
            auc_roc: f[5],
            auc_pr_raw: f[6],
            auc_roc_raw: f[7],
        }
    }
}

/// Mean, population standard deviation and maximum over series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub max: MetricSet,
    pub per_type_f1_mean: BTreeMap<AnomalyType, f64>,
}

impl Aggregate {
    pub fn of(reports: &[EvalReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let sets: Vec<[f64; 8]> = reports.iter().map(|r| MetricSet::of(r).fields()).collect();
        let n = sets.len() as f64;
        let mut mean = [0.0; 8];
        let mut std = [0.0; 8];
        let mut max = [f64::NEG_INFINITY; 8];
        for i in 0..8 {
            mean[i] = sets.iter().map(|s| s[i]).sum::<f64>() / n;
            std[i] = (sets.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt();
            max[i] = sets.iter().map(|s| s[i]).fold(f64::NEG_INFINITY, f64::max);
        }
        let mut per_type: BTreeMap<AnomalyType, (f64, usize)> = BTreeMap::new();
        for r in reports {
            for (k, v) in &r.per_type_f1 {
                let e = per_type.entry(*k).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        Some(Self {
            count: reports.len(),
            mean: MetricSet::from_fields(mean),
            std: MetricSet::from_fields(std),
            max: MetricSet::from_fields(max),
            per_type_f1_mean: per_type.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    /// `(series directory, report)` in manifest order.
    pub reports: Vec<(String, EvalReport)>,
    /// Labeled series without a result file.
    pub missing: Vec<String>,
    /// Series skipped for lack of labels.
    pub unlabeled: Vec<String>,
    pub aggregate: Option<Aggregate>,
}

impl EvalRun {
    pub fn pat_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["series", "alpha", "precision", "recall", "f1", "auc_pr", "auc_roc"];
        w.write_record(header).expect("writing to memory");
        for (_, r) in &self.reports {
            for p in &r.pat_curve {
                let nums = [p.precision, p.recall, p.f1, p.auc_pr, p.auc_roc].map(|v| format!("{v:.6}"));
                let mut rec = vec![r.series.clone(), p.alpha.to_string()];
                rec.extend(nums);
                w.write_record(&rec).expect("writing to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV of UTF-8 fields")
    }

    pub fn table(&self) -> String {
        let width = self
            .reports
            .iter()
            .map(|(_, r)| r.series.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}",
            "series", "F1(PA)", "F1 raw", "AUC-PR", "AUC-ROC", "PR raw"
        );
        let row = |s: &mut String, name: &str, m: &MetricSet| {
            let _ = writeln!(
                s,
                "{name:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
                m.f1, m.f1_raw, m.auc_pr, m.auc_roc, m.auc_pr_raw
            );
        };
        for (_, r) in &self.reports {
            row(&mut s, &r.series, &MetricSet::of(r));
        }
        if let Some(a) = &self.aggregate {
            row(&mut s, "mean", &a.mean);
            row(&mut s, "std", &a.std);
            row(&mut s, "max", &a.max);
        }
        for m in &self.missing {
            let _ = writeln!(s, "{m:<width$}  missing result");
        }
        s
    }

    /// Writes per-series reports, `aggregate.json`, `pat.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        for (d, r) in &self.reports {
            write_json(&dir.join(format!("{d}.json")), r)?;
        }
        write_json(&dir.join("aggregate.json"), &self.aggregate)?;
        write_file(&dir.join(PAT_CSV), self.pat_csv())?;
        write_file(&dir.join("summary.txt"), self.table())
    }
}

/// Scores every labeled manifest series against `<run>/<series>/result.json`.
pub fn evaluate_run(run: &Path, manifest: &DatasetManifest, opts: &EvalOptions) -> Result<EvalRun, CliError> {
    let dirs = series_dirs(manifest.entries.iter().map(|e| e.name.as_str()));
    let mut out = EvalRun {
        reports: Vec::new(),
        missing: Vec::new(),
        unlabeled: Vec::new(),
        aggregate: None,
    };
    for (entry, dir) in manifest.entries.iter().zip(dirs) {
        if entry.label_path.is_none() {
            out.unlabeled.push(entry.name.clone());
            continue;
        }
        let result_path = run.join(&dir).join(RESULT_FILE);
        if !result_path.is_file() {
            out.missing.push(entry.name.clone());
            continue;
        }
        let loaded = manifest.load_entry(entry)?;
        let labels = loaded.labels.as_ref().expect("label_path checked above");
        let result: FinalResult = read_json(&result_path)?;
        if result.series_len != labels.len() {
            return Err(CliError::Config(format!(
                "{}: result covers {} points, labels {}",
                result_path.display(),
                result.series_len,
                labels.len()
            )));
        }
        let truth = labels.to_intervals();
        let scores = result.confidence.as_scores();
        let input = EvalInput {
            truth: &truth,
            scores: &scores,
            threshold: opts.threshold,
            type_truth: loaded.types.as_deref(),
            classes: Some(&result.classes),
        };
        out.reports.push((dir, evaluate(&entry.name, &input, opts.alpha, &opts.alphas)?));
    }
    let reports: Vec<EvalReport> = out.reports.iter().map(|(_, r)| r.clone()).collect();
    out.aggregate = Aggregate::of(&reports);
    Ok(out)
}

fn load_run(run: &Path, manifest: Option<&PathBuf>) -> Result<(RunConfig, DatasetManifest), CliError> {
    let cfg = RunConfig::load(&run.join(CONFIG_SNAPSHOT))?;
    let path = manifest
        .cloned()
        .or_else(|| cfg.manifest.clone())
        .ok_or_else(|| CliError::Config("no manifest in the run snapshot or on the command line".into()))?;
    let manifest = DatasetManifest::load(&path).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, manifest))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalRun, CliError> {
    let (cfg, manifest) = load_run(&args.run, args.manifest.as_ref())?;
    let opts = EvalOptions {
        alpha: args.alpha.unwrap_or(cfg.alpha),
        alphas: args.alphas.clone().unwrap_or(cfg.alphas),
        threshold: args.threshold.unwrap_or(cfg.threshold),
    };
    validate_opts(&opts)?;
    let run = evaluate_run(&args.run, &manifest, &opts)?;
    let dir = args.out.clone().unwrap_or_else(|| args.run.join(EVAL_DIR));
    run.write(&dir)?;
    if !run.missing.is_empty() {
        for m in &run.missing {
            tracing::error!(series = %m, "no result in run directory");
        }
        return Err(CliError::Partial {
            failed: run.missing.len(),
            total: run.missing.len() + run.reports.len(),
        });
    }
    Ok(run)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(PathBuf, EvalRun), CliError> {
    let (cfg, manifest) = load_run(&args.run, args.manifest.as_ref())?;
    let opts = EvalOptions {
        alpha: cfg.alpha,
        alphas: args.alphas.clone().unwrap_or(cfg.alphas),
        threshold: args.threshold.unwrap_or(cfg.threshold),
    };
    validate_opts(&opts)?;
    let run = evaluate_run(&args.run, &manifest, &opts)?;
    let path = args.out.clone().unwrap_or_else(|| args.run.join(EVAL_DIR).join(PAT_CSV));
    write_file(&path, run.pat_csv())?;
    if !run.missing.is_empty() {
        return Err(CliError::Partial {
            failed: run.missing.len(),
            total: run.missing.len() + run.reports.len(),
        });
    }
    Ok((path, run))
}

fn validate_opts(o: &EvalOptions) -> Result<(), CliError> {
    if let Some(a) = std::iter::once(&o.alpha).chain(&o.alphas).find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(CliError::Config(format!("alpha {a} outside [0, 1]")));
    }
    if o.alphas.is_empty() {
        return Err(CliError::Config("empty alpha grid".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(f1: f64) -> EvalReport {
        EvalReport {
            series: "s".into(),
            series_len: 10,
            alpha: 0.0,
            threshold: 1.0,
            precision: f1,
            recall: f1,
            f1,
            f1_raw: f1,
            auc_pr: f1,
            auc_roc: f1,
            auc_pr_raw: f1,
            auc_roc_raw: f1,
            per_type_f1: BTreeMap::from([(AnomalyType::Point, f1)]),
            pat_curve: Vec::new(),
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let a = Aggregate::of(&[report(0.8), report(1.0)]).unwrap();
        assert!((a.mean.f1 - 0.9).abs() < 1e-12);
        assert_eq!(a.max.f1, 1.0);
        assert!((a.std.f1 - 0.1).abs() < 1e-12);
        assert!((a.per_type_f1_mean[&AnomalyType::Point] - 0.9).abs() < 1e-12);

        let single = Aggregate::of(&[report(0.7)]).unwrap();
        assert_eq!(single.mean.f1, single.max.f1);
        assert_eq!(single.std.f1, 0.0);
        assert!(Aggregate::of(&[]).is_none());
    }
}
