//! Loading series, labels and dataset manifests from text files.
//!
//! Series files hold one row per line with comma- or whitespace-separated
//! columns (detected per file) and an optional header row. Label files hold either one 0/1 flag per
//! line or inclusive `start end` pairs per line. Type files hold
//! `start end type` triples.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AnomalyInterval, AnomalyType, LabelSeries, TimeSeries};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Rows of cells with their 1-based line numbers. Comma-separated when any
/// line contains a comma, whitespace-separated otherwise.
fn read_rows(path: &Path, text: &str) -> Result<Vec<(usize, Vec<String>)>> {
    if !text.contains(',') {
        return Ok(data_lines(text)
            .map(|(n, l)| (n, l.split_whitespace().map(str::to_string).collect()))
            .collect());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn parse_number(path: &Path, line: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("`{token}` is not a finite number"),
        }),
    }
}

/// Numeric matrix of a series file. A first row with no numeric cell is
/// taken as a header and skipped.
fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_text(path)?;
    let mut rows = read_rows(path, &text)?;
    if rows
        .first()
        .is_some_and(|(_, cells)| cells.iter().all(|c| c.parse::<f64>().is_err()))
    {
        rows.remove(0);
    }
    let mut out = Vec::with_capacity(rows.len());
    let mut width = None;
    for (line, cells) in rows {
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("row has {} columns, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        let row = cells
            .iter()
            .map(|c| parse_number(path, line, c))
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "file contains no data".into(),
        });
    }
    Ok(out)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads one column (default the first) of a series file.
pub fn load_series(path: &Path, column: Option<usize>) -> Result<TimeSeries> {
    let rows = read_matrix(path)?;
    let col = column.unwrap_or(0);
    let width = rows[0].len();
    if col >= width {
        return Err(Error::InvalidInput(format!(
            "{}: column {col} requested but the file has {width}",
            path.display()
        )));
    }
    let values = rows.iter().map(|r| r[col]).collect();
    TimeSeries::new(file_label(path), values)
}

/// Splits a multi-column file into one series per column named
/// `<file>:<column>`.
pub fn split_channels(path: &Path) -> Result<Vec<TimeSeries>> {
    let rows = read_matrix(path)?;
    let name = file_label(path);
    (0..rows[0].len())
        .map(|c| TimeSeries::new(format!("{name}:{c}"), rows.iter().map(|r| r[c]).collect()))
        .collect()
}

/// Loads labels of exactly `length` points from flag or interval form.
pub fn load_labels(path: &Path, length: usize) -> Result<LabelSeries> {
    let text = read_text(path)?;
    let lines: Vec<(usize, &str)> = data_lines(&text).collect();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let interval_form = lines
        .first()
        .is_some_and(|(_, l)| l.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).count() == 2);
    if lines.is_empty() || interval_form {
        let mut intervals = Vec::with_capacity(lines.len());
        for (line, content) in lines {
            let toks: Vec<&str> = content
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            let [s, e] = toks[..] else {
                return Err(parse_err(line, format!("expected `start end`, found `{content}`")));
            };
            let s: usize = s.parse().map_err(|_| parse_err(line, format!("bad index `{s}`")))?;
            let e: usize = e.parse().map_err(|_| parse_err(line, format!("bad index `{e}`")))?;
            let iv = AnomalyInterval::new(s, e).map_err(|err| parse_err(line, err.to_string()))?;
            if iv.end() >= length {
                return Err(parse_err(
                    line,
                    format!("interval {iv} outside [0, {}]", length.saturating_sub(1)),
                ));
            }
            intervals.push(iv);
        }
        return LabelSeries::from_intervals(length, &intervals);
    }
    let mut flags = Vec::with_capacity(lines.len());
    for (line, content) in &lines {
        flags.push(match *content {
            "0" | "0.0" | "false" => false,
            "1" | "1.0" | "true" => true,
            other => return Err(parse_err(*line, format!("expected 0 or 1, found `{other}`"))),
        });
    }
    if flags.len() != length {
        return Err(Error::InvalidInput(format!(
            "{}: {} label flags for a series of length {length}",
            path.display(),
            flags.len()
        )));
    }
    Ok(LabelSeries::new(flags))
}

/// Loads a per-point type map from `start end type` lines.
pub fn load_types(path: &Path, length: usize) -> Result<Vec<Option<AnomalyType>>> {
    let text = read_text(path)?;
    let mut types = vec![None; length];
    for (line, content) in data_lines(&text) {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let toks: Vec<&str> = content.split_whitespace().collect();
        let [s, e, kind] = toks[..] else {
            return Err(err(format!("expected `start end type`, found `{content}`")));
        };
        let s: usize = s.parse().map_err(|_| err(format!("bad index `{s}`")))?;
        let e: usize = e.parse().map_err(|_| err(format!("bad index `{e}`")))?;
        let kind: AnomalyType = kind.parse().map_err(|x: Error| err(x.to_string()))?;
        let iv = AnomalyInterval::new(s, e).map_err(|x| err(x.to_string()))?;
        if iv.end() >= length {
            return Err(err(format!("interval {iv} outside series of length {length}")));
        }
        types[s..=e].fill(Some(kind));
    }
    Ok(types)
}

/// Writes intervals in the `start end` label format.
pub fn format_label_intervals(intervals: &[AnomalyInterval]) -> String {
    intervals
        .iter()
        .map(|iv| format!("{} {}\n", iv.start(), iv.end()))
        .collect()
}

/// Writes a per-point type map in the `start end type` format.
pub fn format_types(types: &[Option<AnomalyType>]) -> String {
    let mut out = String::new();
    let mut t = 0;
    while t < types.len() {
        if let Some(kind) = types[t] {
            let mut e = t;
            while e + 1 < types.len() && types[e + 1] == Some(kind) {
                e += 1;
            }
            out.push_str(&format!("{t} {e} {kind}\n"));
            t = e + 1;
        } else {
            t += 1;
        }
    }
    out
}

/// Writes values one per line using shortest round-trip formatting.
pub fn format_series(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}\n")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub series_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub types_path: Option<PathBuf>,
    /// Points before this index are anomaly-free and may serve as references.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_split: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_hint: Option<usize>,
}

/// A list of series to process; relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(rename = "series", default)]
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A manifest entry with its files loaded.
#[derive(Debug, Clone)]
pub struct LoadedEntry {
    pub entry: ManifestEntry,
    pub series: TimeSeries,
    pub labels: Option<LabelSeries>,
    pub types: Option<Vec<Option<AnomalyType>>>,
}

impl DatasetManifest {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: DatasetManifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.base_dir = base_dir.to_path_buf();
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_toml_str(&text, &base)?;
        m.validate()?;
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks name uniqueness and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate manifest entry `{}`", e.name)));
            }
            let paths = std::iter::once(&e.series_path)
                .chain(e.label_path.as_ref())
                .chain(e.types_path.as_ref());
            for p in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Config(format!(
                        "entry `{}`: file {} does not exist",
                        e.name,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_entry(&self, e: &ManifestEntry) -> Result<LoadedEntry> {
        let series = load_series(&self.resolve(&e.series_path), e.column)?;
        let series = TimeSeries::new(e.name.clone(), series.values().to_vec())?.with_period_hint(e.period_hint);
        let labels = e
            .label_path
            .as_ref()
            .map(|p| load_labels(&self.resolve(p), series.len()))
            .transpose()?;
        let types = e
            .types_path
            .as_ref()
            .map(|p| load_types(&self.resolve(p), series.len()))
            .transpose()?;
        if let Some(split) = e.train_split {
            if split > series.len() {
                return Err(Error::Config(format!(
                    "entry `{}`: train_split {split} beyond series length {}",
                    e.name,
                    series.len()
                )));
            }
        }
        Ok(LoadedEntry {
            entry: e.clone(),
            series,
            labels,
            types,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::labels_to_intervals;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_single_column() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.txt", "1.0\n2.0\n3.0");
        assert_eq!(load_series(&p, None).unwrap().values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn selects_column() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.csv", "1,9\n2,8\n");
        assert_eq!(load_series(&p, Some(1)).unwrap().values(), &[9.0, 8.0]);
        assert!(load_series(&p, Some(2)).is_err());
        let p = write(d.path(), "b.txt", "1 9\n2\t8\n");
        assert_eq!(load_series(&p, Some(1)).unwrap().values(), &[9.0, 8.0]);
    }

    #[test]
    fn reports_bad_line() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "a.txt", "1.0\nabc");
        match load_series(&p, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let p = write(d.path(), "n.txt", "1.0\nNaN\n");
        assert!(matches!(load_series(&p, None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_and_missing_files() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "e.txt", "\n\n");
        assert!(load_series(&p, None).is_err());
        assert!(matches!(load_series(&d.path().join("nope"), None), Err(Error::Io { .. })));
    }

    #[test]
    fn skips_header_and_quotes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", "time,\"value\"\n0,1.5\n1,\"2.5\"\n\n2,3\n");
        assert_eq!(load_series(&p, Some(1)).unwrap().values(), &[1.5, 2.5, 3.0]);
    }

    #[test]
    fn splits_channels() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "m.csv", "1,2\n3,4\n5,6\n7,8\n9,10\n");
        let ch = split_channels(&p).unwrap();
        assert_eq!(ch.len(), 2);
        assert_eq!(ch[0].name(), "m.csv:0");
        assert_eq!(ch[1].values(), &[2.0, 4.0, 6.0, 8.0, 10.0]);
        let p = write(d.path(), "one.txt", "1\n2\n");
        assert_eq!(split_channels(&p).unwrap().len(), 1);
        let p = write(d.path(), "r.csv", "1,2,3\n4,5\n");
        assert!(matches!(split_channels(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn label_forms() {
        let d = tempfile::tempdir().unwrap();
        let expected = [false, true, true, false];
        let p = write(d.path(), "f.txt", "0\n1\n1\n0\n");
        assert_eq!(load_labels(&p, 4).unwrap().flags(), &expected[..]);
        let p = write(d.path(), "i.txt", "1 2\n");
        assert_eq!(load_labels(&p, 4).unwrap().flags(), &expected[..]);
        let p = write(d.path(), "short.txt", "0\n1\n1\n");
        assert!(load_labels(&p, 4).is_err());
        let p = write(d.path(), "oob.txt", "2 4\n");
        assert!(load_labels(&p, 4).is_err());
        let p = write(d.path(), "none.txt", "");
        assert_eq!(load_labels(&p, 3).unwrap().flags(), &[false; 3]);
    }

    #[test]
    fn type_file_roundtrip() {
        use AnomalyType::*;
        let types = vec![None, Some(Point), None, Some(Trend), Some(Trend), Some(Seasonal)];
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "t.txt", &format_types(&types));
        assert_eq!(load_types(&p, types.len()).unwrap(), types);
    }

    #[test]
    fn manifest_resolution_and_validation() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "a.txt", "1\n2\n3\n4\n");
        write(d.path(), "a.labels", "1 2\n");
        let text = r#"
            [[series]]
            name = "a"
            series_path = "a.txt"
            label_path = "a.labels"
            train_split = 1
        "#;
        let m = DatasetManifest::from_toml_str(text, d.path()).unwrap();
        m.validate().unwrap();
        let loaded = m.load_entry(&m.entries[0]).unwrap();
        assert_eq!(loaded.series.name(), "a");
        assert_eq!(loaded.labels.unwrap().flags(), &[false, true, true, false]);

        let dup = format!("{text}\n[[series]]\nname = \"a\"\nseries_path = \"a.txt\"\n");
        let m = DatasetManifest::from_toml_str(&dup, d.path()).unwrap();
        assert!(m.validate().is_err());

        let missing = "[[series]]\nname = \"b\"\nseries_path = \"missing.txt\"\n";
        let m = DatasetManifest::from_toml_str(missing, d.path()).unwrap();
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn channels_rezip_to_source(rows in proptest::collection::vec(proptest::collection::vec(-1e6f64..1e6, 3), 1..40)) {
            let d = tempfile::tempdir().unwrap();
            let text: String = rows
                .iter()
                .map(|r| r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",") + "\n")
                .collect();
            let p = write(d.path(), "m.csv", &text);
            let ch = split_channels(&p).unwrap();
            for (i, row) in rows.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    prop_assert_eq!(ch[c].values()[i], *v);
                }
            }
        }

        #[test]
        fn flag_labels_roundtrip(flags in proptest::collection::vec(any::<bool>(), 1..300)) {
            let d = tempfile::tempdir().unwrap();
            let text: String = flags.iter().map(|&f| if f { "1\n" } else { "0\n" }).collect();
            let p = write(d.path(), "l.txt", &text);
            let labels = load_labels(&p, flags.len()).unwrap();
            let back = LabelSeries::from_intervals(flags.len(), &labels_to_intervals(&labels)).unwrap();
            prop_assert_eq!(back.flags(), &flags[..]);
        }
    }
}
