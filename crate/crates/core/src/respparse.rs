//! Parsing of structured model responses.
//!
//! Responses are JSON objects whose `abnormal_index` (or, after reflection,
//! `corrected_abnormal_index`) field holds a small list grammar:
//!
//! ```text
//! list       ::= "[" ( entry ( "," entry )* )? "]"
//! entry      ::= span "/" confidence "/" label
//! span       ::= "(" int "," int ")" | "(" int ")"
//! confidence ::= "1" | "2" | "3" | "4"
//! label      ::= identifier            (case-insensitive)
//! ```
//!
//! Whitespace between tokens is ignored. The list parser is total: bad
//! entries are repaired or skipped and reported as [`Diagnostic`]s.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::types::{AnomalyInterval, AnomalyType, Confidence, Detection};

pub const INDEX_KEY: &str = "abnormal_index";
pub const CORRECTED_INDEX_KEY: &str = "corrected_abnormal_index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    /// Start and end were reversed and have been swapped.
    Swapped,
    /// An index fell outside the window and was clamped.
    Clamped,
    /// Confidence outside 1..=4; entry dropped.
    BadConfidence,
    /// Label outside the known vocabulary; entry dropped.
    UnknownLabel,
    /// Entry could not be parsed; skipped.
    Malformed,
    /// The list brackets were missing or unbalanced.
    ListShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Zero-based position of the entry within the list, if entry-specific.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<usize>,
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.entry {
            Some(i) => write!(f, "entry {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownLabel;

/// Mapping from model vocabulary to the canonical taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    entries: BTreeMap<String, AnomalyType>,
}

impl Default for LabelMap {
    fn default() -> Self {
        let entries = [
            ("global", AnomalyType::Point),
            ("contextual", AnomalyType::Point),
            ("point", AnomalyType::Point),
            ("frequency", AnomalyType::Seasonal),
            ("seasonal", AnomalyType::Seasonal),
            ("trend", AnomalyType::Trend),
            ("shapelet", AnomalyType::Shapelet),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self { entries }
    }
}

impl LabelMap {
    /// Adds or replaces a vocabulary entry.
    pub fn insert(&mut self, label: &str, kind: AnomalyType) {
        self.entries.insert(label.trim().to_ascii_lowercase(), kind);
    }

    pub fn lookup(&self, label: &str) -> Result<AnomalyType, UnknownLabel> {
        self.entries
            .get(&label.trim().to_ascii_lowercase())
            .copied()
            .ok_or(UnknownLabel)
    }
}

/// Maps a model-supplied type label onto the canonical taxonomy.
pub fn normalize_label(label: &str) -> Result<AnomalyType, UnknownLabel> {
    LabelMap::default().lookup(label)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedIndexList {
    pub detections: Vec<Detection>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses an index list with the default label map.
pub fn parse_index_list(s: &str, window_width: usize) -> ParsedIndexList {
    parse_index_list_with(s, window_width, &LabelMap::default())
}

pub fn parse_index_list_with(s: &str, window_width: usize, labels: &LabelMap) -> ParsedIndexList {
    let mut out = ParsedIndexList::default();
    let body = list_body(s, &mut out.diagnostics);
    let chunks = split_top_level(body);
    let only_blank = chunks.len() == 1 && chunks[0].trim().is_empty();
    if only_blank {
        return out;
    }
    let max_index = window_width.saturating_sub(1) as i128;
    for (i, chunk) in chunks.iter().enumerate() {
        if chunk.trim().is_empty() {
            out.diagnostics.push(Diagnostic {
                entry: Some(i),
                kind: DiagnosticKind::Malformed,
                message: "empty entry".into(),
            });
            continue;
        }
        let raw = match parse_entry(chunk) {
            Ok(raw) => raw,
            Err(msg) => {
                out.diagnostics.push(Diagnostic {
                    entry: Some(i),
                    kind: DiagnosticKind::Malformed,
                    message: format!("{msg} in `{}`", chunk.trim()),
                });
                continue;
            }
        };
        let kind = match labels.lookup(&raw.label) {
            Ok(k) => k,
            Err(UnknownLabel) => {
                out.diagnostics.push(Diagnostic {
                    entry: Some(i),
                    kind: DiagnosticKind::UnknownLabel,
                    message: format!("unknown label `{}`", raw.label),
                });
                continue;
            }
        };
        let confidence = match u8::try_from(raw.confidence).ok().and_then(|c| Confidence::new(c).ok()) {
            Some(c) => c,
            None => {
                out.diagnostics.push(Diagnostic {
                    entry: Some(i),
                    kind: DiagnosticKind::BadConfidence,
                    message: format!("confidence {} outside 1..=4", raw.confidence),
                });
                continue;
            }
        };
        let (mut start, mut end) = (raw.start, raw.end);
        if start > end {
            std::mem::swap(&mut start, &mut end);
            out.diagnostics.push(Diagnostic {
                entry: Some(i),
                kind: DiagnosticKind::Swapped,
                message: format!("start {end} after end {start}; swapped"),
            });
        }
        let (cs, ce) = (start.clamp(0, max_index), end.clamp(0, max_index));
        if (cs, ce) != (start, end) {
            out.diagnostics.push(Diagnostic {
                entry: Some(i),
                kind: DiagnosticKind::Clamped,
                message: format!("({start}, {end}) clamped to ({cs}, {ce})"),
            });
        }
        let interval = AnomalyInterval::spanning(cs as usize, ce as usize);
        out.detections.push(Detection::new(interval, confidence, kind));
    }
    out
}

/// Serializes detections into the list grammar; parsing the result back
/// yields the same detections (explanations are not part of the grammar).
pub fn serialize_index_list(detections: &[Detection]) -> String {
    let entries: Vec<String> = detections
        .iter()
        .map(|d| {
            let span = if d.interval.is_point() {
                format!("({})", d.interval.start())
            } else {
                format!("({}, {})", d.interval.start(), d.interval.end())
            };
            format!("{span}/{}/{}", d.confidence.get(), d.kind)
        })
        .collect();
    format!("[{}]", entries.join(", "))
}

fn list_body<'a>(s: &'a str, diags: &mut Vec<Diagnostic>) -> &'a str {
    let trimmed = s.trim();
    let Some(open) = trimmed.find('[') else {
        if !trimmed.is_empty() {
            diags.push(Diagnostic {
                entry: None,
                kind: DiagnosticKind::ListShape,
                message: "missing `[`".into(),
            });
        }
        return trimmed;
    };
    if !trimmed[..open].trim().is_empty() {
        diags.push(Diagnostic {
            entry: None,
            kind: DiagnosticKind::ListShape,
            message: "text before `[` ignored".into(),
        });
    }
    let rest = &trimmed[open + 1..];
    match rest.rfind(']') {
        Some(close) => {
            if !rest[close + 1..].trim().is_empty() {
                diags.push(Diagnostic {
                    entry: None,
                    kind: DiagnosticKind::ListShape,
                    message: "text after `]` ignored".into(),
                });
            }
            &rest[..close]
        }
        None => {
            diags.push(Diagnostic {
                entry: None,
                kind: DiagnosticKind::ListShape,
                message: "missing `]`".into(),
            });
            rest
        }
    }
}

/// Splits on commas that are not inside a span's parentheses.
fn split_top_level(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut last = 0;
    for (i, c) in body.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            // a span never contains `/`, so an unclosed `(` ends here
            '/' => depth = 0,
            ',' if depth == 0 => {
                out.push(&body[last..i]);
                last = i + 1;
            }
            _ => {}
        }
    }
    out.push(&body[last..]);
    out
}

struct RawEntry {
    start: i128,
    end: i128,
    confidence: i128,
    label: String,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
}

impl<'a> Cursor<'a> {
    fn new(s: &'a str) -> Self {
        Self {
            chars: s.chars().peekable(),
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.peek().is_some_and(|c| c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn eat(&mut self, want: char) -> Result<(), String> {
        self.skip_ws();
        match self.chars.next() {
            Some(c) if c == want => Ok(()),
            Some(c) => Err(format!("expected `{want}`, found `{c}`")),
            None => Err(format!("expected `{want}`, found end of entry")),
        }
    }

    fn peek_is(&mut self, want: char) -> bool {
        self.skip_ws();
        self.chars.peek() == Some(&want)
    }

    fn int(&mut self) -> Result<i128, String> {
        self.skip_ws();
        let negative = if self.chars.peek() == Some(&'-') {
            self.chars.next();
            true
        } else {
            false
        };
        let mut digits = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() {
                digits.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        if digits.is_empty() {
            return Err("expected an integer".into());
        }
        if digits.len() > 30 {
            return Err("integer too large".into());
        }
        let v: i128 = digits.parse().map_err(|_| "integer too large".to_string())?;
        Ok(if negative { -v } else { v })
    }

    fn rest(self) -> String {
        self.chars.collect()
    }
}

fn parse_entry(chunk: &str) -> Result<RawEntry, String> {
    let mut cur = Cursor::new(chunk);
    cur.eat('(')?;
    let start = cur.int()?;
    let end = if cur.peek_is(',') {
        cur.eat(',')?;
        cur.int()?
    } else {
        start
    };
    cur.eat(')')?;
    cur.eat('/')?;
    let confidence = cur.int()?;
    cur.eat('/')?;
    let label = cur.rest();
    let label = label.trim().trim_matches(|c| c == '"' || c == '\'').trim();
    if label.is_empty() {
        return Err("missing label".into());
    }
    if !label
        .chars()
        .all(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == ' ')
    {
        return Err(format!("invalid label `{label}`"));
    }
    Ok(RawEntry {
        start,
        end,
        confidence,
        label: label.to_string(),
    })
}

/// Fields extracted from an analyzing or reflection response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedAnalysis {
    pub detections: Vec<Detection>,
    pub abnormal_description: String,
    pub abnormal_type_description: String,
    pub diagnostics: Vec<Diagnostic>,
    /// Which key carried the index list.
    pub index_key: String,
}

pub fn parse_analysis(text: &str, window_width: usize) -> Result<ParsedAnalysis> {
    parse_analysis_with(text, window_width, &LabelMap::default())
}

pub fn parse_analysis_with(text: &str, window_width: usize, labels: &LabelMap) -> Result<ParsedAnalysis> {
    let obj = parse_json_object(text)?;
    let (key, value) = [CORRECTED_INDEX_KEY, INDEX_KEY]
        .iter()
        .find_map(|k| obj.get(*k).map(|v| (*k, v)))
        .ok_or_else(|| Error::Schema {
            message: format!("no `{INDEX_KEY}` or `{CORRECTED_INDEX_KEY}` field"),
            raw: text.to_string(),
        })?;
    let list = match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|v| match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            format!("[{}]", parts.join(", "))
        }
        Value::Null => "[]".to_string(),
        other => {
            return Err(Error::Schema {
                message: format!("`{key}` must be a string, found {other}"),
                raw: text.to_string(),
            })
        }
    };
    let parsed = parse_index_list_with(&list, window_width, labels);
    let abnormal_description = string_field(&obj, "abnormal_description")
        .or_else(|| {
            obj.iter()
                .find(|(k, v)| k.to_ascii_lowercase().contains("reason") && v.is_string())
                .and_then(|(_, v)| v.as_str().map(str::to_string))
        })
        .unwrap_or_default();
    Ok(ParsedAnalysis {
        detections: parsed.detections,
        abnormal_description,
        abnormal_type_description: string_field(&obj, "abnormal_type_description").unwrap_or_default(),
        diagnostics: parsed.diagnostics,
        index_key: key.to_string(),
    })
}

/// Extracts the `normal_pattern` field of a reference-learning response.
pub fn parse_reference_summary(text: &str) -> Result<String> {
    let obj = parse_json_object(text)?;
    match string_field(&obj, "normal_pattern") {
        Some(s) if !s.trim().is_empty() => Ok(s),
        _ => Err(Error::Schema {
            message: "missing or empty `normal_pattern`".into(),
            raw: text.to_string(),
        }),
    }
}

fn string_field(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn parse_json_object(text: &str) -> Result<serde_json::Map<String, Value>> {
    let body = strip_fence(text);
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(Error::Schema {
            message: format!("expected a JSON object, found {}", json_kind(&other)),
            raw: text.to_string(),
        }),
        Err(e) => Err(Error::Schema {
            message: format!("not valid JSON: {e}"),
            raw: text.to_string(),
        }),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Strips one surrounding markdown code fence, if present.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let Some(rest) = rest.strip_suffix("```") else {
        return t;
    };
    // drop the info string (e.g. `json`) on the opening line
    match rest.find('\n') {
        Some(nl) => rest[nl + 1..].trim(),
        None => rest.trim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(s: usize, e: usize, c: u8, k: AnomalyType) -> Detection {
        Detection::new(AnomalyInterval::new(s, e).unwrap(), Confidence::new(c).unwrap(), k)
    }

    #[test]
    fn parses_single_entry() {
        let p = parse_index_list("[(10, 20)/3/shapelet]", 600);
        assert_eq!(p.detections, vec![det(10, 20, 3, AnomalyType::Shapelet)]);
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn swaps_reversed_span() {
        let p = parse_index_list("[(20, 10)/3/trend]", 600);
        assert_eq!(p.detections, vec![det(10, 20, 3, AnomalyType::Trend)]);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].kind, DiagnosticKind::Swapped);
    }

    #[test]
    fn parses_point_and_maps_labels() {
        let p = parse_index_list("[(5)/2/global, (30, 40)/4/frequency]", 600);
        assert_eq!(
            p.detections,
            vec![det(5, 5, 2, AnomalyType::Point), det(30, 40, 4, AnomalyType::Seasonal)]
        );
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn empty_list() {
        let p = parse_index_list("[]", 600);
        assert!(p.detections.is_empty());
        assert!(p.diagnostics.is_empty());
        let p = parse_index_list("  [ ]  ", 600);
        assert!(p.detections.is_empty() && p.diagnostics.is_empty());
    }

    #[test]
    fn clamps_out_of_window_indices() {
        let p = parse_index_list("[(590, 640)/2/trend, (-3, 4)/1/shapelet]", 600);
        assert_eq!(
            p.detections,
            vec![det(590, 599, 2, AnomalyType::Trend), det(0, 4, 1, AnomalyType::Shapelet)]
        );
        assert_eq!(p.diagnostics.iter().filter(|d| d.kind == DiagnosticKind::Clamped).count(), 2);
    }

    #[test]
    fn drops_bad_confidence_and_unknown_labels() {
        let p = parse_index_list("[(1, 2)/5/trend, (3, 4)/2/weird, (6)/0/point, (8)/4/Point]", 600);
        assert_eq!(p.detections, vec![det(8, 8, 4, AnomalyType::Point)]);
        let kinds: Vec<_> = p.diagnostics.iter().map(|d| d.kind).collect();
        assert_eq!(
            kinds,
            vec![DiagnosticKind::BadConfidence, DiagnosticKind::UnknownLabel, DiagnosticKind::BadConfidence]
        );
    }

    #[test]
    fn skips_malformed_entries_without_aborting() {
        let p = parse_index_list("[(1, 2/3/trend, garbage, (7, 9)/3/shapelet,]", 600);
        assert_eq!(p.detections, vec![det(7, 9, 3, AnomalyType::Shapelet)]);
        assert!(p.diagnostics.iter().all(|d| d.kind == DiagnosticKind::Malformed));
        assert!(!p.diagnostics.is_empty());
    }

    #[test]
    fn label_map() {
        assert_eq!(normalize_label("Global"), Ok(AnomalyType::Point));
        assert_eq!(normalize_label("contextual"), Ok(AnomalyType::Point));
        assert_eq!(normalize_label("frequency"), Ok(AnomalyType::Seasonal));
        assert_eq!(normalize_label("weird"), Err(UnknownLabel));
        for t in AnomalyType::ALL {
            assert_eq!(normalize_label(t.as_str()), Ok(t));
        }
    }

    #[test]
    fn custom_label_map() {
        let mut map = LabelMap::default();
        map.insert("Level_Shift", AnomalyType::Trend);
        let p = parse_index_list_with("[(1, 3)/2/level_shift]", 10, &map);
        assert_eq!(p.detections, vec![det(1, 3, 2, AnomalyType::Trend)]);
    }

    #[test]
    fn analysis_envelope() {
        let p = parse_analysis(r#"{"abnormal_index": "[]", "abnormal_description": "none"}"#, 600).unwrap();
        assert!(p.detections.is_empty());
        assert_eq!(p.abnormal_description, "none");
        assert_eq!(p.abnormal_type_description, "");

        let p = parse_analysis(r#"{"corrected_abnormal_index": "[(5)/2/global]"}"#, 600).unwrap();
        assert_eq!(p.detections, vec![det(5, 5, 2, AnomalyType::Point)]);
        assert_eq!(p.index_key, CORRECTED_INDEX_KEY);
    }

    #[test]
    fn analysis_errors_carry_raw_text() {
        match parse_analysis("definitely not json", 600) {
            Err(Error::Schema { raw, .. }) => assert_eq!(raw, "definitely not json"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_analysis(r#"{"foo": 1}"#, 600), Err(Error::Schema { .. })));
    }

    #[test]
    fn strips_one_fence() {
        let text = "```json\n{\"abnormal_index\": \"[(1, 2)/3/trend]\"}\n```";
        let p = parse_analysis(text, 10).unwrap();
        assert_eq!(p.detections, vec![det(1, 2, 3, AnomalyType::Trend)]);
    }

    #[test]
    fn array_valued_index_is_tolerated() {
        let text = r#"{"abnormal_index": ["(1, 2)/3/trend", "(4)/1/global"]}"#;
        let p = parse_analysis(text, 10).unwrap();
        assert_eq!(p.detections.len(), 2);
    }

    #[test]
    fn top_level_confidence_is_ignored() {
        let text = r#"{"abnormal_index": "[(1, 2)/3/trend]", "confidence": 1}"#;
        let p = parse_analysis(text, 10).unwrap();
        assert_eq!(p.detections[0].confidence.get(), 3);
    }

    #[test]
    fn reference_summary() {
        assert_eq!(parse_reference_summary(r#"{"normal_pattern": "sine"}"#).unwrap(), "sine");
        assert!(parse_reference_summary(r#"{"normal_pattern": ""}"#).is_err());
        assert!(parse_reference_summary(r#"{"other": "x"}"#).is_err());
    }

    #[test]
    fn serializes_points_compactly() {
        let s = serialize_index_list(&[det(5, 5, 2, AnomalyType::Point), det(1, 9, 4, AnomalyType::Seasonal)]);
        assert_eq!(s, "[(5)/2/point, (1, 9)/4/seasonal]");
        assert_eq!(serialize_index_list(&[]), "[]");
    }
}
