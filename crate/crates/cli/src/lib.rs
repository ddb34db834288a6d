//! Command implementations behind the `tama` binary.

pub mod args;
pub mod cache_cmd;
pub mod config;
pub mod detect;
pub mod eval;
pub mod render;
pub mod synth;

use std::path::{Path, PathBuf};

use tama_core::gateway::GatewayError;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or missing credentials.
    #[error("configuration error: {0}")]
    Config(String),
    /// Some series failed; the rest were written.
    #[error("{failed} of {total} series failed")]
    Partial { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] tama_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if is_config_error(e) => EXIT_CONFIG,
            _ => EXIT_PARTIAL,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Core(e.into())
    }
}

/// Errors that no amount of retrying or per-series isolation can fix.
pub fn is_config_error(e: &tama_core::Error) -> bool {
    match e {
        tama_core::Error::Config(_) => true,
        tama_core::Error::Gateway(GatewayError::Config(_)) => true,
        tama_core::Error::Gateway(GatewayError::Http { status, .. }) => matches!(status, 401 | 403),
        _ => false,
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(tama_core::Error::from)?;
    text.push('\n');
    write_file(path, text)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(tama_core::Error::from)?)
}

/// Directory-safe form of a series name.
pub fn sanitize_name(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    match s.trim_matches('.') {
        "" => "series".to_string(),
        t => t.to_string(),
    }
}

/// One output directory name per series, unique even when sanitized names collide.
pub fn series_dirs<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut used = std::collections::BTreeSet::new();
    names
        .into_iter()
        .map(|n| {
            let base = sanitize_name(n);
            let mut candidate = base.clone();
            let mut i = 2;
            while !used.insert(candidate.clone()) {
                candidate = format!("{base}_{i}");
                i += 1;
            }
            candidate
        })
        .collect()
}
