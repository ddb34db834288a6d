use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tama_core::gateway::ResponseCache;

use crate::config::CACHE_DIR_ENV;
use crate::CliError;

fn resolve_dir(dir: Option<&Path>) -> Result<PathBuf, CliError> {
    dir.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::Config(format!("no cache directory given and {CACHE_DIR_ENV} is unset")))
}

fn open(dir: Option<&Path>) -> Result<ResponseCache, CliError> {
    let dir = resolve_dir(dir)?;
    if !dir.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", dir.display())));
    }
    ResponseCache::open(&dir).map_err(|e| CliError::Config(e.to_string()))
}

/// Entry count, then counts per model and stage.
pub fn cmd_inspect(dir: Option<&Path>) -> Result<String, CliError> {
    let cache = open(dir)?;
    let keys = cache.keys()?;
    let index = cache.index()?;
    let mut by_group: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for e in index.iter().rev() {
        if seen.insert(e.key.0.clone()) {
            let stage = e.stage.clone().unwrap_or_else(|| "-".into());
            *by_group.entry((e.model_name.clone(), stage)).or_default() += 1;
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "{}: {} entries", cache.dir().display(), keys.len());
    for ((model, stage), n) in by_group {
        let _ = writeln!(s, "  {model:<28} {stage:<10} {n}");
    }
    Ok(s)
}

pub fn cmd_purge(dir: Option<&Path>) -> Result<usize, CliError> {
    Ok(open(dir)?.purge()?)
}
