use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{CacheKey, ChatBackend, ChatRequest, ChatResponse, GatewayError};

const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Pass every request through; store nothing.
    Off,
    /// Always call the backend and store the result, overwriting.
    Record,
    /// Serve hits from the cache; call and store on a miss.
    #[default]
    ReadThrough,
    /// Serve only from the cache; a miss is an error.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheIndexEntry {
    pub key: CacheKey,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_index: Option<usize>,
    pub text_parts: usize,
    pub image_parts: usize,
    pub request_bytes: usize,
}

impl CacheIndexEntry {
    fn describe(key: &CacheKey, req: &ChatRequest) -> Self {
        let meta = req.metadata();
        Self {
            key: key.clone(),
            model_name: req.params.model_name.clone(),
            stage: meta.as_ref().map(|m| m.stage.as_str().to_string()),
            window_index: meta.and_then(|m| m.window_index),
            text_parts: req.texts().count(),
            image_parts: req.image_count(),
            request_bytes: req
                .parts
                .iter()
                .map(|p| match p {
                    super::MessagePart::Text(t) => t.len(),
                    super::MessagePart::Image(b) => b.len(),
                })
                .sum(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredResponse {
    key: CacheKey,
    response: ChatResponse,
}

/// Content-addressed response store: `<dir>/<hex digest>.json` plus an
/// append-only `index.jsonl` describing each request.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    index_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(format!("creating {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            index_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.as_str()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<ChatResponse>, GatewayError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("reading {}: {e}", path.display()))),
        };
        let stored: StoredResponse = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Cache(format!("corrupt entry {}: {e}", path.display())))?;
        if stored.key != *key {
            return Err(GatewayError::Cache(format!("entry {} holds key {}", path.display(), stored.key)));
        }
        Ok(Some(stored.response))
    }

    pub fn put(&self, key: &CacheKey, req: &ChatRequest, resp: &ChatResponse) -> Result<(), GatewayError> {
        let err = |what: &str, e: &dyn std::fmt::Display| GatewayError::Cache(format!("{what}: {e}"));
        let stored = StoredResponse {
            key: key.clone(),
            response: resp.clone(),
        };
        let body = serde_json::to_vec_pretty(&stored).map_err(|e| err("serializing", &e))?;
        let path = self.path_for(key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{:?}.tmp",
            key.as_str(),
            std::process::id(),
            std::thread::current().id()
        ));
        fs::write(&tmp, &body).map_err(|e| err("writing entry", &e))?;
        fs::rename(&tmp, &path).map_err(|e| err("renaming entry", &e))?;

        let line = serde_json::to_string(&CacheIndexEntry::describe(key, req)).map_err(|e| err("index", &e))?;
        let _guard = self.index_lock.lock().expect("index lock poisoned");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(INDEX_FILE))
            .map_err(|e| err("opening index", &e))?;
        writeln!(f, "{line}").map_err(|e| err("appending index", &e))?;
        Ok(())
    }

    /// Keys of every stored response, sorted.
    pub fn keys(&self) -> Result<Vec<CacheKey>, GatewayError> {
        let rd = fs::read_dir(&self.dir).map_err(|e| GatewayError::Cache(format!("listing cache: {e}")))?;
        let mut keys: Vec<CacheKey> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let hex = name.strip_suffix(".json")?;
                (hex.len() == 64 && hex.bytes().all(|b| b.is_ascii_hexdigit())).then(|| CacheKey(hex.to_string()))
            })
            .collect();
        keys.sort();
        Ok(keys)
    }

    /// Index lines, most recent description per key last. Unreadable lines are skipped.
    pub fn index(&self) -> Result<Vec<CacheIndexEntry>, GatewayError> {
        let path = self.dir.join(INDEX_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(GatewayError::Cache(format!("reading index: {e}"))),
        };
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }

    /// Removes every entry and the index. Returns the number of entries removed.
    pub fn purge(&self) -> Result<usize, GatewayError> {
        let keys = self.keys()?;
        for k in &keys {
            fs::remove_file(self.path_for(k)).map_err(|e| GatewayError::Cache(format!("removing {k}: {e}")))?;
        }
        match fs::remove_file(self.dir.join(INDEX_FILE)) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(GatewayError::Cache(format!("removing index: {e}"))),
        }
        Ok(keys.len())
    }
}

/// A backend wrapped with a response cache.
pub struct CachedBackend {
    inner: Option<Arc<dyn ChatBackend>>,
    cache: Arc<ResponseCache>,
    mode: CacheMode,
    live_calls: AtomicUsize,
    hits: AtomicUsize,
    id: String,
}

impl CachedBackend {
    /// `inner` may be `None` only in strict mode.
    pub fn new(
        inner: Option<Arc<dyn ChatBackend>>,
        cache: Arc<ResponseCache>,
        mode: CacheMode,
    ) -> Result<Self, GatewayError> {
        if inner.is_none() && mode != CacheMode::Strict {
            return Err(GatewayError::Config(format!("cache mode {mode:?} needs a live backend")));
        }
        let id = match &inner {
            Some(b) => format!("cached:{}", b.id()),
            None => "replay".to_string(),
        };
        Ok(Self {
            inner,
            cache,
            mode,
            live_calls: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            id,
        })
    }

    pub fn live_calls(&self) -> usize {
        self.live_calls.load(Ordering::SeqCst)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    fn call_inner(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let inner = self.inner.as_ref().expect("checked in constructor");
        self.live_calls.fetch_add(1, Ordering::SeqCst);
        inner.complete(req)
    }
}

impl ChatBackend for CachedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = req.cache_key();
        match self.mode {
            CacheMode::Off => self.call_inner(req),
            CacheMode::Record => {
                let resp = self.call_inner(req)?;
                self.cache.put(&key, req, &resp)?;
                Ok(resp)
            }
            CacheMode::ReadThrough => {
                if let Some(r) = self.cache.get(&key)? {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                    return Ok(r);
                }
                let resp = self.call_inner(req)?;
                self.cache.put(&key, req, &resp)?;
                Ok(resp)
            }
            CacheMode::Strict => match self.cache.get(&key)? {
                Some(r) => {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                    Ok(r)
                }
                None => Err(GatewayError::ReplayMiss { key: key.0 }),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatParams, MessagePart};

    struct Counter(AtomicUsize);

    impl ChatBackend for Counter {
        fn id(&self) -> &str {
            "counter"
        }
        fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            Ok(ChatResponse {
                text: format!("reply {n}"),
                usage: None,
                backend_id: "counter".into(),
            })
        }
    }

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![MessagePart::Text(text.into())], ChatParams::default())
    }

    #[test]
    fn record_then_strict_replay() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        let live: Arc<dyn ChatBackend> = Arc::new(Counter(AtomicUsize::new(0)));
        let rec = CachedBackend::new(Some(live), cache.clone(), CacheMode::Record).unwrap();
        let a = rec.complete(&req("a")).unwrap();
        let b = rec.complete(&req("b")).unwrap();
        assert_eq!(rec.live_calls(), 2);

        let replay = CachedBackend::new(None, cache.clone(), CacheMode::Strict).unwrap();
        assert_eq!(replay.complete(&req("a")).unwrap(), a);
        assert_eq!(replay.complete(&req("b")).unwrap(), b);
        assert!(matches!(replay.complete(&req("c")), Err(GatewayError::ReplayMiss { .. })));
        assert_eq!(replay.live_calls(), 0);

        assert_eq!(cache.keys().unwrap().len(), 2);
        assert_eq!(cache.index().unwrap().len(), 2);
        assert_eq!(cache.purge().unwrap(), 2);
        assert!(cache.keys().unwrap().is_empty());
    }

    #[test]
    fn read_through_calls_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        let live: Arc<dyn ChatBackend> = Arc::new(Counter(AtomicUsize::new(0)));
        let rt = CachedBackend::new(Some(live), cache, CacheMode::ReadThrough).unwrap();
        let first = rt.complete(&req("x")).unwrap();
        assert_eq!(rt.complete(&req("x")).unwrap(), first);
        assert_eq!(rt.live_calls(), 1);
        assert_eq!(rt.hits(), 1);
    }

    #[test]
    fn non_strict_needs_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
        assert!(CachedBackend::new(None, cache, CacheMode::ReadThrough).is_err());
    }
}
