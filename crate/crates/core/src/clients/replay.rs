//! Record/replay cache for external-service calls.
//!
//! Requests are fingerprinted over a canonical serialization (keys sorted
//! recursively) so the hash survives field reordering, process restarts, and
//! platform byte orders. Replay mode never touches the wrapped live client;
//! a miss is an error carrying the fingerprint, never a silent live call.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChatClient, ChatRequest, ClientError, SearchClient, SearchRequest, SearchResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Call the live client and persist the pair before returning.
    Record,
    /// Serve from the cache only; a miss is an error.
    Replay,
    /// Call the live client without persisting.
    Passthrough,
}

impl CacheMode {
    pub fn parse(s: &str) -> Option<CacheMode> {
        match s {
            "record" => Some(CacheMode::Record),
            "replay" => Some(CacheMode::Replay),
            "passthrough" => Some(CacheMode::Passthrough),
            _ => None,
        }
    }
}

// Rewrites a JSON value with object keys sorted recursively, rendered with
// no insignificant whitespace.
fn canonicalize(value: &Value) -> String {
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, &Value> = map.iter().collect();
                out.push('{');
                for (i, (k, v)) in sorted.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string serializes"));
                    out.push(':');
                    write(v, out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// Stable fingerprint of a request: SHA-256 over `kind` plus the canonical
/// JSON form of the payload.
pub fn fingerprint(kind: &str, payload: &Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(kind.as_bytes());
    hasher.update(b"\n");
    hasher.update(canonicalize(payload).as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    fingerprint: String,
    request: Value,
    response: Value,
    recorded_at: u64,
}

/// Append-only JSON Lines cache shared by chat and search clients.
#[derive(Debug)]
pub struct ReplayCache {
    path: PathBuf,
    mode: CacheMode,
    entries: Mutex<BTreeMap<String, Value>>,
}

impl ReplayCache {
    /// Open a cache file, loading existing entries. The file is created lazily
    /// on first record; its parent directory is created here.
    pub fn open(path: impl AsRef<Path>, mode: CacheMode) -> Result<ReplayCache> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() && !parent.exists() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut entries = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (line_no, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheRecord = serde_json::from_str(&line).map_err(|e| {
                    Error::parse(format!("{} line {}", path.display(), line_no + 1), e.to_string())
                })?;
                entries.insert(record.fingerprint, record.response);
            }
        }
        Ok(ReplayCache { path, mode, entries: Mutex::new(entries) })
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, fingerprint: &str) -> Option<Value> {
        self.entries.lock().expect("cache lock").get(fingerprint).cloned()
    }

    /// Persist one entry; appends are serialized through the entry lock.
    pub fn put(&self, fingerprint: &str, request: &Value, response: &Value) -> Result<()> {
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.contains_key(fingerprint) {
            return Ok(());
        }
        let record = CacheRecord {
            fingerprint: fingerprint.to_string(),
            request: request.clone(),
            response: response.clone(),
            recorded_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        file.write_all(line.as_bytes())?;
        entries.insert(fingerprint.to_string(), response.clone());
        Ok(())
    }
}

/// Chat client wrapping a replay cache around an optional live client.
pub struct ReplayChatClient<C> {
    cache: std::sync::Arc<ReplayCache>,
    live: Option<C>,
}

impl<C: ChatClient> ReplayChatClient<C> {
    pub fn new(cache: std::sync::Arc<ReplayCache>, live: Option<C>) -> ReplayChatClient<C> {
        ReplayChatClient { cache, live }
    }

    fn live(&self) -> Result<&C, ClientError> {
        self.live.as_ref().ok_or_else(|| {
            ClientError::InvalidRequest("no live chat client configured for this cache mode".into())
        })
    }
}

impl<C: ChatClient> ChatClient for ReplayChatClient<C> {
    fn chat(&self, request: &ChatRequest) -> Result<String, ClientError> {
        request.validate()?;
        let payload = serde_json::to_value(request)
            .map_err(|e| ClientError::InvalidRequest(e.to_string()))?;
        let fp = fingerprint("chat", &payload);
        match self.cache.mode() {
            CacheMode::Replay => match self.cache.get(&fp) {
                Some(Value::String(completion)) => Ok(completion),
                Some(other) => Err(ClientError::MalformedResponse(format!(
                    "cached chat response is not a string: {other}"
                ))),
                None => Err(ClientError::ReplayMiss { fingerprint: fp }),
            },
            CacheMode::Record => {
                if let Some(Value::String(completion)) = self.cache.get(&fp) {
                    return Ok(completion);
                }
                let completion = self.live()?.chat(request)?;
                self.cache
                    .put(&fp, &payload, &Value::String(completion.clone()))
                    .map_err(|e| ClientError::Transport(format!("cache write failed: {e}")))?;
                Ok(completion)
            }
            CacheMode::Passthrough => self.live()?.chat(request),
        }
    }
}

/// Search client with the same replay semantics as chat. The fingerprint
/// covers only the query text, so `max_results` truncates after retrieval
/// and a single recording serves any requested count.
pub struct ReplaySearchClient<S> {
    cache: std::sync::Arc<ReplayCache>,
    live: Option<S>,
}

impl<S: SearchClient> ReplaySearchClient<S> {
    pub fn new(cache: std::sync::Arc<ReplayCache>, live: Option<S>) -> ReplaySearchClient<S> {
        ReplaySearchClient { cache, live }
    }

    fn live(&self) -> Result<&S, ClientError> {
        self.live.as_ref().ok_or_else(|| {
            ClientError::InvalidRequest("no live search client configured for this cache mode".into())
        })
    }
}

fn truncate(mut results: Vec<SearchResult>, max_results: usize) -> Vec<SearchResult> {
    results.truncate(max_results);
    results
}

impl<S: SearchClient> SearchClient for ReplaySearchClient<S> {
    fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
        if request.query.is_empty() {
            return Err(ClientError::InvalidRequest("query must be non-empty".into()));
        }
        if request.max_results == 0 {
            return Err(ClientError::InvalidRequest("max_results must be at least 1".into()));
        }
        let payload = serde_json::json!({ "query": request.query });
        let fp = fingerprint("search", &payload);
        let decode = |value: Value| -> Result<Vec<SearchResult>, ClientError> {
            serde_json::from_value(value)
                .map_err(|e| ClientError::MalformedResponse(e.to_string()))
        };
        match self.cache.mode() {
            CacheMode::Replay => match self.cache.get(&fp) {
                Some(value) => Ok(truncate(decode(value)?, request.max_results)),
                None => Err(ClientError::ReplayMiss { fingerprint: fp }),
            },
            CacheMode::Record => {
                if let Some(value) = self.cache.get(&fp) {
                    return Ok(truncate(decode(value)?, request.max_results));
                }
                let results = self.live()?.search(request)?;
                let value = serde_json::to_value(&results)
                    .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
                self.cache
                    .put(&fp, &payload, &value)
                    .map_err(|e| ClientError::Transport(format!("cache write failed: {e}")))?;
                Ok(truncate(results, request.max_results))
            }
            CacheMode::Passthrough => {
                Ok(truncate(self.live()?.search(request)?, request.max_results))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::ChatMessage;
    use std::sync::Arc;

    struct PanicClient;
    impl ChatClient for PanicClient {
        fn chat(&self, _request: &ChatRequest) -> Result<String, ClientError> {
            panic!("replay mode must never call the live client");
        }
    }
    impl SearchClient for PanicClient {
        fn search(&self, _request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
            panic!("replay mode must never call the live client");
        }
    }

    struct EchoClient;
    impl ChatClient for EchoClient {
        fn chat(&self, request: &ChatRequest) -> Result<String, ClientError> {
            Ok(format!("echo: {}", request.messages.last().unwrap().content))
        }
    }
    impl SearchClient for EchoClient {
        fn search(&self, request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
            Ok((0..3)
                .map(|i| SearchResult {
                    title: format!("t{i}"),
                    snippet: format!("snippet {i} for {}", request.query),
                    url: format!("https://example.org/{i}"),
                })
                .collect())
        }
    }

    fn temp_cache(mode: CacheMode) -> (tempfile::TempDir, Arc<ReplayCache>) {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::open(dir.path().join("cache.jsonl"), mode).unwrap();
        (dir, Arc::new(cache))
    }

    #[test]
    fn fingerprint_invariant_under_key_order() {
        let a: Value = serde_json::from_str(r#"{"model":"m","temperature":0.2,"messages":[]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"temperature":0.2,"messages":[],"model":"m"}"#).unwrap();
        assert_eq!(fingerprint("chat", &a), fingerprint("chat", &b));
    }

    #[test]
    fn fingerprint_distinguishes_payloads() {
        let a = serde_json::json!({"q": 1});
        let b = serde_json::json!({"q": 2});
        assert_ne!(fingerprint("chat", &a), fingerprint("chat", &b));
        assert_ne!(fingerprint("chat", &a), fingerprint("search", &a));
    }

    #[test]
    fn record_then_replay_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = ChatRequest::new("m", vec![ChatMessage::user("hello")]);

        let recorder = ReplayChatClient::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Record).unwrap()),
            Some(EchoClient),
        );
        let recorded = recorder.chat(&req).unwrap();

        let replayer = ReplayChatClient::<PanicClient>::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Replay).unwrap()),
            None,
        );
        assert_eq!(replayer.chat(&req).unwrap(), recorded);
    }

    #[test]
    fn replay_miss_names_fingerprint() {
        let (_dir, cache) = temp_cache(CacheMode::Replay);
        let client = ReplayChatClient::<PanicClient>::new(cache, None);
        let req = ChatRequest::new("m", vec![ChatMessage::user("novel")]);
        match client.chat(&req) {
            Err(ClientError::ReplayMiss { fingerprint }) => {
                assert_eq!(fingerprint.len(), 64);
            }
            other => panic!("expected replay miss, got {other:?}"),
        }
    }

    #[test]
    fn replay_mode_never_calls_live_client() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let req = ChatRequest::new("m", vec![ChatMessage::user("hello")]);
        ReplayChatClient::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Record).unwrap()),
            Some(EchoClient),
        )
        .chat(&req)
        .unwrap();

        // A live client that panics on use proves replay stays offline.
        let replayer = ReplayChatClient::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Replay).unwrap()),
            Some(PanicClient),
        );
        replayer.chat(&req).unwrap();
    }

    #[test]
    fn search_truncates_to_max_results() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let recorder = ReplaySearchClient::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Record).unwrap()),
            Some(EchoClient),
        );
        let full = recorder.search(&SearchRequest { query: "q".into(), max_results: 3 }).unwrap();
        assert_eq!(full.len(), 3);

        let replayer = ReplaySearchClient::<PanicClient>::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Replay).unwrap()),
            None,
        );
        let one = replayer.search(&SearchRequest { query: "q".into(), max_results: 1 }).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], full[0]);
    }

    #[test]
    fn empty_search_result_replays_as_empty() {
        struct EmptyClient;
        impl SearchClient for EmptyClient {
            fn search(&self, _request: &SearchRequest) -> Result<Vec<SearchResult>, ClientError> {
                Ok(Vec::new())
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        ReplaySearchClient::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Record).unwrap()),
            Some(EmptyClient),
        )
        .search(&SearchRequest { query: "nothing".into(), max_results: 2 })
        .unwrap();
        let replayer = ReplaySearchClient::<PanicClient>::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Replay).unwrap()),
            None,
        );
        let out = replayer.search(&SearchRequest { query: "nothing".into(), max_results: 2 }).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn cache_file_is_json_lines_with_expected_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let recorder = ReplayChatClient::new(
            Arc::new(ReplayCache::open(&path, CacheMode::Record).unwrap()),
            Some(EchoClient),
        );
        recorder.chat(&ChatRequest::new("m", vec![ChatMessage::user("hi")])).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let record: Value = serde_json::from_str(content.lines().next().unwrap()).unwrap();
        for field in ["fingerprint", "request", "response", "recorded_at"] {
            assert!(record.get(field).is_some(), "missing {field}");
        }
    }
}
