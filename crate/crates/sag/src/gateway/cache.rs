//! Request-hash keyed response caching, session recording, and replay.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::Digest;

use super::{ChatClient, ChatRequest, GatewayError};

/// Stable content hash of a request: sha256 over its canonical JSON.
pub fn request_hash(request: &ChatRequest) -> String {
    let bytes = serde_json::to_vec(request).expect("request serializes");
    hex::encode(sha2::Sha256::digest(&bytes))
}

/// Content-addressed file cache in front of any client. Reads are lock-free;
/// writes go through a temp file, a rename, and one writer at a time.
pub struct CachingClient<C> {
    inner: C,
    dir: PathBuf,
    write_lock: Mutex<()>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    response: String,
}

impl<C> CachingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachingClient { inner, dir, write_lock: Mutex::new(()) })
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }
}

impl<C: ChatClient> ChatClient for CachingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let hash = request_hash(request);
        let path = self.path_for(&hash);
        if let Ok(bytes) = std::fs::read(&path) {
            let entry: CacheEntry = serde_json::from_slice(&bytes)
                .map_err(|e| GatewayError::Io(std::io::Error::other(e)))?;
            return Ok(entry.response);
        }
        let response = self.inner.complete(request)?;
        {
            let _guard = self.write_lock.lock().expect("cache writer lock");
            let tmp = self.dir.join(format!(".{hash}.tmp"));
            let body = serde_json::to_vec(&CacheEntry { response: response.clone() })
                .map_err(|e| GatewayError::Io(std::io::Error::other(e)))?;
            std::fs::write(&tmp, body)?;
            std::fs::rename(&tmp, &path)?;
        }
        Ok(response)
    }
}

#[derive(Serialize, Deserialize)]
struct LogEntry {
    hash: String,
    model: String,
    response: String,
}

/// Logs every outbound request's content hash and response to a JSONL
/// session file.
pub struct RecordingClient<C> {
    inner: C,
    log_path: PathBuf,
    lock: Mutex<()>,
}

impl<C> RecordingClient<C> {
    pub fn new(inner: C, log_path: impl Into<PathBuf>) -> Self {
        RecordingClient { inner, log_path: log_path.into(), lock: Mutex::new(()) }
    }
}

impl<C: ChatClient> ChatClient for RecordingClient<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let response = self.inner.complete(request)?;
        let entry = LogEntry {
            hash: request_hash(request),
            model: request.model.clone(),
            response: response.clone(),
        };
        let _guard = self.lock.lock().expect("session log lock");
        let mut file =
            std::fs::OpenOptions::new().create(true).append(true).open(&self.log_path)?;
        serde_json::to_writer(&mut file, &entry)
            .map_err(|e| GatewayError::Io(std::io::Error::other(e)))?;
        writeln!(file)?;
        Ok(response)
    }
}

/// Serves responses from a recorded session, erroring on unseen requests.
pub struct ReplayClient {
    by_hash: HashMap<String, String>,
}

impl ReplayClient {
    pub fn from_log(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path.into())?;
        let mut by_hash = HashMap::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Io(std::io::Error::other(e)))?;
            by_hash.insert(entry.hash, entry.response);
        }
        Ok(ReplayClient { by_hash })
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let hash = request_hash(request);
        self.by_hash
            .get(&hash)
            .cloned()
            .ok_or(GatewayError::UnknownRequest(hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Message, Role};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        calls: AtomicUsize,
    }

    impl ChatClient for Counting {
        fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(format!("echo: {}", request.messages[0].content))
        }
    }

    fn request(content: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![Message { role: Role::User, content: content.into() }],
            temperature: 0.0,
            max_tokens: 8,
        }
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = request_hash(&request("hello"));
        let b = request_hash(&request("hello"));
        let c = request_hash(&request("world"));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn cache_hits_skip_inner_client() {
        let dir = tempfile::tempdir().unwrap();
        let client =
            CachingClient::new(Counting { calls: AtomicUsize::new(0) }, dir.path()).unwrap();
        let r1 = client.complete(&request("q")).unwrap();
        let r2 = client.complete(&request("q")).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(client.inner.calls.load(Ordering::SeqCst), 1);
        let _ = client.complete(&request("other")).unwrap();
        assert_eq!(client.inner.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn record_then_replay_reproduces_responses() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("session.jsonl");
        let recorder = RecordingClient::new(Counting { calls: AtomicUsize::new(0) }, &log);
        let r1 = recorder.complete(&request("alpha")).unwrap();
        let r2 = recorder.complete(&request("beta")).unwrap();

        let replay = ReplayClient::from_log(&log).unwrap();
        assert_eq!(replay.complete(&request("alpha")).unwrap(), r1);
        assert_eq!(replay.complete(&request("beta")).unwrap(), r2);
        assert!(matches!(
            replay.complete(&request("never seen")),
            Err(GatewayError::UnknownRequest(_))
        ));
    }
}
