use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdapterError, ModelAdapter, ModelRequest, ModelResponse, ResponseStatus, SharedAdapter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CassetteMode {
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub text: String,
    pub status: ResponseStatus,
}

/// Stable request key: SHA-256 over the length-framed prompt followed by the
/// SHA-256 digest of every image payload, hex encoded.
pub fn request_hash(request: &ModelRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update((request.prompt.len() as u64).to_be_bytes());
    hasher.update(request.prompt.as_bytes());
    hasher.update((request.images.len() as u64).to_be_bytes());
    for image in &request.images {
        hasher.update(Sha256::digest(&image.data));
    }
    hex::encode(hasher.finalize())
}

/// Records an inner adapter's answers to a JSON cassette, or replays them.
pub struct RecordReplayAdapter {
    inner: Option<SharedAdapter>,
    path: PathBuf,
    mode: CassetteMode,
    entries: Mutex<BTreeMap<String, CassetteEntry>>,
}

fn load_cassette(path: &Path) -> Result<BTreeMap<String, CassetteEntry>, AdapterError> {
    let err = |reason: String| AdapterError::Cassette {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

impl RecordReplayAdapter {
    /// Record mode; an existing cassette at `path` is extended.
    pub fn record(inner: SharedAdapter, path: impl Into<PathBuf>) -> Result<Self, AdapterError> {
        let path = path.into();
        let entries = if path.exists() { load_cassette(&path)? } else { BTreeMap::new() };
        Ok(Self {
            inner: Some(inner),
            path,
            mode: CassetteMode::Record,
            entries: Mutex::new(entries),
        })
    }

    /// Replay mode; the cassette must already exist.
    pub fn replay(path: impl Into<PathBuf>) -> Result<Self, AdapterError> {
        let path = path.into();
        let entries = load_cassette(&path)?;
        Ok(Self {
            inner: None,
            path,
            mode: CassetteMode::Replay,
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().map(|e| e.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn persist(&self, entries: &BTreeMap<String, CassetteEntry>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(entries).expect("cassette serialization is infallible");
        let tmp = self.path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &self.path)
    }
}

impl ModelAdapter for RecordReplayAdapter {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        let key = request_hash(request);
        match self.mode {
            CassetteMode::Replay => {
                let entries = match self.entries.lock() {
                    Ok(e) => e,
                    Err(_) => return ModelResponse::failure(ResponseStatus::RemoteError, "cassette lock poisoned", 0.0),
                };
                match entries.get(&key) {
                    Some(CassetteEntry { text, status: ResponseStatus::Ok }) => ModelResponse::ok(text.clone(), 0.0),
                    Some(entry) => ModelResponse::failure(entry.status, "replayed failure", 0.0),
                    None => ModelResponse::failure(ResponseStatus::RemoteError, format!("cassette miss for {key}"), 0.0),
                }
            }
            CassetteMode::Record => {
                let Some(inner) = &self.inner else {
                    return ModelResponse::failure(ResponseStatus::RemoteError, "record mode without inner adapter", 0.0);
                };
                let resp = inner.complete(request);
                let Ok(mut entries) = self.entries.lock() else {
                    return resp;
                };
                entries.insert(
                    key,
                    CassetteEntry {
                        text: resp.text.clone(),
                        status: resp.status,
                    },
                );
                if let Err(e) = self.persist(&entries) {
                    return ModelResponse::failure(ResponseStatus::RemoteError, format!("cassette write failed: {e}"), resp.latency_s);
                }
                resp
            }
        }
    }
}
