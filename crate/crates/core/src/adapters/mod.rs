//! Uniform model clients: HTTP endpoints, scripted mocks and record/replay.
//!
//! Every adapter answers with a [`ModelResponse`]; failures are carried in its
//! status and never escape as panics or errors, so an episode runner survives
//! any adapter behaviour.

mod endpoint;
mod record;
mod scripted;

use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use endpoint::{call_endpoint, ApiStyle, EndpointAdapter, EndpointSpec};
pub use record::{request_hash, CassetteEntry, CassetteMode, RecordReplayAdapter};
pub use scripted::{ScriptRule, ScriptedAdapter};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("invalid endpoint spec: {0}")]
    InvalidSpec(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("cassette {path}: {reason}")]
    Cassette { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    #[default]
    Ok,
    Timeout,
    TransportError,
    RemoteError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub encoding: String,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelRequest {
    pub prompt: String,
    pub images: Vec<ImagePayload>,
}

impl ModelRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            images: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub latency_s: f64,
    pub status: ResponseStatus,
    /// Diagnostic for non-ok statuses.
    pub detail: Option<String>,
}

impl ModelResponse {
    pub fn ok(text: impl Into<String>, latency_s: f64) -> Self {
        let text = text.into();
        if text.is_empty() {
            return Self::failure(ResponseStatus::RemoteError, "empty response text", latency_s);
        }
        Self {
            text,
            latency_s,
            status: ResponseStatus::Ok,
            detail: None,
        }
    }

    pub fn failure(status: ResponseStatus, detail: impl Into<String>, latency_s: f64) -> Self {
        Self {
            text: String::new(),
            latency_s,
            status,
            detail: Some(detail.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ResponseStatus::Ok
    }

    /// One-line description of a failure, for trace and skip logs.
    pub fn describe_failure(&self) -> String {
        format!(
            "{:?}: {}",
            self.status,
            self.detail.as_deref().unwrap_or("no detail")
        )
    }
}

pub trait ModelAdapter: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> ModelResponse;
}

pub type SharedAdapter = Arc<dyn ModelAdapter>;

/// Run one call under a hard wall-clock deadline. A call still running at the
/// deadline is abandoned on its worker thread and reported as a timeout.
pub fn call_with_deadline(adapter: &SharedAdapter, request: &ModelRequest, deadline: Duration) -> ModelResponse {
    let (tx, rx) = mpsc::sync_channel(1);
    let worker = Arc::clone(adapter);
    let req = request.clone();
    let start = Instant::now();
    let spawned = std::thread::Builder::new()
        .name("model-call".into())
        .spawn(move || {
            let _ = tx.send(worker.complete(&req));
        });
    if let Err(e) = spawned {
        return ModelResponse::failure(ResponseStatus::TransportError, format!("spawn failed: {e}"), 0.0);
    }
    match rx.recv_timeout(deadline) {
        Ok(resp) => resp,
        Err(mpsc::RecvTimeoutError::Timeout) => ModelResponse::failure(
            ResponseStatus::Timeout,
            format!("deadline of {:.3} s exceeded", deadline.as_secs_f64()),
            start.elapsed().as_secs_f64(),
        ),
        Err(mpsc::RecvTimeoutError::Disconnected) => ModelResponse::failure(
            ResponseStatus::RemoteError,
            "adapter panicked",
            start.elapsed().as_secs_f64(),
        ),
    }
}
