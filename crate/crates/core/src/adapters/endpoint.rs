use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AdapterError, ModelAdapter, ModelRequest, ModelResponse, ResponseStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// Single-turn chat message; reply read from `choices[0].message.content`.
    ChatCompletion,
    /// Prompt posted as the plain-text body; reply is the response body.
    RawText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub url: String,
    pub api_style: ApiStyle,
    #[serde(default)]
    pub auth_token: Option<String>,
    /// Environment variable that, when set, overrides `auth_token`.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Per-attempt deadline in seconds.
    pub deadline: f64,
    #[serde(default)]
    pub max_retries: u32,
}

impl EndpointSpec {
    pub fn validate(&self) -> Result<(), AdapterError> {
        if !(self.deadline > 0.0 && self.deadline.is_finite()) {
            return Err(AdapterError::InvalidSpec(format!("deadline must be > 0, got {}", self.deadline)));
        }
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(AdapterError::InvalidSpec(format!("unsupported url {}", self.url)));
        }
        Ok(())
    }

    pub fn resolved_token(&self) -> Option<String> {
        self.auth_token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
            .or_else(|| self.auth_token.clone())
    }

    fn deadline(&self) -> Duration {
        Duration::from_secs_f64(self.deadline)
    }
}

/// The JSON body sent for `chat_completion` endpoints.
pub fn chat_body(model: Option<&str>, request: &ModelRequest) -> Value {
    let mut content = vec![json!({"type": "text", "text": request.prompt})];
    for image in &request.images {
        let b64 = base64::engine::general_purpose::STANDARD.encode(&image.data);
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:image/{};base64,{}", image.encoding, b64)}
        }));
    }
    json!({
        "model": model.unwrap_or("default"),
        "messages": [{"role": "user", "content": content}],
        "stream": false
    })
}

pub struct EndpointAdapter {
    spec: EndpointSpec,
    client: reqwest::blocking::Client,
}

impl EndpointAdapter {
    pub fn new(spec: EndpointSpec) -> Result<Self, AdapterError> {
        spec.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(spec.deadline())
            .connect_timeout(spec.deadline())
            .build()
            .map_err(|e| AdapterError::InvalidSpec(e.to_string()))?;
        Ok(Self { spec, client })
    }

    fn attempt(&self, request: &ModelRequest) -> (ModelResponse, bool) {
        let start = Instant::now();
        let mut builder = self.client.post(&self.spec.url);
        if let Some(token) = self.spec.resolved_token() {
            builder = builder.bearer_auth(token);
        }
        builder = match self.spec.api_style {
            ApiStyle::ChatCompletion => builder.json(&chat_body(self.spec.model.as_deref(), request)),
            ApiStyle::RawText => builder
                .header("content-type", "text/plain; charset=utf-8")
                .body(request.prompt.clone()),
        };
        let elapsed = || start.elapsed().as_secs_f64();
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return (ModelResponse::failure(ResponseStatus::Timeout, e.to_string(), elapsed()), true)
            }
            Err(e) => return (ModelResponse::failure(ResponseStatus::TransportError, e.to_string(), elapsed()), true),
        };
        let status = response.status();
        let body = match response.text() {
            Ok(b) => b,
            Err(e) if e.is_timeout() => {
                return (ModelResponse::failure(ResponseStatus::Timeout, e.to_string(), elapsed()), true)
            }
            Err(e) => return (ModelResponse::failure(ResponseStatus::TransportError, e.to_string(), elapsed()), true),
        };
        if !status.is_success() {
            let retry = status.is_server_error();
            return (
                ModelResponse::failure(ResponseStatus::RemoteError, format!("http {}", status.as_u16()), elapsed()),
                retry,
            );
        }
        let text = match self.spec.api_style {
            ApiStyle::RawText => body,
            ApiStyle::ChatCompletion => match serde_json::from_str::<Value>(&body) {
                Ok(v) => match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
                    Some(t) => t.to_string(),
                    None => {
                        return (
                            ModelResponse::failure(ResponseStatus::RemoteError, "missing choices[0].message.content", elapsed()),
                            false,
                        )
                    }
                },
                Err(e) => {
                    return (
                        ModelResponse::failure(ResponseStatus::RemoteError, format!("bad json: {e}"), elapsed()),
                        false,
                    )
                }
            },
        };
        (ModelResponse::ok(text, elapsed()), false)
    }
}

impl ModelAdapter for EndpointAdapter {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        let start = Instant::now();
        let mut last = None;
        for _ in 0..=self.spec.max_retries {
            let (resp, retryable) = self.attempt(request);
            if resp.is_ok() || !retryable {
                return ModelResponse {
                    latency_s: start.elapsed().as_secs_f64(),
                    ..resp
                };
            }
            last = Some(resp);
        }
        let resp = last.expect("at least one attempt");
        ModelResponse {
            latency_s: start.elapsed().as_secs_f64(),
            ..resp
        }
    }
}

/// One-shot call; an invalid spec is reported as a remote error.
pub fn call_endpoint(spec: &EndpointSpec, request: &ModelRequest) -> ModelResponse {
    match EndpointAdapter::new(spec.clone()) {
        Ok(adapter) => adapter.complete(request),
        Err(e) => ModelResponse::failure(ResponseStatus::RemoteError, e.to_string(), 0.0),
    }
}
