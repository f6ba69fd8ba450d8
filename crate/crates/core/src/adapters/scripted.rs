use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdapterError, ModelAdapter, ModelRequest, ModelResponse, ResponseStatus};

/// One scripted rule. `contains: None` matches every prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub status: ResponseStatus,
    /// Artificial latency, for exercising deadlines.
    #[serde(default)]
    pub delay_ms: u64,
}

impl ScriptRule {
    pub fn reply(contains: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            contains: Some(contains.into()),
            text: text.into(),
            status: ResponseStatus::Ok,
            delay_ms: 0,
        }
    }

    pub fn always(text: impl Into<String>) -> Self {
        Self {
            contains: None,
            text: text.into(),
            status: ResponseStatus::Ok,
            delay_ms: 0,
        }
    }

    pub fn fail(contains: Option<String>, status: ResponseStatus) -> Self {
        Self {
            contains,
            text: String::new(),
            status,
            delay_ms: 0,
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains.as_deref().is_none_or(|needle| prompt.contains(needle))
    }
}

/// Deterministic mock: the first rule whose literal substring occurs in the
/// prompt answers. No match is a remote error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAdapter {
    rules: Vec<ScriptRule>,
}

impl ScriptedAdapter {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, AdapterError> {
        if let Some((i, _)) = rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.status == ResponseStatus::Ok && r.text.is_empty())
        {
            return Err(AdapterError::InvalidScript(format!("rule {i} answers ok with empty text")));
        }
        Ok(Self { rules })
    }

    /// Every call fails with `status`.
    pub fn always_failing(status: ResponseStatus) -> Self {
        Self {
            rules: vec![ScriptRule::fail(None, status)],
        }
    }

    pub fn from_json(text: &str) -> Result<Self, AdapterError> {
        let rules: Vec<ScriptRule> =
            serde_json::from_str(text).map_err(|e| AdapterError::InvalidScript(e.to_string()))?;
        Self::new(rules)
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ModelAdapter for ScriptedAdapter {
    fn complete(&self, request: &ModelRequest) -> ModelResponse {
        let Some(rule) = self.rules.iter().find(|r| r.matches(&request.prompt)) else {
            return ModelResponse::failure(ResponseStatus::RemoteError, "no scripted rule matches the prompt", 0.0);
        };
        if rule.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(rule.delay_ms));
        }
        let latency = rule.delay_ms as f64 / 1000.0;
        match rule.status {
            ResponseStatus::Ok => ModelResponse::ok(rule.text.clone(), latency),
            status => ModelResponse::failure(status, "scripted failure", latency),
        }
    }
}
