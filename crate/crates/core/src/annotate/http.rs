use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend};
use crate::prompt::AnnotationRequest;

/// Connection settings for an OpenAI-style `chat/completions` endpoint. The
/// credential is read from the named environment variable and never stored here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.7,
            timeout_secs: 120,
        }
    }
}

pub struct HttpBackend {
    settings: HttpSettings,
    api_key: String,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.settings.endpoint)
            .field("model", &self.settings.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpBackend {
    /// Reads the credential from `settings.api_key_env`.
    pub fn from_env(settings: HttpSettings) -> Result<Self, String> {
        let api_key = std::env::var(&settings.api_key_env)
            .map_err(|_| format!("environment variable {} is not set", settings.api_key_env))?;
        Ok(Self::with_key(settings, api_key))
    }

    pub fn with_key(settings: HttpSettings, api_key: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            settings,
            api_key,
            agent,
        }
    }

    pub fn request_body(&self, request: &AnnotationRequest) -> Value {
        let mut messages = Vec::with_capacity(2);
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_content}));
        json!({
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "messages": messages,
        })
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

fn retry_after(value: Option<&str>) -> Option<Duration> {
    value?.trim().parse::<f64>().ok().filter(|s| *s >= 0.0).map(Duration::from_secs_f64)
}

impl ChatBackend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.settings.model)
    }

    fn complete(&self, request: &AnnotationRequest) -> Result<String, BackendError> {
        let mut response = self
            .agent
            .post(&self.settings.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(request))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let after = retry_after(
            response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok()),
        );
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {
                let parsed: Completion = serde_json::from_str(&body)
                    .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .ok_or_else(|| BackendError::InvalidResponse("no choices[0].message.content".into()))
            }
            401 | 403 => Err(BackendError::Auth { status }),
            429 => Err(BackendError::RateLimited { retry_after: after }),
            500..=599 => Err(BackendError::Server {
                status,
                message: truncate(&body, 200),
            }),
            _ => Err(BackendError::Rejected {
                status,
                message: truncate(&body, 200),
            }),
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
