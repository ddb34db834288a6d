use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, MessagePart, Usage};

pub const DEFAULT_API_KEY_ENV: &str = "TAMA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_attempts: u32,
    pub timeout_secs: u64,
    /// First retry delay; doubles on each further attempt.
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            max_attempts: 3,
            timeout_secs: 120,
            backoff_ms: 1000,
        }
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    client: reqwest::blocking::Client,
    endpoint: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Reads the credential from the environment; fails without touching
    /// the network when it is missing.
    pub fn from_env(config: HttpConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.trim().is_empty());
        let Some(key) = key else {
            return Err(GatewayError::Config(format!(
                "environment variable {} is not set",
                config.api_key_env
            )));
        };
        Self::with_key(config, key)
    }

    pub fn with_key(config: HttpConfig, api_key: String) -> Result<Self, GatewayError> {
        if config.max_attempts == 0 {
            return Err(GatewayError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(format!("building HTTP client: {e}")))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(Self {
            config,
            api_key,
            client,
            endpoint,
        })
    }

    fn attempt(&self, body: &Value) -> Result<ChatResponse, Attempt> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| Attempt::Retry(format!("reading body: {e}")))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fail(GatewayError::Http {
                status,
                body: truncate(&text),
            }));
        }
        parse_completion(&text).map_err(Attempt::Fail)
    }
}

enum Attempt {
    Retry(String),
    Fail(GatewayError),
}

fn truncate(s: &str) -> String {
    const MAX: usize = 2000;
    match s.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

/// Builds the chat-completions request body.
pub(crate) fn request_body(req: &ChatRequest) -> Value {
    let b64 = base64::engine::general_purpose::STANDARD;
    let content: Vec<Value> = req
        .parts
        .iter()
        .map(|p| match p {
            MessagePart::Text(t) => json!({"type": "text", "text": t}),
            MessagePart::Image(png) => json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{}", b64.encode(png))}
            }),
        })
        .collect();
    let mut body = json!({
        "model": req.params.model_name,
        "temperature": req.params.temperature,
        "top_p": req.params.top_p,
        "messages": [{"role": "user", "content": content}],
    });
    if req.params.force_structured_output {
        body["response_format"] = json!({"type": "json_object"});
    }
    body
}

fn parse_completion(text: &str) -> Result<ChatResponse, GatewayError> {
    let v: Value = serde_json::from_str(text).map_err(|e| GatewayError::BadResponse(format!("not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BadResponse("missing choices[0].message.content".into()))?;
    let usage = v.get("usage").and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
    let backend_id = v
        .get("model")
        .and_then(Value::as_str)
        .map(|m| format!("http:{m}"))
        .unwrap_or_else(|| "http".to_string());
    Ok(ChatResponse {
        text: content.to_string(),
        usage,
        backend_id,
    })
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let body = request_body(req);
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            match self.attempt(&body) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, max = self.config.max_attempts, "chat request failed: {msg}");
                    last = msg;
                    if attempt < self.config.max_attempts {
                        let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(GatewayError::Exhausted {
            attempts: self.config.max_attempts,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatParams;

    #[test]
    fn body_shape() {
        let req = ChatRequest::new(
            vec![MessagePart::Text("hello".into()), MessagePart::Image(vec![137, 80, 78, 71])],
            ChatParams::default(),
        );
        let b = request_body(&req);
        assert_eq!(b["model"], "gpt-4o-2024-05-13");
        assert_eq!(b["temperature"], 0.1);
        assert_eq!(b["top_p"], 0.3);
        assert_eq!(b["response_format"]["type"], "json_object");
        let content = b["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content[0]["text"], "hello");
        assert_eq!(content[1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
    }

    #[test]
    fn completion_parsing() {
        let r = parse_completion(
            r#"{"model":"m","choices":[{"message":{"content":"{\"a\":1}"}}],
               "usage":{"prompt_tokens":3,"completion_tokens":4,"total_tokens":7}}"#,
        )
        .unwrap();
        assert_eq!(r.text, "{\"a\":1}");
        assert_eq!(r.usage.unwrap().total_tokens, 7);
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn missing_credentials_is_config_error() {
        let cfg = HttpConfig {
            api_key_env: "TAMA_TEST_SURELY_UNSET_KEY".into(),
            base_url: "http://127.0.0.1:9".into(),
            ..Default::default()
        };
        assert!(matches!(HttpBackend::from_env(cfg), Err(GatewayError::Config(_))));
    }
}
