//! Chat-completion client for OpenAI-compatible endpoints, plus a scripted
//! mock backend for offline runs.
//!
//! Wire format: `POST {endpoint}/chat/completions` with `model`, `messages`,
//! `temperature` and `max_tokens`; the reply is read from
//! `choices[0].message.content`, `choices[0].finish_reason` and `usage`.

use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_API_KEY_ENV: &str = "TABSEM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("mock script exhausted after {0} responses")]
    ScriptExhausted(usize),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: 4096,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.into()));
        match self.messages.last() {
            None => return invalid("messages must not be empty"),
            Some(m) if m.role != Role::User => {
                return invalid("last message must be from the user")
            }
            _ => {}
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return invalid("temperature must be >= 0");
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

/// Scripted responses played back in order.
#[derive(Debug)]
pub struct MockScript {
    responses: Vec<String>,
    cursor: Mutex<usize>,
}

impl MockScript {
    /// Number of responses handed out so far.
    pub fn calls(&self) -> usize {
        *self.cursor.lock().expect("mock cursor poisoned")
    }

    fn next(&self) -> Result<String, GatewayError> {
        let mut cursor = self.cursor.lock().expect("mock cursor poisoned");
        let reply = self
            .responses
            .get(*cursor)
            .cloned()
            .ok_or(GatewayError::ScriptExhausted(self.responses.len()))?;
        *cursor += 1;
        Ok(reply)
    }
}

#[derive(Debug, Clone)]
pub enum BackendKind {
    Http,
    Mock(Arc<MockScript>),
}

#[derive(Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key; read per call.
    pub api_key_env: String,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
    recorder: Option<Arc<Mutex<Vec<String>>>>,
    agent: Arc<OnceLock<ureq::Agent>>,
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendConfig")
            .field("kind", &self.kind)
            .field("endpoint_url", &self.endpoint_url)
            .field("api_key_env", &self.api_key_env)
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("retries", &self.retries)
            .finish_non_exhaustive()
    }
}

impl BackendConfig {
    pub fn http(endpoint_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
            model: model.into(),
            timeout: Duration::from_secs(120),
            retries: 3,
            backoff: Duration::from_millis(500),
            recorder: None,
            agent: Arc::new(OnceLock::new()),
        }
    }

    /// Human-readable backend identity for reports. Never includes secrets.
    pub fn name(&self) -> String {
        match self.kind {
            BackendKind::Http => format!("http:{}", self.model),
            BackendKind::Mock(_) => "mock".to_string(),
        }
    }

    pub fn mock(&self) -> Option<&MockScript> {
        match &self.kind {
            BackendKind::Mock(script) => Some(script),
            BackendKind::Http => None,
        }
    }

    /// Start capturing every successful completion so the run can be replayed
    /// later through [`mock_script`].
    pub fn with_recording(mut self) -> Self {
        self.recorder = Some(Arc::new(Mutex::new(Vec::new())));
        self
    }

    pub fn recorded(&self) -> Vec<String> {
        self.recorder
            .as_ref()
            .map(|r| r.lock().expect("recorder poisoned").clone())
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if matches!(self.kind, BackendKind::Http)
            && self.endpoint_url.as_deref().is_none_or(str::is_empty)
        {
            return Err(GatewayError::Config(
                "http backend requires endpoint_url".into(),
            ));
        }
        Ok(())
    }
}

/// A mock backend replaying `responses` in order.
pub fn mock_script(responses: Vec<String>) -> Result<BackendConfig, GatewayError> {
    if responses.is_empty() {
        return Err(GatewayError::Config("mock script must not be empty".into()));
    }
    let mut cfg = BackendConfig::http("", "mock");
    cfg.endpoint_url = None;
    cfg.kind = BackendKind::Mock(Arc::new(MockScript {
        responses,
        cursor: Mutex::new(0),
    }));
    Ok(cfg)
}

pub fn complete(cfg: &BackendConfig, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    cfg.validate()?;
    req.validate()?;
    let resp = match &cfg.kind {
        BackendKind::Mock(script) => {
            let content = script.next()?;
            ChatResponse {
                content,
                finish_reason: FinishReason::Stop,
                usage: Usage::default(),
            }
        }
        BackendKind::Http => complete_http(cfg, req)?,
    };
    if let Some(rec) = &cfg.recorder {
        rec.lock()
            .expect("recorder poisoned")
            .push(resp.content.clone());
    }
    Ok(resp)
}

enum Attempt {
    Done(ChatResponse),
    Fatal(GatewayError),
    Retry(GatewayError),
}

fn complete_http(cfg: &BackendConfig, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    let agent = cfg.agent.get_or_init(|| {
        ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    });
    let base = cfg.endpoint_url.as_deref().unwrap_or_default();
    let url = format!("{}/chat/completions", base.trim_end_matches('/'));
    let body = json!({
        "model": req.model,
        "messages": req.messages,
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    });

    let attempts = cfg.retries + 1;
    let mut last = GatewayError::Transport("no attempt made".into());
    for attempt in 0..attempts {
        if attempt > 0 {
            let factor = 1u32 << (attempt - 1).min(16);
            let delay = cfg
                .backoff
                .saturating_mul(factor)
                .min(Duration::from_secs(30));
            log::debug!("retrying {url} in {delay:?} after: {last}");
            std::thread::sleep(delay);
        }
        match send_once(agent, &url, cfg, &body) {
            Attempt::Done(resp) => return Ok(resp),
            Attempt::Fatal(err) => return Err(err),
            Attempt::Retry(err) => last = err,
        }
    }
    Err(match last {
        GatewayError::Status { status: 429, .. } => GatewayError::RateLimited { attempts },
        other => other,
    })
}

fn send_once(agent: &ureq::Agent, url: &str, cfg: &BackendConfig, body: &Value) -> Attempt {
    let mut request = agent.post(url);
    if let Ok(key) = std::env::var(&cfg.api_key_env) {
        if !key.is_empty() {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
    }
    let mut resp = match request.send_json(body) {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(GatewayError::Transport(e.to_string())),
    };
    let status = resp.status().as_u16();
    let text = match resp.body_mut().read_to_string() {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(GatewayError::Transport(e.to_string())),
    };
    match status {
        200..=299 => match parse_response(&text) {
            Ok(r) => Attempt::Done(r),
            Err(e) => Attempt::Fatal(e),
        },
        401 | 403 => Attempt::Fatal(GatewayError::Auth(status)),
        429 | 500..=599 => Attempt::Retry(GatewayError::Status { status, body: text }),
        _ => Attempt::Fatal(GatewayError::Status { status, body: text }),
    }
}

fn parse_response(body: &str) -> Result<ChatResponse, GatewayError> {
    let proto = |m: &str| GatewayError::Protocol(m.to_string());
    let v: Value =
        serde_json::from_str(body).map_err(|e| proto(&format!("body is not JSON: {e}")))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| proto("missing choices[0]"))?;
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        None | Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let content = match choice.get("message").and_then(|m| m.get("content")) {
        Some(Value::String(s)) => s.clone(),
        _ if finish_reason == FinishReason::Error => String::new(),
        _ => return Err(proto("missing choices[0].message.content")),
    };
    let count = |k: &str| {
        v.get("usage")
            .and_then(|u| u.get(k))
            .and_then(Value::as_u64)
            .unwrap_or(0)
    };
    Ok(ChatResponse {
        content,
        finish_reason,
        usage: Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::user("hi")])
    }

    #[test]
    fn mock_plays_in_order_then_exhausts() {
        let cfg = mock_script(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(complete(&cfg, &req()).unwrap().content, "a");
        assert_eq!(complete(&cfg, &req()).unwrap().content, "b");
        assert_eq!(
            complete(&cfg, &req()),
            Err(GatewayError::ScriptExhausted(2))
        );
        assert_eq!(cfg.mock().unwrap().calls(), 2);
    }

    #[test]
    fn mock_requires_responses() {
        assert!(mock_script(vec![]).is_err());
    }

    #[test]
    fn scripted_braces() {
        let cfg = mock_script(vec!["{}".into()]).unwrap();
        assert_eq!(complete(&cfg, &req()).unwrap().content, "{}");
    }

    #[test]
    fn request_validation() {
        let cfg = mock_script(vec!["x".into()]).unwrap();
        let empty = ChatRequest::new("m", vec![]);
        assert!(matches!(
            complete(&cfg, &empty),
            Err(GatewayError::InvalidRequest(_))
        ));
        let sys_last = ChatRequest::new("m", vec![ChatMessage::system("s")]);
        assert!(sys_last.validate().is_err());
        let mut hot = req();
        hot.temperature = -1.0;
        assert!(hot.validate().is_err());
        // nothing consumed by rejected requests
        assert_eq!(cfg.mock().unwrap().calls(), 0);
    }

    #[test]
    fn http_requires_endpoint() {
        let mut cfg = BackendConfig::http("", "m");
        cfg.endpoint_url = None;
        assert!(matches!(
            complete(&cfg, &req()),
            Err(GatewayError::Config(_))
        ));
    }

    #[test]
    fn recording_captures_contents() {
        let cfg = mock_script(vec!["one".into(), "two".into()])
            .unwrap()
            .with_recording();
        complete(&cfg, &req()).unwrap();
        complete(&cfg, &req()).unwrap();
        assert_eq!(cfg.recorded(), ["one", "two"]);
    }

    #[test]
    fn parse_wire_response() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hey"},"finish_reason":"length"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let r = parse_response(body).unwrap();
        assert_eq!(r.content, "hey");
        assert_eq!(r.finish_reason, FinishReason::Length);
        assert_eq!(r.usage.prompt_tokens, 3);
        assert!(matches!(
            parse_response(r#"{"choices":[]}"#),
            Err(GatewayError::Protocol(_))
        ));
        assert!(matches!(
            parse_response(r#"{"choices":[{"message":{}}]}"#),
            Err(GatewayError::Protocol(_))
        ));
    }

    #[test]
    fn debug_output_has_no_secret_values() {
        let cfg = BackendConfig::http("http://x", "m");
        let dbg = format!("{cfg:?}");
        assert!(dbg.contains("TABSEM_API_KEY"));
        assert_eq!(cfg.name(), "http:m");
    }
}
