use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PromptBundle;

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected: {0}")]
    AuthFailure(String),
    #[error("rate limited (retry after {0:?} s)")]
    RateLimited(Option<u64>),
    #[error("model returned an empty completion")]
    ModelRefusal,
    #[error("mock script exhausted")]
    ScriptExhausted,
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Chat endpoint settings. Unset sampling parameters are omitted so the endpoint defaults apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_tokens: Option<u32>,
    pub api_key_env: String,
    pub require_api_key: bool,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4".into(),
            temperature: None,
            top_p: None,
            max_tokens: None,
            api_key_env: "SAX_LLM_API_KEY".into(),
            require_api_key: true,
            timeout_secs: 120,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: &str| Err(LlmError::InvalidConfig(m.into()));
        if self.temperature.is_some_and(|t| !(0.0..=2.0).contains(&t)) {
            return bad("temperature outside [0, 2]");
        }
        if self.top_p.is_some_and(|p| !(p > 0.0 && p <= 1.0)) {
            return bad("top_p outside (0, 1]");
        }
        if self.max_tokens == Some(0) {
            return bad("max_tokens must be positive");
        }
        if !(self.endpoint_url.starts_with("http://") || self.endpoint_url.starts_with("https://")) {
            return bad("endpoint_url must be an http(s) URL");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completions request body with a single user message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl LlmRequest {
    pub fn new(prompt: &str, cfg: &LlmConfig) -> Self {
        LlmRequest {
            model: cfg.model_name.clone(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: cfg.temperature,
            top_p: cfg.top_p,
            max_tokens: cfg.max_tokens,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.first().map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError>;
}

/// Sends the bundle's prompt and returns the completion verbatim.
pub fn ask(bundle: &PromptBundle, cfg: &LlmConfig, client: &dyn LlmClient) -> Result<Explanation, LlmError> {
    cfg.validate()?;
    let request = LlmRequest::new(&bundle.rendered, cfg);
    let started = Instant::now();
    let completion = client.complete(&request)?;
    let latency_ms = started.elapsed().as_millis() as u64;
    if completion.text.trim().is_empty() {
        return Err(LlmError::ModelRefusal);
    }
    Ok(Explanation { text: completion.text, usage: completion.usage, latency_ms })
}

/// Maps an unsuccessful HTTP status to an error.
pub fn status_error(status: u16, retry_after: Option<u64>, body: &str) -> LlmError {
    match status {
        401 | 403 => LlmError::AuthFailure(format!("HTTP {status}")),
        429 => LlmError::RateLimited(retry_after),
        _ => LlmError::Transport(format!("HTTP {status}: {body}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    /// Answers with the prompt's QUESTION line.
    EchoQuestion,
    Status { code: u16, retry_after: Option<u64> },
}

/// Scripted client; every request is recorded.
#[derive(Debug, Default)]
pub struct MockClient {
    script: Mutex<VecDeque<MockReply>>,
    requests: Mutex<Vec<LlmRequest>>,
}

impl MockClient {
    pub fn new(script: impl IntoIterator<Item = MockReply>) -> Self {
        MockClient { script: Mutex::new(script.into_iter().collect()), requests: Mutex::new(Vec::new()) }
    }

    /// A client that answers every request with its QUESTION line.
    pub fn echo(n: usize) -> Self {
        Self::new(std::iter::repeat_n(MockReply::EchoQuestion, n))
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl LlmClient for MockClient {
    fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError> {
        self.requests.lock().unwrap().push(request.clone());
        let reply = self.script.lock().unwrap().pop_front().ok_or(LlmError::ScriptExhausted)?;
        let text = match reply {
            MockReply::Text(t) => t,
            MockReply::EchoQuestion => {
                let prompt = request.prompt();
                prompt.lines().find(|l| l.starts_with("QUESTION:")).unwrap_or(prompt).to_string()
            }
            MockReply::Status { code, retry_after } => return Err(status_error(code, retry_after, "")),
        };
        Ok(Completion { text, usage: None })
    }
}

/// Blocking chat-completions client.
pub struct HttpClient {
    http: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpClient {
    /// Reads the API key from the environment variable named in `cfg`.
    pub fn from_config(cfg: &LlmConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() && cfg.require_api_key {
            return Err(LlmError::MissingApiKey(cfg.api_key_env.clone()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpClient { http, endpoint: cfg.endpoint_url.clone(), api_key })
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError> {
        log::debug!("POST {} {}", self.endpoint, serde_json::to_string(request).unwrap_or_default());
        let mut req = self.http.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse().ok());
            let body = resp.text().unwrap_or_default();
            return Err(status_error(status, retry_after, &body));
        }
        let body: ChatResponse = resp.json().map_err(|e| LlmError::Transport(e.to_string()))?;
        let text = body.choices.into_iter().next().and_then(|c| c.message.content).unwrap_or_default();
        Ok(Completion { text, usage: body.usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptsynth::{render_from_ingredients, IngredientSelection, Ingredients, PromptOptions};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn bundle() -> PromptBundle {
        let ing = Ingredients { process: Some("{}".into()), causal: None, xai: None };
        render_from_ingredients(&ing, IngredientSelection::new(true, false, false), "why so slow", PromptOptions::default()).unwrap()
    }

    #[test]
    fn mock_contract() {
        let client = MockClient::echo(1);
        let b = bundle();
        let e = ask(&b, &LlmConfig::default(), &client).unwrap();
        assert!(e.text.contains("why so slow"));
        let log = client.requests();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].prompt(), b.rendered);
        assert_eq!(ask(&b, &LlmConfig::default(), &client), Err(LlmError::ScriptExhausted));
    }

    #[test]
    fn mock_errors() {
        let client = MockClient::new([
            MockReply::Status { code: 429, retry_after: Some(7) },
            MockReply::Status { code: 401, retry_after: None },
            MockReply::Text("  ".into()),
        ]);
        let cfg = LlmConfig::default();
        assert_eq!(ask(&bundle(), &cfg, &client), Err(LlmError::RateLimited(Some(7))));
        assert!(matches!(ask(&bundle(), &cfg, &client), Err(LlmError::AuthFailure(_))));
        assert_eq!(ask(&bundle(), &cfg, &client), Err(LlmError::ModelRefusal));
    }

    #[test]
    fn config_ranges() {
        let ok = LlmConfig { temperature: Some(2.0), top_p: Some(1.0), max_tokens: Some(5), ..LlmConfig::default() };
        assert!(ok.validate().is_ok());
        for bad in [
            LlmConfig { temperature: Some(2.5), ..LlmConfig::default() },
            LlmConfig { top_p: Some(0.0), ..LlmConfig::default() },
            LlmConfig { max_tokens: Some(0), ..LlmConfig::default() },
            LlmConfig { endpoint_url: "ftp://x".into(), ..LlmConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(LlmError::InvalidConfig(_))));
        }
        let missing = LlmConfig { api_key_env: "SAX_TEST_UNSET_KEY_VAR".into(), ..LlmConfig::default() };
        assert_eq!(HttpClient::from_config(&missing).err(), Some(LlmError::MissingApiKey("SAX_TEST_UNSET_KEY_VAR".into())));
    }

    /// One-shot HTTP server returning `response`; yields the raw request body.
    fn serve_once(response: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let mut stream = stream;
            stream.write_all(response.as_bytes()).unwrap();
            String::from_utf8(body).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn http_roundtrip_carries_sampling_parameters() {
        let payload = r#"{"choices":[{"message":{"role":"assistant","content":"Because of towing."}}],"usage":{"prompt_tokens":10,"completion_tokens":3,"total_tokens":13}}"#;
        let response: &'static str = Box::leak(
            format!("HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}", payload.len())
                .into_boxed_str(),
        );
        let (url, handle) = serve_once(response);
        let cfg = LlmConfig {
            endpoint_url: url,
            temperature: Some(0.2),
            max_tokens: Some(64),
            require_api_key: false,
            api_key_env: "SAX_TEST_UNSET_KEY_VAR".into(),
            ..LlmConfig::default()
        };
        let client = HttpClient::from_config(&cfg).unwrap();
        let b = bundle();
        let e = ask(&b, &cfg, &client).unwrap();
        assert_eq!(e.text, "Because of towing.");
        assert_eq!(e.usage.unwrap().total_tokens, 13);
        let sent: serde_json::Value = serde_json::from_str(&handle.join().unwrap()).unwrap();
        assert_eq!(sent["temperature"], 0.2);
        assert_eq!(sent["max_tokens"], 64);
        assert!(sent.get("top_p").is_none());
        assert_eq!(sent["messages"][0]["content"], b.rendered.as_str());
    }

    #[test]
    fn http_rate_limit() {
        let (url, handle) = serve_once("HTTP/1.1 429 Too Many Requests\r\nRetry-After: 12\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        let cfg = LlmConfig { endpoint_url: url, require_api_key: false, ..LlmConfig::default() };
        let client = HttpClient::from_config(&cfg).unwrap();
        assert_eq!(ask(&bundle(), &cfg, &client), Err(LlmError::RateLimited(Some(12))));
        handle.join().unwrap();
    }
}
