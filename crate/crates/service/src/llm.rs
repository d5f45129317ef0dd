//! Language model client selection from configuration and environment.

use std::path::Path;

use sax_core::promptsynth::{HttpClient, LlmClient, LlmConfig, MockClient, MockReply};

use crate::error::ServiceError;

pub const MOCK_ENV: &str = "SAX_MOCK_LLM";
pub const ENDPOINT_ENV: &str = "SAX_LLM_ENDPOINT";

/// Canned answer returned in fixture mode.
pub const FIXTURE_ANSWER: &str = include_str!("../resources/mock_answer.txt");

pub fn mock_enabled() -> bool {
    std::env::var(MOCK_ENV).is_ok_and(|v| v == "1")
}

/// Reads an optional JSON config; `SAX_LLM_ENDPOINT` overrides the endpoint.
pub fn load_config(path: Option<&Path>) -> Result<LlmConfig, ServiceError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ServiceError::io("ask", p, e))?;
            serde_json::from_str(&text).map_err(|e| ServiceError::new("ask", "InvalidConfig", e.to_string()))?
        }
        None => LlmConfig::default(),
    };
    if let Ok(url) = std::env::var(ENDPOINT_ENV) {
        cfg.endpoint_url = url;
    }
    cfg.validate().map_err(|e| ServiceError::from_err("ask", e))?;
    Ok(cfg)
}

/// Client for one request: the fixture replay in mock mode, HTTP otherwise.
pub fn client_for(cfg: &LlmConfig, mock: bool) -> Result<Box<dyn LlmClient>, ServiceError> {
    if mock {
        return Ok(Box::new(MockClient::new([MockReply::Text(FIXTURE_ANSWER.trim_end().to_string())])));
    }
    Ok(Box::new(HttpClient::from_config(cfg).map_err(|e| ServiceError::from_err("ask", e))?))
}
