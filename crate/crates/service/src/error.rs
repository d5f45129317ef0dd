use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-readable failure of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceError {
    pub stage: String,
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: serde_json::Value,
}

/// Variant name of an error enum, read off its `Debug` form. Wrapper variants are looked
/// through so `Graph(ViewAbsent(Xai))` reports `ViewAbsent`.
fn code_of(e: &impl fmt::Debug) -> String {
    let dbg = format!("{e:?}");
    let head = |s: &str| s.split(['(', ' ', '{']).next().unwrap_or("").to_string();
    let mut code = head(&dbg);
    let mut rest = dbg.as_str();
    while ["Graph", "Log", "Causal", "Discovery", "Xai"].contains(&code.as_str()) {
        let Some(inner) = rest.strip_prefix(code.as_str()).and_then(|r| r.strip_prefix('(')) else { break };
        let next = head(inner);
        if next.is_empty() || !next.chars().next().unwrap().is_ascii_uppercase() {
            break;
        }
        rest = inner;
        code = next;
    }
    code
}

impl ServiceError {
    pub fn new(stage: &str, code: &str, message: impl Into<String>) -> Self {
        ServiceError { stage: stage.into(), code: code.into(), message: message.into(), details: serde_json::Value::Null }
    }

    pub fn from_err(stage: &str, e: impl fmt::Debug + fmt::Display) -> Self {
        ServiceError::new(stage, &code_of(&e), e.to_string())
    }

    pub fn with_details(mut self, details: serde_json::Value) -> Self {
        self.details = details;
        self
    }

    pub fn io(stage: &str, path: &std::path::Path, e: std::io::Error) -> Self {
        ServiceError::new(stage, "Io", format!("{}: {e}", path.display()))
            .with_details(serde_json::json!({ "path": path.display().to_string() }))
    }

    /// HTTP status for the error.
    pub fn status(&self) -> u16 {
        match self.code.as_str() {
            "ViewAbsent" | "NotIngested" | "NotFound" => 404,
            "EmptyQuestion" | "NoIngredients" | "BadRequest" | "InvalidConfig" | "SyntaxError" | "Syntax" | "InconsistentSpec"
            | "MissingColumn" | "UnparseableTimestamp" | "EmptyLog" | "MalformedXml" | "MissingExtension" | "UnknownAttribute"
            | "UnknownActivity" | "TypeMismatch" | "ReservedKey" | "UnknownTarget" | "InvalidThreshold" => 400,
            "RateLimited" => 429,
            "AuthFailure" | "Transport" | "ModelRefusal" | "MissingApiKey" => 502,
            _ => 500,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.stage, self.code, self.message)
    }
}

impl std::error::Error for ServiceError {}

#[cfg(test)]
mod tests {
    use super::*;
    use sax_core::graph::{GraphError, ViewKind};
    use sax_core::promptsynth::PromptError;

    #[test]
    fn codes_look_through_wrappers() {
        assert_eq!(code_of(&GraphError::ViewAbsent(ViewKind::Xai)), "ViewAbsent");
        assert_eq!(code_of(&PromptError::EmptyQuestion), "EmptyQuestion");
        let e = ServiceError::from_err("prompt", PromptError::ViewAbsent(ViewKind::Causal));
        assert_eq!(e.status(), 404);
        let j: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(j["stage"], "prompt");
        assert!(j.get("details").is_some());
    }
}
