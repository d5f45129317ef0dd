//! On-disk workspace: artifact subtrees plus a manifest of sha256 digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sax_core::graph::{from_ndjson, to_ndjson, KnowledgeGraph, ViewKind};
use sax_core::promptsynth::sha256_hex;

use crate::error::ServiceError;

pub const MANIFEST: &str = "manifest.json";
pub const LOG_CSV: &str = "logs/log.csv";
pub const RULES: &str = "logs/rules.json";
pub const GRAPH: &str = "graph/graph.ndjson";
pub const PROMPT_TEXT: &str = "prompts/prompt.txt";
pub const PROMPT_BUNDLE: &str = "prompts/bundle.json";
pub const EXPLANATION: &str = "explanations/explanation.json";

const SUBDIRS: [&str; 5] = ["logs", "views", "prompts", "explanations", "graph"];

pub fn view_path(kind: ViewKind) -> String {
    format!("views/{}.json", kind.as_str())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Opens the workspace, creating its directory layout if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Workspace, ServiceError> {
        let root = root.into();
        for d in SUBDIRS {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| ServiceError::io("workspace", &p, e))?;
        }
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> Result<Manifest, ServiceError> {
        let p = self.path(MANIFEST);
        match fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| ServiceError::new("workspace", "CorruptManifest", e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(ServiceError::io("workspace", &p, e)),
        }
    }

    fn save_manifest(&self, m: &Manifest) -> Result<(), ServiceError> {
        let p = self.path(MANIFEST);
        let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
        text.push('\n');
        fs::write(&p, text).map_err(|e| ServiceError::io("workspace", &p, e))
    }

    /// Writes an artifact and records its digest.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<String, ServiceError> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| ServiceError::io("workspace", dir, e))?;
        }
        fs::write(&p, bytes).map_err(|e| ServiceError::io("workspace", &p, e))?;
        let digest = sha256_hex(bytes);
        let mut m = self.manifest()?;
        m.artifacts.insert(rel.to_string(), digest.clone());
        self.save_manifest(&m)?;
        Ok(digest)
    }

    pub fn remove(&self, rel: &str) -> Result<(), ServiceError> {
        let p = self.path(rel);
        match fs::remove_file(&p) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(ServiceError::io("workspace", &p, e)),
        }
        let mut m = self.manifest()?;
        if m.artifacts.remove(rel).is_some() {
            self.save_manifest(&m)?;
        }
        Ok(())
    }

    /// Reads an artifact, failing when its content no longer matches the manifest.
    pub fn read(&self, rel: &str) -> Result<String, ServiceError> {
        let m = self.manifest()?;
        let Some(expected) = m.artifacts.get(rel) else {
            return Err(ServiceError::new("workspace", "NotFound", format!("artifact {rel} does not exist")));
        };
        let p = self.path(rel);
        let text = fs::read_to_string(&p).map_err(|e| ServiceError::io("workspace", &p, e))?;
        if &sha256_hex(text.as_bytes()) != expected {
            return Err(ServiceError::new("workspace", "DigestMismatch", format!("{rel} was modified outside the pipeline"))
                .with_details(serde_json::json!({ "path": rel })));
        }
        Ok(text)
    }

    pub fn exists(&self, rel: &str) -> Result<bool, ServiceError> {
        Ok(self.manifest()?.artifacts.contains_key(rel))
    }

    /// Artifacts whose file is missing or whose content differs from the recorded digest.
    pub fn verify(&self) -> Result<Vec<String>, ServiceError> {
        let m = self.manifest()?;
        Ok(m.artifacts
            .iter()
            .filter(|(rel, digest)| fs::read(self.path(rel)).map_or(true, |b| &sha256_hex(&b) != *digest))
            .map(|(rel, _)| rel.clone())
            .collect())
    }

    pub fn load_graph(&self) -> Result<KnowledgeGraph, ServiceError> {
        if !self.exists(GRAPH)? {
            return Err(ServiceError::new("workspace", "NotIngested", "no event log has been ingested"));
        }
        from_ndjson(&self.read(GRAPH)?).map_err(|e| ServiceError::from_err("workspace", e))
    }

    pub fn save_graph(&self, g: &KnowledgeGraph) -> Result<(), ServiceError> {
        self.write(GRAPH, to_ndjson(g).as_bytes()).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        ws.write("views/process.json", b"{}").unwrap();
        assert_eq!(ws.read("views/process.json").unwrap(), "{}");
        assert!(ws.verify().unwrap().is_empty());
        fs::write(ws.path("views/process.json"), b"{ }").unwrap();
        assert_eq!(ws.verify().unwrap(), vec!["views/process.json".to_string()]);
        assert_eq!(ws.read("views/process.json").unwrap_err().code, "DigestMismatch");
        ws.remove("views/process.json").unwrap();
        assert!(ws.manifest().unwrap().artifacts.is_empty());
        assert_eq!(ws.load_graph().unwrap_err().code, "NotIngested");
    }
}
