#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sax_core::eventlog::export_csv;
use sax_service::simulate::{parking_spec, simulate};

pub const QUESTION: &str = "why do cases that require calling a tow truck take so long to complete";

pub fn sax(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sax"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .env_remove("SAX_MOCK_LLM")
        .env_remove("SAX_LLM_API_KEY")
        .output()
        .expect("sax runs")
}

pub fn sax_ok(ws: &Path, args: &[&str]) -> String {
    let o = sax(ws, args);
    assert!(o.status.success(), "sax {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Parsed error JSON of a failing invocation.
pub fn sax_err(ws: &Path, args: &[&str]) -> serde_json::Value {
    let o = sax(ws, args);
    assert_eq!(o.status.code(), Some(1), "sax {args:?} should fail");
    serde_json::from_slice(&o.stderr).expect("stderr holds error JSON")
}

/// Simulated parking log written as CSV.
pub fn parking_csv(dir: &Path, seed: u64) -> PathBuf {
    let log = simulate(&parking_spec(seed)).unwrap();
    let mut bytes = Vec::new();
    export_csv(&log, &mut bytes).unwrap();
    let p = dir.join(format!("parking-{seed}.csv"));
    std::fs::write(&p, bytes).unwrap();
    p
}

pub fn read(ws: &Path, rel: &str) -> String {
    std::fs::read_to_string(ws.join(rel)).unwrap()
}
