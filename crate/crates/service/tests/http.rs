mod common;

use std::path::Path;

use reqwest::blocking::{multipart, Client};
use serde_json::{json, Value};

use common::*;
use sax_core::promptsynth::LlmConfig;
use sax_service::http::{spawn, ServerConfig, ServerHandle};
use sax_service::llm::FIXTURE_ANSWER;
use sax_service::parking;
use sax_service::workspace::Workspace;

fn server(ws: &Path, mock_llm: bool) -> ServerHandle {
    let cfg = ServerConfig {
        llm: LlmConfig { api_key_env: "SAX_TEST_UNSET_KEY".into(), ..LlmConfig::default() },
        mock_llm,
        llm_concurrency: 2,
    };
    spawn(Workspace::open(ws).unwrap(), cfg, "127.0.0.1:0").unwrap()
}

fn get(s: &ServerHandle, path: &str) -> (u16, Value) {
    let r = Client::new().get(s.url(path)).send().unwrap();
    (r.status().as_u16(), r.json().unwrap())
}

fn post(s: &ServerHandle, path: &str, body: &Value) -> (u16, Value) {
    let r = Client::new().post(s.url(path)).json(body).send().unwrap();
    (r.status().as_u16(), r.json().unwrap())
}

fn parking_body(log: &Path, seed: u64) -> Value {
    serde_json::to_value(parking::pipeline_request(Some(log.to_path_buf()), seed)).unwrap()
}

#[test]
fn health_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    let s = server(dir.path(), false);
    let r = Client::new().get(s.url("/health")).header("Origin", "http://localhost:5173").send().unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.headers()["access-control-allow-origin"], "*");
    assert_eq!(r.json::<Value>().unwrap(), json!({"status": "ok"}));

    let pre = Client::new()
        .request(reqwest::Method::OPTIONS, s.url("/pipeline"))
        .header("Origin", "http://localhost:5173")
        .header("Access-Control-Request-Method", "POST")
        .header("Access-Control-Request-Headers", "content-type")
        .send()
        .unwrap();
    assert!(pre.status().is_success());
    assert!(pre.headers().contains_key("access-control-allow-methods"));
    s.shutdown().unwrap();
}

#[test]
fn missing_state_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let s = server(dir.path(), false);
    let (code, body) = get(&s, "/views/process");
    assert_eq!((code, body["code"].as_str()), (404, Some("NotIngested")));
    let (code, body) = get(&s, "/views/sideways");
    assert_eq!((code, body["code"].as_str()), (400, Some("BadRequest")));
    let (code, _) = get(&s, "/prompt");
    assert_eq!(code, 404);

    let log = parking_csv(dir.path(), 0);
    let form = multipart::Form::new().file("file", &log).unwrap();
    let r = Client::new().post(s.url("/logs")).multipart(form).send().unwrap();
    assert_eq!(r.status().as_u16(), 200);
    for kind in ["process", "causal", "xai"] {
        let (code, body) = get(&s, &format!("/views/{kind}"));
        assert_eq!((code, body["code"].as_str()), (404, Some("ViewAbsent")), "{kind}");
    }
    let (code, body) = post(&s, "/prompt", &json!({"question": "why?"}));
    assert_eq!((code, body["code"].as_str()), (404, Some("ViewAbsent")));
}

#[test]
fn multipart_upload_csv_and_xes() {
    let dir = tempfile::tempdir().unwrap();
    let s = server(dir.path(), false);
    let csv = "id;task;when\nc1;A;2024-01-01T00:00:00Z\nc1;B;2024-01-01T00:10:00Z\nc2;A;2024-01-01T01:00:00Z\n";
    let mapping = json!({"case_column": "id", "activity_column": "task", "timestamp_column": "when", "delimiter": 59});
    let form = multipart::Form::new()
        .part("file", multipart::Part::bytes(csv.as_bytes().to_vec()).file_name("log.csv"))
        .text("mapping", mapping.to_string());
    let r = Client::new().post(s.url("/logs")).multipart(form).send().unwrap();
    assert_eq!(r.status().as_u16(), 200, "{:?}", r.text());
    let summary: Value = r.json().unwrap();
    assert_eq!((summary["cases"].as_u64(), summary["events"].as_u64()), (Some(2), Some(3)));

    let xes = r#"<log xmlns="http://www.xes-standard.org/">
  <trace><string key="concept:name" value="t1"/>
    <event><string key="concept:name" value="A"/><date key="time:timestamp" value="2024-01-01T00:00:00Z"/></event>
    <event><string key="concept:name" value="B"/><date key="time:timestamp" value="2024-01-01T01:00:00Z"/></event>
  </trace>
</log>"#;
    let form = multipart::Form::new().part("file", multipart::Part::bytes(xes.as_bytes().to_vec()).file_name("log.xes"));
    let summary: Value = Client::new().post(s.url("/logs")).multipart(form).send().unwrap().json().unwrap();
    assert_eq!((summary["cases"].as_u64(), summary["events"].as_u64()), (Some(1), Some(2)));

    let r = Client::new().post(s.url("/logs")).multipart(multipart::Form::new().text("other", "x")).send().unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let form = multipart::Form::new().part("file", multipart::Part::bytes(b"<log><trace>".to_vec()).file_name("x.xes"));
    let body: Value = Client::new().post(s.url("/logs")).multipart(form).send().unwrap().json().unwrap();
    assert_eq!(body["code"], "MalformedXml");
}

#[test]
fn pipeline_then_views() {
    let dir = tempfile::tempdir().unwrap();
    let log = parking_csv(dir.path(), 3);
    let s = server(&dir.path().join("ws"), false);
    let (code, summary) = post(&s, "/pipeline", &parking_body(&log, 3));
    assert_eq!(code, 200, "{summary}");
    assert_eq!(summary["stages"], json!(["ingest", "enrich", "discover", "causal", "xai", "prompt"]));

    let (_, process) = get(&s, "/views/process");
    assert_eq!(process["kind"], "process");
    let edges = process["data"]["edges"].as_array().unwrap();
    assert_eq!(edges.len(), 8);
    assert_eq!(edges[0], json!({"from": "EVENT 1 START", "to": "verify disabled parking permit", "frequency": 1000}));
    assert_eq!(process["export"], read(&dir.path().join("ws"), "views/process.json"));

    let (_, causal) = get(&s, "/views/causal");
    let inner: Vec<(&str, &str)> = causal["data"]["edges"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["boundary"] == false)
        .map(|e| (e["cause"].as_str().unwrap(), e["effect"].as_str().unwrap()))
        .collect();
    assert!(inner.contains(&(parking::CHECK, parking::TOW)));
    assert!(inner.contains(&(parking::CHECK, parking::EXTENDED_FINE)));
    assert_eq!(causal["data"]["order"].as_array().unwrap().len(), 4);

    let (_, xai) = get(&s, "/views/xai");
    let acts: Vec<&str> = xai["data"]["activities"].as_array().unwrap().iter().map(|a| a["activity"].as_str().unwrap()).collect();
    assert_eq!(acts, [parking::CHECK, parking::EXTENDED_FINE, parking::TOW]);

    let (_, manifest) = get(&s, "/manifest");
    assert_eq!(manifest["artifacts"], summary["artifacts"]);
    let (_, bundle) = get(&s, "/prompt");
    assert_eq!(bundle["rendered"], read(&dir.path().join("ws"), "prompts/prompt.txt"));

    let r = Client::new().post(s.url("/pipeline")).header("content-type", "application/json").body("{").send().unwrap();
    assert!(r.status().is_client_error());
}

#[test]
fn prompt_matches_cli() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    sax_ok(&ws, &["--seed", "7", "pipeline", "--preset", "parking"]);
    for select in ["process,causal,xai", "xai", "process,causal"] {
        let cli = sax_ok(&ws, &["prompt", "--select", select, "--question", QUESTION, "--brevity"]);
        let s = server(&ws, false);
        let sel: Value = select.split(',').map(|k| (k.to_string(), Value::Bool(true))).collect::<serde_json::Map<_, _>>().into();
        let (code, bundle) = post(&s, "/prompt", &json!({"select": sel, "question": QUESTION, "brevity": true}));
        assert_eq!(code, 200);
        assert_eq!(format!("{}\n", bundle["rendered"].as_str().unwrap()), cli, "{select}");
        s.shutdown().unwrap();
    }
}

#[test]
fn ask_modes() {
    let dir = tempfile::tempdir().unwrap();
    let log = parking_csv(dir.path(), 0);
    let ws = dir.path().join("ws");
    let s = server(&ws, true);
    let mut body = parking_body(&log, 0);
    body["ask"] = json!(true);
    let (code, summary) = post(&s, "/pipeline", &body);
    assert_eq!(code, 200, "{summary}");
    assert!(summary["artifacts"].get("explanations/explanation.json").is_some());

    let (code, out) = post(&s, "/ask", &json!({"question": QUESTION}));
    assert_eq!(code, 200);
    assert_eq!(out["explanation"]["text"], FIXTURE_ANSWER.trim_end());
    assert_eq!(out["prompt"]["question"], QUESTION);
    let (code, out) = post(&s, "/ask", &json!({"question": "  "}));
    assert_eq!((code, out["code"].as_str()), (400, Some("EmptyQuestion")));
    s.shutdown().unwrap();

    let live = server(&ws, false);
    let (code, out) = post(&live, "/ask", &json!({"question": QUESTION}));
    assert_eq!((code, out["code"].as_str(), out["stage"].as_str()), (502, Some("MissingApiKey"), Some("ask")));
}

#[test]
fn concurrent_reads() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    sax_ok(&ws, &["pipeline", "--preset", "parking"]);
    let s = server(&ws, false);
    let expected = get(&s, "/views/causal").1;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..8).map(|_| scope.spawn(|| get(&s, "/views/causal").1)).collect();
        for h in handles {
            assert_eq!(h.join().unwrap(), expected);
        }
    });
}
