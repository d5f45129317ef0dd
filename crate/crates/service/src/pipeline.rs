//! Pipeline stages over a workspace. The CLI and the HTTP service both call these, so the
//! artifacts they produce are the same bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sax_core::causal::{discover_causal, write_causal_layer, CausalConfig, CausalView};
use sax_core::discovery::{discover, DiscoveryConfig, ProcessView};
use sax_core::enrichment::{apply_rules, parse_rules, produced_keys, render_rules, validate_rules};
use sax_core::eventlog::{export_csv, parse_csv, parse_xes, CsvMapping, EventLog};
use sax_core::graph::{KnowledgeGraph, ViewKind};
use sax_core::promptsynth::{
    ask as ask_llm, render_prompt, sha256_hex, Explanation, IngredientSelection, LlmClient, LlmConfig, PromptBundle,
    PromptOptions,
};
use sax_core::xai::{
    build_feature_table, importance, train_surrogate, write_xai_layer, ConditionSpec, FeatureSelection, ImportanceConfig,
    ModelKind, TableConfig, XaiView,
};

use crate::error::ServiceError;
use crate::workspace::{view_path, Workspace, EXPLANATION, GRAPH, LOG_CSV, PROMPT_BUNDLE, PROMPT_TEXT, RULES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    Csv,
    Xes,
}

impl LogFormat {
    pub fn from_path(p: &Path) -> LogFormat {
        match p.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("xes") => LogFormat::Xes,
            _ => LogFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub cases: usize,
    pub events: usize,
    pub activities: Vec<String>,
    pub log_digest: String,
}

pub fn parse_log(bytes: &[u8], format: LogFormat, mapping: &CsvMapping) -> Result<EventLog, ServiceError> {
    match format {
        LogFormat::Csv => parse_csv(bytes, mapping),
        LogFormat::Xes => parse_xes(bytes),
    }
    .map_err(|e| ServiceError::from_err("ingest", e))
}

/// Replaces the workspace state with `log`: canonical CSV, base graph with directly-follows
/// edges. Every downstream artifact is removed.
pub fn ingest(ws: &Workspace, log: &EventLog) -> Result<IngestSummary, ServiceError> {
    let mut g = KnowledgeGraph::from_log(log).map_err(|e| ServiceError::from_err("ingest", e))?;
    g.infer_directly_follows();
    for rel in ws.manifest()?.artifacts.keys() {
        ws.remove(rel)?;
    }
    let mut csv = Vec::new();
    export_csv(log, &mut csv).map_err(|e| ServiceError::from_err("ingest", e))?;
    let log_digest = ws.write(LOG_CSV, &csv)?;
    ws.save_graph(&g)?;
    Ok(IngestSummary {
        cases: log.num_cases(),
        events: log.num_events(),
        activities: log.activity_universe.iter().cloned().collect(),
        log_digest,
    })
}

pub fn ingest_file(ws: &Workspace, path: &Path, format: Option<LogFormat>, mapping: &CsvMapping) -> Result<IngestSummary, ServiceError> {
    let bytes = std::fs::read(path).map_err(|e| ServiceError::io("ingest", path, e))?;
    let log = parse_log(&bytes, format.unwrap_or_else(|| LogFormat::from_path(path)), mapping)?;
    ingest(ws, &log)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichSummary {
    pub attributes_set: usize,
    pub dropped_events: usize,
    pub removed_cases: Vec<String>,
    pub produced_keys: Vec<String>,
}

/// Applies a JSON rule set to the ingested log and stores the rules beside it.
pub fn enrich(ws: &Workspace, rules_text: &str) -> Result<EnrichSummary, ServiceError> {
    let stage = "enrich";
    let err = |e| ServiceError::from_err(stage, e);
    let mut g = ws.load_graph()?;
    let log = g.event_log().map_err(|e| ServiceError::from_err(stage, e))?;
    let rules = parse_rules(rules_text).map_err(err)?;
    validate_rules(&log, &rules).map_err(err)?;
    let out = apply_rules(&log, &rules).map_err(err)?;
    g.write_enriched_log(&out.log).map_err(|e| ServiceError::from_err(stage, e))?;
    ws.save_graph(&g)?;
    let mut text = render_rules(&rules);
    text.push('\n');
    ws.write(RULES, text.as_bytes())?;
    Ok(EnrichSummary {
        attributes_set: out.attributes_set,
        dropped_events: out.dropped_events,
        removed_cases: out.removed_cases,
        produced_keys: produced_keys(&rules),
    })
}

/// Export of a stored view, re-read from the graph.
pub fn view_export(g: &KnowledgeGraph, kind: ViewKind) -> Result<String, ServiceError> {
    let stage = "views";
    match kind {
        ViewKind::Process => ProcessView::from_graph(g).map(|v| v.export()),
        ViewKind::Causal => CausalView::from_graph(g).map(|v| v.export()),
        ViewKind::Xai => {
            let order = ProcessView::from_graph(g).map(|v| v.activity_order()).unwrap_or_default();
            XaiView::from_graph(g, &order).map(|v| v.export())
        }
    }
    .map_err(|e| ServiceError::from_err(stage, e))
}

fn store_view(ws: &Workspace, g: &KnowledgeGraph, kind: ViewKind) -> Result<String, ServiceError> {
    ws.save_graph(g)?;
    let text = view_export(g, kind)?;
    ws.write(&view_path(kind), text.as_bytes())?;
    Ok(text)
}

pub fn discover_stage(ws: &Workspace, cfg: &DiscoveryConfig) -> Result<String, ServiceError> {
    let mut g = ws.load_graph()?;
    discover(&mut g, cfg).map_err(|e| ServiceError::from_err("discover", e))?;
    store_view(ws, &g, ViewKind::Process)
}

pub fn causal_stage(ws: &Workspace, cfg: &CausalConfig) -> Result<String, ServiceError> {
    let mut g = ws.load_graph()?;
    let (_, view) = discover_causal(&g, cfg).map_err(|e| ServiceError::from_err("causal", e))?;
    for w in &view.warnings {
        log::warn!("causal: {w}");
    }
    write_causal_layer(&mut g, &view).map_err(|e| ServiceError::from_err("causal", e))?;
    store_view(ws, &g, ViewKind::Causal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XaiRequest {
    pub condition: ConditionSpec,
    pub table: TableConfig,
    /// Restrict features to the attributes written by the stored rule set.
    pub rule_features: bool,
    pub model: ModelKind,
    pub n_repeats: usize,
}

impl Default for XaiRequest {
    fn default() -> Self {
        XaiRequest {
            condition: ConditionSpec::case_duration(),
            table: TableConfig::default(),
            rule_features: false,
            model: ModelKind::default(),
            n_repeats: ImportanceConfig::default().n_repeats,
        }
    }
}

pub fn xai_stage(ws: &Workspace, req: &XaiRequest, seed: u64) -> Result<String, ServiceError> {
    let stage = "xai";
    let err = |e| ServiceError::from_err(stage, e);
    let mut g = ws.load_graph()?;
    let mut table_cfg = req.table.clone();
    if req.rule_features {
        if !ws.exists(RULES)? {
            return Err(ServiceError::new(stage, "BadRequest", "rule_features needs an enrichment rule set"));
        }
        let rules = parse_rules(&ws.read(RULES)?).map_err(|e| ServiceError::from_err(stage, e))?;
        table_cfg.features = FeatureSelection::Keys(produced_keys(&rules));
    }
    let table = build_feature_table(&g, &req.condition, &table_cfg).map_err(err)?;
    let model = train_surrogate(&table, &req.model, seed).map_err(err)?;
    for w in &model.warnings {
        log::warn!("xai: {w}");
    }
    let imp = importance(&model, &table, &ImportanceConfig { n_repeats: req.n_repeats, seed }).map_err(err)?;
    let order = ProcessView::from_graph(&g).map(|v| v.activity_order()).unwrap_or_else(|_| {
        let log = g.event_log().ok();
        log.map(|l| l.activity_universe.into_iter().collect()).unwrap_or_default()
    });
    let view = XaiView::arrange(&imp, &order);
    if !view.case_level.is_empty() {
        log::warn!("xai: {} case-level features are not stored in the graph", view.case_level.len());
    }
    write_xai_layer(&mut g, &view).map_err(err)?;
    store_view(ws, &g, ViewKind::Xai)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    #[serde(default = "all_views")]
    pub select: IngredientSelection,
    pub question: String,
    #[serde(default)]
    pub brevity: bool,
}

fn all_views() -> IngredientSelection {
    IngredientSelection::ALL
}

pub fn prompt_stage(ws: &Workspace, req: &PromptRequest) -> Result<PromptBundle, ServiceError> {
    let g = ws.load_graph()?;
    let bundle = render_prompt(&g, req.select, &req.question, PromptOptions { brevity: req.brevity })
        .map_err(|e| ServiceError::from_err("prompt", e))?;
    ws.write(PROMPT_TEXT, bundle.rendered.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&bundle).expect("bundle serializes");
    json.push('\n');
    ws.write(PROMPT_BUNDLE, json.as_bytes())?;
    Ok(bundle)
}

/// Stored form of an answer. Latency is left out so reruns give identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredExplanation {
    pub question: String,
    pub prompt_sha256: String,
    pub text: String,
    pub usage: Option<sax_core::promptsynth::llm::Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskOutcome {
    pub prompt: PromptBundle,
    pub explanation: Explanation,
}

/// Renders, stores and sends the prompt.
pub fn ask_stage(ws: &Workspace, req: &PromptRequest, cfg: &LlmConfig, client: &dyn LlmClient) -> Result<AskOutcome, ServiceError> {
    let bundle = prompt_stage(ws, req)?;
    let explanation = ask_llm(&bundle, cfg, client).map_err(|e| ServiceError::from_err("ask", e))?;
    let stored = StoredExplanation {
        question: bundle.question.clone(),
        prompt_sha256: sha256_hex(bundle.rendered.as_bytes()),
        text: explanation.text.clone(),
        usage: explanation.usage.clone(),
    };
    let mut json = serde_json::to_string_pretty(&stored).expect("explanation serializes");
    json.push('\n');
    ws.write(EXPLANATION, json.as_bytes())?;
    Ok(AskOutcome { prompt: bundle, explanation })
}

/// Whole-pipeline request; absent sections skip their stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineRequest {
    /// Log to ingest; when absent the already ingested log is used.
    pub log: Option<PathBuf>,
    pub log_format: Option<LogFormat>,
    pub mapping: CsvMapping,
    /// Inline rule set (a JSON array of rules).
    pub rules: Option<serde_json::Value>,
    pub discovery: DiscoveryConfig,
    pub causal: Option<CausalConfig>,
    pub xai: Option<XaiRequest>,
    pub prompt: Option<PromptRequest>,
    /// Send the prompt to the model as well.
    pub ask: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub stages: Vec<String>,
    pub artifacts: std::collections::BTreeMap<String, String>,
}

pub fn run_pipeline(
    ws: &Workspace,
    req: &PipelineRequest,
    llm: Option<(&LlmConfig, &dyn LlmClient)>,
) -> Result<PipelineSummary, ServiceError> {
    let mut stages = Vec::new();
    if let Some(path) = &req.log {
        ingest_file(ws, path, req.log_format, &req.mapping)?;
        stages.push("ingest".to_string());
    } else if !ws.exists(GRAPH)? {
        return Err(ServiceError::new("ingest", "NotIngested", "no log given and none ingested"));
    }
    if let Some(rules) = &req.rules {
        enrich(ws, &rules.to_string())?;
        stages.push("enrich".into());
    }
    discover_stage(ws, &req.discovery)?;
    stages.push("discover".into());
    if let Some(cfg) = &req.causal {
        let cfg = CausalConfig { seed: req.seed, ..cfg.clone() };
        causal_stage(ws, &cfg)?;
        stages.push("causal".into());
    }
    if let Some(x) = &req.xai {
        xai_stage(ws, x, req.seed)?;
        stages.push("xai".into());
    }
    if let Some(p) = &req.prompt {
        if req.ask {
            let (cfg, client) =
                llm.ok_or_else(|| ServiceError::new("ask", "InvalidConfig", "no language model client configured"))?;
            ask_stage(ws, p, cfg, client)?;
            stages.push("prompt".into());
            stages.push("ask".into());
        } else {
            prompt_stage(ws, p)?;
            stages.push("prompt".into());
        }
    }
    Ok(PipelineSummary { stages, artifacts: ws.manifest()?.artifacts })
}
