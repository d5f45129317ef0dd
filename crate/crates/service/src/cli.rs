use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sax_core::causal::{CausalConfig, VariantSelection};
use sax_core::discovery::DiscoveryConfig;
use sax_core::eventlog::{export_csv, CaseFilter, CsvMapping};
use sax_core::promptsynth::IngredientSelection;
use sax_core::xai::{ConditionSpec, Direction, FeatureSelection, ModelKind, TableConfig, Target};

use crate::error::ServiceError;
use crate::http::{self, ServerConfig};
use crate::llm::{client_for, load_config, mock_enabled};
use crate::parking;
use crate::pipeline::{self, LogFormat, PipelineRequest, PromptRequest, XaiRequest};
use crate::simulate::{parking_spec, simulate, ScenarioSpec};
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(name = "sax", version, about = "Process, causal and feature-importance views of event logs, blended into LLM prompts")]
pub struct Cli {
    #[arg(long, global = true, default_value = "workspace")]
    pub workspace: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario; ingests the log unless --out is given.
    Simulate {
        /// `parking` or a scenario JSON file.
        #[arg(long, default_value = "parking")]
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a CSV or XES log, replacing the workspace state.
    Ingest {
        log: PathBuf,
        #[arg(long, value_enum)]
        log_format: Option<FormatArg>,
        #[arg(long, default_value = "case_id")]
        case_column: String,
        #[arg(long, default_value = "activity")]
        activity_column: String,
        #[arg(long, default_value = "timestamp")]
        timestamp_column: String,
    },
    /// Mine the process view.
    Discover {
        #[arg(long, default_value_t = 0)]
        edge_threshold: u64,
        #[arg(long, default_value_t = 0.0)]
        dependency_threshold: f64,
    },
    /// Apply enrichment rules (`parking` for the bundled set).
    Enrich { rules: String },
    /// Estimate the causal view.
    Causal {
        /// Comma-separated activities; default is the most frequent variant.
        #[arg(long, value_delimiter = ',')]
        activities: Vec<String>,
        #[arg(long)]
        all_complete: bool,
        #[arg(long, default_value_t = 0.05)]
        prune: f64,
        #[arg(long)]
        no_temporal_filter: bool,
        #[arg(long)]
        skip_repeating: bool,
    },
    /// Train the surrogate and compute the XAI view.
    Xai(XaiArgs),
    /// Render the prompt.
    Prompt(PromptArgs),
    /// Render the prompt and send it to the model.
    Ask {
        #[command(flatten)]
        prompt: PromptArgs,
        #[arg(long)]
        llm_config: Option<PathBuf>,
    },
    /// Serve the workspace over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        #[arg(long)]
        llm_config: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        llm_concurrency: usize,
    },
    /// Run all stages from a request file, or the parking preset.
    Pipeline {
        #[arg(long, conflicts_with = "preset")]
        request: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Log to ingest, overriding the request.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        ask: bool,
        #[arg(long)]
        llm_config: Option<PathBuf>,
    },
    /// Check artifacts against the manifest.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Xes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Simulated parking-fines log with all views.
    Parking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gbm,
    Ridge,
}

#[derive(Debug, Args)]
pub struct XaiArgs {
    /// `case-duration`, `attr:KEY` or `activity:NAME`.
    #[arg(long, default_value = "case-duration")]
    target: String,
    /// Only cases executing this activity.
    #[arg(long)]
    filter_activity: Option<String>,
    /// Use the attributes written by the stored rules as features.
    #[arg(long)]
    rule_features: bool,
    #[arg(long, value_delimiter = ',')]
    keys: Vec<String>,
    #[arg(long)]
    no_timing: bool,
    #[arg(long, value_enum, default_value_t = ModelArg::Gbm)]
    model: ModelArg,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    /// Comma-separated subset of process,causal,xai.
    #[arg(long, value_delimiter = ',', default_value = "process,causal,xai")]
    select: Vec<String>,
    #[arg(long)]
    question: String,
    #[arg(long)]
    brevity: bool,
}

impl PromptArgs {
    fn request(&self) -> Result<PromptRequest, ServiceError> {
        let mut sel = IngredientSelection::default();
        for s in &self.select {
            match s.trim() {
                "process" => sel.process = true,
                "causal" => sel.causal = true,
                "xai" => sel.xai = true,
                other => return Err(ServiceError::new("prompt", "BadRequest", format!("unknown view {other:?}"))),
            }
        }
        Ok(PromptRequest { select: sel, question: self.question.clone(), brevity: self.brevity })
    }
}

impl XaiArgs {
    fn request(&self) -> Result<XaiRequest, ServiceError> {
        let target = match self.target.split_once(':') {
            None if self.target == "case-duration" => Target::CaseDuration,
            Some(("attr", k)) => Target::CaseAttribute(k.into()),
            Some(("activity", a)) => Target::ActivityDuration(a.into()),
            _ => return Err(ServiceError::new("xai", "BadRequest", format!("unknown target {:?}", self.target))),
        };
        let features = if self.keys.is_empty() { FeatureSelection::All } else { FeatureSelection::Keys(self.keys.clone()) };
        let case_filter = self.filter_activity.clone().map_or(CaseFilter::All, CaseFilter::ContainingActivity);
        Ok(XaiRequest {
            condition: ConditionSpec { target, direction: Direction::High },
            table: TableConfig { features, timing_features: !self.no_timing, case_filter },
            rule_features: self.rule_features,
            model: match self.model {
                ModelArg::Gbm => ModelKind::default(),
                ModelArg::Ridge => ModelKind::Ridge { lambda: self.ridge_lambda },
            },
            n_repeats: self.repeats,
        })
    }
}

/// What a command prints: `text` in text mode, `json` with `--format json`.
pub struct Output {
    pub text: String,
    pub json: serde_json::Value,
}

fn out(text: impl Into<String>, json: serde_json::Value) -> Output {
    Output { text: text.into(), json }
}

fn to_value(v: impl serde::Serialize) -> serde_json::Value {
    serde_json::to_value(v).expect("serializes")
}

fn scenario(name: &str, seed: u64) -> Result<ScenarioSpec, ServiceError> {
    if name == "parking" {
        return Ok(parking_spec(seed));
    }
    let p = PathBuf::from(name);
    let text = std::fs::read_to_string(&p).map_err(|e| ServiceError::io("simulate", &p, e))?;
    let mut spec = ScenarioSpec::parse(&text).map_err(|e| ServiceError::from_err("simulate", e))?;
    spec.seed = seed;
    Ok(spec)
}

pub fn run(cli: Cli) -> Result<Output, ServiceError> {
    let ws = Workspace::open(&cli.workspace)?;
    let seed = cli.seed;
    Ok(match cli.command {
        Command::Simulate { scenario: name, out: target } => {
            let spec = scenario(&name, seed)?;
            let log = simulate(&spec).map_err(|e| ServiceError::from_err("simulate", e))?;
            match target {
                Some(p) => {
                    let mut bytes = Vec::new();
                    export_csv(&log, &mut bytes).map_err(|e| ServiceError::from_err("simulate", e))?;
                    std::fs::write(&p, &bytes).map_err(|e| ServiceError::io("simulate", &p, e))?;
                    out(
                        format!("{} cases written to {}", log.num_cases(), p.display()),
                        json!({"cases": log.num_cases(), "events": log.num_events(), "path": p}),
                    )
                }
                None => {
                    let s = pipeline::ingest(&ws, &log)?;
                    out(format!("{} cases, {} events ingested", s.cases, s.events), to_value(s))
                }
            }
        }
        Command::Ingest { log, log_format, case_column, activity_column, timestamp_column } => {
            let mapping = CsvMapping { case_column, activity_column, timestamp_column, ..CsvMapping::default() };
            let format = log_format.map(|f| match f {
                FormatArg::Csv => LogFormat::Csv,
                FormatArg::Xes => LogFormat::Xes,
            });
            let s = pipeline::ingest_file(&ws, &log, format, &mapping)?;
            out(format!("{} cases, {} events ingested", s.cases, s.events), to_value(s))
        }
        Command::Discover { edge_threshold, dependency_threshold } => {
            let cfg = DiscoveryConfig { edge_frequency_threshold: edge_threshold, dependency_threshold, ..DiscoveryConfig::default() };
            let text = pipeline::discover_stage(&ws, &cfg)?;
            out(text.clone(), json!({"view": "process", "export": text}))
        }
        Command::Enrich { rules } => {
            let text = if rules == "parking" {
                parking::RULES.to_string()
            } else {
                let p = PathBuf::from(&rules);
                std::fs::read_to_string(&p).map_err(|e| ServiceError::io("enrich", &p, e))?
            };
            let s = pipeline::enrich(&ws, &text)?;
            out(format!("{} attributes set, {} events dropped", s.attributes_set, s.dropped_events), to_value(s))
        }
        Command::Causal { activities, all_complete, prune, no_temporal_filter, skip_repeating } => {
            let variant_selection = if !activities.is_empty() {
                VariantSelection::Explicit(activities)
            } else if all_complete {
                VariantSelection::AllComplete
            } else {
                VariantSelection::MostFrequent
            };
            let cfg = CausalConfig {
                coefficient_prune_threshold: prune,
                respect_temporal_precedence: !no_temporal_filter,
                variant_selection,
                skip_repeating_cases: skip_repeating,
                seed,
                ..CausalConfig::default()
            };
            let text = pipeline::causal_stage(&ws, &cfg)?;
            out(text.clone(), json!({"view": "causal", "export": text}))
        }
        Command::Xai(args) => {
            let text = pipeline::xai_stage(&ws, &args.request()?, seed)?;
            out(text.clone(), json!({"view": "xai", "export": text}))
        }
        Command::Prompt(args) => {
            let b = pipeline::prompt_stage(&ws, &args.request()?)?;
            out(b.rendered.clone(), to_value(b))
        }
        Command::Ask { prompt, llm_config } => {
            let cfg = load_config(llm_config.as_deref())?;
            let client = client_for(&cfg, mock_enabled())?;
            let o = pipeline::ask_stage(&ws, &prompt.request()?, &cfg, client.as_ref())?;
            out(o.explanation.text.clone(), to_value(o))
        }
        Command::Serve { bind, llm_config, llm_concurrency } => {
            let cfg = ServerConfig { llm: load_config(llm_config.as_deref())?, mock_llm: mock_enabled(), llm_concurrency };
            let rt = tokio::runtime::Runtime::new().map_err(|e| ServiceError::new("serve", "Internal", e.to_string()))?;
            rt.block_on(http::serve(
                ws,
                cfg,
                &bind,
                async {
                    let _ = tokio::signal::ctrl_c().await;
                },
                |a| eprintln!("listening on http://{a}"),
            ))?;
            out("stopped", json!({"status": "stopped"}))
        }
        Command::Pipeline { request, preset, log, ask, llm_config } => {
            let from_flags = request.is_none() && preset.is_none();
            let mut req = match (request, preset) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| ServiceError::io("pipeline", &p, e))?;
                    serde_json::from_str::<PipelineRequest>(&text)
                        .map_err(|e| ServiceError::new("pipeline", "BadRequest", e.to_string()))?
                }
                (None, Some(Preset::Parking)) => {
                    if log.is_none() {
                        let log = simulate(&parking_spec(seed)).map_err(|e| ServiceError::from_err("simulate", e))?;
                        pipeline::ingest(&ws, &log)?;
                    }
                    parking::pipeline_request(None, seed)
                }
                (None, None) => PipelineRequest::default(),
            };
            if log.is_some() {
                req.log = log;
            }
            req.ask |= ask;
            if from_flags {
                req.seed = seed;
            }
            let summary = if req.ask {
                let cfg = load_config(llm_config.as_deref())?;
                let client = client_for(&cfg, mock_enabled())?;
                pipeline::run_pipeline(&ws, &req, Some((&cfg, client.as_ref())))?
            } else {
                pipeline::run_pipeline(&ws, &req, None)?
            };
            let text = summary.artifacts.iter().map(|(k, v)| format!("{v}  {k}")).collect::<Vec<_>>().join("\n");
            out(text, to_value(summary))
        }
        Command::Verify => {
            let bad = ws.verify()?;
            if !bad.is_empty() {
                return Err(ServiceError::new("verify", "DigestMismatch", format!("{} artifacts changed", bad.len()))
                    .with_details(json!({ "paths": bad })));
            }
            out("ok", json!({"status": "ok"}))
        }
    })
}
