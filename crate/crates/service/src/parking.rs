//! Pipeline settings for the built-in parking-fines scenario.

use std::path::PathBuf;

use sax_core::causal::{CausalConfig, VariantSelection};
use sax_core::eventlog::CaseFilter;
use sax_core::promptsynth::IngredientSelection;
use sax_core::xai::{ConditionSpec, TableConfig};

use crate::pipeline::{PipelineRequest, PromptRequest, XaiRequest};

pub const RULES: &str = include_str!("../resources/parking_rules.json");

pub const VERIFY: &str = "verify disabled parking permit";
pub const CHECK: &str = "check if hazardous parking";
pub const FINE: &str = "submit fine";
pub const EXTENDED_FINE: &str = "submit extended fine";
pub const TOW: &str = "call a tow truck";

pub const QUESTION: &str = "why do cases that require calling a tow truck take so long to complete";

/// Coefficient threshold for the parking analysis; the 249-case sample leaves null edges
/// with least-squares noise of a few hundredths.
pub const PRUNE_THRESHOLD: f64 = 0.2;

/// Causal analysis over the hazardous-parking path.
pub fn causal_config(seed: u64) -> CausalConfig {
    CausalConfig {
        variant_selection: VariantSelection::Explicit([VERIFY, CHECK, EXTENDED_FINE, TOW].map(String::from).to_vec()),
        coefficient_prune_threshold: PRUNE_THRESHOLD,
        seed,
        ..CausalConfig::default()
    }
}

/// Case duration of tow-truck cases explained by the rule-derived features.
pub fn xai_request() -> XaiRequest {
    XaiRequest {
        condition: ConditionSpec::case_duration(),
        table: TableConfig { timing_features: false, case_filter: CaseFilter::ContainingActivity(TOW.into()), ..TableConfig::default() },
        rule_features: true,
        ..XaiRequest::default()
    }
}

pub fn pipeline_request(log: Option<PathBuf>, seed: u64) -> PipelineRequest {
    PipelineRequest {
        log,
        rules: Some(serde_json::from_str(RULES).expect("bundled rules parse")),
        causal: Some(causal_config(seed)),
        xai: Some(xai_request()),
        prompt: Some(PromptRequest { select: IngredientSelection::ALL, question: QUESTION.into(), brevity: false }),
        seed,
        ..PipelineRequest::default()
    }
}
