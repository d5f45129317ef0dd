//! Blended prompt synthesis from the selected knowledge views, and dispatch to a chat model.

pub mod llm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::causal::CausalView;
use crate::discovery::ProcessView;
use crate::graph::{GraphError, KnowledgeGraph, ViewKind};
use crate::xai::XaiView;

pub use llm::{ask, Explanation, HttpClient, LlmClient, LlmConfig, LlmError, MockClient, MockReply};

pub const TEMPLATE_VERSION: &str = "1";

const PROCESS_TEMPLATE: &str = include_str!("../../resources/prompt/process.txt");
const CAUSAL_TEMPLATE: &str = include_str!("../../resources/prompt/causal.txt");
const XAI_TEMPLATE: &str = include_str!("../../resources/prompt/xai.txt");
const SYNTHESIS_TEMPLATE: &str = include_str!("../../resources/prompt/synthesis.txt");
const QUESTION_TEMPLATE: &str = include_str!("../../resources/prompt/question.txt");
const BREVITY_SUFFIX: &str = include_str!("../../resources/prompt/brevity.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("view {0:?} has not been computed")]
    ViewAbsent(ViewKind),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no ingredient selected")]
    NoIngredients,
    #[error(transparent)]
    Graph(GraphError),
}

impl From<GraphError> for PromptError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::ViewAbsent(v) => PromptError::ViewAbsent(v),
            other => PromptError::Graph(other),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngredientSelection {
    pub process: bool,
    pub causal: bool,
    pub xai: bool,
}

impl IngredientSelection {
    pub const ALL: IngredientSelection = IngredientSelection { process: true, causal: true, xai: true };

    pub fn new(process: bool, causal: bool, xai: bool) -> Self {
        IngredientSelection { process, causal, xai }
    }

    pub fn kinds(self) -> Vec<ViewKind> {
        [(self.process, ViewKind::Process), (self.causal, ViewKind::Causal), (self.xai, ViewKind::Xai)]
            .into_iter()
            .filter_map(|(on, k)| on.then_some(k))
            .collect()
    }

    pub fn is_empty(self) -> bool {
        !(self.process || self.causal || self.xai)
    }
}

/// Exported view texts available for a prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingredients {
    pub process: Option<String>,
    pub causal: Option<String>,
    pub xai: Option<String>,
}

impl Ingredients {
    /// Exports of every view present in the graph.
    pub fn from_graph(g: &KnowledgeGraph) -> Result<Ingredients, GraphError> {
        let absent_ok = |r: Result<String, GraphError>| match r {
            Ok(s) => Ok(Some(s)),
            Err(GraphError::ViewAbsent(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let process = ProcessView::from_graph(g);
        let order = process.as_ref().map(ProcessView::activity_order).unwrap_or_default();
        Ok(Ingredients {
            process: absent_ok(process.map(|v| v.export()))?,
            causal: absent_ok(CausalView::from_graph(g).map(|v| v.export()))?,
            xai: absent_ok(XaiView::from_graph(g, &order).map(|v| v.export()))?,
        })
    }

    fn get(&self, kind: ViewKind) -> Option<&str> {
        match kind {
            ViewKind::Process => self.process.as_deref(),
            ViewKind::Causal => self.causal.as_deref(),
            ViewKind::Xai => self.xai.as_deref(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    /// Append the instruction to keep the answer to a few sentences.
    pub brevity: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub selection: IngredientSelection,
    pub question: String,
    pub rendered: String,
    /// sha256 of each included view export, keyed by view name.
    pub ingredient_digests: BTreeMap<String, String>,
    pub template_version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn article(kind: ViewKind) -> &'static str {
    match kind {
        ViewKind::Process => "a process view",
        ViewKind::Causal => "a causal view",
        ViewKind::Xai => "an XAI view",
    }
}

fn tag(kind: ViewKind) -> &'static str {
    match kind {
        ViewKind::Process => "[process view]",
        ViewKind::Causal => "[causal view]",
        ViewKind::Xai => "[XAI view]",
    }
}

/// English enumeration: `a`, `a and b`, `a, b, and c`.
fn enumerate(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [a] => a.to_string(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

/// Assembles the prompt from already exported views.
pub fn render_from_ingredients(
    ingredients: &Ingredients,
    sel: IngredientSelection,
    question: &str,
    opts: PromptOptions,
) -> Result<PromptBundle, PromptError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    if sel.is_empty() {
        return Err(PromptError::NoIngredients);
    }
    let kinds = sel.kinds();
    let mut rendered = String::new();
    let mut ingredient_digests = BTreeMap::new();
    for &kind in &kinds {
        let text = ingredients.get(kind).ok_or(PromptError::ViewAbsent(kind))?;
        let section = match kind {
            ViewKind::Process => PROCESS_TEMPLATE.replacen("{process}", text, 1),
            ViewKind::Causal => CAUSAL_TEMPLATE.replacen("{causal}", text, 1),
            ViewKind::Xai => XAI_TEMPLATE.replacen("{xai}", text, 1),
        };
        rendered.push_str(&section);
        ingredient_digests.insert(kind.as_str().to_string(), sha256_hex(text.as_bytes()));
    }
    let count = match kinds.len() {
        1 => "one perspective",
        2 => "two perspectives",
        _ => "three perspectives",
    };
    let views: Vec<&str> = kinds.iter().map(|&k| article(k)).collect();
    let tags: Vec<&str> = kinds.iter().map(|&k| tag(k)).collect();
    rendered.push_str(&SYNTHESIS_TEMPLATE.replacen("{count}", count, 1).replacen("{views}", &enumerate(&views), 1));
    let above = if kinds.len() == 1 { "view above" } else { "views above" };
    rendered.push_str(
        &QUESTION_TEMPLATE
            .replacen("{above}", above, 1)
            .replacen("{tags}", &enumerate(&tags), 1)
            .replacen("{question}", question, 1),
    );
    if opts.brevity {
        rendered.push_str(BREVITY_SUFFIX);
    }
    Ok(PromptBundle {
        selection: sel,
        question: question.to_string(),
        rendered,
        ingredient_digests,
        template_version: TEMPLATE_VERSION.to_string(),
    })
}

/// Renders the prompt over the views stored in the graph. The graph is only read.
pub fn render_prompt(
    g: &KnowledgeGraph,
    sel: IngredientSelection,
    question: &str,
    opts: PromptOptions,
) -> Result<PromptBundle, PromptError> {
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    let all = Ingredients::from_graph(g)?;
    // keep unselected exports out of reach entirely
    let picked = Ingredients {
        process: if sel.process { all.process } else { None },
        causal: if sel.causal { all.causal } else { None },
        xai: if sel.xai { all.xai } else { None },
    };
    render_from_ingredients(&picked, sel, question, opts)
}
