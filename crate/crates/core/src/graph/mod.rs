//! Multi-layer labeled property graph.
//!
//! The base layer holds `Event` and `Case` nodes linked by `CORRELATED_TO`, plus one `Activity`
//! node per distinct activity name. View layers are written on top by the producing modules:
//! `DIRECTLY_FOLLOWS` between events, `FLOWS_TO`/`INDIRECTLY_FOLLOWS` and
//! `CAUSES`/`INDIRECTLY_CAUSES` between activities, and `HAS_FEATURE` from activities to
//! features. Every write bumps only the version counter of the layer it touches.

mod closure;
mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{Event, EventLog, LogError, Trace};
use crate::value::{Attributes, Value};

pub use closure::{transitive_closure, ClosureBase};
pub use io::{from_graphml, from_ndjson, to_graphml, to_ndjson};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("a log is already loaded ({0:?})")]
    DuplicateLog(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("no base layer loaded")]
    NoBaseLayer,
    #[error("view {0} has not been written")]
    ViewAbsent(ViewKind),
    #[error("unknown activity {0:?}")]
    UnknownActivity(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("{rel_type} cannot connect {source_labels} to {target_labels}")]
    InvalidEndpoints { rel_type: RelType, source_labels: String, target_labels: String },
    #[error("base relation {0} contains a cycle")]
    CyclicBase(RelType),
    #[error("graph import failed: {0}")]
    Import(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for RelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Event,
    Case,
    Activity,
    Feature,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Event => "Event",
            Label::Case => "Case",
            Label::Activity => "Activity",
            Label::Feature => "Feature",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        [Label::Event, Label::Case, Label::Activity, Label::Feature].into_iter().find(|l| l.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelType {
    CorrelatedTo,
    DirectlyFollows,
    FlowsTo,
    IndirectlyFollows,
    Causes,
    IndirectlyCauses,
    HasFeature,
}

impl RelType {
    pub const ALL: [RelType; 7] = [
        RelType::CorrelatedTo,
        RelType::DirectlyFollows,
        RelType::FlowsTo,
        RelType::IndirectlyFollows,
        RelType::Causes,
        RelType::IndirectlyCauses,
        RelType::HasFeature,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelType::CorrelatedTo => "CORRELATED_TO",
            RelType::DirectlyFollows => "DIRECTLY_FOLLOWS",
            RelType::FlowsTo => "FLOWS_TO",
            RelType::IndirectlyFollows => "INDIRECTLY_FOLLOWS",
            RelType::Causes => "CAUSES",
            RelType::IndirectlyCauses => "INDIRECTLY_CAUSES",
            RelType::HasFeature => "HAS_FEATURE",
        }
    }

    pub fn parse(s: &str) -> Option<RelType> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    pub fn layer(self) -> Layer {
        match self {
            RelType::CorrelatedTo => Layer::Base,
            RelType::DirectlyFollows => Layer::DirectlyFollows,
            RelType::FlowsTo | RelType::IndirectlyFollows => Layer::Process,
            RelType::Causes | RelType::IndirectlyCauses => Layer::Causal,
            RelType::HasFeature => Layer::Xai,
        }
    }

    fn endpoints(self) -> (Label, Label) {
        match self {
            RelType::CorrelatedTo => (Label::Event, Label::Case),
            RelType::DirectlyFollows => (Label::Event, Label::Event),
            RelType::HasFeature => (Label::Activity, Label::Feature),
            _ => (Label::Activity, Label::Activity),
        }
    }
}

impl fmt::Display for RelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Base,
    DirectlyFollows,
    Process,
    Causal,
    Xai,
}

/// The three activity-level views a prompt can draw on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Process,
    Causal,
    Xai,
}

impl ViewKind {
    pub fn layer(self) -> Layer {
        match self {
            ViewKind::Process => Layer::Process,
            ViewKind::Causal => Layer::Causal,
            ViewKind::Xai => Layer::Xai,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::Process => "process",
            ViewKind::Causal => "causal",
            ViewKind::Xai => "xai",
        }
    }

    pub fn parse(s: &str) -> Option<ViewKind> {
        match s {
            "process" => Some(ViewKind::Process),
            "causal" => Some(ViewKind::Causal),
            "xai" => Some(ViewKind::Xai),
            _ => None,
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub labels: BTreeSet<Label>,
    pub properties: Attributes,
}

impl Node {
    pub fn has_label(&self, label: Label) -> bool {
        self.labels.contains(&label)
    }

    pub fn prop_str(&self, key: &str) -> Option<&str> {
        self.properties.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relationship {
    pub id: RelId,
    pub rel_type: RelType,
    pub source: NodeId,
    pub target: NodeId,
    pub properties: Attributes,
}

/// Marker role property on synthetic start/end activity nodes.
pub const MARKER_KEY: &str = "marker";
pub const NAME_KEY: &str = "name";
const CAUSAL_RANK_KEY: &str = "causal_rank";

/// Activity-level flows-to record of the process view.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowRecord {
    pub from: String,
    pub to: String,
    pub frequency: u64,
}

/// Causes record of the causal view; `boundary` marks edges to or from start/end markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseRecord {
    pub cause: String,
    pub effect: String,
    pub coefficient: f64,
    #[serde(default)]
    pub boundary: bool,
}

/// Feature-importance record of the XAI view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub activity: String,
    pub feature: String,
    pub importance: f64,
}

/// Records of one view, sorted by source activity name then target.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "view", content = "records", rename_all = "lowercase")]
pub enum ViewRecords {
    Process(Vec<FlowRecord>),
    Causal(Vec<CauseRecord>),
    Xai(Vec<FeatureRecord>),
}

/// Marker names of a written process layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Markers {
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<NodeId, Node>,
    rels: BTreeMap<RelId, Relationship>,
    out_adj: BTreeMap<(NodeId, RelType), BTreeSet<RelId>>,
    in_adj: BTreeMap<(NodeId, RelType), BTreeSet<RelId>>,
    activities: BTreeMap<String, NodeId>,
    cases: BTreeMap<String, NodeId>,
    events: BTreeMap<String, NodeId>,
    features: BTreeMap<String, NodeId>,
    layer_versions: BTreeMap<Layer, u64>,
    written: BTreeSet<Layer>,
    log_id: Option<String>,
    next_node: u64,
    next_rel: u64,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log_id(&self) -> Option<&str> {
        self.log_id.as_deref()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn rel(&self, id: RelId) -> Option<&Relationship> {
        self.rels.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn relationships(&self) -> impl Iterator<Item = &Relationship> {
        self.rels.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn rel_count(&self) -> usize {
        self.rels.len()
    }

    pub fn nodes_with_label(&self, label: Label) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(move |n| n.has_label(label))
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.nodes_with_label(label).count()
    }

    pub fn rels_of_type(&self, rel_type: RelType) -> impl Iterator<Item = &Relationship> {
        self.rels.values().filter(move |r| r.rel_type == rel_type)
    }

    pub fn count_type(&self, rel_type: RelType) -> usize {
        self.rels_of_type(rel_type).count()
    }

    pub fn outgoing(&self, node: NodeId, rel_type: RelType) -> impl Iterator<Item = &Relationship> {
        self.out_adj.get(&(node, rel_type)).into_iter().flatten().map(|id| &self.rels[id])
    }

    pub fn incoming(&self, node: NodeId, rel_type: RelType) -> impl Iterator<Item = &Relationship> {
        self.in_adj.get(&(node, rel_type)).into_iter().flatten().map(|id| &self.rels[id])
    }

    pub fn activity_id(&self, name: &str) -> Option<NodeId> {
        self.activities.get(name).copied()
    }

    pub fn activity_name(&self, id: NodeId) -> Option<&str> {
        self.nodes.get(&id).and_then(|n| n.prop_str(NAME_KEY))
    }

    pub fn case_id(&self, case: &str) -> Option<NodeId> {
        self.cases.get(case).copied()
    }

    pub fn event_node(&self, event_id: &str) -> Option<NodeId> {
        self.events.get(event_id).copied()
    }

    pub fn layer_version(&self, layer: Layer) -> u64 {
        self.layer_versions.get(&layer).copied().unwrap_or(0)
    }

    pub fn layer_versions(&self) -> &BTreeMap<Layer, u64> {
        &self.layer_versions
    }

    pub fn has_layer(&self, layer: Layer) -> bool {
        self.written.contains(&layer)
    }

    fn bump(&mut self, layer: Layer) {
        *self.layer_versions.entry(layer).or_default() += 1;
        self.written.insert(layer);
    }

    pub fn add_node(&mut self, labels: impl IntoIterator<Item = Label>, properties: Attributes) -> NodeId {
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.insert_node(Node { id, labels: labels.into_iter().collect(), properties });
        id
    }

    fn insert_node(&mut self, node: Node) {
        assert!(!node.labels.is_empty(), "nodes carry at least one label");
        let id = node.id;
        self.next_node = self.next_node.max(id.0 + 1);
        let name = |key: &str| node.prop_str(key).map(str::to_string);
        if node.has_label(Label::Activity) {
            if let Some(n) = name(NAME_KEY) {
                self.activities.insert(n, id);
            }
        }
        if node.has_label(Label::Feature) {
            if let Some(n) = name(NAME_KEY) {
                self.features.insert(n, id);
            }
        }
        if node.has_label(Label::Case) {
            if let Some(n) = name("case_id") {
                self.cases.insert(n, id);
            }
        }
        if node.has_label(Label::Event) {
            if let Some(n) = name("event_id") {
                self.events.insert(n, id);
            }
        }
        self.nodes.insert(id, node);
    }

    /// Adds a typed relationship after checking the endpoint labels its type allows.
    pub fn add_rel(
        &mut self,
        rel_type: RelType,
        source: NodeId,
        target: NodeId,
        properties: Attributes,
    ) -> Result<RelId, GraphError> {
        let id = RelId(self.next_rel);
        self.insert_rel(Relationship { id, rel_type, source, target, properties })?;
        Ok(id)
    }

    fn insert_rel(&mut self, rel: Relationship) -> Result<(), GraphError> {
        let src = self.nodes.get(&rel.source).ok_or(GraphError::UnknownNode(rel.source))?;
        let dst = self.nodes.get(&rel.target).ok_or(GraphError::UnknownNode(rel.target))?;
        let (want_src, want_dst) = rel.rel_type.endpoints();
        if !src.has_label(want_src) || !dst.has_label(want_dst) {
            let show = |n: &Node| n.labels.iter().map(|l| l.as_str()).collect::<Vec<_>>().join("|");
            return Err(GraphError::InvalidEndpoints {
                rel_type: rel.rel_type,
                source_labels: show(src),
                target_labels: show(dst),
            });
        }
        let id = rel.id;
        self.next_rel = self.next_rel.max(id.0 + 1);
        self.out_adj.entry((rel.source, rel.rel_type)).or_default().insert(id);
        self.in_adj.entry((rel.target, rel.rel_type)).or_default().insert(id);
        self.rels.insert(id, rel);
        Ok(())
    }

    fn remove_rel(&mut self, id: RelId) -> Option<Relationship> {
        let rel = self.rels.remove(&id)?;
        if let Some(s) = self.out_adj.get_mut(&(rel.source, rel.rel_type)) {
            s.remove(&id);
        }
        if let Some(s) = self.in_adj.get_mut(&(rel.target, rel.rel_type)) {
            s.remove(&id);
        }
        Some(rel)
    }

    /// Removes a node and, by cascade, every relationship touching it.
    pub fn remove_node(&mut self, id: NodeId) -> Option<Node> {
        let node = self.nodes.remove(&id)?;
        let touching: Vec<RelId> = RelType::ALL
            .iter()
            .flat_map(|&t| {
                let out = self.out_adj.get(&(id, t)).into_iter().flatten();
                let inc = self.in_adj.get(&(id, t)).into_iter().flatten();
                out.chain(inc).copied().collect::<Vec<_>>()
            })
            .collect();
        let mut layers = BTreeSet::new();
        for r in touching {
            if let Some(rel) = self.remove_rel(r) {
                layers.insert(rel.rel_type.layer());
            }
        }
        for l in layers {
            self.bump(l);
        }
        if let Some(name) = node.prop_str(NAME_KEY) {
            if node.has_label(Label::Activity) {
                self.activities.remove(name);
            }
            if node.has_label(Label::Feature) {
                self.features.remove(name);
            }
        }
        if let Some(c) = node.prop_str("case_id").filter(|_| node.has_label(Label::Case)) {
            self.cases.remove(c);
        }
        if let Some(e) = node.prop_str("event_id").filter(|_| node.has_label(Label::Event)) {
            self.events.remove(e);
        }
        Some(node)
    }

    fn clear_type(&mut self, rel_type: RelType) {
        let ids: Vec<RelId> = self.rels_of_type(rel_type).map(|r| r.id).collect();
        for id in ids {
            self.remove_rel(id);
        }
    }

    /// Activity node for `name`, created on first use.
    pub fn ensure_activity(&mut self, name: &str) -> NodeId {
        if let Some(id) = self.activity_id(name) {
            return id;
        }
        self.add_node([Label::Activity], Attributes::from([(NAME_KEY.to_string(), Value::from(name))]))
    }

    fn ensure_marker(&mut self, name: &str, role: &str) -> NodeId {
        let id = self.ensure_activity(name);
        self.nodes.get_mut(&id).unwrap().properties.insert(MARKER_KEY.into(), Value::from(role));
        id
    }

    pub fn is_marker(&self, activity: &str) -> bool {
        self.activity_id(activity)
            .and_then(|id| self.nodes.get(&id))
            .is_some_and(|n| n.properties.contains_key(MARKER_KEY))
    }

    /// Loads the base layer: Event, Case and Activity nodes plus `CORRELATED_TO` edges.
    pub fn load_log(&mut self, log: &EventLog, log_id: &str) -> Result<(), GraphError> {
        if let Some(existing) = &self.log_id {
            return Err(GraphError::DuplicateLog(existing.clone()));
        }
        if log.num_events() == 0 {
            return Err(GraphError::Log(LogError::EmptyLog));
        }
        for activity in &log.activity_universe {
            self.ensure_activity(activity);
        }
        for trace in log.traces.values() {
            let mut props = trace.attributes.clone();
            props.insert("case_id".into(), Value::from(trace.case_id.as_str()));
            let case = self.add_node([Label::Case], props);
            for e in &trace.events {
                let mut props = e.attributes.clone();
                props.insert("event_id".into(), Value::from(e.event_id.as_str()));
                props.insert("case_id".into(), Value::from(e.case_id.as_str()));
                props.insert("activity".into(), Value::from(e.activity.as_str()));
                props.insert("timestamp".into(), Value::Instant(e.timestamp));
                let ev = self.add_node([Label::Event], props);
                self.add_rel(RelType::CorrelatedTo, ev, case, Attributes::new())?;
            }
        }
        self.log_id = Some(log_id.to_string());
        self.bump(Layer::Base);
        Ok(())
    }

    /// Convenience: empty graph with `log` loaded.
    pub fn from_log(log: &EventLog) -> Result<Self, GraphError> {
        let mut g = Self::new();
        g.load_log(log, "log")?;
        Ok(g)
    }

    /// Events correlated to a case node, in trace order.
    fn case_events(&self, case: NodeId) -> Vec<&Node> {
        let mut evs: Vec<&Node> =
            self.incoming(case, RelType::CorrelatedTo).filter_map(|r| self.nodes.get(&r.source)).collect();
        evs.sort_by(|a, b| {
            let key = |n: &Node| {
                (n.properties.get("timestamp").and_then(Value::as_instant), n.prop_str("event_id").map(str::to_string))
            };
            key(a).cmp(&key(b))
        });
        evs
    }

    /// Rebuilds the (possibly enriched) event log from the base layer.
    pub fn event_log(&self) -> Result<EventLog, GraphError> {
        if self.log_id.is_none() {
            return Err(GraphError::NoBaseLayer);
        }
        let mut traces = Vec::new();
        for (case_name, &case) in &self.cases {
            let mut attrs = self.nodes[&case].properties.clone();
            attrs.remove("case_id");
            let events = self
                .case_events(case)
                .into_iter()
                .map(|n| {
                    let mut props = n.properties.clone();
                    let take = |p: &mut Attributes, k: &str| p.remove(k).map(|v| v.render()).unwrap_or_default();
                    let event_id = take(&mut props, "event_id");
                    let activity = take(&mut props, "activity");
                    props.remove("case_id");
                    let ts = props.remove("timestamp").and_then(|v| v.as_instant()).unwrap_or_default();
                    let mut e = Event::new(event_id, case_name.clone(), activity, ts);
                    e.attributes = props;
                    e
                })
                .collect();
            traces.push(Trace::new(case_name.clone(), events, attrs));
        }
        Ok(EventLog::new(traces)?)
    }

    /// Writes an enriched version of the loaded log back into the base layer: node properties
    /// are replaced, events (and emptied cases) missing from `log` are deleted with their edges.
    pub fn write_enriched_log(&mut self, log: &EventLog) -> Result<(), GraphError> {
        if self.log_id.is_none() {
            return Err(GraphError::NoBaseLayer);
        }
        let keep: BTreeSet<&str> = log.events().map(|e| e.event_id.as_str()).collect();
        let dropped: Vec<NodeId> =
            self.events.iter().filter(|(id, _)| !keep.contains(id.as_str())).map(|(_, n)| *n).collect();
        let any_dropped = !dropped.is_empty();
        for n in dropped {
            self.remove_node(n);
        }
        let dropped_cases: Vec<NodeId> =
            self.cases.iter().filter(|(c, _)| !log.traces.contains_key(c.as_str())).map(|(_, n)| *n).collect();
        for n in dropped_cases {
            self.remove_node(n);
        }
        for trace in log.traces.values() {
            if let Some(&case) = self.cases.get(&trace.case_id) {
                let props = &mut self.nodes.get_mut(&case).unwrap().properties;
                props.retain(|k, _| k == "case_id");
                props.extend(trace.attributes.clone());
            }
            for e in &trace.events {
                if let Some(&n) = self.events.get(&e.event_id) {
                    let props = &mut self.nodes.get_mut(&n).unwrap().properties;
                    props.retain(|k, _| ["event_id", "case_id", "activity", "timestamp"].contains(&k.as_str()));
                    props.extend(e.attributes.clone());
                }
            }
        }
        self.bump(Layer::Base);
        if any_dropped && self.has_layer(Layer::DirectlyFollows) {
            self.infer_directly_follows();
        }
        Ok(())
    }

    /// Links consecutive events of every case with `DIRECTLY_FOLLOWS`. Idempotent: when the
    /// edge set is already correct nothing changes, not even the layer version.
    pub fn infer_directly_follows(&mut self) -> usize {
        let mut wanted: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for &case in self.cases.values() {
            let evs = self.case_events(case);
            for pair in evs.windows(2) {
                wanted.insert((pair[0].id, pair[1].id));
            }
        }
        let existing: BTreeSet<(NodeId, NodeId)> =
            self.rels_of_type(RelType::DirectlyFollows).map(|r| (r.source, r.target)).collect();
        if existing == wanted && self.has_layer(Layer::DirectlyFollows) {
            return wanted.len();
        }
        self.clear_type(RelType::DirectlyFollows);
        for &(a, b) in &wanted {
            self.add_rel(RelType::DirectlyFollows, a, b, Attributes::new()).expect("event endpoints");
        }
        self.bump(Layer::DirectlyFollows);
        wanted.len()
    }

    /// Event-level directly-follows pairs lifted to activity names, one entry per edge.
    pub fn directly_follows_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rels_of_type(RelType::DirectlyFollows).filter_map(|r| {
            let a = self.nodes.get(&r.source)?.prop_str("activity")?;
            let b = self.nodes.get(&r.target)?.prop_str("activity")?;
            Some((a, b))
        })
    }

    /// First and last activity of every case, following the `DIRECTLY_FOLLOWS` path.
    pub fn case_boundaries(&self) -> Vec<(String, String, String)> {
        self.cases
            .iter()
            .filter_map(|(name, &case)| {
                let evs = self.case_events(case);
                let first = evs.first()?.prop_str("activity")?.to_string();
                let last = evs.last()?.prop_str("activity")?.to_string();
                Some((name.clone(), first, last))
            })
            .collect()
    }

    /// Replaces the process layer with `records` and recomputes `INDIRECTLY_FOLLOWS`.
    pub fn write_process_layer(&mut self, records: &[FlowRecord], markers: &Markers) -> Result<(), GraphError> {
        self.ensure_marker(&markers.start, "start");
        self.ensure_marker(&markers.end, "end");
        for r in records {
            for name in [&r.from, &r.to] {
                if self.activity_id(name).is_none() {
                    return Err(GraphError::UnknownActivity(name.clone()));
                }
            }
        }
        self.clear_type(RelType::FlowsTo);
        for r in records {
            let (a, b) = (self.activities[&r.from], self.activities[&r.to]);
            let props = Attributes::from([("frequency".to_string(), Value::Int(r.frequency as i64))]);
            self.add_rel(RelType::FlowsTo, a, b, props)?;
        }
        self.bump(Layer::Process);
        transitive_closure(self, ClosureBase::FlowsTo)?;
        Ok(())
    }

    /// Replaces the causal layer and recomputes `INDIRECTLY_CAUSES`. `order` is the causal
    /// ordering of the analysed activities; it is stored as a rank property on their nodes.
    pub fn write_causal_layer(&mut self, records: &[CauseRecord], order: &[String]) -> Result<(), GraphError> {
        for r in records {
            for name in [&r.cause, &r.effect] {
                if self.activity_id(name).is_none() && !r.boundary {
                    return Err(GraphError::UnknownActivity(name.clone()));
                }
            }
        }
        for name in order {
            if self.activity_id(name).is_none() {
                return Err(GraphError::UnknownActivity(name.clone()));
            }
        }
        let pairs: Vec<(String, String)> = records.iter().map(|r| (r.cause.clone(), r.effect.clone())).collect();
        if closure::has_cycle(&pairs) {
            return Err(GraphError::CyclicBase(RelType::Causes));
        }
        for r in records.iter().filter(|r| r.boundary) {
            for name in [&r.cause, &r.effect] {
                if self.activity_id(name).is_none() {
                    self.ensure_marker(name, "boundary");
                }
            }
        }
        self.clear_type(RelType::Causes);
        let ids: Vec<NodeId> = self.activities.values().copied().collect();
        for id in ids {
            self.nodes.get_mut(&id).unwrap().properties.remove(CAUSAL_RANK_KEY);
        }
        for (rank, name) in order.iter().enumerate() {
            let id = self.activities[name];
            self.nodes.get_mut(&id).unwrap().properties.insert(CAUSAL_RANK_KEY.into(), Value::Int(rank as i64));
        }
        for r in records {
            let (a, b) = (self.activities[&r.cause], self.activities[&r.effect]);
            let mut props = Attributes::from([("coefficient".to_string(), Value::Float(r.coefficient))]);
            if r.boundary {
                props.insert("boundary".into(), Value::Bool(true));
            }
            self.add_rel(RelType::Causes, a, b, props)?;
        }
        self.bump(Layer::Causal);
        transitive_closure(self, ClosureBase::Causes)?;
        Ok(())
    }

    /// Causal order stored by the last causal write.
    pub fn causal_order(&self) -> Vec<String> {
        let mut ranked: Vec<(i64, String)> = self
            .nodes_with_label(Label::Activity)
            .filter_map(|n| {
                let rank = match n.properties.get(CAUSAL_RANK_KEY) {
                    Some(Value::Int(r)) => *r,
                    _ => return None,
                };
                Some((rank, n.prop_str(NAME_KEY)?.to_string()))
            })
            .collect();
        ranked.sort();
        ranked.into_iter().map(|(_, n)| n).collect()
    }

    /// Replaces the XAI layer: one `Feature` node per feature name, `HAS_FEATURE` edges carry
    /// the importance.
    pub fn write_xai_layer(&mut self, records: &[FeatureRecord]) -> Result<(), GraphError> {
        for r in records {
            if self.activity_id(&r.activity).is_none() {
                return Err(GraphError::UnknownActivity(r.activity.clone()));
            }
        }
        self.clear_type(RelType::HasFeature);
        let stale: Vec<NodeId> = self.features.values().copied().collect();
        for id in stale {
            self.remove_node(id);
        }
        for r in records {
            let feature = match self.features.get(&r.feature) {
                Some(&id) => id,
                None => self.add_node(
                    [Label::Feature],
                    Attributes::from([(NAME_KEY.to_string(), Value::from(r.feature.as_str()))]),
                ),
            };
            let act = self.activities[&r.activity];
            let props = Attributes::from([("importance".to_string(), Value::Float(r.importance))]);
            self.add_rel(RelType::HasFeature, act, feature, props)?;
        }
        self.bump(Layer::Xai);
        Ok(())
    }

    /// Markers of the written process layer.
    pub fn markers(&self) -> Option<Markers> {
        let find = |role: &str| {
            self.nodes_with_label(Label::Activity)
                .find(|n| n.prop_str(MARKER_KEY) == Some(role))
                .and_then(|n| n.prop_str(NAME_KEY))
                .map(str::to_string)
        };
        Some(Markers { start: find("start")?, end: find("end")? })
    }

    fn rel_names(&self, r: &Relationship) -> (String, String) {
        let name = |id: NodeId| self.activity_name(id).unwrap_or_default().to_string();
        (name(r.source), name(r.target))
    }

    /// Records of a written view, sorted by source activity then target.
    pub fn query_view(&self, view: ViewKind) -> Result<ViewRecords, GraphError> {
        if !self.has_layer(view.layer()) {
            return Err(GraphError::ViewAbsent(view));
        }
        Ok(match view {
            ViewKind::Process => {
                let mut out: Vec<FlowRecord> = self
                    .rels_of_type(RelType::FlowsTo)
                    .map(|r| {
                        let (from, to) = self.rel_names(r);
                        let frequency = match r.properties.get("frequency") {
                            Some(Value::Int(f)) => *f as u64,
                            _ => 0,
                        };
                        FlowRecord { from, to, frequency }
                    })
                    .collect();
                out.sort();
                ViewRecords::Process(out)
            }
            ViewKind::Causal => {
                let mut out: Vec<CauseRecord> = self
                    .rels_of_type(RelType::Causes)
                    .map(|r| {
                        let (cause, effect) = self.rel_names(r);
                        CauseRecord {
                            cause,
                            effect,
                            coefficient: r.properties.get("coefficient").and_then(Value::as_f64).unwrap_or(0.0),
                            boundary: r.properties.get("boundary") == Some(&Value::Bool(true)),
                        }
                    })
                    .collect();
                out.sort_by(|a, b| (&a.cause, &a.effect).cmp(&(&b.cause, &b.effect)));
                ViewRecords::Causal(out)
            }
            ViewKind::Xai => {
                let mut out: Vec<FeatureRecord> = self
                    .rels_of_type(RelType::HasFeature)
                    .map(|r| FeatureRecord {
                        activity: self.activity_name(r.source).unwrap_or_default().to_string(),
                        feature: self.nodes[&r.target].prop_str(NAME_KEY).unwrap_or_default().to_string(),
                        importance: r.properties.get("importance").and_then(Value::as_f64).unwrap_or(0.0),
                    })
                    .collect();
                out.sort_by(|a, b| (&a.activity, &a.feature).cmp(&(&b.activity, &b.feature)));
                ViewRecords::Xai(out)
            }
        })
    }

    /// Whether each relationship endpoint resolves to an existing node.
    pub fn endpoints_resolve(&self) -> bool {
        self.rels.values().all(|r| self.nodes.contains_key(&r.source) && self.nodes.contains_key(&r.target))
    }

    /// Whether the `DIRECTLY_FOLLOWS` edges of every case form one simple path over its events.
    pub fn directly_follows_are_paths(&self) -> bool {
        self.cases.values().all(|&case| {
            let evs = self.case_events(case);
            let ids: BTreeSet<NodeId> = evs.iter().map(|n| n.id).collect();
            let edges: Vec<&Relationship> = evs
                .iter()
                .flat_map(|n| self.outgoing(n.id, RelType::DirectlyFollows))
                .filter(|r| ids.contains(&r.target))
                .collect();
            if edges.len() + 1 != evs.len() {
                return false;
            }
            let heads: Vec<NodeId> =
                evs.iter().filter(|n| self.incoming(n.id, RelType::DirectlyFollows).next().is_none()).map(|n| n.id).collect();
            let [mut cur] = heads[..] else { return false };
            let mut seen = BTreeSet::from([cur]);
            while let Some(next) = self.outgoing(cur, RelType::DirectlyFollows).next() {
                if !seen.insert(next.target) {
                    return false;
                }
                cur = next.target;
            }
            seen == ids
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Timestamp;

    pub(crate) fn toy_log(traces: &[(&str, &[&str])]) -> EventLog {
        let mut n = 0;
        EventLog::new(traces.iter().map(|(case, acts)| {
            let events = acts
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    n += 1;
                    Event::new(format!("e{n:04}"), *case, *a, Timestamp(i as i64 * 1000))
                })
                .collect();
            Trace::new(*case, events, Attributes::new())
        }))
        .unwrap()
    }

    #[test]
    fn load_counts() {
        let g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A", "B"])])).unwrap();
        assert_eq!(g.count_label(Label::Event), 2);
        assert_eq!(g.count_label(Label::Case), 1);
        assert_eq!(g.count_label(Label::Activity), 2);
        assert_eq!(g.count_type(RelType::CorrelatedTo), 2);
    }

    #[test]
    fn duplicate_log_rejected() {
        let log = toy_log(&[("c1", &["A"])]);
        let mut g = KnowledgeGraph::from_log(&log).unwrap();
        assert_eq!(g.load_log(&log, "again"), Err(GraphError::DuplicateLog("log".into())));
    }

    #[test]
    fn directly_follows_per_case() {
        let mut g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A", "B", "C"]), ("c2", &["A", "B", "C"])])).unwrap();
        assert_eq!(g.infer_directly_follows(), 4);
        let mut pairs: Vec<_> = g.directly_follows_pairs().collect();
        pairs.sort();
        assert_eq!(pairs, vec![("A", "B"), ("A", "B"), ("B", "C"), ("B", "C")]);
        assert!(g.directly_follows_are_paths());
        // every DF edge stays within one case
        for r in g.rels_of_type(RelType::DirectlyFollows) {
            assert_eq!(g.node(r.source).unwrap().prop_str("case_id"), g.node(r.target).unwrap().prop_str("case_id"));
        }
        let v = g.layer_version(Layer::DirectlyFollows);
        g.infer_directly_follows();
        assert_eq!(g.layer_version(Layer::DirectlyFollows), v);
    }

    #[test]
    fn invalid_endpoints_rejected() {
        let mut g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A", "B"])])).unwrap();
        let a = g.activity_id("A").unwrap();
        let e = g.event_node("e0001").unwrap();
        assert!(matches!(
            g.add_rel(RelType::FlowsTo, a, e, Attributes::new()),
            Err(GraphError::InvalidEndpoints { .. })
        ));
        assert!(matches!(g.add_rel(RelType::Causes, a, NodeId(999), Attributes::new()), Err(GraphError::UnknownNode(_))));
    }

    #[test]
    fn deletion_cascades() {
        let mut g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A", "B", "C"])])).unwrap();
        g.infer_directly_follows();
        let b = g.event_node("e0002").unwrap();
        g.remove_node(b);
        assert!(g.endpoints_resolve());
        assert_eq!(g.count_type(RelType::DirectlyFollows), 0);
        assert_eq!(g.count_type(RelType::CorrelatedTo), 2);
    }

    #[test]
    fn view_absent_before_writes() {
        let g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A"])])).unwrap();
        assert_eq!(g.query_view(ViewKind::Process), Err(GraphError::ViewAbsent(ViewKind::Process)));
        assert_eq!(g.query_view(ViewKind::Xai), Err(GraphError::ViewAbsent(ViewKind::Xai)));
    }

    #[test]
    fn causal_write_leaves_process_layer_alone() {
        let mut g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A", "B", "C"])])).unwrap();
        let markers = Markers { start: "S".into(), end: "E".into() };
        let flows = [("S", "A"), ("A", "B"), ("B", "C"), ("C", "E")]
            .map(|(a, b)| FlowRecord { from: a.into(), to: b.into(), frequency: 1 });
        g.write_process_layer(&flows, &markers).unwrap();
        let before = g.layer_version(Layer::Process);
        let flows_before = g.query_view(ViewKind::Process).unwrap();
        let causes = [("A", "B"), ("B", "C")]
            .map(|(a, b)| CauseRecord { cause: a.into(), effect: b.into(), coefficient: 1.0, boundary: false });
        g.write_causal_layer(&causes, &["A".into(), "B".into(), "C".into()]).unwrap();
        assert_eq!(g.layer_version(Layer::Process), before);
        assert_eq!(g.query_view(ViewKind::Process).unwrap(), flows_before);
        assert_eq!(g.count_type(RelType::Causes), 2);
        assert_eq!(g.count_type(RelType::IndirectlyCauses), 3);
        assert_eq!(g.causal_order(), vec!["A", "B", "C"]);
    }

    #[test]
    fn causal_write_checks_activities_and_cycles() {
        let mut g = KnowledgeGraph::from_log(&toy_log(&[("c1", &["A", "B"])])).unwrap();
        let bad = [CauseRecord { cause: "A".into(), effect: "Z".into(), coefficient: 1.0, boundary: false }];
        assert_eq!(g.write_causal_layer(&bad, &[]), Err(GraphError::UnknownActivity("Z".into())));
        let cyc = [("A", "B"), ("B", "A")]
            .map(|(a, b)| CauseRecord { cause: a.into(), effect: b.into(), coefficient: 1.0, boundary: false });
        assert_eq!(g.write_causal_layer(&cyc, &[]), Err(GraphError::CyclicBase(RelType::Causes)));
        assert!(!g.has_layer(Layer::Causal));
        g.write_causal_layer(&[], &[]).unwrap();
        assert_eq!(g.query_view(ViewKind::Causal).unwrap(), ViewRecords::Causal(vec![]));
        assert_eq!(g.count_type(RelType::IndirectlyCauses), 0);
    }

    #[test]
    fn event_log_roundtrips_through_graph() {
        let log = toy_log(&[("c1", &["A", "B"]), ("c2", &["B"])]);
        let g = KnowledgeGraph::from_log(&log).unwrap();
        assert_eq!(g.event_log().unwrap(), log);
    }

    #[test]
    fn enriched_log_write_back_drops_events() {
        let log = toy_log(&[("c1", &["A", "noise", "B"]), ("c2", &["noise"])]);
        let mut g = KnowledgeGraph::from_log(&log).unwrap();
        g.infer_directly_follows();
        let mut enriched = log.clone();
        enriched.traces.remove("c2");
        let t = enriched.traces.get_mut("c1").unwrap();
        t.events.retain(|e| e.activity != "noise");
        t.attributes.insert("region".into(), Value::from("north"));
        let enriched = EventLog::new(enriched.traces.into_values()).unwrap();
        g.write_enriched_log(&enriched).unwrap();
        assert_eq!(g.event_log().unwrap(), enriched);
        assert_eq!(g.count_type(RelType::DirectlyFollows), 1);
        assert!(g.directly_follows_are_paths());
    }
}
