//! Canonical in-memory event log: events grouped into traces keyed by case.
//!
//! Every downstream service consumes [`EventLog`]. Construction through [`EventLog::new`]
//! sorts each trace by `(timestamp, event_id)` and derives the activity universe and
//! attribute schema, so a constructed log always satisfies [`validate`].

mod csv;
mod xes;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Attributes, Timestamp, ValueType};

pub use self::csv::{export_csv, parse_csv, CaseAttributeMode, CsvMapping};
pub use self::xes::parse_xes;

/// Case attribute holding the case's arrival instant. When present it anchors relative times;
/// otherwise the first event's timestamp does.
pub const CASE_START_KEY: &str = "case_start";

#[derive(Debug, Error, PartialEq)]
pub enum LogError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("unparseable timestamp at row {0}")]
    UnparseableTimestamp(usize),
    #[error("event log contains no events")]
    EmptyLog,
    #[error("empty activity name at row {0}")]
    EmptyActivity(usize),
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("missing XES extension attribute {0:?}")]
    MissingExtension(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub case_id: String,
    pub activity: String,
    pub timestamp: Timestamp,
    #[serde(default)]
    pub attributes: Attributes,
}

impl Event {
    pub fn new(
        event_id: impl Into<String>,
        case_id: impl Into<String>,
        activity: impl Into<String>,
        timestamp: Timestamp,
    ) -> Self {
        Event {
            event_id: event_id.into(),
            case_id: case_id.into(),
            activity: activity.into(),
            timestamp,
            attributes: Attributes::new(),
        }
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<crate::value::Value>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    fn sort_key(&self) -> (Timestamp, &str) {
        (self.timestamp, self.event_id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
    #[serde(default)]
    pub attributes: Attributes,
}

impl Trace {
    /// Builds a trace, sorting events by timestamp with event id as tie-break.
    pub fn new(case_id: impl Into<String>, mut events: Vec<Event>, attributes: Attributes) -> Self {
        events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Trace { case_id: case_id.into(), events, attributes }
    }

    /// Reference instant for relative times: the `case_start` attribute if set, else the first event.
    pub fn start(&self) -> Option<Timestamp> {
        self.attributes
            .get(CASE_START_KEY)
            .and_then(|v| v.as_instant())
            .or_else(|| self.events.first().map(|e| e.timestamp))
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.timestamp)
    }

    pub fn activities(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.activity.as_str())
    }

    pub fn contains_activity(&self, activity: &str) -> bool {
        self.events.iter().any(|e| e.activity == activity)
    }

    /// Activity sequence of the trace, the variant key.
    pub fn variant(&self) -> Vec<String> {
        self.activities().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub traces: BTreeMap<String, Trace>,
    pub activity_universe: BTreeSet<String>,
    pub attribute_schema: BTreeMap<String, ValueType>,
}

impl EventLog {
    /// Normalizes traces (sorted events) and derives universe and schema.
    /// Traces with no events are dropped.
    pub fn new(traces: impl IntoIterator<Item = Trace>) -> Result<Self, LogError> {
        let traces: BTreeMap<String, Trace> = traces
            .into_iter()
            .filter(|t| !t.events.is_empty())
            .map(|t| {
                let t = Trace::new(t.case_id, t.events, t.attributes);
                (t.case_id.clone(), t)
            })
            .collect();
        if traces.is_empty() {
            return Err(LogError::EmptyLog);
        }
        Ok(Self::from_traces_unchecked(traces))
    }

    /// Raw constructor: derives universe and schema but neither sorts nor filters.
    pub fn from_traces_unchecked(traces: BTreeMap<String, Trace>) -> Self {
        let mut activity_universe = BTreeSet::new();
        let mut attribute_schema: BTreeMap<String, ValueType> = BTreeMap::new();
        let mut note = |key: &str, ty: ValueType| {
            attribute_schema
                .entry(key.to_string())
                .and_modify(|t| {
                    if *t != ty {
                        *t = ValueType::String;
                    }
                })
                .or_insert(ty);
        };
        for trace in traces.values() {
            for (k, v) in &trace.attributes {
                note(k, v.value_type());
            }
            for e in &trace.events {
                activity_universe.insert(e.activity.clone());
                for (k, v) in &e.attributes {
                    note(k, v.value_type());
                }
            }
        }
        EventLog { traces, activity_universe, attribute_schema }
    }

    pub fn num_cases(&self) -> usize {
        self.traces.len()
    }

    pub fn num_events(&self) -> usize {
        self.traces.values().map(|t| t.events.len()).sum()
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.traces.values().flat_map(|t| t.events.iter())
    }

    /// Trace variants with their case counts, most frequent first (ties by sequence).
    pub fn variants(&self) -> Vec<(Vec<String>, usize)> {
        let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for t in self.traces.values() {
            *counts.entry(t.variant()).or_default() += 1;
        }
        let mut out: Vec<_> = counts.into_iter().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Sub-log of the cases accepted by `filter`.
    pub fn filtered(&self, filter: &CaseFilter) -> Result<EventLog, LogError> {
        EventLog::new(self.traces.values().filter(|t| filter.accepts(t)).cloned())
    }
}

/// Selects the cases a view is computed over.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseFilter {
    #[default]
    All,
    /// Cases that execute the given activity at least once.
    ContainingActivity(String),
    CaseIds(BTreeSet<String>),
}

impl CaseFilter {
    pub fn accepts(&self, trace: &Trace) -> bool {
        match self {
            CaseFilter::All => true,
            CaseFilter::ContainingActivity(a) => trace.contains_activity(a),
            CaseFilter::CaseIds(ids) => ids.contains(&trace.case_id),
        }
    }
}

/// A broken log invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    DuplicateEventId { event_id: String },
    EmptyActivity { event_id: String },
    UnsortedTrace { case_id: String, position: usize },
    EmptyTrace { case_id: String },
    CaseIdMismatch { case_id: String, event_id: String },
    ActivityUniverseMismatch,
}

/// Checks every log invariant. Violations are data, an empty list means the log is well formed.
pub fn validate(log: &EventLog) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut universe = BTreeSet::new();
    for (key, trace) in &log.traces {
        if trace.events.is_empty() {
            out.push(Violation::EmptyTrace { case_id: key.clone() });
        }
        for (i, e) in trace.events.iter().enumerate() {
            if !seen.insert(e.event_id.as_str()) {
                out.push(Violation::DuplicateEventId { event_id: e.event_id.clone() });
            }
            if e.activity.trim().is_empty() {
                out.push(Violation::EmptyActivity { event_id: e.event_id.clone() });
            }
            if e.case_id != *key || trace.case_id != *key {
                out.push(Violation::CaseIdMismatch { case_id: key.clone(), event_id: e.event_id.clone() });
            }
            if i > 0 && trace.events[i - 1].timestamp > e.timestamp {
                out.push(Violation::UnsortedTrace { case_id: key.clone(), position: i });
            }
            universe.insert(e.activity.clone());
        }
    }
    if universe != log.activity_universe {
        out.push(Violation::ActivityUniverseMismatch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(id: &str, case: &str, act: &str, ms: i64) -> Event {
        Event::new(id, case, act, Timestamp(ms))
    }

    #[test]
    fn well_formed_log_has_no_violations() {
        let log = EventLog::new([Trace::new(
            "c1",
            vec![ev("e2", "c1", "B", 5), ev("e1", "c1", "A", 0)],
            Attributes::new(),
        )])
        .unwrap();
        assert!(validate(&log).is_empty());
        assert_eq!(log.traces["c1"].variant(), vec!["A", "B"]);
    }

    #[test]
    fn duplicate_event_id_is_reported() {
        let log = EventLog::new([
            Trace::new("c1", vec![ev("e1", "c1", "A", 0)], Attributes::new()),
            Trace::new("c2", vec![ev("e1", "c2", "A", 0)], Attributes::new()),
        ])
        .unwrap();
        assert_eq!(validate(&log), vec![Violation::DuplicateEventId { event_id: "e1".into() }]);
    }

    #[test]
    fn unsorted_trace_via_raw_constructor() {
        let trace = Trace {
            case_id: "c1".into(),
            events: vec![ev("e1", "c1", "A", 10), ev("e2", "c1", "B", 5)],
            attributes: Attributes::new(),
        };
        let log = EventLog::from_traces_unchecked(BTreeMap::from([("c1".to_string(), trace)]));
        assert_eq!(validate(&log), vec![Violation::UnsortedTrace { case_id: "c1".into(), position: 1 }]);
    }

    #[test]
    fn ties_broken_by_event_id() {
        let t = Trace::new("c", vec![ev("b", "c", "X", 1), ev("a", "c", "Y", 1)], Attributes::new());
        assert_eq!(t.variant(), vec!["Y", "X"]);
    }

    #[test]
    fn empty_log_rejected() {
        assert_eq!(EventLog::new(Vec::<Trace>::new()), Err(LogError::EmptyLog));
    }

    #[test]
    fn variants_sorted_by_frequency() {
        let log = EventLog::new([
            Trace::new("1", vec![ev("1", "1", "A", 0)], Attributes::new()),
            Trace::new("2", vec![ev("2", "2", "B", 0)], Attributes::new()),
            Trace::new("3", vec![ev("3", "3", "B", 0)], Attributes::new()),
        ])
        .unwrap();
        assert_eq!(log.variants()[0], (vec!["B".to_string()], 2));
    }
}
