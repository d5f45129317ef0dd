//! Process view discovery: a frequency-annotated directly-follows graph over activities, framed by
//! synthetic start and end markers, with optional heuristic-miner dependency filtering.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::CaseFilter;
use crate::graph::{FlowRecord, GraphError, KnowledgeGraph, Layer, Markers, ViewKind, ViewRecords};

pub const DEFAULT_START_MARKER: &str = "EVENT 1 START";
pub const DEFAULT_END_MARKER: &str = "EVENT 3 END";

#[derive(Debug, Error, PartialEq)]
pub enum DiscoveryError {
    #[error("directly-follows relation has not been inferred")]
    MissingDirectlyFollows,
    #[error("dependency threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("process export syntax error at byte {0}: {1}")]
    Syntax(usize, String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    /// Edges seen fewer times are removed.
    pub edge_frequency_threshold: u64,
    /// Minimum heuristic dependency measure; 0 keeps the plain directly-follows graph.
    pub dependency_threshold: f64,
    pub start_marker: String,
    pub end_marker: String,
    pub case_filter: CaseFilter,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            edge_frequency_threshold: 0,
            dependency_threshold: 0.0,
            start_marker: DEFAULT_START_MARKER.into(),
            end_marker: DEFAULT_END_MARKER.into(),
            case_filter: CaseFilter::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessView {
    pub edges: BTreeMap<(String, String), u64>,
    pub start_marker: String,
    pub end_marker: String,
}

impl ProcessView {
    pub fn new(start_marker: impl Into<String>, end_marker: impl Into<String>) -> Self {
        ProcessView { edges: BTreeMap::new(), start_marker: start_marker.into(), end_marker: end_marker.into() }
    }

    pub fn is_marker(&self, activity: &str) -> bool {
        activity == self.start_marker || activity == self.end_marker
    }

    pub fn frequency(&self, from: &str, to: &str) -> u64 {
        self.edges.get(&(from.to_string(), to.to_string())).copied().unwrap_or(0)
    }

    pub fn out_frequency(&self, activity: &str) -> u64 {
        self.edges.iter().filter(|((a, _), _)| a == activity).map(|(_, f)| f).sum()
    }

    pub fn in_frequency(&self, activity: &str) -> u64 {
        self.edges.iter().filter(|((_, b), _)| b == activity).map(|(_, f)| f).sum()
    }

    /// Non-marker activities appearing on any edge.
    pub fn activities(&self) -> BTreeSet<&str> {
        self.edges
            .keys()
            .flat_map(|(a, b)| [a.as_str(), b.as_str()])
            .filter(|a| !self.is_marker(a))
            .collect()
    }

    /// Shortest edge distance from the start marker; unreachable activities are absent.
    pub fn depths(&self) -> BTreeMap<&str, usize> {
        let mut depth = BTreeMap::from([(self.start_marker.as_str(), 0usize)]);
        let mut queue = VecDeque::from([self.start_marker.as_str()]);
        while let Some(a) = queue.pop_front() {
            let d = depth[a];
            for (from, to) in self.edges.keys() {
                if from == a && !depth.contains_key(to.as_str()) {
                    depth.insert(to.as_str(), d + 1);
                    queue.push_back(to.as_str());
                }
            }
        }
        depth
    }

    /// Non-marker activities in flow order: by distance from the start marker, then by name.
    pub fn activity_order(&self) -> Vec<String> {
        let depths = self.depths();
        let mut acts: Vec<&str> = self.activities().into_iter().collect();
        acts.sort_by_key(|a| (depths.get(a).copied().unwrap_or(usize::MAX), *a));
        acts.into_iter().map(str::to_string).collect()
    }

    /// Edges in export order: start edges first, then by descending frequency; ties by the source's
    /// distance from start, then source name, then target name.
    pub fn ordered_edges(&self) -> Vec<(&str, &str, u64)> {
        let depths = self.depths();
        let mut edges: Vec<(&str, &str, u64)> =
            self.edges.iter().map(|((a, b), f)| (a.as_str(), b.as_str(), *f)).collect();
        edges.sort_by_key(|&(a, b, f)| {
            (a != self.start_marker, std::cmp::Reverse(f), depths.get(a).copied().unwrap_or(usize::MAX), a, b)
        });
        edges
    }

    pub fn records(&self) -> Vec<FlowRecord> {
        self.edges
            .iter()
            .map(|((from, to), f)| FlowRecord { from: from.clone(), to: to.clone(), frequency: *f })
            .collect()
    }

    /// Reads the process view stored in the graph.
    pub fn from_graph(g: &KnowledgeGraph) -> Result<ProcessView, GraphError> {
        let ViewRecords::Process(records) = g.query_view(ViewKind::Process)? else { unreachable!() };
        let markers = g.markers().unwrap_or(Markers { start: DEFAULT_START_MARKER.into(), end: DEFAULT_END_MARKER.into() });
        let mut v = ProcessView::new(markers.start, markers.end);
        for r in records {
            v.edges.insert((r.from, r.to), r.frequency);
        }
        Ok(v)
    }

    /// Python-literal rendering `{('a', 'b'): n, ...}`, one pair per line.
    pub fn export(&self) -> String {
        export_process_json(self)
    }

    pub fn parse(text: &str, start_marker: &str, end_marker: &str) -> Result<ProcessView, DiscoveryError> {
        let mut v = ProcessView::new(start_marker, end_marker);
        for (a, b, f) in pyrepr::parse_pair_dict(text)? {
            v.edges.insert((a, b), f);
        }
        Ok(v)
    }
}

/// Mines the process view from the directly-follows layer without touching the graph.
pub fn mine(g: &KnowledgeGraph, cfg: &DiscoveryConfig) -> Result<ProcessView, DiscoveryError> {
    if !(0.0..=1.0).contains(&cfg.dependency_threshold) {
        return Err(DiscoveryError::InvalidThreshold(cfg.dependency_threshold));
    }
    if !g.has_layer(Layer::DirectlyFollows) {
        return Err(DiscoveryError::MissingDirectlyFollows);
    }
    let log = g.event_log()?;
    let accepted: BTreeSet<&str> =
        log.traces.values().filter(|t| cfg.case_filter.accepts(t)).map(|t| t.case_id.as_str()).collect();

    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut bump = |a: &str, b: &str| *counts.entry((a.to_string(), b.to_string())).or_default() += 1;
    for r in g.rels_of_type(crate::graph::RelType::DirectlyFollows) {
        let (Some(src), Some(dst)) = (g.node(r.source), g.node(r.target)) else { continue };
        if !src.prop_str("case_id").is_some_and(|c| accepted.contains(c)) {
            continue;
        }
        if let (Some(a), Some(b)) = (src.prop_str("activity"), dst.prop_str("activity")) {
            bump(a, b);
        }
    }
    for (case, first, last) in g.case_boundaries() {
        if accepted.contains(case.as_str()) {
            bump(&cfg.start_marker, &first);
            bump(&last, &cfg.end_marker);
        }
    }

    let mut view = ProcessView::new(&cfg.start_marker, &cfg.end_marker);
    for ((a, b), f) in &counts {
        if *f < cfg.edge_frequency_threshold {
            continue;
        }
        if cfg.dependency_threshold > 0.0 && dependency(&counts, a, b) < cfg.dependency_threshold {
            continue;
        }
        view.edges.insert((a.clone(), b.clone()), *f);
    }
    prune_unreachable(&mut view);
    Ok(view)
}

/// Heuristic-miner dependency `(|a>b| - |b>a|) / (|a>b| + |b>a| + 1)`, and `|a>a| / (|a>a| + 1)` for loops.
pub fn dependency(counts: &BTreeMap<(String, String), u64>, a: &str, b: &str) -> f64 {
    let get = |x: &str, y: &str| counts.get(&(x.to_string(), y.to_string())).copied().unwrap_or(0) as f64;
    let ab = get(a, b);
    if a == b {
        return ab / (ab + 1.0);
    }
    let ba = get(b, a);
    (ab - ba) / (ab + ba + 1.0)
}

/// Keeps only edges on some start-to-end path.
fn prune_unreachable(view: &mut ProcessView) {
    let reach = |from: &str, forward: bool| {
        let mut seen = BTreeSet::from([from.to_string()]);
        let mut stack = vec![from.to_string()];
        while let Some(x) = stack.pop() {
            for (a, b) in view.edges.keys() {
                let (here, next) = if forward { (a, b) } else { (b, a) };
                if *here == x && seen.insert(next.clone()) {
                    stack.push(next.clone());
                }
            }
        }
        seen
    };
    let from_start = reach(&view.start_marker, true);
    let to_end = reach(&view.end_marker, false);
    view.edges.retain(|(a, b), _| from_start.contains(a) && to_end.contains(b));
}

/// Mines the process view and writes it back as the `FLOWS_TO` layer (closure included).
pub fn discover(g: &mut KnowledgeGraph, cfg: &DiscoveryConfig) -> Result<ProcessView, DiscoveryError> {
    let view = mine(g, cfg)?;
    let markers = Markers { start: view.start_marker.clone(), end: view.end_marker.clone() };
    g.write_process_layer(&view.records(), &markers)?;
    Ok(view)
}

pub fn export_process_json(v: &ProcessView) -> String {
    let entries: Vec<String> = v
        .ordered_edges()
        .into_iter()
        .map(|(a, b, f)| format!("({}, {}): {f}", pyrepr::quote(a), pyrepr::quote(b)))
        .collect();
    format!("{{{}}}", entries.join(",\n"))
}

/// Python string literals as produced by `repr()` and a reader for `{(str, str): int}` dicts.
pub(crate) mod pyrepr {
    use super::DiscoveryError;

    pub fn quote(s: &str) -> String {
        let q = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
        let mut out = String::with_capacity(s.len() + 2);
        out.push(q);
        for c in s.chars() {
            match c {
                '\\' => out.push_str("\\\\"),
                '\n' => out.push_str("\\n"),
                '\r' => out.push_str("\\r"),
                '\t' => out.push_str("\\t"),
                c if c == q => {
                    out.push('\\');
                    out.push(c);
                }
                c if (c as u32) < 0x20 || c as u32 == 0x7f => out.push_str(&format!("\\x{:02x}", c as u32)),
                c => out.push(c),
            }
        }
        out.push(q);
        out
    }

    struct Cursor<'a> {
        text: &'a str,
        pos: usize,
    }

    impl<'a> Cursor<'a> {
        fn err(&self, msg: &str) -> DiscoveryError {
            DiscoveryError::Syntax(self.pos, msg.to_string())
        }

        fn skip_ws(&mut self) {
            while let Some(c) = self.peek() {
                if !c.is_whitespace() {
                    break;
                }
                self.pos += c.len_utf8();
            }
        }

        fn peek(&self) -> Option<char> {
            self.text[self.pos..].chars().next()
        }

        fn expect(&mut self, want: char) -> Result<(), DiscoveryError> {
            self.skip_ws();
            if self.peek() == Some(want) {
                self.pos += want.len_utf8();
                Ok(())
            } else {
                Err(self.err(&format!("expected {want:?}")))
            }
        }

        fn string(&mut self) -> Result<String, DiscoveryError> {
            self.skip_ws();
            let q = match self.peek() {
                Some(c @ ('\'' | '"')) => c,
                _ => return Err(self.err("expected string literal")),
            };
            self.pos += 1;
            let mut out = String::new();
            loop {
                let c = self.peek().ok_or_else(|| self.err("unterminated string"))?;
                self.pos += c.len_utf8();
                match c {
                    c if c == q => return Ok(out),
                    '\\' => {
                        let e = self.peek().ok_or_else(|| self.err("dangling escape"))?;
                        self.pos += e.len_utf8();
                        match e {
                            'n' => out.push('\n'),
                            'r' => out.push('\r'),
                            't' => out.push('\t'),
                            'x' => {
                                let hex = self.text.get(self.pos..self.pos + 2).ok_or_else(|| self.err("short \\x"))?;
                                let code = u32::from_str_radix(hex, 16).map_err(|_| self.err("bad \\x escape"))?;
                                out.push(char::from_u32(code).ok_or_else(|| self.err("bad \\x escape"))?);
                                self.pos += 2;
                            }
                            other => out.push(other),
                        }
                    }
                    c => out.push(c),
                }
            }
        }

        fn integer(&mut self) -> Result<u64, DiscoveryError> {
            self.skip_ws();
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            self.text[start..self.pos].parse().map_err(|_| self.err("expected integer"))
        }
    }

    pub fn parse_pair_dict(text: &str) -> Result<Vec<(String, String, u64)>, DiscoveryError> {
        let mut c = Cursor { text, pos: 0 };
        c.expect('{')?;
        let mut out = Vec::new();
        c.skip_ws();
        if c.peek() == Some('}') {
            c.pos += 1;
        } else {
            loop {
                c.expect('(')?;
                let a = c.string()?;
                c.expect(',')?;
                let b = c.string()?;
                c.expect(')')?;
                c.expect(':')?;
                let f = c.integer()?;
                out.push((a, b, f));
                c.skip_ws();
                match c.peek() {
                    Some(',') => c.pos += 1,
                    Some('}') => {
                        c.pos += 1;
                        break;
                    }
                    _ => return Err(c.err("expected ',' or '}'")),
                }
            }
        }
        c.skip_ws();
        if c.pos != text.len() {
            return Err(c.err("trailing input"));
        }
        Ok(out)
    }
}
