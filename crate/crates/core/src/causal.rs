//! Causal execution dependencies between activities, estimated with DirectLiNGAM over per-case
//! completion times.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discovery::{DEFAULT_END_MARKER, DEFAULT_START_MARKER};
use crate::eventlog::{EventLog, Trace};
use crate::graph::{CauseRecord, GraphError, KnowledgeGraph, Markers, ViewKind, ViewRecords};

#[derive(Debug, Error, PartialEq)]
pub enum CausalError {
    #[error("no case executes every selected activity exactly once")]
    NoCompleteCases,
    #[error("activity {0:?} occurs more than once in the analysed cases")]
    ActivityRepeatsInVariant(String),
    #[error("{rows} rows, at least {needed} required")]
    InsufficientSamples { rows: usize, needed: usize },
    #[error("column {0:?} is non-finite or collinear with earlier columns")]
    DegenerateColumn(String),
    #[error("unknown activity {0:?}")]
    UnknownActivity(String),
    #[error("negative prune threshold {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("causal export syntax error: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSelection {
    #[default]
    MostFrequent,
    /// Activities executed by every case.
    AllComplete,
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingEncoding {
    /// Completion time relative to case start.
    #[default]
    RelativeCompletion,
    /// Time since the previous selected activity (the first since case start).
    InterActivityDuration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalConfig {
    pub coefficient_prune_threshold: f64,
    pub respect_temporal_precedence: bool,
    pub variant_selection: VariantSelection,
    pub timing: TimingEncoding,
    /// Skip cases that repeat a selected activity instead of failing.
    pub skip_repeating_cases: bool,
    pub seed: u64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            coefficient_prune_threshold: 0.05,
            respect_temporal_precedence: true,
            variant_selection: VariantSelection::MostFrequent,
            timing: TimingEncoding::RelativeCompletion,
            skip_repeating_cases: false,
            seed: 0,
        }
    }
}

/// One row per case, one column per activity, values in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingMatrix {
    pub variables: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub case_ids: Vec<String>,
    pub variant_key: Vec<String>,
    /// Median relative completion time per column, whatever the encoding.
    pub completion_medians: Vec<f64>,
}

impl TimingMatrix {
    /// Builds a matrix whose values are relative completion times.
    pub fn from_rows(variables: Vec<String>, rows: Vec<Vec<f64>>) -> TimingMatrix {
        let case_ids = (0..rows.len()).map(|i| format!("row{i}")).collect();
        let completion_medians = (0..variables.len()).map(|j| median(rows.iter().map(|r| r[j]).collect())).collect();
        TimingMatrix { variant_key: variables.clone(), variables, rows, case_ids, completion_medians }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Reorders columns: column `k` of the result is column `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> TimingMatrix {
        TimingMatrix {
            variables: perm.iter().map(|&j| self.variables[j].clone()).collect(),
            rows: self.rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect(),
            case_ids: self.case_ids.clone(),
            variant_key: self.variant_key.clone(),
            completion_medians: perm.iter().map(|&j| self.completion_medians[j]).collect(),
        }
    }

    pub fn scaled(&self, k: f64) -> TimingMatrix {
        TimingMatrix {
            rows: self.rows.iter().map(|r| r.iter().map(|x| x * k).collect()).collect(),
            completion_medians: self.completion_medians.iter().map(|x| x * k).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["case_id".to_string()];
        header.extend(self.variables.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (case, row) in self.case_ids.iter().zip(&self.rows) {
            let mut rec = vec![case.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn occurrences(t: &Trace) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for a in t.activities() {
        *m.entry(a).or_default() += 1;
    }
    m
}

/// Per-case timing matrix of the selected activities.
pub fn timing_matrix_from_log(log: &EventLog, cfg: &CausalConfig) -> Result<TimingMatrix, CausalError> {
    let variant_key: Vec<String> = match &cfg.variant_selection {
        VariantSelection::MostFrequent => {
            let (variant, _) = log.variants().into_iter().next().ok_or(CausalError::NoCompleteCases)?;
            let mut seen = BTreeSet::new();
            if let Some(dup) = variant.iter().find(|a| !seen.insert(a.as_str())) {
                if !cfg.skip_repeating_cases {
                    return Err(CausalError::ActivityRepeatsInVariant(dup.clone()));
                }
            }
            let mut seen = BTreeSet::new();
            variant.into_iter().filter(|a| seen.insert(a.clone())).collect()
        }
        VariantSelection::AllComplete => log
            .activity_universe
            .iter()
            .filter(|a| log.traces.values().all(|t| t.contains_activity(a)))
            .cloned()
            .collect(),
        VariantSelection::Explicit(list) => {
            if let Some(a) = list.iter().find(|a| !log.activity_universe.contains(*a)) {
                return Err(CausalError::UnknownActivity(a.clone()));
            }
            list.clone()
        }
    };
    if variant_key.is_empty() {
        return Err(CausalError::NoCompleteCases);
    }

    let mut case_ids = Vec::new();
    let mut completion = Vec::new();
    for t in log.traces.values() {
        let occ = occurrences(t);
        if !variant_key.iter().all(|a| occ.contains_key(a.as_str())) {
            continue;
        }
        if let Some(a) = variant_key.iter().find(|a| occ[a.as_str()] > 1) {
            if cfg.skip_repeating_cases {
                continue;
            }
            return Err(CausalError::ActivityRepeatsInVariant(a.clone()));
        }
        let start = t.start().expect("traces are non-empty");
        let row: Vec<f64> = variant_key
            .iter()
            .map(|a| {
                let e = t.events.iter().find(|e| &e.activity == a).expect("checked above");
                e.timestamp.seconds_since(start).max(0.0)
            })
            .collect();
        case_ids.push(t.case_id.clone());
        completion.push(row);
    }
    if completion.is_empty() {
        return Err(CausalError::NoCompleteCases);
    }

    let p = variant_key.len();
    let completion_medians: Vec<f64> = (0..p).map(|j| median(completion.iter().map(|r| r[j]).collect())).collect();
    // AllComplete has no inherent sequence; use median completion order
    let mut perm: Vec<usize> = (0..p).collect();
    if cfg.variant_selection == VariantSelection::AllComplete {
        perm.sort_by(|&a, &b| {
            completion_medians[a].total_cmp(&completion_medians[b]).then(variant_key[a].cmp(&variant_key[b]))
        });
    }
    let rows = match cfg.timing {
        TimingEncoding::RelativeCompletion => completion,
        TimingEncoding::InterActivityDuration => completion
            .iter()
            .map(|r| {
                let mut order: Vec<usize> = (0..p).collect();
                order.sort_by(|&a, &b| r[a].total_cmp(&r[b]).then(a.cmp(&b)));
                let mut out = vec![0.0; p];
                let mut prev = 0.0;
                for j in order {
                    out[j] = r[j] - prev;
                    prev = r[j];
                }
                out
            })
            .collect(),
    };
    let m = TimingMatrix { variables: variant_key.clone(), rows, case_ids, variant_key, completion_medians };
    Ok(m.permuted(&perm))
}

pub fn build_timing_matrix(g: &KnowledgeGraph, cfg: &CausalConfig) -> Result<TimingMatrix, CausalError> {
    timing_matrix_from_log(&g.event_log()?, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalView {
    pub edges: Vec<CauseRecord>,
    pub order: Vec<String>,
    pub warnings: Vec<String>,
}

impl CausalView {
    /// Edges between analysed activities, excluding marker edges.
    pub fn inner_edges(&self) -> impl Iterator<Item = &CauseRecord> {
        self.edges.iter().filter(|e| !e.boundary)
    }

    pub fn has_edge(&self, cause: &str, effect: &str) -> bool {
        self.edges.iter().any(|e| e.cause == cause && e.effect == effect)
    }

    pub fn coefficient(&self, cause: &str, effect: &str) -> Option<f64> {
        self.edges.iter().find(|e| e.cause == cause && e.effect == effect).map(|e| e.coefficient)
    }

    /// Orders edges for export: start-marker edges, inner edges by (cause rank, effect name),
    /// end-marker edges.
    fn sort_edges(&mut self) {
        let rank: BTreeMap<&str, usize> = self.order.iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
        let key = |e: &CauseRecord| {
            let group = match (e.boundary, rank.contains_key(e.cause.as_str())) {
                (false, _) => 1,
                (true, false) => 0,
                (true, true) => 2,
            };
            (group, rank.get(e.cause.as_str()).copied().unwrap_or(0), e.effect.clone(), e.cause.clone())
        };
        let mut keyed: Vec<_> = self.edges.drain(..).map(|e| (key(&e), e)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        self.edges = keyed.into_iter().map(|(_, e)| e).collect();
    }

    pub fn export(&self) -> String {
        export_causal_json(self)
    }

    /// Reads an export back. Edges touching `start` or `end` are boundary edges; the order is
    /// recovered from first appearance.
    pub fn parse(text: &str, start: &str, end: &str) -> Result<CausalView, CausalError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Row {
            #[serde(rename = "Cause")]
            cause: String,
            #[serde(rename = "Effect")]
            effect: String,
            #[serde(rename = "Coefficient")]
            coefficient: String,
        }
        let rows: Vec<Row> = serde_json::from_str(text).map_err(|e| CausalError::Syntax(e.to_string()))?;
        let mut order = Vec::new();
        let mut edges = Vec::new();
        for r in rows {
            let coefficient: f64 =
                r.coefficient.parse().map_err(|_| CausalError::Syntax(format!("coefficient {:?}", r.coefficient)))?;
            let boundary = r.cause == start || r.effect == end;
            for name in [&r.cause, &r.effect] {
                if name != start && name != end && !order.contains(name) {
                    order.push(name.clone());
                }
            }
            edges.push(CauseRecord { cause: r.cause, effect: r.effect, coefficient, boundary });
        }
        Ok(CausalView { edges, order, warnings: Vec::new() })
    }

    /// Reads the causal view stored in the graph.
    pub fn from_graph(g: &KnowledgeGraph) -> Result<CausalView, GraphError> {
        let ViewRecords::Causal(edges) = g.query_view(ViewKind::Causal)? else { unreachable!() };
        let mut v = CausalView { edges, order: g.causal_order(), warnings: Vec::new() };
        v.sort_edges();
        Ok(v)
    }

    /// Adds marker edges: start to the earliest-completing activity and the latest-completing
    /// activity to end, each with coefficient 1.
    pub fn with_markers(mut self, m: &TimingMatrix, markers: &Markers) -> CausalView {
        let mut by_median: Vec<(f64, &str)> = m
            .variables
            .iter()
            .zip(&m.completion_medians)
            .filter(|(v, _)| self.order.contains(v))
            .map(|(v, med)| (*med, v.as_str()))
            .collect();
        by_median.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        if let (Some(first), Some(last)) = (by_median.first(), by_median.last()) {
            let edge = |cause: &str, effect: &str| CauseRecord {
                cause: cause.into(),
                effect: effect.into(),
                coefficient: 1.0,
                boundary: true,
            };
            self.edges.push(edge(&markers.start, first.1));
            self.edges.push(edge(last.1, &markers.end));
        }
        self.sort_edges();
        self
    }
}

pub fn export_causal_json(v: &CausalView) -> String {
    if v.edges.is_empty() {
        return "[]".into();
    }
    let rows: Vec<String> = v
        .edges
        .iter()
        .map(|e| {
            let coef = if e.boundary { "1.00".to_string() } else { format!("{:.8}", e.coefficient) };
            format!(
                "{{\"Cause\": {}, \"Effect\": {}, \"Coefficient\": {}}}",
                serde_json::Value::from(e.cause.as_str()),
                serde_json::Value::from(e.effect.as_str()),
                serde_json::Value::from(coef)
            )
        })
        .collect();
    format!("[\n{}\n]", rows.join(",\n"))
}

/// Negentropy approximation of a standardized sample (maximum-entropy form).
fn entropy(u: &[f64]) -> f64 {
    const K1: f64 = 79.047;
    const K2: f64 = 7.4129;
    const GAMMA: f64 = 0.37457;
    let n = u.len() as f64;
    let logcosh = u.iter().map(|&x| x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2).sum::<f64>() / n;
    let gauss = u.iter().map(|&x| x * (-x * x / 2.0).exp()).sum::<f64>() / n;
    (1.0 + (2.0 * std::f64::consts::PI).ln()) / 2.0 - K1 * (logcosh - GAMMA).powi(2) - K2 * gauss.powi(2)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / x.len() as f64
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let (m, s) = (mean(x), variance(x).sqrt());
    x.iter().map(|v| (v - m) / s).collect()
}

/// Residual of `xi` regressed on `xj`.
fn residual(xi: &[f64], xj: &[f64]) -> Vec<f64> {
    let b = covariance(xi, xj) / variance(xj);
    xi.iter().zip(xj).map(|(a, c)| a - b * c).collect()
}

/// Positive when `xi` looks like a cause of `xj`.
fn diff_mutual_info(xi: &[f64], xj: &[f64]) -> f64 {
    let ri_j = standardize(&residual(xi, xj));
    let rj_i = standardize(&residual(xj, xi));
    (entropy(xj) + entropy(&ri_j)) - (entropy(xi) + entropy(&rj_i))
}

/// Index (into `remaining`) of the most exogenous column.
fn most_exogenous(cols: &[Vec<f64>], remaining: &[usize]) -> usize {
    let std: BTreeMap<usize, Vec<f64>> = remaining.iter().map(|&i| (i, standardize(&cols[i]))).collect();
    let mut best = (f64::INFINITY, 0);
    for (pos, &i) in remaining.iter().enumerate() {
        let score: f64 = remaining
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| diff_mutual_info(&std[&i], &std[&j]).min(0.0).powi(2))
            .sum();
        if score < best.0 {
            best = (score, pos);
        }
    }
    best.1
}

/// Least-squares coefficients of `y` on the columns `xs` (with intercept, which is discarded).
fn ols(y: &[f64], xs: &[&Vec<f64>]) -> Vec<f64> {
    let n = y.len();
    let design = DMatrix::from_fn(n, xs.len() + 1, |r, c| if c == 0 { 1.0 } else { xs[c - 1][r] });
    let target = DVector::from_column_slice(y);
    let beta = design.svd(true, true).solve(&target, 1e-12).expect("svd with both factors");
    beta.iter().skip(1).copied().collect()
}

/// DirectLiNGAM: causal order by repeated exogeneity search, then least-squares coefficients of
/// each variable on its predecessors, pruned by magnitude and, optionally, by median completion.
pub fn direct_lingam(m: &TimingMatrix, cfg: &CausalConfig) -> Result<CausalView, CausalError> {
    if !(cfg.coefficient_prune_threshold >= 0.0) {
        return Err(CausalError::InvalidThreshold(cfg.coefficient_prune_threshold));
    }
    let p = m.variables.len();
    let needed = 30.max(5 * p);
    if m.rows.len() < needed {
        return Err(CausalError::InsufficientSamples { rows: m.rows.len(), needed });
    }
    let mut warnings = Vec::new();
    // analysed columns, sorted by name so results do not depend on column positions
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..p {
        let col = m.column(j);
        if col.iter().any(|x| !x.is_finite()) {
            return Err(CausalError::DegenerateColumn(m.variables[j].clone()));
        }
        let scale = col.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        if variance(&col).sqrt() <= 1e-12 * scale {
            let msg = format!("constant column {:?} removed", m.variables[j]);
            log::warn!("{msg}");
            warnings.push(msg);
        } else {
            kept.push(j);
        }
    }
    kept.sort_by(|&a, &b| m.variables[a].cmp(&m.variables[b]));
    let original: Vec<Vec<f64>> = kept.iter().map(|&j| m.column(j)).collect();
    let names: Vec<&String> = kept.iter().map(|&j| &m.variables[j]).collect();
    let medians: Vec<f64> = kept.iter().map(|&j| m.completion_medians[j]).collect();
    check_collinearity(&original, &names)?;

    let mut cols = original.clone();
    let mut remaining: Vec<usize> = (0..kept.len()).collect();
    let mut order = Vec::with_capacity(kept.len());
    while remaining.len() > 1 {
        let chosen = remaining.remove(most_exogenous(&cols, &remaining));
        for &i in &remaining {
            cols[i] = residual(&cols[i], &cols[chosen]);
        }
        order.push(chosen);
    }
    order.extend(remaining);

    let mut edges = Vec::new();
    for k in 1..order.len() {
        let target = order[k];
        let preds: Vec<&Vec<f64>> = order[..k].iter().map(|&i| &original[i]).collect();
        for (&cause, b) in order[..k].iter().zip(ols(&original[target], &preds)) {
            if b.abs() < cfg.coefficient_prune_threshold {
                continue;
            }
            if cfg.respect_temporal_precedence && medians[cause] > medians[target] {
                continue;
            }
            edges.push(CauseRecord { cause: names[cause].clone(), effect: names[target].clone(), coefficient: b, boundary: false });
        }
    }
    let mut view = CausalView { edges, order: order.iter().map(|&i| names[i].clone()).collect(), warnings };
    view.sort_edges();
    Ok(view)
}

fn check_collinearity(cols: &[Vec<f64>], names: &[&String]) -> Result<(), CausalError> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for (col, name) in cols.iter().zip(names) {
        let total = variance(col);
        let mut r = col.clone();
        for q in &basis {
            r = residual(&r, q);
        }
        if variance(&r) <= 1e-10 * total {
            return Err(CausalError::DegenerateColumn((*name).clone()));
        }
        basis.push(r);
    }
    Ok(())
}

/// Timing matrix, estimation and marker edges over the graph's log.
pub fn discover_causal(g: &KnowledgeGraph, cfg: &CausalConfig) -> Result<(TimingMatrix, CausalView), CausalError> {
    let m = build_timing_matrix(g, cfg)?;
    let markers = g
        .markers()
        .unwrap_or(Markers { start: DEFAULT_START_MARKER.into(), end: DEFAULT_END_MARKER.into() });
    let view = direct_lingam(&m, cfg)?.with_markers(&m, &markers);
    Ok((m, view))
}

/// Writes `CAUSES` edges and recomputes `INDIRECTLY_CAUSES`.
pub fn write_causal_layer(g: &mut KnowledgeGraph, v: &CausalView) -> Result<(), CausalError> {
    g.write_causal_layer(&v.edges, &v.order).map_err(|e| match e {
        GraphError::UnknownActivity(a) => CausalError::UnknownActivity(a),
        other => CausalError::Graph(other),
    })
}
