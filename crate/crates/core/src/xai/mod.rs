//! Activity-segmented feature importance from a surrogate model of a process condition.
//!
//! Importance is permutation importance on a seeded holdout split, where a feature owned by an
//! activity is only shuffled among holdout cases that execute that activity.

pub mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::eventlog::{CaseFilter, EventLog, Trace};
use crate::graph::{FeatureRecord, GraphError, KnowledgeGraph};
use crate::value::Value;
pub use model::ModelKind;
use model::Regressor;

/// Name of the synthesized per-activity timing feature.
pub const DURATION_FEATURE: &str = "duration";
/// Export key of the bucket holding case-level features.
pub const CASE_BUCKET: &str = "(case)";
pub const MIN_ROWS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum XaiError {
    #[error("unknown target {0}")]
    UnknownTarget(String),
    #[error("no case yields a target value")]
    NoRows,
    #[error("{0} rows, at least {MIN_ROWS} required")]
    InsufficientRows(usize),
    #[error("model was trained on a different table schema")]
    SchemaMismatch,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("xai export syntax error: {0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    CaseDuration,
    CaseAttribute(String),
    ActivityDuration(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    High,
    Low,
    Value(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub target: Target,
    #[serde(default)]
    pub direction: Direction,
}

impl ConditionSpec {
    pub fn case_duration() -> Self {
        ConditionSpec { target: Target::CaseDuration, direction: Direction::High }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelection {
    #[default]
    All,
    Keys(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableConfig {
    pub features: FeatureSelection,
    /// Synthesize per-activity duration features (those that leak the target are left out).
    pub timing_features: bool,
    pub case_filter: CaseFilter,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig { features: FeatureSelection::All, timing_features: true, case_filter: CaseFilter::All }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Case,
    Activity(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub name: String,
    pub owner: Owner,
    /// Category labels of a one-hot encoded feature; empty for numeric ones.
    pub categories: Vec<String>,
    pub columns: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetValues {
    Numeric(Vec<f64>),
    Categorical { labels: Vec<String>, values: Vec<usize> },
}

impl TargetValues {
    fn len(&self) -> usize {
        match self {
            TargetValues::Numeric(v) => v.len(),
            TargetValues::Categorical { values, .. } => values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub features: Vec<Feature>,
    pub columns: Vec<String>,
    /// Missing values are NaN.
    pub rows: Vec<Vec<f64>>,
    pub case_ids: Vec<String>,
    /// Activities each row's case executes.
    pub traversed: Vec<BTreeSet<String>>,
    pub target: TargetValues,
    /// Cases left out for lack of a target value.
    pub excluded_rows: usize,
}

impl FeatureTable {
    /// Table of numeric case-level features, for synthetic experiments.
    pub fn numeric(names: &[&str], rows: Vec<Vec<f64>>, target: Vec<f64>) -> FeatureTable {
        let features = names
            .iter()
            .enumerate()
            .map(|(i, n)| Feature { name: n.to_string(), owner: Owner::Case, categories: vec![], columns: i..i + 1 })
            .collect();
        let n = rows.len();
        FeatureTable {
            features,
            columns: names.iter().map(|s| s.to_string()).collect(),
            rows,
            case_ids: (0..n).map(|i| format!("row{i:05}")).collect(),
            traversed: vec![BTreeSet::new(); n],
            target: TargetValues::Numeric(target),
            excluded_rows: 0,
        }
    }

    /// Reorders features (and their columns) so feature `k` of the result is `perm[k]` of `self`.
    pub fn permuted_features(&self, perm: &[usize]) -> FeatureTable {
        let mut features = Vec::new();
        let mut col_map = Vec::new();
        for &f in perm {
            let old = &self.features[f];
            let start = col_map.len();
            col_map.extend(old.columns.clone());
            features.push(Feature { columns: start..col_map.len(), ..old.clone() });
        }
        FeatureTable {
            features,
            columns: col_map.iter().map(|&c| self.columns[c].clone()).collect(),
            rows: self.rows.iter().map(|r| col_map.iter().map(|&c| r[c]).collect()).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["case_id".to_string()];
        for f in &self.features {
            let owner = match &f.owner {
                Owner::Case => CASE_BUCKET.to_string(),
                Owner::Activity(a) => a.clone(),
            };
            for c in f.columns.clone() {
                header.push(format!("{owner}/{}", self.columns[c]));
            }
        }
        header.push("target".into());
        w.write_record(&header).expect("in-memory write");
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![self.case_ids[i].clone()];
            rec.extend(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
            rec.push(match &self.target {
                TargetValues::Numeric(t) => t[i].to_string(),
                TargetValues::Categorical { labels, values } => labels[values[i]].clone(),
            });
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    /// Column visiting order independent of column positions.
    fn canonical_columns(&self) -> Vec<usize> {
        let mut cols: Vec<(&Owner, &str, usize)> = Vec::new();
        for f in &self.features {
            for c in f.columns.clone() {
                cols.push((&f.owner, self.columns[c].as_str(), c));
            }
        }
        cols.sort();
        cols.into_iter().map(|(_, _, c)| c).collect()
    }
}

/// Seconds since the previous event of the case (or since case start for the first event).
fn activity_duration(t: &Trace, activity: &str) -> Option<f64> {
    let i = t.events.iter().position(|e| e.activity == activity)?;
    let prev = if i == 0 { t.start()? } else { t.events[i - 1].timestamp };
    Some(t.events[i].timestamp.seconds_since(prev))
}

enum Raw {
    Num,
    Cat(BTreeSet<String>),
}

fn encode(v: &Value) -> Option<Result<f64, String>> {
    match v {
        Value::Bool(b) => Some(Ok(*b as i64 as f64)),
        Value::Int(i) => Some(Ok(*i as f64)),
        Value::Float(f) => Some(Ok(*f)),
        Value::Str(s) => Some(Err(s.clone())),
        Value::Instant(_) => None,
    }
}

pub fn feature_table_from_log(log: &EventLog, cond: &ConditionSpec, cfg: &TableConfig) -> Result<FeatureTable, XaiError> {
    let traces: Vec<&Trace> = log.traces.values().filter(|t| cfg.case_filter.accepts(t)).collect();
    let target_key = match &cond.target {
        Target::CaseAttribute(k) => {
            if !traces.iter().any(|t| t.attributes.contains_key(k)) {
                return Err(XaiError::UnknownTarget(format!("case attribute {k:?}")));
            }
            Some(k.clone())
        }
        Target::ActivityDuration(a) if !log.activity_universe.contains(a) => {
            return Err(XaiError::UnknownTarget(format!("activity {a:?}")))
        }
        _ => None,
    };
    let selected = |k: &str| match &cfg.features {
        FeatureSelection::All => true,
        FeatureSelection::Keys(keys) => keys.iter().any(|x| x == k),
    };

    // target per trace
    let mut kept: Vec<&Trace> = Vec::new();
    let mut numeric_target = Vec::new();
    let mut label_target = Vec::new();
    let mut excluded = 0;
    for t in &traces {
        let value = match &cond.target {
            Target::CaseDuration => match (t.start(), t.end()) {
                (Some(s), Some(e)) => Some(Value::Float(e.seconds_since(s))),
                _ => None,
            },
            Target::ActivityDuration(a) => activity_duration(t, a).map(Value::Float),
            Target::CaseAttribute(k) => t.attributes.get(k).cloned(),
        };
        match value {
            Some(Value::Int(i)) => numeric_target.push(i as f64),
            Some(Value::Float(f)) if f.is_finite() => numeric_target.push(f),
            Some(v @ (Value::Bool(_) | Value::Str(_))) => label_target.push(v.render()),
            _ => {
                excluded += 1;
                continue;
            }
        }
        kept.push(t);
    }
    if kept.is_empty() {
        return Err(XaiError::NoRows);
    }
    let target = if label_target.is_empty() {
        TargetValues::Numeric(numeric_target)
    } else if numeric_target.is_empty() {
        let labels: Vec<String> = label_target.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let values = label_target.iter().map(|l| labels.binary_search(l).unwrap()).collect();
        TargetValues::Categorical { labels, values }
    } else {
        return Err(XaiError::UnknownTarget("target mixes numeric and categorical values".into()));
    };

    // discover features
    let mut raw: BTreeMap<(Owner, String), Raw> = BTreeMap::new();
    let mut note = |owner: Owner, key: &str, v: &Value| {
        let Some(enc) = encode(v) else { return };
        let slot = raw.entry((owner, key.to_string())).or_insert(Raw::Num);
        if let Err(s) = enc {
            match slot {
                Raw::Num => *slot = Raw::Cat(BTreeSet::from([s])),
                Raw::Cat(set) => {
                    set.insert(s);
                }
            }
        }
    };
    for t in &kept {
        for (k, v) in &t.attributes {
            if selected(k) && target_key.as_deref() != Some(k.as_str()) {
                note(Owner::Case, k, v);
            }
        }
        for e in &t.events {
            for (k, v) in &e.attributes {
                if selected(k) {
                    note(Owner::Activity(e.activity.clone()), k, v);
                }
            }
        }
    }
    // a column holding both numbers and strings is categorical over its rendered values
    let mixed: BTreeSet<(Owner, String)> = raw.iter().filter(|(_, r)| matches!(r, Raw::Cat(_))).map(|(k, _)| k.clone()).collect();
    let lookup = |t: &Trace, owner: &Owner, key: &str| -> Option<Value> {
        match owner {
            Owner::Case => t.attributes.get(key).cloned(),
            Owner::Activity(a) => t.events.iter().filter(|e| &e.activity == a).find_map(|e| e.attributes.get(key).cloned()),
        }
    };
    for k in &mixed {
        let mut all = BTreeSet::new();
        for t in &kept {
            if let Some(v) = lookup(t, &k.0, &k.1) {
                all.insert(v.render());
            }
        }
        raw.insert(k.clone(), Raw::Cat(all));
    }

    let mut features = Vec::new();
    let mut columns = Vec::new();
    for ((owner, key), kind) in &raw {
        let start = columns.len();
        let categories = match kind {
            Raw::Num => {
                columns.push(key.clone());
                vec![]
            }
            Raw::Cat(set) => {
                columns.extend(set.iter().map(|c| format!("{key}={c}")));
                set.iter().cloned().collect()
            }
        };
        features.push(Feature { name: key.clone(), owner: owner.clone(), categories, columns: start..columns.len() });
    }
    let timing: Vec<String> = if cfg.timing_features {
        log.activity_universe
            .iter()
            .filter(|a| match &cond.target {
                Target::CaseDuration => false,
                Target::ActivityDuration(x) => x != *a,
                Target::CaseAttribute(_) => true,
            })
            .filter(|a| kept.iter().any(|t| t.contains_activity(a)))
            .filter(|a| !raw.contains_key(&(Owner::Activity((*a).clone()), DURATION_FEATURE.to_string())))
            .cloned()
            .collect()
    } else {
        vec![]
    };
    for a in &timing {
        let c = columns.len();
        columns.push(DURATION_FEATURE.to_string());
        features.push(Feature { name: DURATION_FEATURE.into(), owner: Owner::Activity(a.clone()), categories: vec![], columns: c..c + 1 });
    }

    let mut rows = Vec::with_capacity(kept.len());
    for t in &kept {
        let mut row = vec![f64::NAN; columns.len()];
        for f in &features {
            if f.name == DURATION_FEATURE && timing.iter().any(|a| f.owner == Owner::Activity(a.clone())) {
                if let Owner::Activity(a) = &f.owner {
                    row[f.columns.start] = activity_duration(t, a).unwrap_or(f64::NAN);
                }
                continue;
            }
            let Some(v) = lookup(t, &f.owner, &f.name) else { continue };
            if f.categories.is_empty() {
                if let Some(Ok(x)) = encode(&v) {
                    row[f.columns.start] = x;
                }
            } else {
                let label = v.render();
                for (i, c) in f.categories.iter().enumerate() {
                    row[f.columns.start + i] = (*c == label) as i64 as f64;
                }
            }
        }
        rows.push(row);
    }

    Ok(FeatureTable {
        features,
        columns,
        rows,
        case_ids: kept.iter().map(|t| t.case_id.clone()).collect(),
        traversed: kept.iter().map(|t| t.activities().map(str::to_string).collect()).collect(),
        target,
        excluded_rows: excluded,
    })
}

pub fn build_feature_table(g: &KnowledgeGraph, cond: &ConditionSpec, cfg: &TableConfig) -> Result<FeatureTable, XaiError> {
    feature_table_from_log(&g.event_log()?, cond, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub task: Task,
    /// Holdout R² for regression, accuracy for classification.
    pub holdout_score: f64,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub warnings: Vec<String>,
    columns: Vec<String>,
    /// One model for regression, one per class otherwise.
    models: Vec<Regressor>,
}

impl SurrogateModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.task {
            Task::Regression => self.models[0].predict(x),
            Task::Classification(_) => {
                let scores: Vec<f64> = self.models.iter().map(|m| m.predict(x)).collect();
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                best as f64
            }
        }
    }

    fn score(&self, rows: &[Vec<f64>], target: &TargetValues) -> f64 {
        let preds: Vec<f64> = rows.iter().map(|r| self.predict(r)).collect();
        match target {
            TargetValues::Numeric(y) => r_squared(y, &preds),
            TargetValues::Categorical { values, .. } => {
                values.iter().zip(&preds).filter(|(v, p)| **v as f64 == **p).count() as f64 / values.len() as f64
            }
        }
    }
}

/// R² with the convention that a constant reference yields 0.
fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 1e-12 * mean.abs().max(1.0).powi(2) * y.len() as f64 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn subset(t: &TargetValues, idx: &[usize]) -> TargetValues {
    match t {
        TargetValues::Numeric(v) => TargetValues::Numeric(idx.iter().map(|&i| v[i]).collect()),
        TargetValues::Categorical { labels, values } => {
            TargetValues::Categorical { labels: labels.clone(), values: idx.iter().map(|&i| values[i]).collect() }
        }
    }
}

/// Seeded 80/20 split of row indices.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64) * 0.2).round().max(1.0) as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

pub fn train_surrogate(t: &FeatureTable, kind: &ModelKind, seed: u64) -> Result<SurrogateModel, XaiError> {
    let n = t.rows.len();
    if n < MIN_ROWS {
        return Err(XaiError::InsufficientRows(n));
    }
    let (train, test) = holdout_split(n, seed);
    let x: Vec<Vec<f64>> = train.iter().map(|&i| t.rows[i].clone()).collect();
    let order = t.canonical_columns();
    let mut warnings = Vec::new();
    let (task, models) = match &t.target {
        TargetValues::Numeric(y) => {
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let m = yt.iter().sum::<f64>() / yt.len() as f64;
            if y.iter().all(|v| (v - m).abs() <= 1e-12 * m.abs().max(1.0)) {
                warnings.push("DegenerateTarget: target is constant".to_string());
                log::warn!("constant surrogate target");
            }
            (Task::Regression, vec![Regressor::fit(kind, &x, &yt, &order)])
        }
        TargetValues::Categorical { labels, values } => {
            if labels.len() < 2 {
                warnings.push("DegenerateTarget: single class".to_string());
            }
            let models = (0..labels.len())
                .map(|c| {
                    let yt: Vec<f64> = train.iter().map(|&i| (values[i] == c) as i64 as f64).collect();
                    Regressor::fit(kind, &x, &yt, &order)
                })
                .collect();
            (Task::Classification(labels.clone()), models)
        }
    };
    let mut model = SurrogateModel {
        task,
        holdout_score: 0.0,
        train_rows: train,
        test_rows: test,
        warnings,
        columns: t.columns.clone(),
        models,
    };
    let test_x: Vec<Vec<f64>> = model.test_rows.iter().map(|&i| t.rows[i].clone()).collect();
    model.holdout_score = model.score(&test_x, &subset(&t.target, &model.test_rows));
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub n_repeats: usize,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig { n_repeats: 10, seed: 0 }
    }
}

/// Raw importance per feature, before arrangement into a view.
#[derive(Debug, Clone, PartialEq)]
pub struct Importances {
    pub values: Vec<(Owner, String, f64)>,
    pub holdout_score: f64,
}

/// Permutation importance: mean holdout score drop, clipped at 0, over `n_repeats` shuffles of
/// each feature's columns among conformant holdout rows.
pub fn importance(m: &SurrogateModel, t: &FeatureTable, cfg: &ImportanceConfig) -> Result<Importances, XaiError> {
    if m.columns != t.columns || t.target.len() != t.rows.len() || m.test_rows.iter().any(|&i| i >= t.rows.len()) {
        return Err(XaiError::SchemaMismatch);
    }
    let test_x: Vec<Vec<f64>> = m.test_rows.iter().map(|&i| t.rows[i].clone()).collect();
    let target = subset(&t.target, &m.test_rows);
    let base = m.score(&test_x, &target);
    // seeds follow canonical feature order so column positions do not matter
    let mut order: Vec<usize> = (0..t.features.len()).collect();
    order.sort_by(|&a, &b| (&t.features[a].owner, &t.features[a].name).cmp(&(&t.features[b].owner, &t.features[b].name)));
    let mut values = vec![0.0; t.features.len()];
    for (rank, &fi) in order.iter().enumerate() {
        let f = &t.features[fi];
        let conformant: Vec<usize> = (0..test_x.len())
            .filter(|&r| match &f.owner {
                Owner::Case => true,
                Owner::Activity(a) => t.traversed[m.test_rows[r]].contains(a),
            })
            .collect();
        if conformant.len() < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rank as u64));
        let mut total = 0.0;
        for _ in 0..cfg.n_repeats.max(1) {
            let mut donors = conformant.clone();
            donors.shuffle(&mut rng);
            let mut x = test_x.clone();
            for (&dst, &src) in conformant.iter().zip(&donors) {
                for c in f.columns.clone() {
                    x[dst][c] = test_x[src][c];
                }
            }
            total += base - m.score(&x, &target);
        }
        values[fi] = (total / cfg.n_repeats.max(1) as f64).max(0.0);
    }
    Ok(Importances {
        values: t.features.iter().zip(values).map(|(f, v)| (f.owner.clone(), f.name.clone(), v)).collect(),
        holdout_score: base,
    })
}

/// Insertion-ordered map used by the export format.
#[derive(Debug, Clone, Default, PartialEq)]
struct Ordered<T>(Vec<(String, T)>);

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Ordered<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<T>(std::marker::PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for V<T> {
            type Value = Ordered<T>;
            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, T>()? {
                    out.push((k, v));
                }
                Ok(Ordered(out))
            }
        }
        d.deserialize_map(V(std::marker::PhantomData))
    }
}

pub type FeatureList = Vec<(String, f64)>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct XaiView {
    /// Activities in process order, features by descending importance.
    pub per_activity: Vec<(String, FeatureList)>,
    pub case_level: FeatureList,
}

fn sort_features(fs: &mut FeatureList) {
    fs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

impl XaiView {
    /// Groups importances by owning activity, keeping only activities of `activity_order`.
    /// Values are rounded to 4 decimals and divided by the maximum only when it exceeds 1.
    pub fn arrange(imp: &Importances, activity_order: &[String]) -> XaiView {
        let max = imp.values.iter().map(|v| v.2).fold(0.0f64, f64::max);
        let scale = if max > 1.0 { max } else { 1.0 };
        let round = |v: f64| ((v / scale) * 1e4).round() / 1e4;
        let mut buckets: BTreeMap<&str, FeatureList> = BTreeMap::new();
        let mut case_level = Vec::new();
        for (owner, name, v) in &imp.values {
            match owner {
                Owner::Case => case_level.push((name.clone(), round(*v))),
                Owner::Activity(a) => {
                    if activity_order.contains(a) {
                        buckets.entry(a.as_str()).or_default().push((name.clone(), round(*v)));
                    } else {
                        log::warn!("features of {a:?} dropped: activity not in the process view");
                    }
                }
            }
        }
        let mut per_activity = Vec::new();
        for a in activity_order {
            if let Some(mut fs) = buckets.remove(a.as_str()) {
                sort_features(&mut fs);
                per_activity.push((a.clone(), fs));
            }
        }
        sort_features(&mut case_level);
        XaiView { per_activity, case_level }
    }

    pub fn get(&self, activity: &str, feature: &str) -> Option<f64> {
        self.per_activity.iter().find(|(a, _)| a == activity)?.1.iter().find(|(f, _)| f == feature).map(|(_, v)| *v)
    }

    /// Feature with the largest importance across activities and the case bucket.
    pub fn top_feature(&self) -> Option<(&str, &str, f64)> {
        let mut best: Option<(&str, &str, f64)> = None;
        let all = self
            .per_activity
            .iter()
            .flat_map(|(a, fs)| fs.iter().map(move |(f, v)| (a.as_str(), f.as_str(), *v)))
            .chain(self.case_level.iter().map(|(f, v)| (CASE_BUCKET, f.as_str(), *v)));
        for item in all {
            if best.is_none_or(|b| item.2 > b.2) {
                best = Some(item);
            }
        }
        best
    }

    pub fn records(&self) -> Vec<FeatureRecord> {
        self.per_activity
            .iter()
            .flat_map(|(a, fs)| {
                fs.iter().map(move |(f, v)| FeatureRecord { activity: a.clone(), feature: f.clone(), importance: *v })
            })
            .collect()
    }

    pub fn export(&self) -> String {
        export_xai_json(self)
    }

    pub fn parse(text: &str) -> Result<XaiView, XaiError> {
        let doc: Ordered<Ordered<f64>> = serde_json::from_str(text).map_err(|e| XaiError::Syntax(e.to_string()))?;
        let mut v = XaiView::default();
        for (k, fs) in doc.0 {
            if k == CASE_BUCKET {
                v.case_level = fs.0;
            } else {
                v.per_activity.push((k, fs.0));
            }
        }
        Ok(v)
    }

    /// View stored in the graph, activities in `activity_order`.
    pub fn from_graph(g: &KnowledgeGraph, activity_order: &[String]) -> Result<XaiView, GraphError> {
        let crate::graph::ViewRecords::Xai(records) = g.query_view(crate::graph::ViewKind::Xai)? else { unreachable!() };
        let imp = Importances {
            values: records.into_iter().map(|r| (Owner::Activity(r.activity), r.feature, r.importance)).collect(),
            holdout_score: 0.0,
        };
        let mut order: Vec<String> = activity_order.to_vec();
        for (o, _, _) in &imp.values {
            if let Owner::Activity(a) = o {
                if !order.contains(a) {
                    order.push(a.clone());
                }
            }
        }
        Ok(XaiView::arrange(&imp, &order))
    }
}

pub fn export_xai_json(v: &XaiView) -> String {
    let mut groups: Vec<(&str, &FeatureList)> = v.per_activity.iter().map(|(a, fs)| (a.as_str(), fs)).collect();
    if !v.case_level.is_empty() {
        groups.push((CASE_BUCKET, &v.case_level));
    }
    if groups.is_empty() {
        return "{}".into();
    }
    let mut out = String::from("{\n");
    for (i, (a, fs)) in groups.iter().enumerate() {
        let inner: Vec<String> = fs
            .iter()
            .map(|(f, x)| format!("{}: {}", serde_json::Value::from(f.as_str()), serde_json::Value::from(*x)))
            .collect();
        let sep = if i + 1 < groups.len() { "," } else { "" };
        let _ = writeln!(out, "{}: {{{}}}{sep}", serde_json::Value::from(*a), inner.join(", "));
    }
    out.push('}');
    out
}

pub fn write_xai_layer(g: &mut KnowledgeGraph, v: &XaiView) -> Result<(), XaiError> {
    g.write_xai_layer(&v.records())?;
    Ok(())
}

#[cfg(test)]
mod tests;
