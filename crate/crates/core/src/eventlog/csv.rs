use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Event, EventLog, LogError, Trace};
use crate::value::{Attributes, Timestamp, Value, ValueType};

/// Column prefix marking case-level attributes in CSV files.
const CASE_PREFIX: &str = "case:";

/// How unmapped columns are split into case- and event-level attributes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseAttributeMode {
    /// `case:`-prefixed columns are case attributes; other columns that are constant within
    /// every case (and span more than one event somewhere) are promoted to case attributes too.
    #[default]
    Infer,
    /// Only `case:`-prefixed columns are case attributes.
    Prefixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvMapping {
    pub case_column: String,
    pub activity_column: String,
    pub timestamp_column: String,
    /// Used when the header contains it; otherwise ids are generated from row order.
    pub event_id_column: String,
    pub delimiter: u8,
    pub case_attributes: CaseAttributeMode,
}

impl Default for CsvMapping {
    fn default() -> Self {
        CsvMapping {
            case_column: "case_id".into(),
            activity_column: "activity".into(),
            timestamp_column: "timestamp".into(),
            event_id_column: "event_id".into(),
            delimiter: b',',
            case_attributes: CaseAttributeMode::Infer,
        }
    }
}

struct Row {
    event_id: String,
    case_id: String,
    activity: String,
    timestamp: Timestamp,
    cells: Vec<String>,
}

/// Parses a CSV event log. Unmapped columns become attributes with inferred scalar types.
pub fn parse_csv<R: Read>(source: R, mapping: &CsvMapping) -> Result<EventLog, LogError> {
    let mut reader = ::csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter)
        .has_headers(true)
        .from_reader(source);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| LogError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let case_idx = find(&mapping.case_column).ok_or_else(|| LogError::MissingColumn(mapping.case_column.clone()))?;
    let act_idx =
        find(&mapping.activity_column).ok_or_else(|| LogError::MissingColumn(mapping.activity_column.clone()))?;
    let ts_idx =
        find(&mapping.timestamp_column).ok_or_else(|| LogError::MissingColumn(mapping.timestamp_column.clone()))?;
    let id_idx = find(&mapping.event_id_column);
    let attr_cols: Vec<usize> = (0..headers.len())
        .filter(|i| ![Some(case_idx), Some(act_idx), Some(ts_idx), id_idx].contains(&Some(*i)))
        .collect();

    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LogError::Csv(e.to_string()))?;
        let line = n + 1;
        let get = |i: usize| record.get(i).unwrap_or("").to_string();
        let activity = get(act_idx).trim().to_string();
        if activity.is_empty() {
            return Err(LogError::EmptyActivity(line));
        }
        let timestamp = Timestamp::parse(&get(ts_idx)).ok_or(LogError::UnparseableTimestamp(line))?;
        let event_id = match id_idx {
            Some(i) if !get(i).is_empty() => get(i),
            _ => format!("{n:08}"),
        };
        rows.push(Row {
            event_id,
            case_id: get(case_idx),
            activity,
            timestamp,
            cells: attr_cols.iter().map(|&i| get(i)).collect(),
        });
    }
    if rows.is_empty() {
        return Err(LogError::EmptyLog);
    }

    let types: Vec<ValueType> = (0..attr_cols.len()).map(|c| column_type(rows.iter().map(|r| r.cells[c].as_str()))).collect();
    let case_level: Vec<bool> = (0..attr_cols.len())
        .map(|c| {
            let name = &headers[attr_cols[c]];
            name.starts_with(CASE_PREFIX)
                || (mapping.case_attributes == CaseAttributeMode::Infer && constant_within_cases(&rows, c))
        })
        .collect();
    let key = |c: usize| {
        let name = &headers[attr_cols[c]];
        name.strip_prefix(CASE_PREFIX).unwrap_or(name).to_string()
    };

    let mut grouped: BTreeMap<String, (Vec<Event>, Attributes)> = BTreeMap::new();
    for row in rows {
        let entry = grouped.entry(row.case_id.clone()).or_default();
        let mut event = Event::new(row.event_id, row.case_id, row.activity, row.timestamp);
        for (c, cell) in row.cells.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            let value = Value::parse_as(cell, types[c]).unwrap_or_else(|| Value::Str(cell.clone()));
            if case_level[c] {
                entry.1.insert(key(c), value);
            } else {
                event.attributes.insert(key(c), value);
            }
        }
        entry.0.push(event);
    }
    EventLog::new(grouped.into_iter().map(|(case, (events, attrs))| Trace::new(case, events, attrs)))
}

/// Type of the first non-empty cell wins; any later cell that does not fit demotes to string.
fn column_type<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> ValueType {
    let Some(first) = cells.clone().find(|c| !c.is_empty()) else {
        return ValueType::String;
    };
    let ty = Value::infer(first).value_type();
    if cells.filter(|c| !c.is_empty()).all(|c| Value::parse_as(c, ty).is_some()) {
        ty
    } else {
        ValueType::String
    }
}

fn constant_within_cases(rows: &[Row], col: usize) -> bool {
    let mut first: BTreeMap<&str, &str> = BTreeMap::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut any_value = false;
    for r in rows {
        let cell = r.cells[col].as_str();
        any_value |= !cell.is_empty();
        *counts.entry(&r.case_id).or_default() += 1;
        match first.get(r.case_id.as_str()) {
            Some(prev) if *prev != cell => return false,
            Some(_) => {}
            None => {
                first.insert(&r.case_id, cell);
            }
        }
    }
    any_value && counts.values().any(|&n| n > 1)
}

/// Writes the log in the canonical CSV layout read by [`parse_csv`] with the default mapping:
/// `event_id, case_id, activity, timestamp`, then `case:`-prefixed case attributes, then event attributes.
pub fn export_csv<W: Write>(log: &EventLog, sink: W) -> Result<(), LogError> {
    let case_keys: Vec<String> = {
        let mut keys: Vec<String> = log.traces.values().flat_map(|t| t.attributes.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        keys
    };
    let event_keys: Vec<String> = {
        let mut keys: Vec<String> = log.events().flat_map(|e| e.attributes.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        keys
    };
    let mut w = ::csv::Writer::from_writer(sink);
    let mut header: Vec<String> = ["event_id", "case_id", "activity", "timestamp"].map(String::from).to_vec();
    header.extend(case_keys.iter().map(|k| format!("{CASE_PREFIX}{k}")));
    header.extend(event_keys.iter().cloned());
    w.write_record(&header).map_err(|e| LogError::Io(e.to_string()))?;
    for trace in log.traces.values() {
        for e in &trace.events {
            let mut rec = vec![e.event_id.clone(), e.case_id.clone(), e.activity.clone(), e.timestamp.to_iso()];
            rec.extend(case_keys.iter().map(|k| trace.attributes.get(k).map(Value::render).unwrap_or_default()));
            rec.extend(event_keys.iter().map(|k| e.attributes.get(k).map(Value::render).unwrap_or_default()));
            w.write_record(&rec).map_err(|e| LogError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| LogError::Io(e.to_string()))
}
