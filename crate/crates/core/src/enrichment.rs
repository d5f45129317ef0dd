//! Situational enrichment rules: add context attributes to events or cases, or drop events.
//!
//! A rule file is a JSON array of `{id, scope, when, then}` objects. `when` is an expression tree
//! of `{"op": ..., "args": ...}` nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::{Event, EventLog, LogError, Trace};
use crate::value::{Timestamp, Value, ValueType};

/// Keys owned by the log structure itself.
pub const RESERVED_KEYS: [&str; 4] = ["case_id", "activity", "timestamp", "event_id"];

#[derive(Debug, Error, PartialEq)]
pub enum EnrichmentError {
    #[error("rule {0}: unknown attribute {1:?}")]
    UnknownAttribute(String, String),
    #[error("rule {0}: unknown activity {1:?}")]
    UnknownActivity(String, String),
    #[error("rule {0}: type mismatch: {1}")]
    TypeMismatch(String, String),
    #[error("rule {0}: {1:?} is reserved")]
    ReservedKey(String, String),
    #[error("rule {0}: bad duration {1:?}")]
    BadDuration(String, String),
    #[error("syntax error at line {0}: {1}")]
    SyntaxError(usize, String),
    #[error("duplicate rule id {0:?}")]
    DuplicateRuleId(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Event,
    Case,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum Expr {
    Const(Value),
    /// Event attribute, falling back to the case attribute; reserved keys resolve to structure.
    Attr(String),
    /// Activity of the current event.
    Activity,
    /// Whether the case executes the activity.
    Executed(String),
    /// First completion instant of the activity in the case.
    Completion(String),
    /// Duration constant in seconds, written in humantime form such as "2h" or "30min".
    Duration(String),
    /// Case executes both activities and `completion(b) - completion(a) <= duration`.
    Within(String, String, String),
    Eq(Box<Expr>, Box<Expr>),
    Ne(Box<Expr>, Box<Expr>),
    Lt(Box<Expr>, Box<Expr>),
    Le(Box<Expr>, Box<Expr>),
    Gt(Box<Expr>, Box<Expr>),
    Ge(Box<Expr>, Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SetAttribute { key: String, value: Expr },
    DropEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichmentRule {
    pub id: String,
    pub scope: Scope,
    pub when: Expr,
    pub then: Action,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    pub rules: Vec<EnrichmentRule>,
}

pub fn parse_rules(source: &str) -> Result<RuleSet, EnrichmentError> {
    let rules: Vec<EnrichmentRule> =
        serde_json::from_str(source).map_err(|e| EnrichmentError::SyntaxError(e.line(), e.to_string()))?;
    let mut ids = BTreeSet::new();
    for r in &rules {
        if !ids.insert(r.id.as_str()) {
            return Err(EnrichmentError::DuplicateRuleId(r.id.clone()));
        }
    }
    Ok(RuleSet { rules })
}

pub fn render_rules(rs: &RuleSet) -> String {
    serde_json::to_string_pretty(&rs.rules).expect("rules serialize")
}

/// Outcome of applying a rule set.
#[derive(Debug, Clone, PartialEq)]
pub struct Enriched {
    pub log: EventLog,
    /// Cases whose events were all dropped.
    pub removed_cases: Vec<String>,
    pub dropped_events: usize,
    pub attributes_set: usize,
}

/// Keys an expression reads.
fn referenced(e: &Expr, keys: &mut Vec<String>, activities: &mut Vec<String>) {
    match e {
        Expr::Attr(k) => keys.push(k.clone()),
        Expr::Executed(a) | Expr::Completion(a) => activities.push(a.clone()),
        Expr::Within(a, b, _) => activities.extend([a.clone(), b.clone()]),
        Expr::Const(_) | Expr::Activity | Expr::Duration(_) => {}
        Expr::Not(x) => referenced(x, keys, activities),
        Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| referenced(x, keys, activities)),
        Expr::Eq(a, b)
        | Expr::Ne(a, b)
        | Expr::Lt(a, b)
        | Expr::Le(a, b)
        | Expr::Gt(a, b)
        | Expr::Ge(a, b)
        | Expr::Add(a, b)
        | Expr::Sub(a, b)
        | Expr::Mul(a, b)
        | Expr::Div(a, b) => {
            referenced(a, keys, activities);
            referenced(b, keys, activities);
        }
    }
}

/// Static types; `None` means the type is only known at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Bool,
    Num,
    Instant,
    Str,
}

fn ty_of(t: ValueType) -> Ty {
    match t {
        ValueType::Boolean => Ty::Bool,
        ValueType::Integer | ValueType::Float => Ty::Num,
        ValueType::Instant => Ty::Instant,
        ValueType::String => Ty::Str,
    }
}

fn infer(e: &Expr, schema: &BTreeMap<String, ValueType>, scope: Scope) -> Result<Option<Ty>, String> {
    let sub = |x: &Expr| infer(x, schema, scope);
    let want_bool = |x: &Expr| match sub(x)? {
        Some(Ty::Bool) | None => Ok(()),
        Some(t) => Err(format!("expected boolean, found {t:?}")),
    };
    Ok(match e {
        Expr::Const(v) => Some(ty_of(v.value_type())),
        Expr::Attr(k) => match k.as_str() {
            "timestamp" => Some(Ty::Instant),
            "case_id" | "activity" | "event_id" => Some(Ty::Str),
            _ => schema.get(k).map(|t| ty_of(*t)),
        },
        Expr::Activity => {
            if scope == Scope::Case {
                return Err("activity() needs an event scope".into());
            }
            Some(Ty::Str)
        }
        Expr::Executed(_) | Expr::Within(..) => Some(Ty::Bool),
        Expr::Completion(_) => Some(Ty::Instant),
        Expr::Duration(_) => Some(Ty::Num),
        Expr::Not(x) => {
            want_bool(x)?;
            Some(Ty::Bool)
        }
        Expr::And(xs) | Expr::Or(xs) => {
            for x in xs {
                want_bool(x)?;
            }
            Some(Ty::Bool)
        }
        Expr::Eq(a, b) | Expr::Ne(a, b) => {
            sub(a)?;
            sub(b)?;
            Some(Ty::Bool)
        }
        Expr::Lt(a, b) | Expr::Le(a, b) | Expr::Gt(a, b) | Expr::Ge(a, b) => {
            if let (Some(x), Some(y)) = (sub(a)?, sub(b)?) {
                if x != y {
                    return Err(format!("cannot order {x:?} against {y:?}"));
                }
            }
            Some(Ty::Bool)
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let (x, y) = (sub(a)?, sub(b)?);
            match (e, x, y) {
                (_, Some(Ty::Bool | Ty::Str), _) | (_, _, Some(Ty::Bool | Ty::Str)) => {
                    return Err("arithmetic on non-numeric operand".into())
                }
                (Expr::Sub(..), Some(Ty::Instant), Some(Ty::Instant)) => Some(Ty::Num),
                (Expr::Add(..) | Expr::Sub(..), Some(Ty::Instant), Some(Ty::Num)) => Some(Ty::Instant),
                (Expr::Add(..), Some(Ty::Num), Some(Ty::Instant)) => Some(Ty::Instant),
                (_, Some(Ty::Num), Some(Ty::Num)) => Some(Ty::Num),
                (_, None, _) | (_, _, None) => None,
                _ => return Err("unsupported instant arithmetic".into()),
            }
        }
    })
}

fn parse_duration(text: &str) -> Option<Duration> {
    humantime::parse_duration(text).ok()
}

fn check_durations(e: &Expr, rule: &str) -> Result<(), EnrichmentError> {
    let mut stack = vec![e];
    while let Some(x) = stack.pop() {
        match x {
            Expr::Duration(d) | Expr::Within(_, _, d) if parse_duration(d).is_none() => {
                return Err(EnrichmentError::BadDuration(rule.into(), d.clone()))
            }
            Expr::Not(a) => stack.push(a),
            Expr::And(xs) | Expr::Or(xs) => stack.extend(xs),
            Expr::Eq(a, b)
            | Expr::Ne(a, b)
            | Expr::Lt(a, b)
            | Expr::Le(a, b)
            | Expr::Gt(a, b)
            | Expr::Ge(a, b)
            | Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b) => stack.extend([&**a, &**b]),
            _ => {}
        }
    }
    Ok(())
}

/// Checks a rule set against a log: references resolve, keys are writable, predicates are boolean.
/// Attributes set by earlier rules count as declared for later ones.
pub fn validate_rules(log: &EventLog, rules: &RuleSet) -> Result<(), EnrichmentError> {
    let mut schema = log.attribute_schema.clone();
    for rule in &rules.rules {
        let id = rule.id.clone();
        let mut keys = Vec::new();
        let mut activities = Vec::new();
        referenced(&rule.when, &mut keys, &mut activities);
        if let Action::SetAttribute { key, value } = &rule.then {
            if RESERVED_KEYS.contains(&key.as_str()) {
                return Err(EnrichmentError::ReservedKey(id, key.clone()));
            }
            referenced(value, &mut keys, &mut activities);
        }
        if let Some(k) = keys.iter().find(|k| !RESERVED_KEYS.contains(&k.as_str()) && !schema.contains_key(*k)) {
            return Err(EnrichmentError::UnknownAttribute(id, k.clone()));
        }
        if let Some(a) = activities.iter().find(|a| !log.activity_universe.contains(*a)) {
            return Err(EnrichmentError::UnknownActivity(id, a.clone()));
        }
        check_durations(&rule.when, &id)?;
        match infer(&rule.when, &schema, rule.scope) {
            Ok(Some(Ty::Bool) | None) => {}
            Ok(Some(t)) => return Err(EnrichmentError::TypeMismatch(id, format!("predicate has type {t:?}"))),
            Err(msg) => return Err(EnrichmentError::TypeMismatch(id, msg)),
        }
        if let Action::SetAttribute { key, value } = &rule.then {
            check_durations(value, &id)?;
            let ty = infer(value, &schema, rule.scope).map_err(|m| EnrichmentError::TypeMismatch(id.clone(), m))?;
            let vt = match ty {
                Some(Ty::Bool) => ValueType::Boolean,
                Some(Ty::Instant) => ValueType::Instant,
                Some(Ty::Str) | None => ValueType::String,
                Some(Ty::Num) => ValueType::Float,
            };
            schema.entry(key.clone()).or_insert(vt);
        }
    }
    Ok(())
}

struct Ctx<'a> {
    trace: &'a Trace,
    event: Option<&'a Event>,
}

impl Ctx<'_> {
    fn completion(&self, activity: &str) -> Option<Timestamp> {
        self.trace.events.iter().find(|e| e.activity == activity).map(|e| e.timestamp)
    }

    fn attr(&self, key: &str) -> Option<Value> {
        match (key, self.event) {
            ("case_id", _) => Some(Value::from(self.trace.case_id.as_str())),
            ("activity", Some(e)) => Some(Value::from(e.activity.as_str())),
            ("event_id", Some(e)) => Some(Value::from(e.event_id.as_str())),
            ("timestamp", Some(e)) => Some(Value::Instant(e.timestamp)),
            (k, Some(e)) => e.attributes.get(k).or_else(|| self.trace.attributes.get(k)).cloned(),
            (k, None) => self.trace.attributes.get(k).cloned(),
        }
    }
}

fn arith(op: &Expr, a: Value, b: Value) -> Result<Option<Value>, String> {
    use Value::*;
    let secs_ms = |s: f64| (s * 1000.0).round() as i64;
    Ok(Some(match (op, a, b) {
        (Expr::Sub(..), Instant(x), Instant(y)) => Float(x.seconds_since(y)),
        (Expr::Add(..), Instant(t), n) | (Expr::Add(..), n, Instant(t)) => {
            Instant(Timestamp(t.0 + secs_ms(n.as_f64().ok_or("instant plus non-number")?)))
        }
        (Expr::Sub(..), Instant(t), n) => Instant(Timestamp(t.0 - secs_ms(n.as_f64().ok_or("instant minus non-number")?))),
        (op, Int(x), Int(y)) if !matches!(op, Expr::Div(..)) => match op {
            Expr::Add(..) => Int(x.wrapping_add(y)),
            Expr::Sub(..) => Int(x.wrapping_sub(y)),
            _ => Int(x.wrapping_mul(y)),
        },
        (op, a, b) => {
            let (x, y) = match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) if !matches!(a, Bool(_)) && !matches!(b, Bool(_)) => (x, y),
                _ => return Err(format!("arithmetic on {} and {}", a.value_type().name(), b.value_type().name())),
            };
            match op {
                Expr::Add(..) => Float(x + y),
                Expr::Sub(..) => Float(x - y),
                Expr::Mul(..) => Float(x * y),
                _ if y == 0.0 => return Ok(None),
                _ => Float(x / y),
            }
        }
    }))
}

/// Evaluates to `None` when a referenced value is missing.
fn eval(e: &Expr, ctx: &Ctx<'_>) -> Result<Option<Value>, String> {
    let truthy = |x: &Expr| -> Result<bool, String> {
        match eval(x, ctx)? {
            Some(Value::Bool(b)) => Ok(b),
            None => Ok(false),
            Some(v) => Err(format!("expected boolean, found {}", v.value_type().name())),
        }
    };
    let compare = |a: &Expr, b: &Expr, ok: fn(std::cmp::Ordering) -> bool| -> Result<Option<Value>, String> {
        let (Some(x), Some(y)) = (eval(a, ctx)?, eval(b, ctx)?) else { return Ok(Some(Value::Bool(false))) };
        match x.partial_cmp_loose(&y) {
            Some(o) => Ok(Some(Value::Bool(ok(o)))),
            None => Err(format!("cannot order {} against {}", x.value_type().name(), y.value_type().name())),
        }
    };
    Ok(match e {
        Expr::Const(v) => Some(v.clone()),
        Expr::Attr(k) => ctx.attr(k),
        Expr::Activity => ctx.event.map(|ev| Value::from(ev.activity.as_str())),
        Expr::Executed(a) => Some(Value::Bool(ctx.trace.contains_activity(a))),
        Expr::Completion(a) => ctx.completion(a).map(Value::Instant),
        Expr::Duration(d) => Some(Value::Float(parse_duration(d).ok_or("bad duration")?.as_secs_f64())),
        Expr::Within(a, b, d) => {
            let limit = parse_duration(d).ok_or("bad duration")?.as_secs_f64();
            let hit = match (ctx.completion(a), ctx.completion(b)) {
                (Some(ta), Some(tb)) => tb.seconds_since(ta) <= limit,
                _ => false,
            };
            Some(Value::Bool(hit))
        }
        Expr::Eq(a, b) | Expr::Ne(a, b) => {
            let same = match (eval(a, ctx)?, eval(b, ctx)?) {
                (Some(x), Some(y)) => x.partial_cmp_loose(&y) == Some(std::cmp::Ordering::Equal),
                _ => return Ok(Some(Value::Bool(false))),
            };
            Some(Value::Bool(same == matches!(e, Expr::Eq(..))))
        }
        Expr::Lt(a, b) => compare(a, b, |o| o.is_lt())?,
        Expr::Le(a, b) => compare(a, b, |o| o.is_le())?,
        Expr::Gt(a, b) => compare(a, b, |o| o.is_gt())?,
        Expr::Ge(a, b) => compare(a, b, |o| o.is_ge())?,
        Expr::And(xs) => {
            for x in xs {
                if !truthy(x)? {
                    return Ok(Some(Value::Bool(false)));
                }
            }
            Some(Value::Bool(true))
        }
        Expr::Or(xs) => {
            for x in xs {
                if truthy(x)? {
                    return Ok(Some(Value::Bool(true)));
                }
            }
            Some(Value::Bool(false))
        }
        Expr::Not(x) => Some(Value::Bool(!truthy(x)?)),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let (Some(x), Some(y)) = (eval(a, ctx)?, eval(b, ctx)?) else { return Ok(None) };
            arith(e, x, y)?
        }
    })
}

fn holds(rule: &EnrichmentRule, ctx: &Ctx<'_>) -> Result<bool, EnrichmentError> {
    match eval(&rule.when, ctx).map_err(|m| EnrichmentError::TypeMismatch(rule.id.clone(), m))? {
        Some(Value::Bool(b)) => Ok(b),
        None => Ok(false),
        Some(v) => Err(EnrichmentError::TypeMismatch(rule.id.clone(), format!("predicate gave {}", v.value_type().name()))),
    }
}

/// Applies rules in order; each rule sees the output of the previous one.
pub fn apply_rules(log: &EventLog, rules: &RuleSet) -> Result<Enriched, EnrichmentError> {
    validate_rules(log, rules)?;
    let mut traces: Vec<Trace> = log.traces.values().cloned().collect();
    let mut dropped_events = 0;
    let mut attributes_set = 0;
    for rule in &rules.rules {
        for trace in traces.iter_mut() {
            match rule.scope {
                Scope::Case => {
                    let ctx = Ctx { trace, event: None };
                    if !holds(rule, &ctx)? {
                        continue;
                    }
                    match &rule.then {
                        Action::SetAttribute { key, value } => {
                            let v = eval(value, &ctx).map_err(|m| EnrichmentError::TypeMismatch(rule.id.clone(), m))?;
                            if let Some(v) = v {
                                trace.attributes.insert(key.clone(), v);
                                attributes_set += 1;
                            }
                        }
                        Action::DropEvent => {
                            dropped_events += trace.events.len();
                            trace.events.clear();
                        }
                    }
                }
                Scope::Event => {
                    let mut updates: Vec<(usize, Option<Value>)> = Vec::new();
                    for (i, ev) in trace.events.iter().enumerate() {
                        let ctx = Ctx { trace, event: Some(ev) };
                        if !holds(rule, &ctx)? {
                            continue;
                        }
                        let v = match &rule.then {
                            Action::SetAttribute { value, .. } => {
                                eval(value, &ctx).map_err(|m| EnrichmentError::TypeMismatch(rule.id.clone(), m))?
                            }
                            Action::DropEvent => None,
                        };
                        updates.push((i, v));
                    }
                    match &rule.then {
                        Action::SetAttribute { key, .. } => {
                            for (i, v) in updates {
                                if let Some(v) = v {
                                    trace.events[i].attributes.insert(key.clone(), v);
                                    attributes_set += 1;
                                }
                            }
                        }
                        Action::DropEvent => {
                            let drop: BTreeSet<usize> = updates.into_iter().map(|(i, _)| i).collect();
                            dropped_events += drop.len();
                            let mut i = 0;
                            trace.events.retain(|_| {
                                i += 1;
                                !drop.contains(&(i - 1))
                            });
                        }
                    }
                }
            }
        }
    }
    let removed_cases: Vec<String> = traces.iter().filter(|t| t.events.is_empty()).map(|t| t.case_id.clone()).collect();
    for c in &removed_cases {
        log::info!("case {c} removed: all events dropped");
    }
    let log = EventLog::new(traces)?;
    Ok(Enriched { log, removed_cases, dropped_events, attributes_set })
}

/// Attribute keys the rule set writes, in rule order.
pub fn produced_keys(rules: &RuleSet) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in &rules.rules {
        if let Action::SetAttribute { key, .. } = &r.then {
            if !out.contains(key) {
                out.push(key.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Attributes;
    use proptest::prelude::*;

    fn attrs<const N: usize>(pairs: [(&str, Value); N]) -> Attributes {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn toy() -> EventLog {
        let mk = |c: &str, acts: &[(&str, i64)]| {
            let evs = acts
                .iter()
                .enumerate()
                .map(|(i, (a, t))| Event::new(format!("{c}-{i}"), c, *a, Timestamp(t * 60_000)).with_attr("cost", (i as i64) * 10))
                .collect();
            Trace::new(c, evs, attrs([("channel", Value::from("web"))]))
        };
        EventLog::new([
            mk("c1", &[("fine", 0), ("tow", 90)]),
            mk("c2", &[("fine", 0), ("tow", 200)]),
            mk("c3", &[("fine", 0), ("noise", 5), ("tow", 120)]),
            mk("c4", &[("noise", 0)]),
        ])
        .unwrap()
    }

    fn rule(id: &str, scope: Scope, when: Expr, then: Action) -> EnrichmentRule {
        EnrichmentRule { id: id.into(), scope, when, then }
    }

    fn set(key: &str, v: Expr) -> Action {
        Action::SetAttribute { key: key.into(), value: v }
    }

    fn konst(v: impl Into<Value>) -> Expr {
        Expr::Const(v.into())
    }

    #[test]
    fn case_constant_attribute() {
        let rs = RuleSet { rules: vec![rule("r", Scope::Case, konst(true), set("region", konst("north")))] };
        let out = apply_rules(&toy(), &rs).unwrap();
        assert!(out.log.traces.values().all(|t| t.attributes["region"] == Value::from("north")));
        assert_eq!(out.log.attribute_schema["region"], ValueType::String);
        // idempotent
        assert_eq!(apply_rules(&out.log, &rs).unwrap().log, out.log);
    }

    #[test]
    fn within_matches_direct_scan() {
        let when = Expr::Within("fine".into(), "tow".into(), "2h".into());
        let rs = RuleSet { rules: vec![rule("w", Scope::Case, when, set("delay_flag", konst(true)))] };
        let log = toy();
        let out = apply_rules(&log, &rs).unwrap();
        for t in log.traces.values() {
            let at = |a: &str| t.events.iter().find(|e| e.activity == a).map(|e| e.timestamp);
            let want = match (at("fine"), at("tow")) {
                (Some(f), Some(w)) => w.seconds_since(f) <= 7200.0,
                _ => false,
            };
            assert_eq!(out.log.traces[&t.case_id].attributes.contains_key("delay_flag"), want, "{}", t.case_id);
        }
    }

    #[test]
    fn drop_event_removes_noise_and_empty_cases() {
        let when = Expr::Eq(Box::new(Expr::Activity), Box::new(konst("noise")));
        let rs = RuleSet { rules: vec![rule("d", Scope::Event, when, Action::DropEvent)] };
        let log = toy();
        let out = apply_rules(&log, &rs).unwrap();
        assert!(!out.log.activity_universe.contains("noise"));
        assert_eq!(out.removed_cases, vec!["c4".to_string()]);
        assert_eq!(out.dropped_events, 2);
        assert_eq!(out.log.traces["c1"], log.traces["c1"]);
        assert!(crate::eventlog::validate(&out.log).is_empty());
    }

    #[test]
    fn order_is_sequential_composition() {
        let r1 = rule("a", Scope::Event, konst(true), set("x", Expr::Attr("cost".into())));
        let r2 = rule(
            "b",
            Scope::Event,
            Expr::Gt(Box::new(Expr::Attr("x".into())), Box::new(konst(5i64))),
            set("y", Expr::Mul(Box::new(Expr::Attr("x".into())), Box::new(konst(2i64)))),
        );
        let log = toy();
        let both = apply_rules(&log, &RuleSet { rules: vec![r1.clone(), r2.clone()] }).unwrap().log;
        let step = apply_rules(&log, &RuleSet { rules: vec![r1] }).unwrap().log;
        let step = apply_rules(&step, &RuleSet { rules: vec![r2] }).unwrap().log;
        assert_eq!(both, step);
        assert_eq!(both.traces["c1"].events[1].attributes["y"], Value::Int(20));
    }

    #[test]
    fn instant_arithmetic() {
        let wait = Expr::Sub(Box::new(Expr::Completion("tow".into())), Box::new(Expr::Completion("fine".into())));
        let rs = RuleSet {
            rules: vec![
                rule("w", Scope::Case, Expr::Executed("tow".into()), set("wait", wait)),
                rule(
                    "late",
                    Scope::Case,
                    Expr::Gt(Box::new(Expr::Attr("wait".into())), Box::new(Expr::Duration("3h".into()))),
                    set("late", konst(true)),
                ),
            ],
        };
        let out = apply_rules(&toy(), &rs).unwrap().log;
        assert_eq!(out.traces["c1"].attributes["wait"], Value::Float(5400.0));
        assert!(out.traces["c2"].attributes.contains_key("late"));
        assert!(!out.traces["c1"].attributes.contains_key("late"));
    }

    #[test]
    fn validation_errors() {
        let log = toy();
        let one = |r: EnrichmentRule| apply_rules(&log, &RuleSet { rules: vec![r] });
        assert_eq!(
            one(rule("u", Scope::Event, Expr::Attr("nope".into()), Action::DropEvent)),
            Err(EnrichmentError::UnknownAttribute("u".into(), "nope".into()))
        );
        assert_eq!(
            one(rule("a", Scope::Case, Expr::Executed("ghost".into()), Action::DropEvent)),
            Err(EnrichmentError::UnknownActivity("a".into(), "ghost".into()))
        );
        assert_eq!(
            one(rule("r", Scope::Event, konst(true), set("activity", konst("x")))),
            Err(EnrichmentError::ReservedKey("r".into(), "activity".into()))
        );
        assert!(matches!(
            one(rule("t", Scope::Event, Expr::Lt(Box::new(Expr::Attr("channel".into())), Box::new(konst(3i64))), Action::DropEvent)),
            Err(EnrichmentError::TypeMismatch(..))
        ));
        assert!(matches!(one(rule("p", Scope::Event, konst(3i64), Action::DropEvent)), Err(EnrichmentError::TypeMismatch(..))));
        assert!(matches!(
            one(rule("d", Scope::Case, Expr::Within("fine".into(), "tow".into(), "soon".into()), Action::DropEvent)),
            Err(EnrichmentError::BadDuration(..))
        ));
    }

    #[test]
    fn parse_files() {
        let src = r#"[{"id": "r1", "scope": "case", "when": {"op": "const", "args": true},
                      "then": {"action": "set_attribute", "key": "region", "value": {"op": "const", "args": "north"}}}]"#;
        assert_eq!(parse_rules(src).unwrap().rules.len(), 1);
        let dup = format!("[{0},{0}]", &src[1..src.len() - 1]);
        assert_eq!(parse_rules(&dup), Err(EnrichmentError::DuplicateRuleId("r1".into())));
        assert!(matches!(parse_rules("[\n{\"id\": 1}]"), Err(EnrichmentError::SyntaxError(2, _))));
    }

    fn leaf() -> impl Strategy<Value = Expr> {
        prop_oneof![
            any::<i64>().prop_map(|i| Expr::Const(Value::Int(i))),
            (-1e6f64..1e6).prop_map(|f| Expr::Const(Value::Float(f))),
            "[a-z ']{0,6}".prop_map(|s| Expr::Const(Value::Str(s))),
            any::<bool>().prop_map(|b| Expr::Const(Value::Bool(b))),
            (0i64..4_000_000_000_000).prop_map(|t| Expr::Const(Value::Instant(Timestamp(t)))),
            "[a-z_]{1,6}".prop_map(Expr::Attr),
            Just(Expr::Activity),
            "[a-z ]{1,6}".prop_map(Expr::Completion),
            prop::sample::select(vec!["2h", "30m", "1day"]).prop_map(|d| Expr::Duration(d.into())),
            ("[a-z]{1,4}", "[a-z]{1,4}").prop_map(|(a, b)| Expr::Within(a, b, "2h".into())),
        ]
    }

    fn expr() -> impl Strategy<Value = Expr> {
        leaf().prop_recursive(3, 24, 3, |inner| {
            let b = |e: Expr| Box::new(e);
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Lt(b(x), b(y))),
                (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Eq(b(x), b(y))),
                (inner.clone(), inner.clone()).prop_map(move |(x, y)| Expr::Sub(b(x), b(y))),
                prop::collection::vec(inner.clone(), 0..3).prop_map(Expr::And),
                prop::collection::vec(inner.clone(), 0..3).prop_map(Expr::Or),
                inner.prop_map(move |x| Expr::Not(b(x))),
            ]
        })
    }

    pub(crate) fn rule_set() -> impl Strategy<Value = RuleSet> {
        prop::collection::vec(
            (
                prop::sample::select(vec![Scope::Event, Scope::Case]),
                expr(),
                prop_oneof![Just(Action::DropEvent), ("[a-z]{1,5}", expr()).prop_map(|(k, v)| set(&k, v))],
            ),
            0..5,
        )
        .prop_map(|rules| RuleSet {
            rules: rules
                .into_iter()
                .enumerate()
                .map(|(i, (scope, when, then))| rule(&format!("rule-{i}"), scope, when, then))
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(rs in rule_set()) {
            let text = render_rules(&rs);
            let back = parse_rules(&text).unwrap();
            prop_assert_eq!(&back, &rs);
            prop_assert_eq!(render_rules(&back), text);
        }
    }
}
