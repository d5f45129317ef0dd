//! Scalar attribute values and millisecond timestamps shared by every layer.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An absolute instant with millisecond precision (milliseconds since the Unix epoch, UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    /// Parses ISO-8601 / RFC 3339 text with an offset, or an integer of epoch milliseconds.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        if let Ok(ms) = text.parse::<i64>() {
            return Some(Timestamp(ms));
        }
        Self::parse_iso(text)
    }

    /// ISO-8601 only; integers are rejected.
    pub fn parse_iso(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Some(Timestamp(dt.timestamp_millis()));
        }
        // XES files in the wild often use `+0100` offsets or a space separator.
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f%z", "%Y-%m-%d %H:%M:%S%.f%:z", "%Y-%m-%d %H:%M:%S%.f%z"] {
            if let Ok(dt) = DateTime::parse_from_str(text, fmt) {
                return Some(Timestamp(dt.timestamp_millis()));
            }
        }
        None
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0).single().unwrap_or_default()
    }

    /// Canonical rendering: RFC 3339, UTC, millisecond precision.
    pub fn to_iso(self) -> String {
        self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1000.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_iso())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Timestamp::parse(&text).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {text:?}")))
    }
}

/// Inferred scalar type of an attribute column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Boolean,
    Integer,
    Float,
    Instant,
    String,
}

impl ValueType {
    pub fn name(self) -> &'static str {
        match self {
            ValueType::Boolean => "boolean",
            ValueType::Integer => "integer",
            ValueType::Float => "float",
            ValueType::Instant => "instant",
            ValueType::String => "string",
        }
    }
}

/// A scalar attribute value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Float(f64),
    Instant(Timestamp),
    Str(String),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Bool(_) => ValueType::Boolean,
            Value::Int(_) => ValueType::Integer,
            Value::Float(_) => ValueType::Float,
            Value::Instant(_) => ValueType::Instant,
            Value::Str(_) => ValueType::String,
        }
    }

    /// Infers the narrowest type for a raw text cell: boolean, integer, float, instant, string.
    pub fn infer(text: &str) -> Value {
        Self::parse_as(text, ValueType::Boolean)
            .or_else(|| Self::parse_as(text, ValueType::Integer))
            .or_else(|| Self::parse_as(text, ValueType::Float))
            .or_else(|| Self::parse_as(text, ValueType::Instant))
            .unwrap_or_else(|| Value::Str(text.to_string()))
    }

    /// Parses raw text as the given type; `None` if it does not fit.
    pub fn parse_as(text: &str, ty: ValueType) -> Option<Value> {
        match ty {
            ValueType::Boolean => match text.trim().to_ascii_lowercase().as_str() {
                "true" => Some(Value::Bool(true)),
                "false" => Some(Value::Bool(false)),
                _ => None,
            },
            ValueType::Integer => text.trim().parse::<i64>().ok().map(Value::Int),
            ValueType::Float => {
                let v = text.trim().parse::<f64>().ok()?;
                v.is_finite().then_some(Value::Float(v))
            }
            ValueType::Instant => Timestamp::parse_iso(text).map(Value::Instant),
            ValueType::String => Some(Value::Str(text.to_string())),
        }
    }

    /// Text rendering that [`Value::parse_as`] maps back to the same value.
    pub fn render(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => render_float(*f),
            Value::Instant(t) => t.to_iso(),
            Value::Str(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_instant(&self) -> Option<Timestamp> {
        match self {
            Value::Instant(t) => Some(*t),
            _ => None,
        }
    }

    /// Ordering used by comparison predicates: numbers compare numerically across int/float,
    /// instants and strings compare within their own kind.
    pub fn partial_cmp_loose(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
            (Value::Instant(a), Value::Instant(b)) => Some(a.cmp(b)),
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (a, b) => a.as_f64()?.partial_cmp(&b.as_f64()?),
        }
    }
}

/// Shortest round-trip float rendering that always reads back as a float (never as an integer).
pub fn render_float(f: f64) -> String {
    let s = f.to_string();
    if s.contains(['.', 'e', 'E', 'i', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<Timestamp> for Value {
    fn from(v: Timestamp) -> Self {
        Value::Instant(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

// JSON form: bool/number/string map directly; floats always carry a fraction or exponent so they
// reparse as floats; instants are tagged objects.
impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Value::Bool(b) => s.serialize_bool(*b),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Float(f) => s.serialize_f64(*f),
            Value::Str(v) => s.serialize_str(v),
            Value::Instant(t) => {
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("$instant", &t.to_iso())?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(d)?;
        Value::from_json(&json).ok_or_else(|| serde::de::Error::custom(format!("not a scalar value: {json}")))
    }
}

impl Value {
    pub fn from_json(json: &serde_json::Value) -> Option<Value> {
        match json {
            serde_json::Value::Bool(b) => Some(Value::Bool(*b)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Some(Value::Int(i))
                } else {
                    n.as_f64().map(Value::Float)
                }
            }
            serde_json::Value::String(s) => Some(Value::Str(s.clone())),
            serde_json::Value::Object(m) if m.len() == 1 => {
                let t = m.get("$instant")?.as_str()?;
                Timestamp::parse(t).map(Value::Instant)
            }
            _ => None,
        }
    }
}

/// Attribute map with deterministic key order.
pub type Attributes = BTreeMap<String, Value>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_order() {
        assert_eq!(Value::infer("TRUE"), Value::Bool(true));
        assert_eq!(Value::infer("42"), Value::Int(42));
        assert_eq!(Value::infer("4.5"), Value::Float(4.5));
        assert!(matches!(Value::infer("2023-01-01T10:00:00+01:00"), Value::Instant(_)));
        assert_eq!(Value::infer("north"), Value::Str("north".into()));
    }

    #[test]
    fn timestamp_forms() {
        let a = Timestamp::parse("2023-01-01T10:00:00.250+01:00").unwrap();
        let b = Timestamp::parse("1672563600250").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_iso(), "2023-01-01T09:00:00.250Z");
        assert_eq!(Timestamp::parse(&a.to_iso()), Some(a));
        assert!(Timestamp::parse("yesterday").is_none());
    }

    #[test]
    fn float_rendering_stays_float() {
        assert_eq!(render_float(1.0), "1.0");
        assert_eq!(Value::infer(&Value::Float(3.0).render()), Value::Float(3.0));
        let j = serde_json::to_string(&Value::Float(2.0)).unwrap();
        assert_eq!(serde_json::from_str::<Value>(&j).unwrap(), Value::Float(2.0));
    }

    #[test]
    fn instant_json_roundtrip() {
        let v = Value::Instant(Timestamp(1_000));
        let j = serde_json::to_string(&v).unwrap();
        assert_eq!(j, r#"{"$instant":"1970-01-01T00:00:01.000Z"}"#);
        assert_eq!(serde_json::from_str::<Value>(&j).unwrap(), v);
    }
}
