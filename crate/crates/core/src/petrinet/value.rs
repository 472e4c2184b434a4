use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value as Json;

/// Declared type of a case variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Integer,
    Decimal,
    String,
    Boolean,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValueType::Integer => "integer",
            ValueType::Decimal => "decimal",
            ValueType::String => "string",
            ValueType::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

/// A typed case variable value.
///
/// Serialized externally tagged (`{"integer":5}`, `{"decimal":"1.5"}`) so the
/// type survives the trip through canonical JSON. Decimals are normalized on
/// construction, so equal numbers have equal bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Value {
    Integer(i64),
    #[serde(deserialize_with = "normalized_decimal")]
    Decimal(Decimal),
    String(String),
    Boolean(bool),
}

fn normalized_decimal<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
    let s = String::deserialize(d)?;
    Decimal::from_str(&s).map(|v| v.normalize()).map_err(serde::de::Error::custom)
}

impl Value {
    pub fn decimal(d: Decimal) -> Self {
        Value::Decimal(d.normalize())
    }

    pub fn parse_decimal(s: &str) -> Option<Self> {
        Decimal::from_str(s).ok().map(Value::decimal)
    }

    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Integer(_) => ValueType::Integer,
            Value::Decimal(_) => ValueType::Decimal,
            Value::String(_) => ValueType::String,
            Value::Boolean(_) => ValueType::Boolean,
        }
    }

    pub fn default_for(ty: ValueType) -> Self {
        match ty {
            ValueType::Integer => Value::Integer(0),
            ValueType::Decimal => Value::Decimal(Decimal::ZERO),
            ValueType::String => Value::String(String::new()),
            ValueType::Boolean => Value::Boolean(false),
        }
    }

    /// Reads a value from user-facing JSON, guided by the declared type.
    ///
    /// Accepts either the tagged wire form or a plain JSON scalar
    /// (decimals as strings or integers).
    pub fn from_json_typed(json: &Json, ty: ValueType) -> Option<Self> {
        if json.is_object() {
            let v: Value = serde_json::from_value(json.clone()).ok()?;
            return (v.value_type() == ty).then_some(v);
        }
        match (ty, json) {
            (ValueType::Integer, Json::Number(n)) => n.as_i64().map(Value::Integer),
            (ValueType::Decimal, Json::String(s)) => Value::parse_decimal(s),
            (ValueType::Decimal, Json::Number(n)) => n.as_i64().map(|i| Value::decimal(Decimal::from(i))),
            (ValueType::String, Json::String(s)) => Some(Value::String(s.clone())),
            (ValueType::Boolean, Json::Bool(b)) => Some(Value::Boolean(*b)),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(i) => write!(f, "{i}"),
            Value::Decimal(d) => write!(f, "{d}"),
            Value::String(s) => write!(f, "{s:?}"),
            Value::Boolean(b) => write!(f, "{b}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canon::canonical_bytes;
    use serde_json::json;

    #[test]
    fn tagged_wire_form() {
        let v = Value::parse_decimal("1.50").unwrap();
        assert_eq!(canonical_bytes(&v).unwrap(), br#"{"decimal":"1.5"}"#);
        assert_eq!(canonical_bytes(&Value::Integer(3)).unwrap(), br#"{"integer":3}"#);
        let back: Value = serde_json::from_str(r#"{"decimal":"2.500"}"#).unwrap();
        assert_eq!(back, Value::parse_decimal("2.5").unwrap());
        assert_eq!(canonical_bytes(&back).unwrap(), br#"{"decimal":"2.5"}"#);
    }

    #[test]
    fn non_finite_decimal_is_refused() {
        assert!(Value::parse_decimal("NaN").is_none());
        assert!(Value::parse_decimal("inf").is_none());
        assert!(serde_json::from_str::<Value>(r#"{"decimal":"NaN"}"#).is_err());
    }

    #[test]
    fn typed_coercion() {
        assert_eq!(Value::from_json_typed(&json!(5), ValueType::Integer), Some(Value::Integer(5)));
        assert_eq!(
            Value::from_json_typed(&json!("0.10"), ValueType::Decimal),
            Value::parse_decimal("0.1")
        );
        assert_eq!(Value::from_json_typed(&json!("x"), ValueType::Integer), None);
        assert_eq!(
            Value::from_json_typed(&json!({"boolean": true}), ValueType::Boolean),
            Some(Value::Boolean(true))
        );
        assert_eq!(Value::from_json_typed(&json!({"boolean": true}), ValueType::String), None);
    }
}
