//! Scalar values and their SQL types.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Column and expression types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataType {
    Null,
    Bool,
    Int,
    Double,
    Text,
    Json,
    /// Fixed-length array of doubles; `None` when the length is not known
    /// statically.
    DoubleArray(Option<usize>),
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataType::Null => f.write_str("NULL"),
            DataType::Bool => f.write_str("BOOLEAN"),
            DataType::Int => f.write_str("INTEGER"),
            DataType::Double => f.write_str("DOUBLE"),
            DataType::Text => f.write_str("TEXT"),
            DataType::Json => f.write_str("JSON"),
            DataType::DoubleArray(Some(n)) => write!(f, "DOUBLE[{n}]"),
            DataType::DoubleArray(None) => f.write_str("DOUBLE[]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("cannot compare {0} with {1}")]
    Incomparable(DataType, DataType),
    #[error("cannot cast {value} to {target}")]
    Cast { value: String, target: DataType },
    #[error("array length mismatch: expected {expected}, got {actual}")]
    ArrayLength { expected: usize, actual: usize },
    #[error("operator {op} not defined for {left} and {right}")]
    Operator {
        op: &'static str,
        left: DataType,
        right: DataType,
    },
}

/// A single SQL value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value")]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Double(f64),
    Text(String),
    Json(serde_json::Value),
    DoubleArray(Vec<f64>),
}

impl Value {
    pub fn data_type(&self) -> DataType {
        match self {
            Value::Null => DataType::Null,
            Value::Bool(_) => DataType::Bool,
            Value::Int(_) => DataType::Int,
            Value::Double(_) => DataType::Double,
            Value::Text(_) => DataType::Text,
            Value::Json(_) => DataType::Json,
            Value::DoubleArray(v) => DataType::DoubleArray(Some(v.len())),
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Double(d) => Some(*d),
            _ => None,
        }
    }

    /// SQL comparison. `Ok(None)` when either side is NULL.
    pub fn sql_cmp(&self, other: &Value) -> Result<Option<Ordering>, ValueError> {
        use Value::*;
        let ord = match (self, other) {
            (Null, _) | (_, Null) => return Ok(None),
            (Bool(a), Bool(b)) => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Int(_) | Double(_), Int(_) | Double(_)) => {
                let (a, b) = (self.as_f64().unwrap(), other.as_f64().unwrap());
                a.total_cmp(&b)
            }
            (Text(a), Text(b)) => a.cmp(b),
            (Json(a), Json(b)) => canonical_json(a).cmp(&canonical_json(b)),
            (DoubleArray(a), DoubleArray(b)) => {
                let mut ord = Ordering::Equal;
                for (x, y) in a.iter().zip(b) {
                    ord = x.total_cmp(y);
                    if ord != Ordering::Equal {
                        break;
                    }
                }
                ord.then(a.len().cmp(&b.len()))
            }
            _ => {
                return Err(ValueError::Incomparable(
                    self.data_type(),
                    other.data_type(),
                ))
            }
        };
        Ok(Some(ord))
    }

    /// Key used for hash-free equality grouping (joins, GROUP BY, FTS lookup).
    /// NULL has no key. Integral doubles share the key of the equal integer.
    pub fn group_key(&self) -> Option<GroupKey> {
        Some(match self {
            Value::Null => return None,
            Value::Bool(b) => GroupKey::Bool(*b),
            Value::Int(i) => GroupKey::Int(*i),
            Value::Double(d) => {
                if libm::trunc(*d) == *d && d.abs() < 9.0e15 {
                    GroupKey::Int(*d as i64)
                } else {
                    GroupKey::Double(d.to_bits())
                }
            }
            Value::Text(s) => GroupKey::Text(s.clone()),
            Value::Json(j) => GroupKey::Json(canonical_json(j)),
            Value::DoubleArray(v) => GroupKey::Array(v.iter().map(|x| x.to_bits()).collect()),
        })
    }

    /// Plain-text rendering used by tuple serialization.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Double(d) => format_double(*d),
            Value::Text(s) => s.clone(),
            Value::Json(j) => canonical_json(j),
            Value::DoubleArray(v) => {
                let parts: Vec<String> = v.iter().map(|d| format_double(*d)).collect();
                alloc::format!("[{}]", parts.join(","))
            }
        }
    }

    /// Untagged JSON rendering used for result rows.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Double(d) => serde_json::Number::from_f64(*d)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Text(s) => serde_json::Value::String(s.clone()),
            Value::Json(j) => j.clone(),
            Value::DoubleArray(v) => serde_json::Value::Array(
                v.iter()
                    .map(|d| {
                        serde_json::Number::from_f64(*d)
                            .map(serde_json::Value::Number)
                            .unwrap_or(serde_json::Value::Null)
                    })
                    .collect(),
            ),
        }
    }

    pub fn cast(&self, target: &DataType) -> Result<Value, ValueError> {
        let fail = || ValueError::Cast {
            value: self.render(),
            target: target.clone(),
        };
        Ok(match (self, target) {
            (Value::Null, _) => Value::Null,
            (_, DataType::Null) => Value::Null,
            (Value::Bool(b), DataType::Bool) => Value::Bool(*b),
            (Value::Text(s), DataType::Bool) => match s.trim().to_ascii_lowercase().as_str() {
                "true" | "t" | "1" => Value::Bool(true),
                "false" | "f" | "0" => Value::Bool(false),
                _ => return Err(fail()),
            },
            (Value::Int(i), DataType::Bool) => Value::Bool(*i != 0),
            (Value::Int(i), DataType::Int) => Value::Int(*i),
            (Value::Double(d), DataType::Int) => {
                if d.is_finite() {
                    Value::Int(libm::round(*d) as i64)
                } else {
                    return Err(fail());
                }
            }
            (Value::Bool(b), DataType::Int) => Value::Int(*b as i64),
            (Value::Text(s), DataType::Int) => Value::Int(s.trim().parse().map_err(|_| fail())?),
            (Value::Int(i), DataType::Double) => Value::Double(*i as f64),
            (Value::Double(d), DataType::Double) => Value::Double(*d),
            (Value::Text(s), DataType::Double) => {
                Value::Double(s.trim().parse().map_err(|_| fail())?)
            }
            (Value::Json(serde_json::Value::Number(n)), DataType::Double) => {
                Value::Double(n.as_f64().ok_or_else(fail)?)
            }
            (v, DataType::Text) => match v {
                Value::Json(serde_json::Value::String(s)) => Value::Text(s.clone()),
                other => Value::Text(other.render()),
            },
            (Value::Json(j), DataType::Json) => Value::Json(j.clone()),
            (Value::Text(s), DataType::Json) => {
                Value::Json(serde_json::from_str(s).map_err(|_| fail())?)
            }
            (v, DataType::Json) => v.to_json_value_typed(),
            (Value::DoubleArray(v), DataType::DoubleArray(len)) => {
                check_len(*len, v.len())?;
                Value::DoubleArray(v.clone())
            }
            (Value::Text(s), DataType::DoubleArray(len)) => {
                let parsed: Vec<f64> = serde_json::from_str(s).map_err(|_| fail())?;
                check_len(*len, parsed.len())?;
                Value::DoubleArray(parsed)
            }
            (Value::Json(serde_json::Value::Array(items)), DataType::DoubleArray(len)) => {
                let parsed = items
                    .iter()
                    .map(|x| x.as_f64())
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(fail)?;
                check_len(*len, parsed.len())?;
                Value::DoubleArray(parsed)
            }
            _ => return Err(fail()),
        })
    }

    fn to_json_value_typed(&self) -> Value {
        Value::Json(self.to_json())
    }
}

fn check_len(expected: Option<usize>, actual: usize) -> Result<(), ValueError> {
    match expected {
        Some(expected) if expected != actual => Err(ValueError::ArrayLength { expected, actual }),
        _ => Ok(()),
    }
}

/// Total grouping key for a non-NULL value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroupKey {
    Bool(bool),
    Int(i64),
    Double(u64),
    Text(String),
    Json(String),
    Array(Vec<u64>),
}

/// Doubles render integral values with a trailing `.0` so that `1.0` and `1`
/// stay distinguishable in text.
pub fn format_double(d: f64) -> String {
    if d.is_finite() && libm::trunc(d) == d && d.abs() < 1e16 {
        alloc::format!("{d:.1}")
    } else {
        alloc::format!("{d}")
    }
}

/// JSON text with object keys sorted at every level. Independent of the
/// `serde_json` map implementation in use.
pub fn canonical_json(v: &serde_json::Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(map) => {
            let mut entries: Vec<(&String, &serde_json::Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            out.push('{');
            for (i, (k, val)) in entries.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).unwrap_or_default());
                out.push(':');
                write_canonical(val, out);
            }
            out.push('}');
        }
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&serde_json::to_string(other).unwrap_or_default()),
    }
}
