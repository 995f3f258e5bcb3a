use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::fusion::{fuse, FusionError};
use crate::plan::{BoundExpr, ScalarBuiltin};
use crate::retrieval::{cosine_similarity, VectorError};
use crate::sql::ast::{BinaryOp, UnaryOp};
use crate::value::{Value, ValueError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Value(#[from] ValueError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("{function} expects {expected}, got {actual}")]
    Argument {
        function: &'static str,
        expected: &'static str,
        actual: String,
    },
    #[error("predicate must be BOOLEAN, got {0}")]
    NotBoolean(String),
}

/// Column-major rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relation {
    pub cols: Vec<Vec<Value>>,
    pub len: usize,
}

impl Relation {
    pub fn new(cols: Vec<Vec<Value>>, len: usize) -> Self {
        debug_assert!(cols.iter().all(|c| c.len() == len));
        Relation { cols, len }
    }

    /// Rows at `idx`, in that order.
    pub fn gather(&self, idx: &[usize]) -> Relation {
        Relation {
            cols: self
                .cols
                .iter()
                .map(|c| idx.iter().map(|&i| c[i].clone()).collect())
                .collect(),
            len: idx.len(),
        }
    }

    pub fn push_col(&mut self, col: Vec<Value>) {
        debug_assert_eq!(col.len(), self.len);
        self.cols.push(col);
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.len)
            .map(|i| self.cols.iter().map(|c| c[i].clone()).collect())
            .collect()
    }
}

/// WHERE semantics: only TRUE keeps a row.
pub fn is_true(v: &Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(*b),
        Value::Null => Ok(false),
        other => Err(EvalError::NotBoolean(other.data_type().to_string())),
    }
}

fn as_bool(v: &Value, op: &'static str) -> Result<Option<bool>, EvalError> {
    match v {
        Value::Bool(b) => Ok(Some(*b)),
        Value::Null => Ok(None),
        other => Err(ValueError::Operator {
            op,
            left: other.data_type(),
            right: crate::value::DataType::Bool,
        }
        .into()),
    }
}

fn arg_error(function: &'static str, expected: &'static str, v: &Value) -> EvalError {
    EvalError::Argument {
        function,
        expected,
        actual: v.data_type().to_string(),
    }
}

/// Evaluates `e` on row `row` of `rel`.
pub fn eval(e: &BoundExpr, rel: &Relation, row: usize) -> Result<Value, EvalError> {
    match e {
        BoundExpr::Literal(v) => Ok(v.clone()),
        BoundExpr::Column(i) => Ok(rel.cols[*i][row].clone()),
        BoundExpr::Unary { op, expr } => {
            let v = eval(expr, rel, row)?;
            match op {
                UnaryOp::Not => Ok(as_bool(&v, "NOT")?.map_or(Value::Null, |b| Value::Bool(!b))),
                UnaryOp::Neg => match v {
                    Value::Null => Ok(Value::Null),
                    Value::Int(i) => i
                        .checked_neg()
                        .map(Value::Int)
                        .ok_or(EvalError::Overflow("-")),
                    Value::Double(d) => Ok(Value::Double(-d)),
                    other => Err(arg_error("-", "a number", &other)),
                },
            }
        }
        BoundExpr::Binary { op, left, right } => {
            let l = eval(left, rel, row)?;
            match op {
                // Short-circuit only where the result is already decided.
                BinaryOp::And | BinaryOp::Or => {
                    let sym = op.symbol();
                    let a = as_bool(&l, sym)?;
                    let decided = if *op == BinaryOp::And {
                        Some(false)
                    } else {
                        Some(true)
                    };
                    if a == decided {
                        return Ok(Value::Bool(a.unwrap()));
                    }
                    let b = as_bool(&eval(right, rel, row)?, sym)?;
                    Ok(match (a, b) {
                        (_, x) if x == decided => Value::Bool(x.unwrap()),
                        (Some(_), Some(y)) => Value::Bool(y),
                        _ => Value::Null,
                    })
                }
                _ => binary(*op, &l, &eval(right, rel, row)?),
            }
        }
        BoundExpr::IsNull { expr, negated } => {
            Ok(Value::Bool(eval(expr, rel, row)?.is_null() != *negated))
        }
        BoundExpr::Cast { expr, ty } => Ok(eval(expr, rel, row)?.cast(ty)?),
        BoundExpr::Call { func, args } => {
            let vals = args
                .iter()
                .map(|a| eval(a, rel, row))
                .collect::<Result<Vec<_>, _>>()?;
            call(*func, &vals)
        }
    }
}

pub(crate) fn binary(op: BinaryOp, l: &Value, r: &Value) -> Result<Value, EvalError> {
    use core::cmp::Ordering::*;
    if op.is_comparison() {
        let Some(ord) = l.sql_cmp(r)? else {
            return Ok(Value::Null);
        };
        let b = match op {
            BinaryOp::Eq => ord == Equal,
            BinaryOp::NotEq => ord != Equal,
            BinaryOp::Lt => ord == Less,
            BinaryOp::LtEq => ord != Greater,
            BinaryOp::Gt => ord == Greater,
            _ => ord != Less,
        };
        return Ok(Value::Bool(b));
    }
    if l.is_null() || r.is_null() {
        return Ok(Value::Null);
    }
    if op == BinaryOp::Concat {
        let mut s = l.render();
        s.push_str(&r.render());
        return Ok(Value::Text(s));
    }
    let sym = op.symbol();
    let operator_error = || {
        EvalError::from(ValueError::Operator {
            op: sym,
            left: l.data_type(),
            right: r.data_type(),
        })
    };
    if let (Value::Int(a), Value::Int(b)) = (l, r) {
        let (a, b) = (*a, *b);
        return match op {
            BinaryOp::Add => a
                .checked_add(b)
                .map(Value::Int)
                .ok_or(EvalError::Overflow(sym)),
            BinaryOp::Sub => a
                .checked_sub(b)
                .map(Value::Int)
                .ok_or(EvalError::Overflow(sym)),
            BinaryOp::Mul => a
                .checked_mul(b)
                .map(Value::Int)
                .ok_or(EvalError::Overflow(sym)),
            BinaryOp::Div if b == 0 => Ok(Value::Null),
            BinaryOp::Div => Ok(Value::Double(a as f64 / b as f64)),
            BinaryOp::Mod if b == 0 => Ok(Value::Null),
            BinaryOp::Mod => a
                .checked_rem(b)
                .map(Value::Int)
                .ok_or(EvalError::Overflow(sym)),
            _ => Err(operator_error()),
        };
    }
    let (Some(a), Some(b)) = (l.as_f64(), r.as_f64()) else {
        return Err(operator_error());
    };
    Ok(match op {
        BinaryOp::Add => Value::Double(a + b),
        BinaryOp::Sub => Value::Double(a - b),
        BinaryOp::Mul => Value::Double(a * b),
        BinaryOp::Div if b == 0.0 => Value::Null,
        BinaryOp::Div => Value::Double(a / b),
        BinaryOp::Mod if b == 0.0 => Value::Null,
        BinaryOp::Mod => Value::Double(libm::fmod(a, b)),
        _ => return Err(operator_error()),
    })
}

fn call(func: ScalarBuiltin, vals: &[Value]) -> Result<Value, EvalError> {
    let name = func.name();
    match func {
        ScalarBuiltin::Fusion(method) => {
            let mut scores = Vec::with_capacity(vals.len());
            for v in vals {
                match v {
                    Value::Null => scores.push(None),
                    other => scores.push(Some(
                        other
                            .as_f64()
                            .ok_or_else(|| arg_error(name, "numeric scores", other))?,
                    )),
                }
            }
            Ok(fuse(method, &scores)?.map_or(Value::Null, Value::Double))
        }
        ScalarBuiltin::CosineSimilarity => match (&vals[0], &vals[1]) {
            (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
            (Value::DoubleArray(a), Value::DoubleArray(b)) => {
                Ok(Value::Double(cosine_similarity(a, b)?))
            }
            (Value::DoubleArray(_), other) | (other, _) => {
                Err(arg_error(name, "DOUBLE[] arguments", other))
            }
        },
        ScalarBuiltin::Coalesce => Ok(vals
            .iter()
            .find(|v| !v.is_null())
            .cloned()
            .unwrap_or(Value::Null)),
        ScalarBuiltin::Lower | ScalarBuiltin::Upper => match &vals[0] {
            Value::Null => Ok(Value::Null),
            Value::Text(s) if func == ScalarBuiltin::Lower => Ok(Value::Text(s.to_lowercase())),
            Value::Text(s) => Ok(Value::Text(s.to_uppercase())),
            other => Err(arg_error(name, "TEXT", other)),
        },
        ScalarBuiltin::Length => match &vals[0] {
            Value::Null => Ok(Value::Null),
            Value::Text(s) => Ok(Value::Int(s.chars().count() as i64)),
            Value::DoubleArray(a) => Ok(Value::Int(a.len() as i64)),
            Value::Json(serde_json::Value::Array(a)) => Ok(Value::Int(a.len() as i64)),
            other => Err(arg_error(name, "TEXT or an array", other)),
        },
        ScalarBuiltin::Abs => match &vals[0] {
            Value::Null => Ok(Value::Null),
            Value::Int(i) => i
                .checked_abs()
                .map(Value::Int)
                .ok_or(EvalError::Overflow("abs")),
            Value::Double(d) => Ok(Value::Double(libm::fabs(*d))),
            other => Err(arg_error(name, "a number", other)),
        },
    }
}
