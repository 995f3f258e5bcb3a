use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use super::ColumnInfo;
use crate::fusion::FusionMethod;
use crate::sql::ast::{BinaryOp, UnaryOp};
use crate::value::{DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarBuiltin {
    Fusion(FusionMethod),
    CosineSimilarity,
    Coalesce,
    Lower,
    Upper,
    Length,
    Abs,
}

impl ScalarBuiltin {
    pub fn name(self) -> &'static str {
        match self {
            ScalarBuiltin::Fusion(m) => m.function_name(),
            ScalarBuiltin::CosineSimilarity => "array_cosine_similarity",
            ScalarBuiltin::Coalesce => "coalesce",
            ScalarBuiltin::Lower => "lower",
            ScalarBuiltin::Upper => "upper",
            ScalarBuiltin::Length => "length",
            ScalarBuiltin::Abs => "abs",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        if let Some(m) = FusionMethod::from_function_name(name) {
            return Some(ScalarBuiltin::Fusion(m));
        }
        Some(match name.to_ascii_lowercase().as_str() {
            "fusion" => ScalarBuiltin::Fusion(FusionMethod::CombSum),
            "array_cosine_similarity" => ScalarBuiltin::CosineSimilarity,
            "coalesce" => ScalarBuiltin::Coalesce,
            "lower" => ScalarBuiltin::Lower,
            "upper" => ScalarBuiltin::Upper,
            "length" => ScalarBuiltin::Length,
            "abs" => ScalarBuiltin::Abs,
            _ => return None,
        })
    }
}

/// Expression over the columns of one input relation.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundExpr {
    Literal(Value),
    Column(usize),
    Unary {
        op: UnaryOp,
        expr: Box<BoundExpr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<BoundExpr>,
        right: Box<BoundExpr>,
    },
    IsNull {
        expr: Box<BoundExpr>,
        negated: bool,
    },
    Cast {
        expr: Box<BoundExpr>,
        ty: DataType,
    },
    Call {
        func: ScalarBuiltin,
        args: Vec<BoundExpr>,
    },
}

impl BoundExpr {
    /// Largest column index referenced, if any.
    pub fn max_column(&self) -> Option<usize> {
        match self {
            BoundExpr::Literal(_) => None,
            BoundExpr::Column(i) => Some(*i),
            BoundExpr::Unary { expr, .. }
            | BoundExpr::IsNull { expr, .. }
            | BoundExpr::Cast { expr, .. } => expr.max_column(),
            BoundExpr::Binary { left, right, .. } => left.max_column().max(right.max_column()),
            BoundExpr::Call { args, .. } => args.iter().filter_map(BoundExpr::max_column).max(),
        }
    }
}

/// SQL-like rendering with column names taken from `schema`.
pub fn display_expr(e: &BoundExpr, schema: &[ColumnInfo]) -> String {
    match e {
        BoundExpr::Literal(Value::Text(s)) => alloc::format!("'{}'", s.replace('\'', "''")),
        BoundExpr::Literal(v) => match v {
            Value::Null => "NULL".into(),
            other => other.render(),
        },
        BoundExpr::Column(i) => match schema.get(*i) {
            Some(ColumnInfo {
                qualifier: Some(q),
                name,
                ..
            }) => alloc::format!("{q}.{name}"),
            Some(c) => c.name.clone(),
            None => alloc::format!("#{i}"),
        },
        BoundExpr::Unary { op, expr } => match op {
            UnaryOp::Not => alloc::format!("(NOT {})", display_expr(expr, schema)),
            UnaryOp::Neg => alloc::format!("(-{})", display_expr(expr, schema)),
        },
        BoundExpr::Binary { op, left, right } => alloc::format!(
            "({} {} {})",
            display_expr(left, schema),
            op.symbol(),
            display_expr(right, schema)
        ),
        BoundExpr::IsNull { expr, negated } => alloc::format!(
            "({} IS {}NULL)",
            display_expr(expr, schema),
            if *negated { "NOT " } else { "" }
        ),
        BoundExpr::Cast { expr, ty } => alloc::format!("{}::{ty}", display_expr(expr, schema)),
        BoundExpr::Call { func, args } => alloc::format!(
            "{}({})",
            func.name(),
            args.iter()
                .map(|a| display_expr(a, schema))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn numeric(t: &DataType) -> bool {
    matches!(t, DataType::Int | DataType::Double | DataType::Null)
}

/// Static result type; `Null` when unknown.
pub fn expr_type(e: &BoundExpr, schema: &[ColumnInfo]) -> DataType {
    match e {
        BoundExpr::Literal(v) => v.data_type(),
        BoundExpr::Column(i) => schema
            .get(*i)
            .map(|c| c.ty.clone())
            .unwrap_or(DataType::Null),
        BoundExpr::Unary {
            op: UnaryOp::Not, ..
        }
        | BoundExpr::IsNull { .. } => DataType::Bool,
        BoundExpr::Unary {
            op: UnaryOp::Neg,
            expr,
        } => expr_type(expr, schema),
        BoundExpr::Binary { op, left, right } => {
            use BinaryOp::*;
            match op {
                Or | And | Eq | NotEq | Lt | LtEq | Gt | GtEq => DataType::Bool,
                Concat => DataType::Text,
                Div => DataType::Double,
                Add | Sub | Mul | Mod => {
                    let (l, r) = (expr_type(left, schema), expr_type(right, schema));
                    if l == DataType::Int && r == DataType::Int {
                        DataType::Int
                    } else if numeric(&l) && numeric(&r) {
                        DataType::Double
                    } else {
                        DataType::Null
                    }
                }
            }
        }
        BoundExpr::Cast { ty, .. } => ty.clone(),
        BoundExpr::Call { func, args } => match func {
            ScalarBuiltin::Fusion(_) | ScalarBuiltin::CosineSimilarity => DataType::Double,
            ScalarBuiltin::Lower | ScalarBuiltin::Upper => DataType::Text,
            ScalarBuiltin::Length => DataType::Int,
            ScalarBuiltin::Abs => args
                .first()
                .map(|a| expr_type(a, schema))
                .unwrap_or(DataType::Null),
            ScalarBuiltin::Coalesce => args
                .iter()
                .map(|a| expr_type(a, schema))
                .find(|t| *t != DataType::Null)
                .unwrap_or(DataType::Null),
        },
    }
}
