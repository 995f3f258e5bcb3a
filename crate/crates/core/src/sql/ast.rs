//! Syntax tree. `Display` prints SQL that parses back to an equal tree.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::catalog::{ResourceKind, Scope};
use crate::value::DataType;

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Select(Query),
    CreateModel(ModelDdl),
    CreatePrompt(PromptDdl),
    UpdateModel(ModelDdl),
    UpdatePrompt(PromptDdl),
    DeleteResource {
        kind: ResourceKind,
        scope: Option<Scope>,
        name: String,
    },
    CreateTableFromFile {
        name: String,
        path: String,
    },
    CreateFtsIndex {
        table: String,
        id_column: String,
        text_column: String,
    },
    Ask {
        question: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDdl {
    pub scope: Option<Scope>,
    pub name: String,
    pub model_id: String,
    pub provider: String,
    pub options: Vec<(String, Literal)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptDdl {
    pub scope: Option<Scope>,
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub ctes: Vec<Cte>,
    pub body: Select,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cte {
    pub name: String,
    pub query: Box<Query>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Select {
    pub projection: Vec<SelectItem>,
    pub from: Option<TableRef>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Wildcard,
    QualifiedWildcard(String),
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinKind {
    Inner,
    FullOuter,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableRef {
    Named {
        name: String,
        alias: Option<String>,
    },
    /// Table-valued function such as `flock_models()`.
    Function {
        name: String,
        alias: Option<String>,
    },
    Join {
        left: Box<TableRef>,
        right: Box<TableRef>,
        kind: JoinKind,
        on: Option<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub desc: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Double(f64),
    String(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Concat,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Concat => "||",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq
                | BinaryOp::NotEq
                | BinaryOp::Lt
                | BinaryOp::LtEq
                | BinaryOp::Gt
                | BinaryOp::GtEq
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FuncArg {
    Positional(Expr),
    /// `name := value`
    Named(String, Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Column {
        qualifier: Option<String>,
        name: String,
    },
    /// `*` inside `COUNT(*)`.
    Star,
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    Function {
        /// Dotted name; `fts_main_x.match_bm25` has two parts.
        name: Vec<String>,
        args: Vec<FuncArg>,
        /// `OVER ()`; only the empty window is supported.
        over: bool,
    },
    /// `{'key': expr, ...}`
    Map(Vec<(String, Expr)>),
    Cast {
        expr: Box<Expr>,
        ty: DataType,
    },
}

impl Expr {
    pub fn function_name(&self) -> Option<&str> {
        match self {
            Expr::Function { name, .. } => name.last().map(String::as_str),
            _ => None,
        }
    }
}

fn quote_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\'' {
            out.push('\'');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

/// Identifiers are quoted when they would not lex back as a bare identifier.
fn ident(s: &str) -> String {
    let bare = !s.is_empty()
        && s.chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_' || !c.is_ascii())
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || !c.is_ascii())
        && !super::token::is_reserved(s)
        && !super::token::CONTEXTUAL
            .iter()
            .any(|k| k.eq_ignore_ascii_case(s));
    if bare {
        String::from(s)
    } else {
        alloc::format!("\"{}\"", s.replace('"', "\"\""))
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Null => f.write_str("NULL"),
            Literal::Bool(true) => f.write_str("TRUE"),
            Literal::Bool(false) => f.write_str("FALSE"),
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Double(d) => {
                let s = alloc::format!("{d:?}");
                f.write_str(&s)
            }
            Literal::String(s) => f.write_str(&quote_str(s)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Column { qualifier, name } => match qualifier {
                Some(q) => write!(f, "{}.{}", ident(q), ident(name)),
                None => f.write_str(&ident(name)),
            },
            Expr::Star => f.write_str("*"),
            Expr::Unary { op, expr } => match op {
                UnaryOp::Not => write!(f, "(NOT {expr})"),
                UnaryOp::Neg => write!(f, "(- {expr})"),
            },
            Expr::Binary { op, left, right } => write!(f, "({left} {} {right})", op.symbol()),
            Expr::IsNull { expr, negated } => {
                write!(f, "({expr} IS {}NULL)", if *negated { "NOT " } else { "" })
            }
            Expr::Function { name, args, over } => {
                let parts: Vec<String> = name.iter().map(|n| ident(n)).collect();
                write!(f, "{}(", parts.join("."))?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    match a {
                        FuncArg::Positional(e) => write!(f, "{e}")?,
                        FuncArg::Named(n, e) => write!(f, "{} := {e}", ident(n))?,
                    }
                }
                f.write_str(")")?;
                if *over {
                    f.write_str(" OVER ()")?;
                }
                Ok(())
            }
            Expr::Map(entries) => {
                f.write_str("{")?;
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}: {v}", quote_str(k))?;
                }
                f.write_str("}")
            }
            Expr::Cast { expr, ty } => write!(f, "({expr})::{ty}"),
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableRef::Named { name, alias } => {
                f.write_str(&ident(name))?;
                if let Some(a) = alias {
                    write!(f, " AS {}", ident(a))?;
                }
                Ok(())
            }
            TableRef::Function { name, alias } => {
                write!(f, "{}()", ident(name))?;
                if let Some(a) = alias {
                    write!(f, " AS {}", ident(a))?;
                }
                Ok(())
            }
            TableRef::Join {
                left,
                right,
                kind,
                on,
            } => {
                let kw = match kind {
                    JoinKind::Inner => "INNER JOIN",
                    JoinKind::FullOuter => "FULL OUTER JOIN",
                    JoinKind::Cross => "CROSS JOIN",
                };
                // right operands are always atomic in this grammar
                write!(f, "{left} {kw} {right}")?;
                if let Some(on) = on {
                    write!(f, " ON {on}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.projection.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match item {
                SelectItem::Wildcard => f.write_str("*")?,
                SelectItem::QualifiedWildcard(q) => write!(f, "{}.*", ident(q))?,
                SelectItem::Expr { expr, alias } => {
                    write!(f, "{expr}")?;
                    if let Some(a) = alias {
                        write!(f, " AS {}", ident(a))?;
                    }
                }
            }
        }
        if let Some(from) = &self.from {
            write!(f, " FROM {from}")?;
        }
        if let Some(w) = &self.selection {
            write!(f, " WHERE {w}")?;
        }
        if !self.group_by.is_empty() {
            f.write_str(" GROUP BY ")?;
            for (i, g) in self.group_by.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{g}")?;
            }
        }
        if !self.order_by.is_empty() {
            f.write_str(" ORDER BY ")?;
            for (i, o) in self.order_by.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}{}", o.expr, if o.desc { " DESC" } else { "" })?;
            }
        }
        if let Some(l) = self.limit {
            write!(f, " LIMIT {l}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.ctes.is_empty() {
            f.write_str("WITH ")?;
            for (i, cte) in self.ctes.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{} AS ({})", ident(&cte.name), cte.query)?;
            }
            f.write_str(" ")?;
        }
        write!(f, "{}", self.body)
    }
}

fn scope_prefix(scope: &Option<Scope>) -> &'static str {
    match scope {
        Some(Scope::Global) => "GLOBAL ",
        Some(Scope::Local) => "LOCAL ",
        None => "",
    }
}

impl fmt::Display for ModelDdl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}MODEL({}, {}, {}",
            scope_prefix(&self.scope),
            quote_str(&self.name),
            quote_str(&self.model_id),
            quote_str(&self.provider)
        )?;
        if !self.options.is_empty() {
            f.write_str(", {")?;
            for (i, (k, v)) in self.options.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{}: {v}", quote_str(k))?;
            }
            f.write_str("}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for PromptDdl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}PROMPT({}, {})",
            scope_prefix(&self.scope),
            quote_str(&self.name),
            quote_str(&self.text)
        )
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statement::Select(q) => write!(f, "{q}"),
            Statement::CreateModel(m) => write!(f, "CREATE {m}"),
            Statement::CreatePrompt(p) => write!(f, "CREATE {p}"),
            Statement::UpdateModel(m) => write!(f, "UPDATE {m}"),
            Statement::UpdatePrompt(p) => write!(f, "UPDATE {p}"),
            Statement::DeleteResource { kind, scope, name } => {
                write!(
                    f,
                    "DELETE {}{kind}({})",
                    scope_prefix(scope),
                    quote_str(name)
                )
            }
            Statement::CreateTableFromFile { name, path } => {
                write!(
                    f,
                    "CREATE TABLE {} AS FROM {}",
                    ident(name),
                    quote_str(path)
                )
            }
            Statement::CreateFtsIndex {
                table,
                id_column,
                text_column,
            } => write!(
                f,
                "CREATE FTS INDEX ON {}({}, {})",
                ident(table),
                ident(id_column),
                ident(text_column)
            ),
            Statement::Ask { question } => write!(f, "ASK {}", quote_str(question)),
        }
    }
}
