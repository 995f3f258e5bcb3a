//! Logical plans: an arena of nodes with bound expressions.
//!
//! Node ids are arena indices assigned in binding order, so the same query
//! text and catalog always yield the same ids.

mod binder;
mod expr;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub use binder::{bind_query, CatalogResolver, FtsIndexInfo, ResourceResolver, SchemaProvider};
pub use expr::{display_expr, expr_type, BoundExpr, ScalarBuiltin};

use crate::catalog::{ModelResource, ResourceKind};
use crate::functions::{ResolvedPrompt, SemanticFunction};
use crate::sql::ast::JoinKind;
use crate::value::DataType;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BindError {
    #[error("{0}")]
    Binding(String),
    #[error("unknown {kind} '{name}'{}", version.map(|v| alloc::format!(" version {v}")).unwrap_or_default())]
    UnknownResource {
        kind: ResourceKind,
        name: String,
        version: Option<u32>,
    },
    #[error("{0}")]
    MisplacedAggregate(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl BindError {
    pub fn code(&self) -> &'static str {
        match self {
            BindError::Binding(_) => "binding_error",
            BindError::UnknownResource { .. } => "unknown_resource",
            BindError::MisplacedAggregate(_) => "misplaced_aggregate",
            BindError::Unsupported(_) => "unsupported",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnInfo {
    pub qualifier: Option<String>,
    pub name: String,
    pub ty: DataType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanSource {
    Table(String),
    /// `flock_models()`
    Models,
    /// `flock_prompts()`
    Prompts,
    /// One row without columns, for `SELECT` without `FROM`.
    SingleRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    Count,
    CountStar,
    Sum,
    Min,
    Max,
    Avg,
    /// Value of the first row of the group.
    First,
}

impl AggFunc {
    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Count | AggFunc::CountStar => "count",
            AggFunc::Sum => "sum",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Avg => "avg",
            AggFunc::First => "first",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggCall {
    pub func: AggFunc,
    pub arg: Option<BoundExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowFunc {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SortKey {
    pub expr: BoundExpr,
    pub desc: bool,
}

/// A resolved semantic function call. `args` are evaluated against the
/// node's input and labelled with `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmCall {
    pub function: SemanticFunction,
    pub model: ModelResource,
    pub prompt: Option<ResolvedPrompt>,
    pub labels: Vec<String>,
    pub args: Vec<BoundExpr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Scan {
        source: ScanSource,
    },
    CteRef {
        cte: usize,
        name: String,
    },
    Filter {
        predicate: BoundExpr,
    },
    Project {
        exprs: Vec<BoundExpr>,
    },
    /// Equality join; keys are bound against the respective child.
    Join {
        kind: JoinKind,
        left_keys: Vec<BoundExpr>,
        right_keys: Vec<BoundExpr>,
    },
    Aggregate {
        group_by: Vec<BoundExpr>,
        aggs: Vec<AggCall>,
    },
    /// Appends `func(arg) OVER ()` to every row.
    Window {
        func: WindowFunc,
        arg: BoundExpr,
    },
    Sort {
        keys: Vec<SortKey>,
    },
    Limit {
        count: u64,
    },
    /// Appends one LLM output per row.
    LlmScalar {
        call: LlmCall,
    },
    /// Appends the LLM output of each row's group to every row of the group.
    LlmAggregate {
        call: LlmCall,
        group_by: Vec<BoundExpr>,
    },
    /// Appends the BM25 score of the row's document, NULL when it does not
    /// match.
    FtsMatch {
        table: String,
        id_expr: BoundExpr,
        query: String,
    },
    /// Pass-through marking a query generated from a question.
    Ask {
        question: String,
    },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Scan { .. } => "Scan",
            NodeKind::CteRef { .. } => "CteRef",
            NodeKind::Filter { .. } => "Filter",
            NodeKind::Project { .. } => "Project",
            NodeKind::Join { .. } => "Join",
            NodeKind::Aggregate { .. } => "Aggregate",
            NodeKind::Window { .. } => "Window",
            NodeKind::Sort { .. } => "Sort",
            NodeKind::Limit { .. } => "Limit",
            NodeKind::LlmScalar { .. } => "LlmScalar",
            NodeKind::LlmAggregate { .. } => "LlmAggregate",
            NodeKind::FtsMatch { .. } => "FtsMatch",
            NodeKind::Ask { .. } => "Ask",
        }
    }

    pub fn llm_call(&self) -> Option<&LlmCall> {
        match self {
            NodeKind::LlmScalar { call } | NodeKind::LlmAggregate { call, .. } => Some(call),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub children: Vec<NodeId>,
    pub schema: Vec<ColumnInfo>,
}

impl PlanNode {
    /// One-line description for plan exports.
    pub fn detail(&self, plan: &LogicalPlan) -> String {
        let input = |i: usize| {
            self.children
                .get(i)
                .map(|c| plan.nodes[*c].schema.as_slice())
                .unwrap_or(&[])
        };
        let list = |exprs: &[BoundExpr], schema: &[ColumnInfo]| {
            exprs
                .iter()
                .map(|e| display_expr(e, schema))
                .collect::<Vec<_>>()
                .join(", ")
        };
        match &self.kind {
            NodeKind::Scan { source } => match source {
                ScanSource::Table(t) => t.clone(),
                ScanSource::Models => "flock_models()".into(),
                ScanSource::Prompts => "flock_prompts()".into(),
                ScanSource::SingleRow => "single row".into(),
            },
            NodeKind::CteRef { name, .. } => name.clone(),
            NodeKind::Filter { predicate } => display_expr(predicate, input(0)),
            NodeKind::Project { exprs } => list(exprs, input(0)),
            NodeKind::Join {
                kind,
                left_keys,
                right_keys,
            } => {
                let kind = match kind {
                    JoinKind::Inner => "INNER",
                    JoinKind::FullOuter => "FULL OUTER",
                    JoinKind::Cross => "CROSS",
                };
                let keys: Vec<String> = left_keys
                    .iter()
                    .zip(right_keys)
                    .map(|(l, r)| {
                        alloc::format!(
                            "{} = {}",
                            display_expr(l, input(0)),
                            display_expr(r, input(1))
                        )
                    })
                    .collect();
                if keys.is_empty() {
                    kind.to_string()
                } else {
                    alloc::format!("{kind} ON {}", keys.join(" AND "))
                }
            }
            NodeKind::Aggregate { group_by, aggs } => {
                let aggs: Vec<String> = aggs
                    .iter()
                    .map(|a| match &a.arg {
                        Some(e) => {
                            alloc::format!("{}({})", a.func.name(), display_expr(e, input(0)))
                        }
                        None => alloc::format!("{}(*)", a.func.name()),
                    })
                    .collect();
                alloc::format!(
                    "group by [{}] aggs [{}]",
                    list(group_by, input(0)),
                    aggs.join(", ")
                )
            }
            NodeKind::Window { func, arg } => {
                let f = match func {
                    WindowFunc::Max => "max",
                    WindowFunc::Min => "min",
                };
                alloc::format!("{f}({}) OVER ()", display_expr(arg, input(0)))
            }
            NodeKind::Sort { keys } => keys
                .iter()
                .map(|k| {
                    alloc::format!(
                        "{} {}",
                        display_expr(&k.expr, input(0)),
                        if k.desc { "DESC" } else { "ASC" }
                    )
                })
                .collect::<Vec<_>>()
                .join(", "),
            NodeKind::Limit { count } => alloc::format!("{count}"),
            NodeKind::LlmScalar { call } | NodeKind::LlmAggregate { call, .. } => {
                let tuple: Vec<String> = call
                    .labels
                    .iter()
                    .zip(&call.args)
                    .map(|(l, e)| alloc::format!("{l}: {}", display_expr(e, input(0))))
                    .collect();
                alloc::format!(
                    "{}(model {}, tuple {{{}}})",
                    call.function.name(),
                    call.model.model_id,
                    tuple.join(", ")
                )
            }
            NodeKind::FtsMatch {
                table,
                id_expr,
                query,
            } => alloc::format!(
                "match_bm25 on {table}({}) for '{query}'",
                display_expr(id_expr, input(0))
            ),
            NodeKind::Ask { question } => question.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtePlan {
    pub name: String,
    pub root: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalPlan {
    pub nodes: Vec<PlanNode>,
    pub ctes: Vec<CtePlan>,
    pub root: NodeId,
}

impl LogicalPlan {
    pub fn output(&self) -> &[ColumnInfo] {
        &self.nodes[self.root].schema
    }

    pub fn node(&self, id: NodeId) -> &PlanNode {
        &self.nodes[id]
    }

    pub fn llm_nodes(&self) -> impl Iterator<Item = &PlanNode> {
        self.nodes.iter().filter(|n| n.kind.llm_call().is_some())
    }

    /// Wraps the plan in an `Ask` node.
    pub fn with_ask(mut self, question: &str) -> Self {
        let id = self.nodes.len();
        let schema = self.output().to_vec();
        self.nodes.push(PlanNode {
            id,
            kind: NodeKind::Ask {
                question: question.to_string(),
            },
            children: alloc::vec![self.root],
            schema,
        });
        self.root = id;
        self
    }
}

impl fmt::Display for LogicalPlan {
    /// Indented tree, CTEs first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(
            plan: &LogicalPlan,
            id: NodeId,
            depth: usize,
            f: &mut fmt::Formatter<'_>,
        ) -> fmt::Result {
            let node = &plan.nodes[id];
            writeln!(
                f,
                "{:indent$}#{} {} {}",
                "",
                node.id,
                node.kind.name(),
                node.detail(plan),
                indent = depth * 2
            )?;
            for c in &node.children {
                walk(plan, *c, depth + 1, f)?;
            }
            Ok(())
        }
        for cte in &self.ctes {
            writeln!(f, "WITH {}:", cte.name)?;
            walk(self, cte.root, 1, f)?;
        }
        walk(self, self.root, 0, f)
    }
}
