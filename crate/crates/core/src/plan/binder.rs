//! Name resolution and lowering of `SELECT` queries into plan nodes.
//!
//! Semantic calls, BM25 matches and windows are pulled out of expressions
//! into their own nodes, each appending one column to its input. Expressions
//! bound earlier stay valid because appending never renumbers columns.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{
    expr_type, AggCall, AggFunc, BindError, BoundExpr, ColumnInfo, CtePlan, LlmCall, LogicalPlan,
    NodeId, NodeKind, PlanNode, ScalarBuiltin, ScanSource, SortKey, WindowFunc,
};
use crate::catalog::{is_valid_name, Catalog, CatalogError, ModelResource, ResourceKind};
use crate::functions::{ModelSpec, PromptSpec, ResolvedPrompt, SemanticFunction};
use crate::sql::ast::{
    BinaryOp, Expr, FuncArg, JoinKind, Literal, Query, Select, SelectItem, TableRef,
};
use crate::value::{DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtsIndexInfo {
    pub id_column: String,
    pub text_column: String,
}

/// Table schemas and full-text indexes visible to a query.
pub trait SchemaProvider {
    fn table_schema(&self, name: &str) -> Option<Vec<(String, DataType)>>;
    fn fts_index(&self, table: &str) -> Option<FtsIndexInfo>;
}

/// Resolves model and prompt arguments of semantic functions.
pub trait ResourceResolver {
    fn model(&self, spec: &ModelSpec) -> Result<ModelResource, BindError>;
    fn prompt(&self, spec: &PromptSpec) -> Result<ResolvedPrompt, BindError>;
}

/// Resolver over a catalog snapshot. Inline model ids are looked up with
/// `inline_model`.
pub struct CatalogResolver<'a, F> {
    pub catalog: &'a Catalog,
    pub inline_model: F,
}

fn catalog_error(e: CatalogError) -> BindError {
    match e {
        CatalogError::NotFound { kind, name } => BindError::UnknownResource {
            kind,
            name,
            version: None,
        },
        CatalogError::VersionNotFound {
            kind,
            name,
            version,
        } => BindError::UnknownResource {
            kind,
            name,
            version: Some(version),
        },
        other => BindError::Binding(other.to_string()),
    }
}

impl<F: Fn(&str) -> Option<ModelResource>> ResourceResolver for CatalogResolver<'_, F> {
    fn model(&self, spec: &ModelSpec) -> Result<ModelResource, BindError> {
        match spec {
            ModelSpec::Inline { model_id } => {
                (self.inline_model)(model_id).ok_or_else(|| BindError::UnknownResource {
                    kind: ResourceKind::Model,
                    name: model_id.clone(),
                    version: None,
                })
            }
            ModelSpec::Named { name, version } => {
                let rec = self
                    .catalog
                    .resolve(ResourceKind::Model, name, *version)
                    .map_err(catalog_error)?;
                Ok(rec.as_model().cloned().expect("model record"))
            }
        }
    }

    fn prompt(&self, spec: &PromptSpec) -> Result<ResolvedPrompt, BindError> {
        match spec {
            PromptSpec::Inline { text } => Ok(ResolvedPrompt {
                text: text.clone(),
                name: None,
                version: None,
            }),
            PromptSpec::Named { name, version } => {
                let rec = self
                    .catalog
                    .resolve(ResourceKind::Prompt, name, *version)
                    .map_err(catalog_error)?;
                let p = rec.as_prompt().expect("prompt record");
                Ok(ResolvedPrompt {
                    text: p.text.clone(),
                    name: Some(p.name.clone()),
                    version: Some(p.version),
                })
            }
        }
    }
}

/// Binds a query into a logical plan.
pub fn bind_query(
    query: &Query,
    schemas: &dyn SchemaProvider,
    resolver: &dyn ResourceResolver,
) -> Result<LogicalPlan, BindError> {
    let mut b = Builder {
        nodes: Vec::new(),
        ctes: Vec::new(),
        visible: Vec::new(),
        from_tables: Vec::new(),
        schemas,
        resolver,
    };
    let root = b.query(query)?;
    Ok(LogicalPlan {
        nodes: b.nodes,
        ctes: b.ctes,
        root,
    })
}

fn err<T>(msg: impl Into<String>) -> Result<T, BindError> {
    Err(BindError::Binding(msg.into()))
}

fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Null => Value::Null,
        Literal::Bool(b) => Value::Bool(*b),
        Literal::Int(i) => Value::Int(*i),
        Literal::Double(d) => Value::Double(*d),
        Literal::String(s) => Value::Text(s.clone()),
    }
}

const AGGREGATES: [&str; 5] = ["count", "sum", "min", "max", "avg"];

fn single_name(name: &[String]) -> Option<&str> {
    match name {
        [n] => Some(n.as_str()),
        _ => None,
    }
}

fn builtin_aggregate(name: &[String]) -> Option<&'static str> {
    let n = single_name(name)?;
    AGGREGATES.into_iter().find(|a| a.eq_ignore_ascii_case(n))
}

fn semantic(name: &[String]) -> Option<SemanticFunction> {
    single_name(name).and_then(SemanticFunction::from_name)
}

fn is_match_bm25(name: &[String]) -> bool {
    name.last()
        .is_some_and(|n| n.eq_ignore_ascii_case("match_bm25"))
}

/// Aggregate call outside a window: builtin or semantic aggregate.
fn is_aggregate_call(e: &Expr) -> bool {
    match e {
        Expr::Function {
            name, over: false, ..
        } => builtin_aggregate(name).is_some() || semantic(name).is_some_and(|f| f.is_aggregate()),
        _ => false,
    }
}

fn children(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Literal(_) | Expr::Column { .. } | Expr::Star => Vec::new(),
        Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } | Expr::Cast { expr, .. } => {
            alloc::vec![expr.as_ref()]
        }
        Expr::Binary { left, right, .. } => alloc::vec![left.as_ref(), right.as_ref()],
        Expr::Function { args, .. } => args
            .iter()
            .map(|a| match a {
                FuncArg::Positional(e) | FuncArg::Named(_, e) => e,
            })
            .collect(),
        Expr::Map(entries) => entries.iter().map(|(_, e)| e).collect(),
    }
}

fn collect_aggregates(e: &Expr, out: &mut Vec<Expr>) {
    if is_aggregate_call(e) {
        if !out.contains(e) {
            out.push(e.clone());
        }
        return;
    }
    for c in children(e) {
        collect_aggregates(c, out);
    }
}

/// Calls that need their own plan node.
fn contains_special(e: &Expr) -> bool {
    if let Expr::Function { name, over, .. } = e {
        if *over
            || builtin_aggregate(name).is_some()
            || semantic(name).is_some()
            || is_match_bm25(name)
        {
            return true;
        }
    }
    children(e).into_iter().any(contains_special)
}

fn output_name(e: &Expr) -> String {
    match e {
        Expr::Column { name, .. } => name.clone(),
        Expr::Function { name, .. } => name.last().cloned().unwrap_or_default(),
        Expr::Cast { expr, .. } => match expr.as_ref() {
            inner @ (Expr::Column { .. } | Expr::Function { .. }) => output_name(inner),
            _ => e.to_string(),
        },
        _ => e.to_string(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Clause {
    Where,
    GroupBy,
    AggregateArg,
    Select,
    OrderBy,
}

impl Clause {
    fn name(self) -> &'static str {
        match self {
            Clause::Where => "WHERE",
            Clause::GroupBy => "GROUP BY",
            Clause::AggregateArg => "an aggregate argument",
            Clause::Select => "SELECT",
            Clause::OrderBy => "ORDER BY",
        }
    }

    fn allows_window(self) -> bool {
        matches!(self, Clause::Select | Clause::OrderBy)
    }
}

struct Grouping {
    pre: NodeId,
    group_ast: Vec<Expr>,
    group_bound: Vec<BoundExpr>,
    aggs: Vec<Expr>,
}

enum Mode<'m> {
    Row(Clause),
    Grouped(&'m Grouping),
}

struct Builder<'a> {
    nodes: Vec<PlanNode>,
    ctes: Vec<CtePlan>,
    /// CTE names in scope, innermost last.
    visible: Vec<(String, usize)>,
    /// Tables scanned by the SELECT being bound, for unqualified `match_bm25`.
    from_tables: Vec<String>,
    schemas: &'a dyn SchemaProvider,
    resolver: &'a dyn ResourceResolver,
}

impl Builder<'_> {
    fn add(&mut self, kind: NodeKind, children: Vec<NodeId>, schema: Vec<ColumnInfo>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(PlanNode {
            id,
            kind,
            children,
            schema,
        });
        id
    }

    fn schema(&self, id: NodeId) -> &[ColumnInfo] {
        &self.nodes[id].schema
    }

    /// Adds a node over `input` that appends one column; returns a reference
    /// to that column.
    fn append(&mut self, input: &mut NodeId, kind: NodeKind, col: ColumnInfo) -> BoundExpr {
        let mut schema = self.schema(*input).to_vec();
        schema.push(col);
        let idx = schema.len() - 1;
        *input = self.add(kind, alloc::vec![*input], schema);
        BoundExpr::Column(idx)
    }

    fn query(&mut self, q: &Query) -> Result<NodeId, BindError> {
        let scope_len = self.visible.len();
        for cte in &q.ctes {
            if self.visible[scope_len..]
                .iter()
                .any(|(n, _)| *n == cte.name)
            {
                return err(alloc::format!("CTE '{}' is defined twice", cte.name));
            }
            let root = self.query(&cte.query)?;
            self.ctes.push(CtePlan {
                name: cte.name.clone(),
                root,
            });
            self.visible.push((cte.name.clone(), self.ctes.len() - 1));
        }
        let saved = core::mem::take(&mut self.from_tables);
        let root = self.select(&q.body);
        self.from_tables = saved;
        self.visible.truncate(scope_len);
        root
    }

    fn table_ref(&mut self, t: &TableRef) -> Result<NodeId, BindError> {
        match t {
            TableRef::Named { name, alias } => {
                let qualifier = Some(alias.clone().unwrap_or_else(|| name.clone()));
                if let Some((_, cte)) = self.visible.iter().rev().find(|(n, _)| n == name) {
                    let cte = *cte;
                    let schema = self
                        .schema(self.ctes[cte].root)
                        .iter()
                        .map(|c| ColumnInfo {
                            qualifier: qualifier.clone(),
                            ..c.clone()
                        })
                        .collect();
                    return Ok(self.add(
                        NodeKind::CteRef {
                            cte,
                            name: name.clone(),
                        },
                        Vec::new(),
                        schema,
                    ));
                }
                let Some(cols) = self.schemas.table_schema(name) else {
                    return err(alloc::format!("unknown table '{name}'"));
                };
                self.from_tables.push(name.clone());
                let schema = cols
                    .into_iter()
                    .map(|(n, ty)| ColumnInfo {
                        qualifier: qualifier.clone(),
                        name: n,
                        ty,
                    })
                    .collect();
                Ok(self.add(
                    NodeKind::Scan {
                        source: ScanSource::Table(name.clone()),
                    },
                    Vec::new(),
                    schema,
                ))
            }
            TableRef::Function { name, alias } => {
                let (source, cols): (ScanSource, &[(&str, DataType)]) =
                    match name.to_ascii_lowercase().as_str() {
                        "flock_models" => (ScanSource::Models, &MODEL_COLUMNS),
                        "flock_prompts" => (ScanSource::Prompts, &PROMPT_COLUMNS),
                        _ => return err(alloc::format!("unknown table function '{name}'")),
                    };
                let qualifier = Some(alias.clone().unwrap_or_else(|| name.clone()));
                let schema = cols
                    .iter()
                    .map(|(n, ty)| ColumnInfo {
                        qualifier: qualifier.clone(),
                        name: (*n).to_string(),
                        ty: ty.clone(),
                    })
                    .collect();
                Ok(self.add(NodeKind::Scan { source }, Vec::new(), schema))
            }
            TableRef::Join {
                left,
                right,
                kind,
                on,
            } => {
                let l = self.table_ref(left)?;
                let r = self.table_ref(right)?;
                let (mut left_keys, mut right_keys) = (Vec::new(), Vec::new());
                let kind = match (kind, on) {
                    (JoinKind::Cross, Some(_)) => {
                        return err("CROSS JOIN takes no ON clause");
                    }
                    (JoinKind::FullOuter, None) => {
                        return err("FULL OUTER JOIN requires an ON clause");
                    }
                    (k, None) => {
                        let _ = k;
                        JoinKind::Cross
                    }
                    (k, Some(on)) => {
                        let mut conjuncts = Vec::new();
                        split_and(on, &mut conjuncts);
                        for c in conjuncts {
                            let (lk, rk) = self.join_key(c, l, r)?;
                            left_keys.push(lk);
                            right_keys.push(rk);
                        }
                        *k
                    }
                };
                let mut schema = self.schema(l).to_vec();
                schema.extend_from_slice(self.schema(r));
                Ok(self.add(
                    NodeKind::Join {
                        kind,
                        left_keys,
                        right_keys,
                    },
                    alloc::vec![l, r],
                    schema,
                ))
            }
        }
    }

    fn join_key(
        &self,
        c: &Expr,
        l: NodeId,
        r: NodeId,
    ) -> Result<(BoundExpr, BoundExpr), BindError> {
        let Expr::Binary {
            op: BinaryOp::Eq,
            left,
            right,
        } = c
        else {
            return Err(BindError::Unsupported(alloc::format!(
                "join condition '{c}' is not an equality"
            )));
        };
        let (ls, rs) = (self.schema(l), self.schema(r));
        if let (Ok(a), Ok(b)) = (bind_plain(ls, left), bind_plain(rs, right)) {
            return Ok((a, b));
        }
        if let (Ok(a), Ok(b)) = (bind_plain(ls, right), bind_plain(rs, left)) {
            return Ok((a, b));
        }
        Err(BindError::Unsupported(alloc::format!(
            "join condition '{c}' must compare a column of each side"
        )))
    }

    fn select(&mut self, s: &Select) -> Result<NodeId, BindError> {
        let mut input = match &s.from {
            Some(t) => self.table_ref(t)?,
            None => self.add(
                NodeKind::Scan {
                    source: ScanSource::SingleRow,
                },
                Vec::new(),
                Vec::new(),
            ),
        };
        let from_width = self.schema(input).len();
        let from_node = input;

        if let Some(pred) = &s.selection {
            let p = self.lower(&mut input, pred, &Mode::Row(Clause::Where))?;
            let schema = self.schema(input).to_vec();
            input = self.add(
                NodeKind::Filter { predicate: p },
                alloc::vec![input],
                schema,
            );
        }

        let mut aggs = Vec::new();
        for item in &s.projection {
            if let SelectItem::Expr { expr, .. } = item {
                collect_aggregates(expr, &mut aggs);
            }
        }
        for o in &s.order_by {
            collect_aggregates(&o.expr, &mut aggs);
        }
        let grouped = !s.group_by.is_empty() || !aggs.is_empty();

        let grouping = if grouped {
            Some(self.aggregate(&mut input, &s.group_by, aggs)?)
        } else {
            None
        };
        let mode = match &grouping {
            Some(g) => Mode::Grouped(g),
            None => Mode::Row(Clause::Select),
        };

        // Projection.
        let mut exprs = Vec::new();
        let mut names: Vec<String> = Vec::new();
        let mut asts: Vec<Option<&Expr>> = Vec::new();
        for item in &s.projection {
            match item {
                SelectItem::Wildcard | SelectItem::QualifiedWildcard(_) => {
                    if grouping.is_some() {
                        return err("'*' cannot be combined with GROUP BY or aggregates");
                    }
                    let q = match item {
                        SelectItem::QualifiedWildcard(q) => Some(q.as_str()),
                        _ => None,
                    };
                    let cols = self.schema(from_node)[..from_width].to_vec();
                    let before = exprs.len();
                    for (i, c) in cols.iter().enumerate() {
                        if q.is_none() || c.qualifier.as_deref() == q {
                            exprs.push(BoundExpr::Column(i));
                            names.push(c.name.clone());
                            asts.push(None);
                        }
                    }
                    if let (Some(q), true) = (q, exprs.len() == before) {
                        return err(alloc::format!("unknown table '{q}' in '{q}.*'"));
                    }
                }
                SelectItem::Expr { expr, alias } => {
                    exprs.push(self.lower(&mut input, expr, &mode)?);
                    names.push(alias.clone().unwrap_or_else(|| output_name(expr)));
                    asts.push(Some(expr));
                }
            }
        }
        let visible = exprs.len();

        // ORDER BY: output names first, then expressions over the input.
        let order_mode = match &grouping {
            Some(g) => Mode::Grouped(g),
            None => Mode::Row(Clause::OrderBy),
        };
        let mut keys = Vec::new();
        for o in &s.order_by {
            let by_name = match &o.expr {
                Expr::Column {
                    qualifier: None,
                    name,
                } => {
                    let hits: Vec<usize> = (0..visible).filter(|i| names[*i] == *name).collect();
                    match hits.as_slice() {
                        [i] => Some(*i),
                        [] => None,
                        _ => return err(alloc::format!("ORDER BY '{name}' is ambiguous")),
                    }
                }
                _ => None,
            };
            let idx = match by_name.or_else(|| asts.iter().position(|a| *a == Some(&o.expr))) {
                Some(i) => i,
                None => {
                    exprs.push(self.lower(&mut input, &o.expr, &order_mode)?);
                    exprs.len() - 1
                }
            };
            keys.push(SortKey {
                expr: BoundExpr::Column(idx),
                desc: o.desc,
            });
        }

        let in_schema = self.schema(input).to_vec();
        let schema: Vec<ColumnInfo> = exprs
            .iter()
            .enumerate()
            .map(|(i, e)| ColumnInfo {
                qualifier: None,
                name: names
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| alloc::format!("#sort{i}")),
                ty: expr_type(e, &in_schema),
            })
            .collect();
        let mut node = self.add(
            NodeKind::Project { exprs },
            alloc::vec![input],
            schema.clone(),
        );
        if !keys.is_empty() {
            node = self.add(NodeKind::Sort { keys }, alloc::vec![node], schema.clone());
        }
        if let Some(n) = s.limit {
            node = self.add(
                NodeKind::Limit { count: n },
                alloc::vec![node],
                schema.clone(),
            );
        }
        if schema.len() > visible {
            let exprs = (0..visible).map(BoundExpr::Column).collect();
            node = self.add(
                NodeKind::Project { exprs },
                alloc::vec![node],
                schema[..visible].to_vec(),
            );
        }
        Ok(node)
    }

    fn aggregate(
        &mut self,
        input: &mut NodeId,
        group_by: &[Expr],
        aggs: Vec<Expr>,
    ) -> Result<Grouping, BindError> {
        let mut group_bound = Vec::new();
        for g in group_by {
            group_bound.push(self.lower(input, g, &Mode::Row(Clause::GroupBy))?);
        }
        let mut calls = Vec::new();
        for a in &aggs {
            let Expr::Function { name, args, .. } = a else {
                unreachable!("collected aggregates are calls")
            };
            if let Some(f) = semantic(name) {
                let call = self.llm_call(input, f, args, &Mode::Row(Clause::AggregateArg))?;
                let ty = f.output_type(call.model.embedding_dimension);
                let col = self.append(
                    input,
                    NodeKind::LlmAggregate {
                        call,
                        group_by: group_bound.clone(),
                    },
                    ColumnInfo {
                        qualifier: None,
                        name: f.name().into(),
                        ty,
                    },
                );
                calls.push(AggCall {
                    func: AggFunc::First,
                    arg: Some(col),
                });
                continue;
            }
            let agg = builtin_aggregate(name).expect("aggregate name");
            let positional: Vec<&Expr> = args
                .iter()
                .map(|a| match a {
                    FuncArg::Positional(e) => Ok(e),
                    FuncArg::Named(n, _) => {
                        err(alloc::format!("{agg} takes no named argument '{n}'"))
                    }
                })
                .collect::<Result<_, _>>()?;
            let call = match (agg, positional.as_slice()) {
                ("count", [Expr::Star]) => AggCall {
                    func: AggFunc::CountStar,
                    arg: None,
                },
                (_, [e]) => {
                    let arg = self.lower(input, e, &Mode::Row(Clause::AggregateArg))?;
                    let func = match agg {
                        "count" => AggFunc::Count,
                        "sum" => AggFunc::Sum,
                        "min" => AggFunc::Min,
                        "max" => AggFunc::Max,
                        _ => AggFunc::Avg,
                    };
                    AggCall {
                        func,
                        arg: Some(arg),
                    }
                }
                _ => return err(alloc::format!("{agg} takes exactly one argument")),
            };
            calls.push(call);
        }

        let pre_schema = self.schema(*input).to_vec();
        let mut schema = Vec::new();
        for (g, b) in group_by.iter().zip(&group_bound) {
            schema.push(match b {
                BoundExpr::Column(i) => pre_schema[*i].clone(),
                _ => ColumnInfo {
                    qualifier: None,
                    name: output_name(g),
                    ty: expr_type(b, &pre_schema),
                },
            });
        }
        for (a, c) in aggs.iter().zip(&calls) {
            let arg_ty = c
                .arg
                .as_ref()
                .map(|e| expr_type(e, &pre_schema))
                .unwrap_or(DataType::Int);
            let ty = match c.func {
                AggFunc::Count | AggFunc::CountStar => DataType::Int,
                AggFunc::Avg => DataType::Double,
                AggFunc::Sum if arg_ty == DataType::Int => DataType::Int,
                AggFunc::Sum => DataType::Double,
                AggFunc::Min | AggFunc::Max | AggFunc::First => arg_ty,
            };
            schema.push(ColumnInfo {
                qualifier: None,
                name: output_name(a),
                ty,
            });
        }
        let pre = *input;
        *input = self.add(
            NodeKind::Aggregate {
                group_by: group_bound.clone(),
                aggs: calls,
            },
            alloc::vec![pre],
            schema,
        );
        Ok(Grouping {
            pre,
            group_ast: group_by.to_vec(),
            group_bound,
            aggs,
        })
    }

    /// Binds `e` over `*input`, adding nodes for semantic calls, BM25
    /// matches and windows.
    fn lower(&mut self, input: &mut NodeId, e: &Expr, mode: &Mode) -> Result<BoundExpr, BindError> {
        if let Mode::Grouped(g) = mode {
            if let Some(i) = g.aggs.iter().position(|a| a == e) {
                return Ok(BoundExpr::Column(g.group_ast.len() + i));
            }
            if let Some(i) = g.group_ast.iter().position(|a| a == e) {
                return Ok(BoundExpr::Column(i));
            }
            if !contains_special(e) {
                if let Ok(b) = bind_plain(self.schema(g.pre), e) {
                    if let Some(i) = g.group_bound.iter().position(|x| *x == b) {
                        return Ok(BoundExpr::Column(i));
                    }
                }
            }
        }
        match e {
            Expr::Literal(l) => Ok(BoundExpr::Literal(literal_value(l))),
            Expr::Column { qualifier, name } => match mode {
                Mode::Row(_) => resolve_column(self.schema(*input), qualifier.as_deref(), name)
                    .map(BoundExpr::Column),
                Mode::Grouped(_) => err(alloc::format!(
                    "column '{e}' must appear in GROUP BY or inside an aggregate"
                )),
            },
            Expr::Star => err("'*' is only valid in COUNT(*)"),
            Expr::Map(_) => err("a map literal is only valid as a semantic function argument"),
            Expr::Unary { op, expr } => Ok(BoundExpr::Unary {
                op: *op,
                expr: Box::new(self.lower(input, expr, mode)?),
            }),
            Expr::Binary { op, left, right } => {
                let l = self.lower(input, left, mode)?;
                let r = self.lower(input, right, mode)?;
                Ok(BoundExpr::Binary {
                    op: *op,
                    left: Box::new(l),
                    right: Box::new(r),
                })
            }
            Expr::IsNull { expr, negated } => Ok(BoundExpr::IsNull {
                expr: Box::new(self.lower(input, expr, mode)?),
                negated: *negated,
            }),
            Expr::Cast { expr, ty } => Ok(BoundExpr::Cast {
                expr: Box::new(self.lower(input, expr, mode)?),
                ty: ty.clone(),
            }),
            Expr::Function { name, args, over } => {
                self.lower_call(input, e, name, args, *over, mode)
            }
        }
    }

    fn lower_call(
        &mut self,
        input: &mut NodeId,
        e: &Expr,
        name: &[String],
        args: &[FuncArg],
        over: bool,
        mode: &Mode,
    ) -> Result<BoundExpr, BindError> {
        let display = name.join(".");
        if over {
            if let Mode::Row(c) = mode {
                if !c.allows_window() {
                    return Err(BindError::MisplacedAggregate(alloc::format!(
                        "window function '{e}' is not allowed in {}",
                        c.name()
                    )));
                }
            }
            let func = match builtin_aggregate(name) {
                Some("max") => WindowFunc::Max,
                Some("min") => WindowFunc::Min,
                _ => {
                    return Err(BindError::Unsupported(alloc::format!(
                        "window function '{display}'; only MAX and MIN OVER () are supported"
                    )))
                }
            };
            let [FuncArg::Positional(arg)] = args else {
                return err(alloc::format!(
                    "{display} OVER () takes exactly one argument"
                ));
            };
            let arg = self.lower(input, arg, mode)?;
            let ty = expr_type(&arg, self.schema(*input));
            return Ok(self.append(
                input,
                NodeKind::Window { func, arg },
                ColumnInfo {
                    qualifier: None,
                    name: display.to_ascii_lowercase(),
                    ty,
                },
            ));
        }
        if is_aggregate_call(e) {
            let where_ = match mode {
                Mode::Row(c) => c.name(),
                Mode::Grouped(_) => "this position",
            };
            return Err(BindError::MisplacedAggregate(alloc::format!(
                "aggregate '{display}' is not allowed in {where_}"
            )));
        }
        if let Some(f) = semantic(name) {
            let call = self.llm_call(input, f, args, mode)?;
            let ty = f.output_type(call.model.embedding_dimension);
            return Ok(self.append(
                input,
                NodeKind::LlmScalar { call },
                ColumnInfo {
                    qualifier: None,
                    name: f.name().into(),
                    ty,
                },
            ));
        }
        if is_match_bm25(name) {
            return self.match_bm25(input, name, args, mode);
        }
        let Some(func) = single_name(name).and_then(ScalarBuiltin::from_name) else {
            return err(alloc::format!("unknown function '{display}'"));
        };
        let mut bound = Vec::new();
        let mut positional = args.iter().peekable();
        // `fusion('rrf', ...)` names its method in a leading literal.
        let func = match (func, positional.peek()) {
            (
                ScalarBuiltin::Fusion(_),
                Some(FuncArg::Positional(Expr::Literal(Literal::String(m)))),
            ) if single_name(name).is_some_and(|n| n.eq_ignore_ascii_case("fusion")) => {
                let m = m
                    .parse()
                    .map_err(|e: crate::fusion::FusionError| BindError::Binding(e.to_string()))?;
                positional.next();
                ScalarBuiltin::Fusion(m)
            }
            (f, _) => f,
        };
        for a in positional {
            match a {
                FuncArg::Positional(x) => bound.push(self.lower(input, x, mode)?),
                FuncArg::Named(n, _) => {
                    return err(alloc::format!("{display} takes no named argument '{n}'"))
                }
            }
        }
        let arity_ok = match func {
            ScalarBuiltin::Fusion(_) | ScalarBuiltin::Coalesce => !bound.is_empty(),
            ScalarBuiltin::CosineSimilarity => bound.len() == 2,
            _ => bound.len() == 1,
        };
        if !arity_ok {
            return err(alloc::format!("wrong number of arguments to {display}"));
        }
        Ok(BoundExpr::Call { func, args: bound })
    }

    fn match_bm25(
        &mut self,
        input: &mut NodeId,
        name: &[String],
        args: &[FuncArg],
        mode: &Mode,
    ) -> Result<BoundExpr, BindError> {
        let table = match name {
            [schema, _] => match schema.strip_prefix("fts_main_") {
                Some(t) => t.to_string(),
                None => return err(alloc::format!("'{schema}' is not a full-text index schema")),
            },
            _ => match self
                .from_tables
                .iter()
                .find(|t| self.schemas.fts_index(t).is_some())
            {
                Some(t) => t.clone(),
                None => return err("match_bm25 needs a table with a full-text index in FROM"),
            },
        };
        let Some(info) = self.schemas.fts_index(&table) else {
            return err(alloc::format!("no full-text index on table '{table}'"));
        };
        let mut positional = Vec::new();
        for a in args {
            match a {
                FuncArg::Positional(e) => positional.push(e),
                FuncArg::Named(n, Expr::Literal(Literal::String(v))) if n == "fields" => {
                    if *v != info.text_column {
                        return err(alloc::format!(
                            "the index on '{table}' covers '{}', not '{v}'",
                            info.text_column
                        ));
                    }
                }
                FuncArg::Named(n, _) => {
                    return err(alloc::format!("match_bm25 takes no named argument '{n}'"))
                }
            }
        }
        let [id, Expr::Literal(Literal::String(query))] = positional.as_slice() else {
            return err("match_bm25 expects (id_column, 'query text')");
        };
        let id_expr = self.lower(input, id, mode)?;
        Ok(self.append(
            input,
            NodeKind::FtsMatch {
                table,
                id_expr,
                query: query.clone(),
            },
            ColumnInfo {
                qualifier: None,
                name: "match_bm25".into(),
                ty: DataType::Double,
            },
        ))
    }

    fn llm_call(
        &mut self,
        input: &mut NodeId,
        f: SemanticFunction,
        args: &[FuncArg],
        mode: &Mode,
    ) -> Result<LlmCall, BindError> {
        let maps: Vec<&Vec<(String, Expr)>> = args
            .iter()
            .map(|a| match a {
                FuncArg::Positional(Expr::Map(m)) => Ok(m),
                _ => err(alloc::format!(
                    "{} arguments must be map literals like {{'key': value}}",
                    f.name()
                )),
            })
            .collect::<Result<_, _>>()?;
        if maps.len() != f.arity() {
            return err(alloc::format!(
                "{} takes {} arguments, got {}",
                f.name(),
                f.arity(),
                maps.len()
            ));
        }
        let model = self.resolver.model(&model_spec(maps[0])?)?;
        if f == SemanticFunction::Embedding && model.embedding_dimension.is_none() {
            return err(alloc::format!(
                "model '{}' has no embedding dimension",
                model.model_id
            ));
        }
        let prompt = if f.takes_prompt() {
            Some(self.resolver.prompt(&prompt_spec(maps[1])?)?)
        } else {
            None
        };
        let tuple = maps[maps.len() - 1];
        if tuple.is_empty() {
            return err(alloc::format!(
                "{} needs at least one tuple column",
                f.name()
            ));
        }
        let mut labels: Vec<String> = Vec::new();
        let mut bound = Vec::new();
        for (label, e) in tuple {
            if labels.contains(label) {
                return err(alloc::format!("duplicate tuple label '{label}'"));
            }
            if !is_label(label) {
                return err(alloc::format!(
                    "tuple label '{label}' must be a plain identifier"
                ));
            }
            labels.push(label.clone());
            bound.push(self.lower(input, e, mode)?);
        }
        Ok(LlmCall {
            function: f,
            model,
            prompt,
            labels,
            args: bound,
        })
    }
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn map_string<'m>(map: &'m [(String, Expr)], key: &str) -> Result<Option<&'m str>, BindError> {
    match map.iter().find(|(k, _)| k == key) {
        None => Ok(None),
        Some((_, Expr::Literal(Literal::String(s)))) => Ok(Some(s)),
        Some(_) => err(alloc::format!("'{key}' must be a string literal")),
    }
}

fn map_version(map: &[(String, Expr)]) -> Result<Option<u32>, BindError> {
    match map.iter().find(|(k, _)| k == "version") {
        None => Ok(None),
        Some((_, Expr::Literal(Literal::Int(v)))) if *v >= 1 && *v <= u32::MAX as i64 => {
            Ok(Some(*v as u32))
        }
        Some((_, Expr::Literal(Literal::String(s)))) => match s.parse::<u32>() {
            Ok(v) if v >= 1 => Ok(Some(v)),
            _ => err(alloc::format!("invalid version '{s}'")),
        },
        Some(_) => err("'version' must be a positive integer"),
    }
}

fn check_keys(map: &[(String, Expr)], allowed: &[&str], what: &str) -> Result<(), BindError> {
    for (k, _) in map {
        if !allowed.contains(&k.as_str()) {
            return err(alloc::format!("unknown key '{k}' in {what} argument"));
        }
    }
    Ok(())
}

fn model_spec(map: &[(String, Expr)]) -> Result<ModelSpec, BindError> {
    check_keys(map, &["model", "model_name", "version"], "model")?;
    let version = map_version(map)?;
    match (map_string(map, "model")?, map_string(map, "model_name")?) {
        (Some(id), None) if version.is_none() => Ok(ModelSpec::Inline {
            model_id: id.to_string(),
        }),
        (Some(_), None) => err("'version' applies only to 'model_name'"),
        (None, Some(name)) if is_valid_name(name) => Ok(ModelSpec::Named {
            name: name.to_string(),
            version,
        }),
        (None, Some(name)) => err(alloc::format!("invalid model name '{name}'")),
        _ => err("model argument needs exactly one of 'model' or 'model_name'"),
    }
}

fn prompt_spec(map: &[(String, Expr)]) -> Result<PromptSpec, BindError> {
    check_keys(map, &["prompt", "prompt_name", "version"], "prompt")?;
    let version = map_version(map)?;
    match (map_string(map, "prompt")?, map_string(map, "prompt_name")?) {
        (Some(text), None) if version.is_none() => Ok(PromptSpec::Inline {
            text: text.to_string(),
        }),
        (Some(_), None) => err("'version' applies only to 'prompt_name'"),
        (None, Some(name)) if is_valid_name(name) => Ok(PromptSpec::Named {
            name: name.to_string(),
            version,
        }),
        (None, Some(name)) => err(alloc::format!("invalid prompt name '{name}'")),
        _ => err("prompt argument needs exactly one of 'prompt' or 'prompt_name'"),
    }
}

fn split_and<'e>(e: &'e Expr, out: &mut Vec<&'e Expr>) {
    match e {
        Expr::Binary {
            op: BinaryOp::And,
            left,
            right,
        } => {
            split_and(left, out);
            split_and(right, out);
        }
        other => out.push(other),
    }
}

fn resolve_column(
    schema: &[ColumnInfo],
    qualifier: Option<&str>,
    name: &str,
) -> Result<usize, BindError> {
    let hits: Vec<usize> = schema
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            c.name == name && (qualifier.is_none() || c.qualifier.as_deref() == qualifier)
        })
        .map(|(i, _)| i)
        .collect();
    let shown = match qualifier {
        Some(q) => alloc::format!("{q}.{name}"),
        None => name.to_string(),
    };
    match hits.as_slice() {
        [i] => Ok(*i),
        [] => err(alloc::format!("unknown column '{shown}'")),
        _ => err(alloc::format!("column reference '{shown}' is ambiguous")),
    }
}

/// Binds an expression without semantic calls, windows or aggregates.
fn bind_plain(schema: &[ColumnInfo], e: &Expr) -> Result<BoundExpr, BindError> {
    Ok(match e {
        Expr::Literal(l) => BoundExpr::Literal(literal_value(l)),
        Expr::Column { qualifier, name } => {
            BoundExpr::Column(resolve_column(schema, qualifier.as_deref(), name)?)
        }
        Expr::Unary { op, expr } => BoundExpr::Unary {
            op: *op,
            expr: Box::new(bind_plain(schema, expr)?),
        },
        Expr::Binary { op, left, right } => BoundExpr::Binary {
            op: *op,
            left: Box::new(bind_plain(schema, left)?),
            right: Box::new(bind_plain(schema, right)?),
        },
        Expr::IsNull { expr, negated } => BoundExpr::IsNull {
            expr: Box::new(bind_plain(schema, expr)?),
            negated: *negated,
        },
        Expr::Cast { expr, ty } => BoundExpr::Cast {
            expr: Box::new(bind_plain(schema, expr)?),
            ty: ty.clone(),
        },
        Expr::Function {
            name,
            args,
            over: false,
        } => {
            let Some(func) = single_name(name).and_then(ScalarBuiltin::from_name) else {
                return err(alloc::format!("'{e}' is not a plain scalar expression"));
            };
            let args = args
                .iter()
                .map(|a| match a {
                    FuncArg::Positional(x) => bind_plain(schema, x),
                    FuncArg::Named(..) => err("unexpected named argument"),
                })
                .collect::<Result<_, _>>()?;
            BoundExpr::Call { func, args }
        }
        _ => return err(alloc::format!("'{e}' is not a plain scalar expression")),
    })
}

const MODEL_COLUMNS: [(&str, DataType); 9] = [
    ("name", DataType::Text),
    ("version", DataType::Int),
    ("scope", DataType::Text),
    ("provider", DataType::Text),
    ("model_id", DataType::Text),
    ("context_window", DataType::Int),
    ("max_output_tokens", DataType::Int),
    ("embedding_dimension", DataType::Int),
    ("created_at", DataType::Text),
];

const PROMPT_COLUMNS: [(&str, DataType); 5] = [
    ("name", DataType::Text),
    ("version", DataType::Int),
    ("scope", DataType::Text),
    ("text", DataType::Text),
    ("created_at", DataType::Text),
];
