use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::eval::{binary, eval, is_true, EvalError, Relation};
use super::{Database, EffectiveSettings, ExecStats, LlmStats, NodeStats, Overrides, QueryResult};
use crate::catalog::{Catalog, ResourceKind};
use crate::plan::{
    AggCall, AggFunc, BoundExpr, LlmCall, LogicalPlan, NodeId, NodeKind, ScanSource, SortKey,
    WindowFunc,
};
use crate::prompt::{PromptError, Tuple};
use crate::sql::ast::{BinaryOp, JoinKind};
use crate::value::{GroupKey, Value};

/// Microsecond timer supplied by the host.
pub trait Clock {
    fn now_us(&self) -> u64;
}

/// Clock that always reads zero.
pub struct NoClock;

impl Clock for NoClock {
    fn now_us(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Provider failure that retries did not resolve.
    #[error("provider error: {0}")]
    Provider(String),
    #[error("{0}")]
    Other(String),
}

/// Runs semantic functions for LLM nodes.
pub trait SemanticBackend {
    /// One output per tuple, aligned with `tuples`.
    fn scalar(
        &self,
        node: NodeId,
        call: &LlmCall,
        settings: &EffectiveSettings,
        tuples: &[Tuple],
    ) -> Result<(Vec<Value>, LlmStats), BackendError>;

    /// One output per group, aligned with `groups`.
    fn aggregate(
        &self,
        node: NodeId,
        call: &LlmCall,
        settings: &EffectiveSettings,
        groups: &[Vec<Tuple>],
    ) -> Result<(Vec<Value>, LlmStats), BackendError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecErrorKind {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Plan(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("node {node}: {kind}")]
pub struct ExecError {
    pub node: NodeId,
    pub kind: ExecErrorKind,
}

pub struct ExecContext<'a> {
    pub db: &'a Database,
    pub catalog: &'a Catalog,
    pub backend: &'a dyn SemanticBackend,
    pub clock: &'a dyn Clock,
    pub overrides: &'a Overrides,
}

/// Executes `plan`. CTEs are materialized once, on first reference.
pub fn execute(plan: &LogicalPlan, ctx: &ExecContext) -> Result<QueryResult, ExecError> {
    let start = ctx.clock.now_us();
    let mut ex = Executor {
        plan,
        ctx,
        ctes: alloc::vec![None; plan.ctes.len()],
        stats: ExecStats::default(),
    };
    let rel = ex.run(plan.root)?;
    let mut stats = ex.stats;
    stats.wall_time_us = ctx.clock.now_us().saturating_sub(start);
    Ok(QueryResult {
        columns: plan
            .output()
            .iter()
            .map(|c| (c.name.clone(), c.ty.clone()))
            .collect(),
        rows: rel.rows(),
        stats,
    })
}

struct Executor<'p, 'c> {
    plan: &'p LogicalPlan,
    ctx: &'c ExecContext<'c>,
    ctes: Vec<Option<Relation>>,
    stats: ExecStats,
}

type Res<T> = Result<T, ExecErrorKind>;

fn eval_all(e: &BoundExpr, rel: &Relation) -> Res<Vec<Value>> {
    (0..rel.len)
        .map(|i| eval(e, rel, i).map_err(ExecErrorKind::from))
        .collect()
}

/// Grouping key; NULLs group together.
fn key_of(exprs: &[BoundExpr], rel: &Relation, row: usize) -> Res<Vec<Option<GroupKey>>> {
    exprs
        .iter()
        .map(|e| Ok(eval(e, rel, row)?.group_key()))
        .collect()
}

/// Row indices per group, groups in order of first appearance.
fn group_rows(exprs: &[BoundExpr], rel: &Relation) -> Res<Vec<Vec<usize>>> {
    let mut index: BTreeMap<Vec<Option<GroupKey>>, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for row in 0..rel.len {
        let k = key_of(exprs, rel, row)?;
        let g = *index.entry(k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(row);
    }
    Ok(groups)
}

fn tuples(call: &LlmCall, rel: &Relation) -> Res<Vec<Tuple>> {
    let cols: Vec<Vec<Value>> = call
        .args
        .iter()
        .map(|a| eval_all(a, rel))
        .collect::<Res<_>>()?;
    Ok((0..rel.len)
        .map(|i| {
            Tuple::new(
                call.labels
                    .iter()
                    .zip(&cols)
                    .map(|(l, c)| (l.clone(), c[i].clone()))
                    .collect(),
            )
        })
        .collect())
}

/// NULLs last ascending and first descending.
fn compare_sort(a: &Value, b: &Value, desc: bool) -> Result<Ordering, EvalError> {
    let ord = match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        _ => a.sql_cmp(b)?.unwrap_or(Ordering::Equal),
    };
    Ok(if desc { ord.reverse() } else { ord })
}

fn aggregate_values(call: &AggCall, rel: &Relation, rows: &[usize]) -> Res<Value> {
    let vals: Vec<Value> = match &call.arg {
        Some(e) => rows
            .iter()
            .map(|&r| eval(e, rel, r))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let non_null = || vals.iter().filter(|v| !v.is_null());
    Ok(match call.func {
        AggFunc::CountStar => Value::Int(rows.len() as i64),
        AggFunc::Count => Value::Int(non_null().count() as i64),
        AggFunc::First => vals.into_iter().next().unwrap_or(Value::Null),
        AggFunc::Sum => {
            let mut acc: Option<Value> = None;
            for v in non_null() {
                acc = Some(match acc {
                    None => binary(BinaryOp::Add, &Value::Int(0), v)?,
                    Some(a) => binary(BinaryOp::Add, &a, v)?,
                });
            }
            acc.unwrap_or(Value::Null)
        }
        AggFunc::Avg => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for v in non_null() {
                sum += v.as_f64().ok_or_else(|| {
                    ExecErrorKind::Plan(alloc::format!("avg of {}", v.data_type()))
                })?;
                n += 1;
            }
            if n == 0 {
                Value::Null
            } else {
                Value::Double(sum / n as f64)
            }
        }
        AggFunc::Min | AggFunc::Max => {
            let want = if call.func == AggFunc::Max {
                Ordering::Greater
            } else {
                Ordering::Less
            };
            let mut best: Option<&Value> = None;
            for v in non_null() {
                best = match best {
                    Some(b) if v.sql_cmp(b).map_err(EvalError::from)? != Some(want) => Some(b),
                    _ => Some(v),
                };
            }
            best.cloned().unwrap_or(Value::Null)
        }
    })
}

impl Executor<'_, '_> {
    fn run(&mut self, id: NodeId) -> Result<Relation, ExecError> {
        let node = &self.plan.nodes[id];
        let mut inputs = Vec::with_capacity(node.children.len());
        for &c in &node.children {
            inputs.push(self.run(c)?);
        }
        if let NodeKind::CteRef { cte, .. } = &node.kind {
            if self.ctes[*cte].is_none() {
                let rel = self.run(self.plan.ctes[*cte].root)?;
                self.ctes[*cte] = Some(rel);
            }
        }
        let start = self.ctx.clock.now_us();
        let mut llm = None;
        let rel = self
            .node(id, inputs, &mut llm)
            .map_err(|kind| ExecError { node: id, kind })?;
        let elapsed = self.ctx.clock.now_us().saturating_sub(start);
        self.stats.nodes.insert(
            id,
            NodeStats {
                rows: rel.len,
                wall_time_us: elapsed,
                llm,
            },
        );
        Ok(rel)
    }

    fn settings(&self, id: NodeId) -> Res<EffectiveSettings> {
        Ok(self.ctx.overrides.settings(id)?)
    }

    fn node(
        &mut self,
        id: NodeId,
        mut inputs: Vec<Relation>,
        llm: &mut Option<LlmStats>,
    ) -> Res<Relation> {
        let node = &self.plan.nodes[id];
        let mut take = || inputs.remove(0);
        match &node.kind {
            NodeKind::Scan { source } => self.scan(source),
            NodeKind::CteRef { cte, .. } => Ok(self.ctes[*cte].clone().expect("materialized")),
            NodeKind::Ask { .. } => Ok(take()),
            NodeKind::Filter { predicate } => {
                let rel = take();
                let mut keep = Vec::new();
                for i in 0..rel.len {
                    if is_true(&eval(predicate, &rel, i)?)? {
                        keep.push(i);
                    }
                }
                Ok(rel.gather(&keep))
            }
            NodeKind::Project { exprs } => {
                let rel = take();
                let cols = exprs
                    .iter()
                    .map(|e| eval_all(e, &rel))
                    .collect::<Res<_>>()?;
                Ok(Relation::new(cols, rel.len))
            }
            NodeKind::Join {
                kind,
                left_keys,
                right_keys,
            } => {
                let left = take();
                let right = take();
                join(*kind, &left, &right, left_keys, right_keys)
            }
            NodeKind::Aggregate { group_by, aggs } => {
                let rel = take();
                let mut groups = group_rows(group_by, &rel)?;
                if groups.is_empty() && group_by.is_empty() {
                    groups.push(Vec::new());
                }
                let mut cols: Vec<Vec<Value>> =
                    alloc::vec![Vec::new(); group_by.len() + aggs.len()];
                for rows in &groups {
                    for (i, g) in group_by.iter().enumerate() {
                        cols[i].push(eval(g, &rel, rows[0])?);
                    }
                    for (j, a) in aggs.iter().enumerate() {
                        cols[group_by.len() + j].push(aggregate_values(a, &rel, rows)?);
                    }
                }
                Ok(Relation::new(cols, groups.len()))
            }
            NodeKind::Window { func, arg } => {
                let mut rel = take();
                let vals = eval_all(arg, &rel)?;
                let call = AggCall {
                    func: match func {
                        WindowFunc::Max => AggFunc::Max,
                        WindowFunc::Min => AggFunc::Min,
                    },
                    arg: Some(BoundExpr::Column(0)),
                };
                let tmp = Relation::new(alloc::vec![vals], rel.len);
                let all: Vec<usize> = (0..rel.len).collect();
                let v = aggregate_values(&call, &tmp, &all)?;
                rel.push_col(alloc::vec![v; rel.len]);
                Ok(rel)
            }
            NodeKind::Sort { keys } => {
                let rel = take();
                sort(rel, keys)
            }
            NodeKind::Limit { count } => {
                let rel = take();
                let n = (*count).min(rel.len as u64) as usize;
                let idx: Vec<usize> = (0..n).collect();
                Ok(rel.gather(&idx))
            }
            NodeKind::LlmScalar { call } => {
                let mut rel = take();
                let settings = self.settings(id)?;
                let tuples = tuples(call, &rel)?;
                let (vals, stats) = if tuples.is_empty() {
                    (Vec::new(), LlmStats::default())
                } else {
                    self.ctx.backend.scalar(id, call, &settings, &tuples)?
                };
                if vals.len() != rel.len {
                    return Err(ExecErrorKind::Plan(alloc::format!(
                        "backend returned {} values for {} rows",
                        vals.len(),
                        rel.len
                    )));
                }
                *llm = Some(stats);
                rel.push_col(vals);
                Ok(rel)
            }
            NodeKind::LlmAggregate { call, group_by } => {
                let mut rel = take();
                let settings = self.settings(id)?;
                let groups = group_rows(group_by, &rel)?;
                let all = tuples(call, &rel)?;
                let grouped: Vec<Vec<Tuple>> = groups
                    .iter()
                    .map(|rows| rows.iter().map(|&r| all[r].clone()).collect())
                    .collect();
                let (vals, stats) = if grouped.is_empty() {
                    (Vec::new(), LlmStats::default())
                } else {
                    self.ctx.backend.aggregate(id, call, &settings, &grouped)?
                };
                if vals.len() != groups.len() {
                    return Err(ExecErrorKind::Plan(alloc::format!(
                        "backend returned {} values for {} groups",
                        vals.len(),
                        groups.len()
                    )));
                }
                let mut col = alloc::vec![Value::Null; rel.len];
                for (rows, v) in groups.iter().zip(vals) {
                    for &r in rows {
                        col[r] = v.clone();
                    }
                }
                *llm = Some(stats);
                rel.push_col(col);
                Ok(rel)
            }
            NodeKind::FtsMatch {
                table,
                id_expr,
                query,
            } => {
                let mut rel = take();
                let fts = self.ctx.db.fts(table).ok_or_else(|| {
                    ExecErrorKind::Plan(alloc::format!("no full-text index on '{table}'"))
                })?;
                let scores = fts.index.search(query);
                let ids = eval_all(id_expr, &rel)?;
                let col = ids
                    .iter()
                    .map(|v| {
                        v.group_key()
                            .and_then(|k| scores.get(&k))
                            .map_or(Value::Null, |s| Value::Double(*s))
                    })
                    .collect();
                rel.push_col(col);
                Ok(rel)
            }
        }
    }

    fn scan(&self, source: &ScanSource) -> Res<Relation> {
        match source {
            ScanSource::SingleRow => Ok(Relation::new(Vec::new(), 1)),
            ScanSource::Table(name) => {
                let t =
                    self.ctx.db.table(name).ok_or_else(|| {
                        ExecErrorKind::Plan(alloc::format!("unknown table '{name}'"))
                    })?;
                Ok(Relation::new(t.data.clone(), t.row_count()))
            }
            ScanSource::Models => {
                let recs = self.ctx.catalog.list(ResourceKind::Model);
                let rows: Vec<Vec<Value>> = recs
                    .iter()
                    .filter_map(|r| r.as_model())
                    .map(|m| {
                        alloc::vec![
                            Value::Text(m.name.clone()),
                            Value::Int(m.version as i64),
                            Value::Text(m.scope.to_string()),
                            Value::Text(m.provider_id.clone()),
                            Value::Text(m.model_id.clone()),
                            Value::Int(m.context_window_tokens as i64),
                            Value::Int(m.max_output_tokens as i64),
                            m.embedding_dimension
                                .map_or(Value::Null, |d| Value::Int(d as i64)),
                            Value::Text(m.created_at.clone()),
                        ]
                    })
                    .collect();
                Ok(from_rows(rows, 9))
            }
            ScanSource::Prompts => {
                let recs = self.ctx.catalog.list(ResourceKind::Prompt);
                let rows: Vec<Vec<Value>> = recs
                    .iter()
                    .filter_map(|r| r.as_prompt())
                    .map(|p| {
                        alloc::vec![
                            Value::Text(p.name.clone()),
                            Value::Int(p.version as i64),
                            Value::Text(p.scope.to_string()),
                            Value::Text(p.text.clone()),
                            Value::Text(p.created_at.clone()),
                        ]
                    })
                    .collect();
                Ok(from_rows(rows, 5))
            }
        }
    }
}

fn from_rows(rows: Vec<Vec<Value>>, width: usize) -> Relation {
    let len = rows.len();
    let mut cols = alloc::vec![Vec::with_capacity(len); width];
    for r in rows {
        for (c, v) in cols.iter_mut().zip(r) {
            c.push(v);
        }
    }
    Relation::new(cols, len)
}

fn sort(rel: Relation, keys: &[SortKey]) -> Res<Relation> {
    let key_cols: Vec<Vec<Value>> = keys
        .iter()
        .map(|k| eval_all(&k.expr, &rel))
        .collect::<Res<_>>()?;
    let mut idx: Vec<usize> = (0..rel.len).collect();
    let mut error = None;
    // Stable: equal keys keep input order.
    idx.sort_by(|&a, &b| {
        for (k, col) in keys.iter().zip(&key_cols) {
            match compare_sort(&col[a], &col[b], k.desc) {
                Ok(Ordering::Equal) => continue,
                Ok(o) => return o,
                Err(e) => {
                    error.get_or_insert(e);
                    return Ordering::Equal;
                }
            }
        }
        Ordering::Equal
    });
    if let Some(e) = error {
        return Err(e.into());
    }
    Ok(rel.gather(&idx))
}

/// Output order: each left row with its matches in right order; for FULL
/// OUTER, unmatched left rows in place and unmatched right rows at the end.
fn join(
    kind: JoinKind,
    left: &Relation,
    right: &Relation,
    left_keys: &[BoundExpr],
    right_keys: &[BoundExpr],
) -> Res<Relation> {
    let mut pairs: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    if kind == JoinKind::Cross {
        for l in 0..left.len {
            for r in 0..right.len {
                pairs.push((Some(l), Some(r)));
            }
        }
    } else {
        let strict =
            |exprs: &[BoundExpr], rel: &Relation, row: usize| -> Res<Option<Vec<GroupKey>>> {
                Ok(key_of(exprs, rel, row)?.into_iter().collect())
            };
        let mut index: BTreeMap<Vec<GroupKey>, Vec<usize>> = BTreeMap::new();
        for r in 0..right.len {
            if let Some(k) = strict(right_keys, right, r)? {
                index.entry(k).or_default().push(r);
            }
        }
        let mut right_matched = alloc::vec![false; right.len];
        for l in 0..left.len {
            let matches = match strict(left_keys, left, l)? {
                Some(k) => index.get(&k).map(Vec::as_slice).unwrap_or(&[]),
                None => &[],
            };
            for &r in matches {
                right_matched[r] = true;
                pairs.push((Some(l), Some(r)));
            }
            if matches.is_empty() && kind == JoinKind::FullOuter {
                pairs.push((Some(l), None));
            }
        }
        if kind == JoinKind::FullOuter {
            for (r, m) in right_matched.iter().enumerate() {
                if !m {
                    pairs.push((None, Some(r)));
                }
            }
        }
    }
    let mut cols = Vec::with_capacity(left.cols.len() + right.cols.len());
    for c in &left.cols {
        cols.push(
            pairs
                .iter()
                .map(|(l, _)| l.map_or(Value::Null, |i| c[i].clone()))
                .collect(),
        );
    }
    for c in &right.cols {
        cols.push(
            pairs
                .iter()
                .map(|(_, r)| r.map_or(Value::Null, |i| c[i].clone()))
                .collect(),
        );
    }
    Ok(Relation::new(cols, pairs.len()))
}
