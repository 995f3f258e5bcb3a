//! In-memory tables and plan execution.

mod eval;
mod exec;
mod explain;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use eval::{eval, is_true, EvalError, Relation};
pub use exec::{
    execute, BackendError, Clock, ExecContext, ExecError, ExecErrorKind, NoClock, SemanticBackend,
};
pub use explain::{explain, CteExport, LlmDetails, NodeExport, PlanExport};

use crate::batch::BatchMode;
use crate::plan::{FtsIndexInfo, LogicalPlan, NodeId, SchemaProvider};
use crate::prompt::{MetaPromptTemplate, PromptError, SerializationFormat};
use crate::retrieval::{Bm25Index, Bm25Params};
use crate::value::{DataType, GroupKey, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("duplicate column '{0}'")]
    DuplicateColumn(String),
    #[error("row has {actual} values, expected {expected}")]
    RowWidth { expected: usize, actual: usize },
    #[error("unknown table '{0}'")]
    UnknownTable(String),
    #[error("unknown column '{column}' in table '{table}'")]
    UnknownColumn { table: String, column: String },
    #[error("duplicate document id {id} in column '{column}'")]
    DuplicateDocId { column: String, id: String },
}

/// Columnar table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<(String, DataType)>,
    pub data: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: Vec<(String, DataType)>) -> Result<Self, TableError> {
        for (i, (c, _)) in columns.iter().enumerate() {
            if columns[..i].iter().any(|(p, _)| p == c) {
                return Err(TableError::DuplicateColumn(c.clone()));
            }
        }
        let data = alloc::vec![Vec::new(); columns.len()];
        Ok(Table {
            name: name.to_string(),
            columns,
            data,
        })
    }

    pub fn from_rows(
        name: &str,
        columns: Vec<(String, DataType)>,
        rows: Vec<Vec<Value>>,
    ) -> Result<Self, TableError> {
        let mut t = Table::new(name, columns)?;
        for r in rows {
            t.push_row(r)?;
        }
        Ok(t)
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<(), TableError> {
        if row.len() != self.columns.len() {
            return Err(TableError::RowWidth {
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        for (col, v) in self.data.iter_mut().zip(row) {
            col.push(v);
        }
        Ok(())
    }

    pub fn row_count(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.data.iter().map(|c| c[i].clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|(c, _)| c == name)
    }
}

/// BM25 index over one text column, keyed by an id column.
#[derive(Debug, Clone)]
pub struct FtsIndex {
    pub info: FtsIndexInfo,
    pub index: Bm25Index<GroupKey>,
}

#[derive(Debug, Clone, Default)]
pub struct Database {
    tables: BTreeMap<String, Table>,
    fts: BTreeMap<String, FtsIndex>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a table. Replacing drops its full-text index.
    pub fn insert_table(&mut self, table: Table) {
        self.fts.remove(&table.name);
        self.tables.insert(table.name.clone(), table);
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.get(name)
    }

    pub fn tables(&self) -> impl Iterator<Item = &Table> {
        self.tables.values()
    }

    pub fn fts(&self, table: &str) -> Option<&FtsIndex> {
        self.fts.get(table)
    }

    /// Builds a BM25 index over `text_column`. Rows with a NULL id are
    /// skipped; NULL text indexes as an empty document.
    pub fn create_fts_index(
        &mut self,
        table: &str,
        id_column: &str,
        text_column: &str,
    ) -> Result<(), TableError> {
        let t = self
            .tables
            .get(table)
            .ok_or_else(|| TableError::UnknownTable(table.to_string()))?;
        let col = |c: &str| {
            t.column_index(c).ok_or_else(|| TableError::UnknownColumn {
                table: table.to_string(),
                column: c.to_string(),
            })
        };
        let (id_idx, text_idx) = (col(id_column)?, col(text_column)?);
        let mut index = Bm25Index::new(Bm25Params::default());
        for (id, text) in t.data[id_idx].iter().zip(&t.data[text_idx]) {
            let Some(key) = id.group_key() else { continue };
            let text = match text {
                Value::Null => String::new(),
                Value::Text(s) => s.clone(),
                other => other.render(),
            };
            index
                .add(key, &text)
                .map_err(|_| TableError::DuplicateDocId {
                    column: id_column.to_string(),
                    id: id.render(),
                })?;
        }
        self.fts.insert(
            table.to_string(),
            FtsIndex {
                info: FtsIndexInfo {
                    id_column: id_column.to_string(),
                    text_column: text_column.to_string(),
                },
                index,
            },
        );
        Ok(())
    }
}

impl SchemaProvider for Database {
    fn table_schema(&self, name: &str) -> Option<Vec<(String, DataType)>> {
        self.tables.get(name).map(|t| t.columns.clone())
    }

    fn fts_index(&self, table: &str) -> Option<FtsIndexInfo> {
        self.fts.get(table).map(|f| f.info.clone())
    }
}

/// Counters reported by the semantic backend for one LLM node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmStats {
    pub provider_calls: usize,
    pub tuples_sent: usize,
    pub cache_hits: usize,
    pub effective_batch_sizes: Vec<usize>,
    pub warnings: Vec<String>,
    /// Full text of the first prompt sent, if any.
    pub meta_prompt: Option<String>,
}

impl LlmStats {
    pub fn merge(&mut self, other: LlmStats) {
        self.provider_calls += other.provider_calls;
        self.tuples_sent += other.tuples_sent;
        self.cache_hits += other.cache_hits;
        self.effective_batch_sizes
            .extend(other.effective_batch_sizes);
        self.warnings.extend(other.warnings);
        if self.meta_prompt.is_none() {
            self.meta_prompt = other.meta_prompt;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub rows: usize,
    /// Time spent in the node itself, excluding children.
    pub wall_time_us: u64,
    pub llm: Option<LlmStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecStats {
    pub nodes: BTreeMap<NodeId, NodeStats>,
    pub wall_time_us: u64,
}

impl ExecStats {
    pub fn provider_calls(&self) -> usize {
        self.nodes
            .values()
            .filter_map(|n| n.llm.as_ref())
            .map(|l| l.provider_calls)
            .sum()
    }

    pub fn tuples_sent(&self) -> usize {
        self.nodes
            .values()
            .filter_map(|n| n.llm.as_ref())
            .map(|l| l.tuples_sent)
            .sum()
    }

    pub fn cache_hits(&self) -> usize {
        self.nodes
            .values()
            .filter_map(|n| n.llm.as_ref())
            .map(|l| l.cache_hits)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub columns: Vec<(String, DataType)>,
    pub rows: Vec<Vec<Value>>,
    pub stats: ExecStats,
}

impl QueryResult {
    /// Column `i` across all rows.
    pub fn column(&self, i: usize) -> Vec<Value> {
        self.rows.iter().map(|r| r[i].clone()).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<Value>> {
        let i = self.columns.iter().position(|(c, _)| c == name)?;
        Some(self.column(i))
    }
}

/// Inspector settings for LLM nodes. Unset fields fall back to the
/// defaults: `Auto` batching, XML, the built-in meta-prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_mode: Option<BatchMode>,
    #[serde(
        default,
        alias = "serialization_format",
        skip_serializing_if = "Option::is_none"
    )]
    pub format: Option<SerializationFormat>,
    #[serde(
        default,
        alias = "prompt_template",
        skip_serializing_if = "Option::is_none"
    )]
    pub template: Option<String>,
}

impl NodeSettings {
    fn or(&self, fallback: &NodeSettings) -> NodeSettings {
        NodeSettings {
            batch_mode: self.batch_mode.or(fallback.batch_mode),
            format: self.format.or(fallback.format),
            template: self.template.clone().or_else(|| fallback.template.clone()),
        }
    }
}

/// Settings for all LLM nodes plus per-node overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    #[serde(default, flatten)]
    pub default: NodeSettings,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub nodes: BTreeMap<NodeId, NodeSettings>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSettings {
    pub batch_mode: BatchMode,
    pub format: SerializationFormat,
    pub template: Option<MetaPromptTemplate>,
}

impl Overrides {
    pub fn settings(&self, node: NodeId) -> Result<EffectiveSettings, PromptError> {
        let merged = match self.nodes.get(&node) {
            Some(s) => s.or(&self.default),
            None => self.default.clone(),
        };
        Ok(EffectiveSettings {
            batch_mode: merged.batch_mode.unwrap_or_default(),
            format: merged.format.unwrap_or_default(),
            template: merged
                .template
                .as_deref()
                .map(MetaPromptTemplate::parse)
                .transpose()?,
        })
    }

    /// Checks templates and batch sizes, and that per-node entries name LLM
    /// nodes of `plan`.
    pub fn validate(&self, plan: &LogicalPlan) -> Result<(), String> {
        let all = core::iter::once((None, &self.default))
            .chain(self.nodes.iter().map(|(id, s)| (Some(*id), s)));
        for (id, s) in all {
            if let Some(BatchMode::Manual(0)) = s.batch_mode {
                return Err("batch size must be at least 1".into());
            }
            if let Some(t) = &s.template {
                MetaPromptTemplate::parse(t).map_err(|e| e.to_string())?;
            }
            if let Some(id) = id {
                let is_llm = plan
                    .nodes
                    .get(id)
                    .is_some_and(|n| n.kind.llm_call().is_some());
                if !is_llm {
                    return Err(alloc::format!("node {id} is not an LLM node of this plan"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
