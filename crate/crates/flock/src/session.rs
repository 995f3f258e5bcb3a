//! A workspace: loaded tables, the catalog, the runtime, and statement
//! execution.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use flock_core::catalog::{
    Catalog, CatalogError, ModelDefinition, ModelParams, ModelResource, PromptDefinition,
    ResourceDefinition, ResourceKind, Scope,
};
use flock_core::engine::{
    execute, explain, BackendError, Clock, ExecContext, ExecError, ExecErrorKind, Overrides,
    PlanExport, TableError,
};
use flock_core::plan::{bind_query, BindError, CatalogResolver};
use flock_core::sql::ast::{Literal, ModelDdl, PromptDdl, Query};
use flock_core::sql::{self, Statement, SyntaxError};
use flock_core::{Database, LogicalPlan, QueryResult};

use crate::ask::{self, AskError};
use crate::catalog_store::{CatalogStore, StoreError};
use crate::csv_load::{self, CsvError};
use crate::provider::{
    HttpProvider, MockProvider, Provider, ProviderKind, Registry, RetryPolicy, Retrying,
};
use crate::runtime::{Cache, Runtime};

/// Catalog model used by ASK when present; otherwise [`ASK_DEFAULT_MODEL`].
pub const ASK_MODEL_NAME: &str = "ask";
pub const ASK_DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Bind(#[from] BindError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Ask(#[from] AskError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid overrides: {0}")]
    InvalidOverrides(String),
    #[error("{0}")]
    Invalid(String),
}

impl SessionError {
    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Syntax(_) => "syntax_error",
            SessionError::Bind(b) => b.code(),
            SessionError::Catalog(CatalogError::DuplicateResource { .. }) => "duplicate_resource",
            SessionError::Catalog(
                CatalogError::NotFound { .. } | CatalogError::VersionNotFound { .. },
            ) => "unknown_resource",
            SessionError::Catalog(_) => "invalid_definition",
            SessionError::Exec(e) if is_provider_failure(e) => "provider_error",
            SessionError::Exec(_) => "execution_error",
            SessionError::Ask(AskError::GenerationFailed(_)) => "generation_failed",
            SessionError::Ask(AskError::Provider(_)) => "provider_error",
            SessionError::Ask(_) => "invalid_question",
            SessionError::Csv(_) | SessionError::Table(_) => "load_error",
            SessionError::Store(_) => "storage_error",
            SessionError::InvalidOverrides(_) => "invalid_overrides",
            SessionError::Invalid(_) => "invalid_request",
        }
    }
}

fn is_provider_failure(e: &ExecError) -> bool {
    matches!(e.kind, ExecErrorKind::Backend(BackendError::Provider(_)))
}

struct StdClock(Instant);

impl Clock for StdClock {
    fn now_us(&self) -> u64 {
        self.0.elapsed().as_micros() as u64
    }
}

/// An executed SELECT with its plan and annotated export.
#[derive(Debug, Clone)]
pub struct QueryOutput {
    pub sql: String,
    pub plan: LogicalPlan,
    pub result: QueryResult,
    pub export: PlanExport,
    pub overrides: Overrides,
}

impl QueryOutput {
    /// Rows as untagged JSON values.
    pub fn rows_json(&self) -> Vec<Vec<serde_json::Value>> {
        self.result
            .rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_json()).collect())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Rows(Box<QueryOutput>),
    /// ASK: the generated SQL and its result.
    Asked {
        generated_sql: String,
        output: Box<QueryOutput>,
    },
    Message(String),
}

pub struct SessionConfig {
    /// Base for relative CSV paths and the local `.flock` directory.
    pub workspace: PathBuf,
    pub registry: Registry,
    /// Catalog files; `None` keeps the catalog in memory.
    pub store: Option<CatalogStore>,
    pub runtime: Runtime,
}

impl SessionConfig {
    /// In-memory catalog and cache, every provider served by `mock`.
    pub fn mock(mock: Arc<MockProvider>) -> Self {
        SessionConfig {
            workspace: PathBuf::from("."),
            registry: Registry::builtin(),
            store: None,
            runtime: Runtime::new(Arc::new(Cache::in_memory())).with_fallback(mock),
        }
    }
}

/// Mock provider that embeds with each registry model's dimension.
pub fn registry_mock(registry: &Registry) -> MockProvider {
    registry
        .models
        .iter()
        .filter_map(|m| m.embedding_dimension.map(|d| (m, d)))
        .fold(MockProvider::new(), |mock, (m, d)| {
            mock.with_dimension(&m.model_id, d as usize)
        })
}

/// Runtime with one client per registry provider.
pub fn live_runtime(registry: &Registry, cache: Arc<Cache>) -> Runtime {
    let mut rt = Runtime::new(cache);
    for p in &registry.providers {
        let provider: Arc<dyn Provider> = match p.kind {
            ProviderKind::Mock => Arc::new(registry_mock(registry)),
            ProviderKind::Http => {
                let windows: BTreeMap<String, u32> = registry
                    .models
                    .iter()
                    .filter(|m| m.provider_id == p.provider_id)
                    .map(|m| (m.model_id.clone(), m.context_window_tokens))
                    .collect();
                let http = Arc::new(HttpProvider::new(p.clone(), windows));
                let policy = RetryPolicy {
                    max_retries: p.max_retries,
                    ..RetryPolicy::default()
                };
                Arc::new(Retrying::new(http, policy))
            }
        };
        rt = rt.with_provider(&p.provider_id, provider);
    }
    rt
}

pub struct Session {
    pub db: Database,
    catalog: Catalog,
    store: Option<CatalogStore>,
    registry: Registry,
    runtime: Runtime,
    workspace: PathBuf,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn option_u32(key: &str, lit: &Literal) -> Result<u32, SessionError> {
    match lit {
        Literal::Int(i) if *i > 0 && *i <= u32::MAX as i64 => Ok(*i as u32),
        _ => Err(SessionError::Invalid(format!(
            "option '{key}' must be a positive integer"
        ))),
    }
}

fn option_f64(key: &str, lit: &Literal) -> Result<f64, SessionError> {
    match lit {
        Literal::Int(i) => Ok(*i as f64),
        Literal::Double(d) => Ok(*d),
        _ => Err(SessionError::Invalid(format!(
            "option '{key}' must be a number"
        ))),
    }
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        let catalog = match &config.store {
            Some(s) => s.load()?,
            None => Catalog::new(),
        };
        Ok(Session {
            db: Database::new(),
            catalog,
            store: config.store,
            registry: config.registry,
            runtime: config.runtime,
            workspace: config.workspace,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn runtime(&self) -> &Runtime {
        &self.runtime
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    /// Loads every `*.csv` in `dir` as a table named after the file stem.
    pub fn load_data_dir(&mut self, dir: &Path) -> Result<Vec<String>, SessionError> {
        let io = |source| CsvError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
            .collect();
        paths.sort();
        let mut names = Vec::new();
        for p in paths {
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            self.db.insert_table(csv_load::load_csv(&p, &name)?);
            names.push(name);
        }
        Ok(names)
    }

    fn persist(&self) -> Result<(), SessionError> {
        if let Some(s) = &self.store {
            s.save(&self.catalog)?;
        }
        Ok(())
    }

    /// Runs every statement of `script`, stopping at the first error.
    pub fn run_script(
        &mut self,
        script: &str,
        overrides: &Overrides,
    ) -> Result<Vec<Outcome>, SessionError> {
        let stmts = sql::parse_script(script)?;
        let mut out = Vec::with_capacity(stmts.len());
        for s in stmts {
            out.push(self.run_statement(s, &s_text(script), overrides)?);
        }
        Ok(out)
    }

    /// Runs one statement; `text` is kept as the SQL of SELECT results.
    pub fn run_statement(
        &mut self,
        stmt: Statement,
        text: &str,
        overrides: &Overrides,
    ) -> Result<Outcome, SessionError> {
        match stmt {
            Statement::Select(q) => {
                let out = self.execute_query(&q, text.to_string(), overrides)?;
                Ok(Outcome::Rows(Box::new(out)))
            }
            Statement::CreateModel(ddl) => {
                let scope = ddl.scope.unwrap_or_default();
                let def = self.model_definition(&ddl)?;
                let rec = self.catalog.create(scope, def, now_rfc3339())?;
                self.persist()?;
                Ok(Outcome::Message(format!(
                    "created {scope} MODEL '{}' version {}",
                    rec.name(),
                    rec.version()
                )))
            }
            Statement::CreatePrompt(ddl) => {
                let scope = ddl.scope.unwrap_or_default();
                let rec = self
                    .catalog
                    .create(scope, prompt_definition(&ddl), now_rfc3339())?;
                self.persist()?;
                Ok(Outcome::Message(format!(
                    "created {scope} PROMPT '{}' version {}",
                    rec.name(),
                    rec.version()
                )))
            }
            Statement::UpdateModel(ddl) => {
                let def = self.model_definition(&ddl)?;
                let rec = self.catalog.update(ddl.scope, def, now_rfc3339())?;
                self.persist()?;
                Ok(Outcome::Message(format!(
                    "updated MODEL '{}' to version {}",
                    rec.name(),
                    rec.version()
                )))
            }
            Statement::UpdatePrompt(ddl) => {
                let rec = self
                    .catalog
                    .update(ddl.scope, prompt_definition(&ddl), now_rfc3339())?;
                self.persist()?;
                Ok(Outcome::Message(format!(
                    "updated PROMPT '{}' to version {}",
                    rec.name(),
                    rec.version()
                )))
            }
            Statement::DeleteResource { kind, scope, name } => {
                let scopes = match scope {
                    Some(s) => vec![s],
                    None => vec![Scope::Local, Scope::Global],
                };
                let n: usize = scopes
                    .iter()
                    .map(|s| self.catalog.delete(kind, &name, *s))
                    .sum();
                self.persist()?;
                Ok(Outcome::Message(format!(
                    "deleted {n} version(s) of {kind} '{name}'"
                )))
            }
            Statement::CreateTableFromFile { name, path } => {
                let p = self.workspace.join(&path);
                let table = csv_load::load_csv(&p, &name)?;
                let n = table.row_count();
                self.db.insert_table(table);
                Ok(Outcome::Message(format!("loaded {n} rows into '{name}'")))
            }
            Statement::CreateFtsIndex {
                table,
                id_column,
                text_column,
            } => {
                self.db.create_fts_index(&table, &id_column, &text_column)?;
                Ok(Outcome::Message(format!(
                    "created full-text index on {table}({id_column}, {text_column})"
                )))
            }
            Statement::Ask { question } => {
                let (generated_sql, output) = self.ask(&question, overrides)?;
                Ok(Outcome::Asked {
                    generated_sql,
                    output: Box::new(output),
                })
            }
        }
    }

    fn model_definition(&self, ddl: &ModelDdl) -> Result<ResourceDefinition, SessionError> {
        if self.registry.provider(&ddl.provider).is_err() {
            return Err(CatalogError::InvalidDefinition(format!(
                "unknown provider '{}'",
                ddl.provider
            ))
            .into());
        }
        let known = self.registry.model_metadata(&ddl.model_id).ok();
        let mut def = ModelDefinition {
            name: ddl.name.clone(),
            provider_id: ddl.provider.clone(),
            model_id: ddl.model_id.clone(),
            context_window_tokens: known.map_or(0, |m| m.context_window_tokens),
            max_output_tokens: known.map_or(0, |m| m.max_output_tokens),
            embedding_dimension: known.and_then(|m| m.embedding_dimension),
            params: ModelParams::default(),
        };
        for (key, lit) in &ddl.options {
            match key.as_str() {
                "context_window" | "context_window_tokens" => {
                    def.context_window_tokens = option_u32(key, lit)?
                }
                "max_output" | "max_output_tokens" => def.max_output_tokens = option_u32(key, lit)?,
                "dimension" | "embedding_dimension" => {
                    def.embedding_dimension = Some(option_u32(key, lit)?)
                }
                "temperature" => def.params.temperature = Some(option_f64(key, lit)?),
                "top_p" => def.params.top_p = Some(option_f64(key, lit)?),
                other => {
                    return Err(CatalogError::InvalidDefinition(format!(
                        "unknown model option '{other}'"
                    ))
                    .into())
                }
            }
        }
        if def.context_window_tokens == 0 {
            return Err(CatalogError::InvalidDefinition(format!(
                "model '{}' is not in the provider registry; give 'context_window' and 'max_output'",
                ddl.model_id
            ))
            .into());
        }
        Ok(ResourceDefinition::Model(def))
    }

    /// Binds a query against the loaded tables and the catalog.
    pub fn bind(&self, q: &Query) -> Result<LogicalPlan, SessionError> {
        let resolver = CatalogResolver {
            catalog: &self.catalog,
            inline_model: |id: &str| self.registry.inline_model(id),
        };
        Ok(bind_query(q, &self.db, &resolver)?)
    }

    /// Parses and binds a SELECT.
    pub fn plan(&self, sql_text: &str) -> Result<LogicalPlan, SessionError> {
        match sql::parse(sql_text)? {
            Statement::Select(q) => self.bind(&q),
            _ => Err(SessionError::Invalid("expected a SELECT statement".into())),
        }
    }

    /// Parses, binds and executes a SELECT.
    pub fn query(
        &self,
        sql_text: &str,
        overrides: &Overrides,
    ) -> Result<QueryOutput, SessionError> {
        match sql::parse(sql_text)? {
            Statement::Select(q) => self.execute_query(&q, sql_text.to_string(), overrides),
            _ => Err(SessionError::Invalid("expected a SELECT statement".into())),
        }
    }

    fn execute_query(
        &self,
        q: &Query,
        sql_text: String,
        overrides: &Overrides,
    ) -> Result<QueryOutput, SessionError> {
        let plan = self.bind(q)?;
        self.execute_plan(plan, sql_text, overrides)
    }

    pub fn execute_plan(
        &self,
        plan: LogicalPlan,
        sql_text: String,
        overrides: &Overrides,
    ) -> Result<QueryOutput, SessionError> {
        overrides
            .validate(&plan)
            .map_err(SessionError::InvalidOverrides)?;
        let clock = StdClock(Instant::now());
        let ctx = ExecContext {
            db: &self.db,
            catalog: &self.catalog,
            backend: &self.runtime,
            clock: &clock,
            overrides,
        };
        let result = execute(&plan, &ctx)?;
        let export = explain(&plan, overrides, Some(&result.stats));
        Ok(QueryOutput {
            sql: sql_text,
            plan,
            result,
            export,
            overrides: overrides.clone(),
        })
    }

    fn ask_model(&self) -> ModelResource {
        self.catalog
            .resolve(ResourceKind::Model, ASK_MODEL_NAME, None)
            .ok()
            .and_then(|r| r.as_model().cloned())
            .or_else(|| self.registry.inline_model(ASK_DEFAULT_MODEL))
            .expect("default ASK model is in the registry")
    }

    fn resource_summary(&self) -> String {
        let mut lines = Vec::new();
        for r in self.catalog.list(ResourceKind::Model) {
            if let Some(m) = r.as_model() {
                lines.push(format!(
                    "MODEL '{}' -> {} ({})",
                    m.name, m.model_id, m.provider_id
                ));
            }
        }
        for r in self.catalog.list(ResourceKind::Prompt) {
            if let Some(p) = r.as_prompt() {
                lines.push(format!("PROMPT '{}' v{}: {}", p.name, p.version, p.text));
            }
        }
        lines.dedup();
        lines.join("\n")
    }

    /// Generates SQL for `question` and runs it. Generated SQL must parse
    /// and bind.
    pub fn generate_sql(&self, question: &str) -> Result<String, SessionError> {
        let model = self.ask_model();
        let provider = self
            .runtime
            .provider(&model.provider_id)
            .map_err(|e| SessionError::Invalid(e.to_string()))?;
        let tables: Vec<_> = self.db.tables().collect();
        let validate = |s: &str| -> Result<(), String> {
            ask::parse_select(s)?;
            self.plan(s).map(|_| ()).map_err(|e| e.to_string())
        };
        Ok(ask::generate_ask_sql(
            question,
            &tables,
            &self.resource_summary(),
            &model,
            provider.as_ref(),
            validate,
        )?)
    }

    pub fn ask(
        &self,
        question: &str,
        overrides: &Overrides,
    ) -> Result<(String, QueryOutput), SessionError> {
        let generated = self.generate_sql(question)?;
        let plan = self.plan(&generated)?.with_ask(question);
        let out = self.execute_plan(plan, generated.clone(), overrides)?;
        Ok((generated, out))
    }
}

fn prompt_definition(ddl: &PromptDdl) -> ResourceDefinition {
    ResourceDefinition::Prompt(PromptDefinition {
        name: ddl.name.clone(),
        text: ddl.text.clone(),
    })
}

fn s_text(script: &str) -> String {
    script.trim().to_string()
}
