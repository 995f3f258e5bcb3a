//! HTTP/JSON API over a [`Session`].

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flock_core::engine::{Overrides, PlanExport};
use flock_core::sql::{self, Statement};
use flock_core::{LogicalPlan, Table};
use lru::LruCache;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};

use crate::ask::AskError;
use crate::session::{Outcome, QueryOutput, Session, SessionError};

pub const PLAN_STORE_CAPACITY: usize = 100;
const DEFAULT_PREVIEW_ROWS: usize = 20;

/// A JSON error body `{"error": {"code", "message", ...}}` with a status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub position: Option<(u32, u32)>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
            position: None,
        }
    }

    fn not_found(what: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("{what} not found"),
        )
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e.code() {
            "provider_error" => StatusCode::BAD_GATEWAY,
            "generation_failed" => StatusCode::UNPROCESSABLE_ENTITY,
            "storage_error" => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let mut err = ApiError::new(status, e.code(), e.to_string());
        if let SessionError::Syntax(s) = &e {
            err.position = Some((s.line, s.column));
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some((line, column)) = self.position {
            body["line"] = line.into();
            body["column"] = column.into();
        }
        (self.status, Json(json!({ "error": body }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// What the plan store keeps per run.
#[derive(Debug, Clone)]
pub struct StoredPlan {
    pub sql: String,
    pub generated_by_ask: Option<String>,
    pub plan: LogicalPlan,
    pub overrides: Overrides,
    pub export: PlanExport,
    pub wall_time_ms: f64,
    pub provider_calls: usize,
}

pub struct AppState {
    session: Mutex<Session>,
    plans: Mutex<LruCache<u64, Arc<StoredPlan>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(session: Session) -> Arc<Self> {
        Arc::new(AppState {
            session: Mutex::new(session),
            plans: Mutex::new(LruCache::new(
                NonZeroUsize::new(PLAN_STORE_CAPACITY).expect("non-zero"),
            )),
            next_id: AtomicU64::new(1),
        })
    }

    fn store(&self, plan: StoredPlan) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.plans
            .lock()
            .expect("plan store")
            .put(id, Arc::new(plan));
        id
    }

    fn plan(&self, id: &str) -> Result<(u64, Arc<StoredPlan>), ApiError> {
        let id: u64 = id.parse().map_err(|_| ApiError::not_found("plan"))?;
        let plan = self
            .plans
            .lock()
            .expect("plan store")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("plan"))?;
        Ok((id, plan))
    }

    /// Runs `f` on the session off the async runtime; one at a time.
    async fn with_session<T: Send + 'static>(
        self: &Arc<Self>,
        f: impl FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
    ) -> Result<T, ApiError> {
        let state = Arc::clone(self);
        tokio::task::spawn_blocking(move || {
            let mut session = state.session.lock().unwrap_or_else(|p| p.into_inner());
            f(&mut session)
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/query", post(query))
        .route("/api/ask", post(ask))
        .route("/api/plan/{id}", get(plan))
        .route("/api/plan/{id}/rerun", post(rerun))
        .route("/api/tables", get(tables))
        .route("/api/tables/{name}/preview", get(preview))
        .with_state(state)
}

async fn index() -> Html<&'static str> {
    Html(include_str!("../static/index.html"))
}

#[derive(Debug, Serialize)]
struct ColumnInfo {
    name: String,
    #[serde(rename = "type")]
    data_type: String,
}

#[derive(Debug, Serialize)]
struct RunStats {
    wall_time_ms: f64,
    provider_calls: usize,
    tuples_sent: usize,
    cache_hits: usize,
}

#[derive(Debug, Serialize)]
pub struct QueryResponse {
    plan_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_sql: Option<String>,
    columns: Vec<ColumnInfo>,
    rows: Vec<Vec<JsonValue>>,
    stats: RunStats,
}

fn stored(out: &QueryOutput, generated_by_ask: Option<String>) -> StoredPlan {
    StoredPlan {
        sql: out.sql.clone(),
        generated_by_ask,
        plan: out.plan.clone(),
        overrides: out.overrides.clone(),
        export: out.export.clone(),
        wall_time_ms: out.result.stats.wall_time_us as f64 / 1000.0,
        provider_calls: out.result.stats.provider_calls(),
    }
}

fn respond(state: &AppState, out: QueryOutput, generated: Option<String>) -> QueryResponse {
    let plan_id = state.store(stored(&out, generated.clone()));
    let s = &out.result.stats;
    QueryResponse {
        plan_id,
        generated_sql: generated,
        columns: out
            .result
            .columns
            .iter()
            .map(|(n, t)| ColumnInfo {
                name: n.clone(),
                data_type: t.to_string(),
            })
            .collect(),
        rows: out.rows_json(),
        stats: RunStats {
            wall_time_ms: s.wall_time_us as f64 / 1000.0,
            provider_calls: s.provider_calls(),
            tuples_sent: s.tuples_sent(),
            cache_hits: s.cache_hits(),
        },
    }
}

#[derive(Debug, Deserialize)]
struct QueryRequest {
    sql: String,
    #[serde(default)]
    overrides: Overrides,
}

async fn query(
    State(state): State<Arc<AppState>>,
    body: Result<Json<QueryRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    if req.sql.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "sql is empty",
        ));
    }
    let st = Arc::clone(&state);
    state
        .with_session(move |session| {
            let stmt = sql::parse(&req.sql).map_err(SessionError::from)?;
            let outcome = match stmt {
                Statement::Select(_) => {
                    Outcome::Rows(Box::new(session.query(&req.sql, &req.overrides)?))
                }
                other => session.run_statement(other, req.sql.trim(), &req.overrides)?,
            };
            Ok(match outcome {
                Outcome::Rows(out) => Json(respond(&st, *out, None)).into_response(),
                Outcome::Asked {
                    generated_sql,
                    output,
                } => Json(respond(&st, *output, Some(generated_sql))).into_response(),
                Outcome::Message(m) => Json(json!({ "message": m })).into_response(),
            })
        })
        .await
}

#[derive(Debug, Deserialize)]
struct AskRequest {
    question: String,
    #[serde(default)]
    overrides: Overrides,
}

async fn ask(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> ApiResult<QueryResponse> {
    let Json(req) = body?;
    if req.question.trim().is_empty() {
        return Err(SessionError::Ask(AskError::EmptyQuestion).into());
    }
    let st = Arc::clone(&state);
    state
        .with_session(move |session| {
            let (sql, out) = session.ask(&req.question, &req.overrides)?;
            Ok(Json(respond(&st, out, Some(sql))))
        })
        .await
}

async fn plan(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<JsonValue> {
    let (id, p) = state.plan(&id)?;
    Ok(Json(json!({
        "plan_id": id,
        "sql": p.sql,
        "generated_sql": p.generated_by_ask,
        "overrides": p.overrides,
        "plan": p.export,
    })))
}

#[derive(Debug, Deserialize)]
struct RerunRequest {
    #[serde(default)]
    overrides: Overrides,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    wall_time_ms: f64,
    provider_calls: usize,
}

async fn rerun(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<RerunRequest>, JsonRejection>,
) -> ApiResult<JsonValue> {
    let (id, old) = state.plan(&id)?;
    let Json(req) = body?;
    let st = Arc::clone(&state);
    state
        .with_session(move |session| {
            let out = session.execute_plan(old.plan.clone(), old.sql.clone(), &req.overrides)?;
            let resp = respond(&st, out, old.generated_by_ask.clone());
            let new = RunSummary {
                wall_time_ms: resp.stats.wall_time_ms,
                provider_calls: resp.stats.provider_calls,
            };
            let mut body = serde_json::to_value(&resp).expect("response serializes");
            body["comparison"] = json!({
                "previous_plan_id": id,
                "old": RunSummary {
                    wall_time_ms: old.wall_time_ms,
                    provider_calls: old.provider_calls,
                },
                "new": new,
            });
            Ok(Json(body))
        })
        .await
}

fn columns(t: &Table) -> Vec<ColumnInfo> {
    t.columns
        .iter()
        .map(|(n, ty)| ColumnInfo {
            name: n.clone(),
            data_type: ty.to_string(),
        })
        .collect()
}

async fn tables(State(state): State<Arc<AppState>>) -> ApiResult<JsonValue> {
    state
        .with_session(|session| {
            let list: Vec<JsonValue> = session
                .db
                .tables()
                .map(|t| json!({ "name": t.name, "columns": columns(t), "row_count": t.row_count() }))
                .collect();
            Ok(Json(json!({ "tables": list })))
        })
        .await
}

#[derive(Debug, Deserialize)]
struct PreviewParams {
    limit: Option<usize>,
}

async fn preview(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    Query(params): Query<PreviewParams>,
) -> ApiResult<JsonValue> {
    let limit = params.limit.unwrap_or(DEFAULT_PREVIEW_ROWS);
    state
        .with_session(move |session| {
            let t = session
                .db
                .table(&name)
                .ok_or_else(|| ApiError::not_found("table"))?;
            let rows: Vec<Vec<JsonValue>> = (0..t.row_count().min(limit))
                .map(|i| t.row(i).iter().map(|v| v.to_json()).collect())
                .collect();
            Ok(Json(json!({
                "name": t.name,
                "columns": columns(t),
                "row_count": t.row_count(),
                "rows": rows,
            })))
        })
        .await
}

/// Binds `port` on all interfaces and serves until the process exits.
pub async fn serve(state: Arc<AppState>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(state)).await
}
