//! HTTP API under `/api/v1`. Every failure is a JSON `{code, message}` body.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assistant::{Assistant, AssistantError};
use crate::catalog::{Catalog, CatalogError};
use crate::config::{AppConfig, ConfigError};
use crate::corpus::{Corpus, CorpusError};
use crate::index::{IndexError, VectorIndex};
use crate::inverse::{InverseError, JobManager, ParameterSettings};
use crate::llm::{LanguageModel, LlmClient, LlmError};
use crate::query::{self, ExtractError};
use crate::rag::{ComprehensionRequest, Comprehender, RagError};
use crate::router::{QueryRouter, RouterError, RuleSet};
use crate::surrogate::{reference_bundle, BundleError, ModelBundle, Surrogate, SurrogateError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Router(#[from] RouterError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
}

/// JSON error reply.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl ToString) -> Self {
        Self { status, code, message: message.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::EmptyPrompt => Self::new(StatusCode::BAD_REQUEST, "EmptyPrompt", e),
            LlmError::ConnectionFailed(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "ConnectionFailed", e),
            LlmError::ModelNotFound(_) => Self::new(StatusCode::BAD_GATEWAY, "ModelNotFound", e),
            LlmError::MalformedResponse(_) => Self::new(StatusCode::BAD_GATEWAY, "MalformedResponse", e),
            LlmError::DimensionMismatch { .. } => Self::new(StatusCode::BAD_GATEWAY, "DimensionMismatch", e),
            _ => Self::new(StatusCode::BAD_GATEWAY, "LlmError", e),
        }
    }
}

impl From<RouterError> for ApiError {
    fn from(e: RouterError) -> Self {
        match e {
            RouterError::EmptyQuery => Self::new(StatusCode::BAD_REQUEST, "EmptyQuery", e),
            RouterError::UnknownReference(_) => Self::new(StatusCode::NOT_FOUND, "UnknownReference", e),
            RouterError::NoActiveArticle => Self::new(StatusCode::CONFLICT, "NoActiveArticle", e),
            RouterError::InvalidRule { .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "InvalidRule", e),
        }
    }
}

impl From<RagError> for ApiError {
    fn from(e: RagError) -> Self {
        match e {
            RagError::Llm(e) => e.into(),
            RagError::ArticleNotIndexed(_) => Self::new(StatusCode::NOT_FOUND, "ArticleNotIndexed", e),
            RagError::EmptyRetrieval(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "EmptyRetrieval", e),
            RagError::EmptyQuestion => Self::new(StatusCode::BAD_REQUEST, "EmptyQuestion", e),
            RagError::InvalidK => Self::new(StatusCode::BAD_REQUEST, "InvalidK", e),
            RagError::Corpus(CorpusError::MissingText(_)) => Self::new(StatusCode::NOT_FOUND, "MissingText", e),
            RagError::Corpus(_) | RagError::Index(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "IndexError", e),
        }
    }
}

impl From<ExtractError> for ApiError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Llm(e) => e.into(),
            ExtractError::EmptyQuestion => Self::new(StatusCode::BAD_REQUEST, "EmptyQuestion", e),
            ExtractError::TranslationExhausted { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "TranslationExhausted", e),
        }
    }
}

impl From<AssistantError> for ApiError {
    fn from(e: AssistantError) -> Self {
        match e {
            AssistantError::Route(e) => e.into(),
            AssistantError::Extract(e) => e.into(),
            AssistantError::Comprehend(e) => e.into(),
            AssistantError::Llm(e) => e.into(),
        }
    }
}

impl From<InverseError> for ApiError {
    fn from(e: InverseError) -> Self {
        match e {
            InverseError::InvalidSettings(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidSettings", e),
            InverseError::UnknownJob(_) => Self::new(StatusCode::NOT_FOUND, "UnknownJob", e),
            InverseError::Pso(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InfeasibleSpace", e),
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "BadRequest", format!("invalid JSON body: {e}")))
}

/// Everything the handlers share.
#[derive(Clone)]
pub struct AppState {
    pub assistant: Arc<Assistant>,
    pub jobs: JobManager,
    pub catalog: Arc<Catalog>,
}

/// Loads the index from `path`, or builds it from every article with text
/// and writes it there. Build failures leave an empty index; articles are
/// then indexed on first use.
pub async fn load_or_build_index(
    path: &Path,
    corpus: &Corpus,
    llm: &dyn LanguageModel,
    chunk_size: usize,
    chunk_overlap: usize,
) -> Result<Comprehender, ServiceError> {
    if path.is_file() {
        let index = VectorIndex::load(path)?;
        tracing::info!(entries = index.len(), path = %path.display(), "loaded vector index");
        return Ok(Comprehender::new(index).with_chunking(chunk_size, chunk_overlap));
    }
    let comprehender = Comprehender::default().with_chunking(chunk_size, chunk_overlap);
    match build_index(&comprehender, corpus, llm).await {
        Ok(n) => {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|source| IndexError::Io { path: dir.to_path_buf(), source })?;
            }
            comprehender.save(path)?;
            tracing::info!(articles = n, path = %path.display(), "built vector index");
        }
        Err(e) => tracing::warn!("index build skipped, articles will be indexed on demand: {e}"),
    }
    Ok(comprehender)
}

/// Indexes every article whose text file exists. Returns how many were
/// indexed.
pub async fn build_index(comprehender: &Comprehender, corpus: &Corpus, llm: &dyn LanguageModel) -> Result<usize, RagError> {
    let mut n = 0;
    for ref_id in corpus.ref_ids() {
        if corpus.text_path(ref_id).is_some_and(|p| p.is_file()) {
            comprehender.index_article(ref_id, corpus, llm).await?;
            n += 1;
        }
    }
    Ok(n)
}

impl AppState {
    /// Wires every component from `cfg` around the given model client.
    pub async fn build(cfg: &AppConfig, llm: Arc<dyn LanguageModel>) -> Result<Self, ServiceError> {
        let corpus = Arc::new(Corpus::open(&cfg.corpus.dir)?);
        let rules = match &cfg.corpus.rules {
            Some(p) => RuleSet::parse(&std::fs::read_to_string(p).map_err(|source| CorpusError::Io { path: p.clone(), source })?)?,
            None => RuleSet::default(),
        };
        let catalog = Arc::new(match &cfg.corpus.catalog {
            Some(p) => Catalog::load(p)?,
            None => Catalog::default(),
        });
        let bundle = match &cfg.corpus.model_bundle {
            Some(p) => ModelBundle::load(p)?,
            None => reference_bundle(&catalog),
        };
        let surrogate = Arc::new(Surrogate::new(bundle)?);
        let comprehender = Arc::new(
            load_or_build_index(&cfg.corpus.index_path, &corpus, llm.as_ref(), cfg.corpus.chunk_size, cfg.corpus.chunk_overlap)
                .await?,
        );
        let router = QueryRouter::new(rules, corpus.ref_ids().map(str::to_string));
        let assistant = Arc::new(Assistant::new(
            Arc::clone(&corpus),
            router,
            comprehender,
            Arc::clone(&llm),
            cfg.corpus.k,
            Duration::from_secs(cfg.service.session_ttl_secs),
        ));
        let jobs = JobManager::new(
            Arc::clone(&catalog),
            surrogate,
            Some(llm),
            cfg.pso.clone(),
            cfg.service.max_concurrent_jobs,
            cfg.service.job_capacity,
        );
        Ok(Self { assistant, jobs, catalog })
    }
}

#[derive(Deserialize)]
struct ChatBody {
    #[serde(default)]
    session_id: Option<String>,
    query: String,
}

async fn chat(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let body: ChatBody = parse_body(&body)?;
    let session_id = body.session_id.filter(|s| !s.trim().is_empty()).unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    let turn = st.assistant.chat(&session_id, &body.query).await?;
    Ok(Json(turn).into_response())
}

#[derive(Deserialize)]
struct ArticlesQuery {
    dsl: Option<String>,
}

async fn articles(State(st): State<AppState>, Query(q): Query<ArticlesQuery>) -> Result<Response, ApiError> {
    let rows = st.assistant.corpus().articles();
    match q.dsl.filter(|d| !d.trim().is_empty()) {
        None => Ok(Json(json!({ "articles": rows })).into_response()),
        Some(dsl) => {
            let plan = query::parse_dsl(&dsl).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidQuery", e))?;
            let table = query::execute(&plan, rows);
            Ok(Json(json!({ "dsl": plan.render(), "columns": table.columns, "rows": table.rows })).into_response())
        }
    }
}

async fn comprehend(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: ComprehensionRequest = parse_body(&body)?;
    Ok(Json(st.assistant.comprehend(&req).await?).into_response())
}

#[derive(Serialize)]
struct Submitted {
    job_id: String,
}

async fn submit_job(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let settings: ParameterSettings = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidSettings", format!("invalid settings: {e}")))?;
    let job_id = st.jobs.submit(settings)?;
    Ok((StatusCode::ACCEPTED, Json(Submitted { job_id })).into_response())
}

async fn poll_job(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(st.jobs.poll(&id)?).into_response())
}

async fn catalog(State(st): State<AppState>) -> Response {
    Json(st.catalog.as_ref().clone()).into_response()
}

async fn health(State(st): State<AppState>) -> Response {
    let llm = match st.assistant.llm().health().await {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("unavailable: {e}"),
    };
    let entries = st.assistant.comprehender().index().len();
    let index = if entries > 0 { "ok" } else { "empty" };
    let status = if llm == "ok" { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(json!({ "llm": llm, "index": index, "index_entries": entries }))).into_response()
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/chat", post(chat))
        .route("/articles", get(articles))
        .route("/comprehend", post(comprehend))
        .route("/inverse/jobs", post(submit_job))
        .route("/inverse/jobs/{id}", get(poll_job))
        .route("/catalog", get(catalog))
        .route("/health", get(health))
        .fallback(not_found)
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app.fallback(not_found),
    }
}

/// A running service on a bound address.
pub struct RunningService {
    pub addr: SocketAddr,
    pub state: AppState,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl RunningService {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Blocks until the server exits.
    pub async fn join(self) {
        let _ = self.task.await;
    }
}

/// Builds the state with an HTTP model client and starts listening on
/// `cfg.service.bind`.
pub async fn start(cfg: &AppConfig) -> Result<RunningService, ServiceError> {
    let llm: Arc<dyn LanguageModel> = Arc::new(LlmClient::new(cfg.llm.clone())?);
    start_with(cfg, llm).await
}

pub async fn start_with(cfg: &AppConfig, llm: Arc<dyn LanguageModel>) -> Result<RunningService, ServiceError> {
    let state = AppState::build(cfg, llm).await?;
    let app = router(state.clone(), cfg.service.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&cfg.service.bind)
        .await
        .map_err(|e| ServiceError::Bind { addr: cfg.service.bind.clone(), message: e.to_string() })?;
    let addr = listener.local_addr().map_err(|e| ServiceError::Bind { addr: cfg.service.bind.clone(), message: e.to_string() })?;
    let (tx, rx) = tokio::sync::oneshot::channel();
    let task = tokio::spawn(async move {
        let server = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = server.await {
            tracing::error!("server error: {e}");
        }
    });
    tracing::info!(%addr, "service listening");
    Ok(RunningService { addr, state, shutdown: Some(tx), task })
}
