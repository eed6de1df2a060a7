//! HTTP JSON API over the evsearch engine.
//!
//! The service holds one active corpus. Indexes are built explicitly and
//! remember the corpus generation they were built from; once the corpus is
//! replaced they answer 409 `stale index` until rebuilt. Every success body
//! is the `serde_json` serialization of the corresponding library result.
//! Responses that depend on the corpus carry the generation they observed in
//! the `x-es-generation` header.

mod error;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use evsearch_core::evaluation::{self, EvaluationConfig, EvaluationRun, RunSummary};
use evsearch_core::knn::{self, Vote, DEFAULT_CLASSIFY_K, DEFAULT_REGRESS_K};
use evsearch_core::metrics::{self, Grouping};
use evsearch_core::volume::{self, Aggregation, VolumeIndex};
use evsearch_core::{ClassifierHead, Corpus, Split, VectorIndex};

pub use error::ApiError;

pub const GENERATION_HEADER: &str = "x-es-generation";
pub const DEFAULT_MAX_BODY_MB: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub max_body_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            max_body_bytes: DEFAULT_MAX_BODY_MB << 20,
        }
    }
}

struct Built<T> {
    generation: u64,
    value: Arc<T>,
}

impl<T> Clone for Built<T> {
    fn clone(&self) -> Self {
        Built {
            generation: self.generation,
            value: Arc::clone(&self.value),
        }
    }
}

#[derive(Default)]
struct Inner {
    generation: u64,
    corpus: Option<Arc<Corpus>>,
    index: Option<Built<VectorIndex>>,
    volumes: BTreeMap<Aggregation, Built<VolumeIndex>>,
    heads: BTreeMap<String, Arc<ClassifierHead>>,
    runs: BTreeMap<String, Arc<EvaluationRun>>,
}

/// Shared service state. Cloning is cheap.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<RwLock<Inner>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    fn corpus(&self) -> Result<(u64, Arc<Corpus>), ApiError> {
        let inner = self.read();
        let corpus = inner
            .corpus
            .clone()
            .ok_or_else(|| ApiError::missing("no corpus", "POST /corpus first"))?;
        Ok((inner.generation, corpus))
    }

    /// The 2D index, provided it was built from the current corpus.
    fn index(&self) -> Result<(u64, Arc<VectorIndex>), ApiError> {
        let inner = self.read();
        let built = inner
            .index
            .as_ref()
            .ok_or_else(|| ApiError::no_index("POST /index first"))?;
        if built.generation != inner.generation {
            return Err(ApiError::stale_index());
        }
        Ok((built.generation, Arc::clone(&built.value)))
    }

    fn volume_index(&self, aggregation: Aggregation) -> Result<(u64, Arc<VolumeIndex>), ApiError> {
        let inner = self.read();
        let built = inner.volumes.get(&aggregation).ok_or_else(|| {
            ApiError::no_index(format!("no {aggregation} volume index; POST /volumes/index first"))
        })?;
        if built.generation != inner.generation {
            return Err(ApiError::stale_index());
        }
        Ok((built.generation, Arc::clone(&built.value)))
    }

    fn install<T>(&self, generation: u64, put: impl FnOnce(&mut Inner, Built<T>), value: T) -> Result<(), ApiError> {
        let mut inner = self.write();
        if inner.generation != generation {
            return Err(ApiError::stale_index());
        }
        put(
            &mut inner,
            Built {
                generation,
                value: Arc::new(value),
            },
        );
        Ok(())
    }
}

/// JSON body extractor whose failures use the service error shape. The
/// `Content-Type` header is not required.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state).await?;
        serde_json::from_slice(&bytes)
            .map(ApiJson)
            .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
    }
}

/// UTF-8 request body.
pub struct TextBody(pub String);

impl<S: Send + Sync> FromRequest<S> for TextBody {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state).await?;
        String::from_utf8(bytes.to_vec())
            .map(TextBody)
            .map_err(|e| ApiError::bad_request(format!("body is not UTF-8: {e}")))
    }
}

fn json<T: Serialize>(value: &T, generation: Option<u64>) -> Response {
    let body = serde_json::to_vec(value).expect("serializable");
    let mut response = (
        StatusCode::OK,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        body,
    )
        .into_response();
    if let Some(g) = generation {
        response
            .headers_mut()
            .insert(GENERATION_HEADER, HeaderValue::from(g));
    }
    response
}

type ApiResult = Result<Response, ApiError>;

pub fn router(state: AppState, config: ServiceConfig) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/corpus", post(post_corpus))
        .route("/index", post(post_index))
        .route("/search", post(post_search))
        .route("/search/batch", post(post_search_batch))
        .route("/classify", post(post_classify))
        .route("/regress", post(post_regress))
        .route("/heads/{name}", post(post_head))
        .route("/evaluate", post(post_evaluate))
        .route("/runs", get(get_runs))
        .route("/roc/{run}/{class}", get(get_roc))
        .route("/volumes/index", post(post_volume_index))
        .route("/volumes/search", post(post_volume_search))
        .route("/fairness", post(post_fairness))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(config.max_body_bytes))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(), config)).await
}

#[derive(Debug, Deserialize)]
pub struct CorpusParams {
    pub name: Option<String>,
    pub dimension: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CorpusSummary {
    pub name: String,
    pub dimension: usize,
    pub count: usize,
    pub generation: u64,
}

async fn post_corpus(
    State(state): State<AppState>,
    params: Result<Query<CorpusParams>, QueryRejection>,
    TextBody(body): TextBody,
) -> ApiResult {
    let Query(params) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let name = params.name.unwrap_or_else(|| "corpus".to_string());
    let corpus = Corpus::parse_any(name, &body, params.dimension)?;
    let mut inner = state.write();
    inner.generation += 1;
    let summary = CorpusSummary {
        name: corpus.name().to_string(),
        dimension: corpus.dimension(),
        count: corpus.len(),
        generation: inner.generation,
    };
    inner.corpus = Some(Arc::new(corpus));
    log::info!("corpus {:?} installed as generation {}", summary.name, summary.generation);
    Ok(json(&summary, Some(summary.generation)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRequest {
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IndexSummary {
    pub dimension: usize,
    pub count: usize,
    pub generation: u64,
}

fn select(corpus: &Corpus, split: Option<Split>, normalize: bool) -> Corpus {
    let picked = match split {
        Some(s) => corpus.filter_split(s),
        None => corpus.clone(),
    };
    if normalize {
        picked.l2_normalized()
    } else {
        picked
    }
}

/// Parses an optional JSON body; an empty body means all defaults.
fn optional_json<T: DeserializeOwned + Default>(body: &str) -> Result<T, ApiError> {
    if body.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn post_index(State(state): State<AppState>, TextBody(body): TextBody) -> ApiResult {
    let req: IndexRequest = optional_json(&body)?;
    let (generation, corpus) = state.corpus()?;
    let index = evsearch_core::vector_index::build_index(&select(&corpus, req.split, req.normalize))?;
    let summary = IndexSummary {
        dimension: index.dimension(),
        count: index.len(),
        generation,
    };
    state.install(generation, |inner, built| inner.index = Some(built), index)?;
    Ok(json(&summary, Some(generation)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub vector: Vec<f64>,
    pub k: usize,
}

async fn post_search(State(state): State<AppState>, ApiJson(req): ApiJson<SearchRequest>) -> ApiResult {
    let (generation, index) = state.index()?;
    let hits = index.search(&req.vector, req.k)?;
    Ok(json(&hits, Some(generation)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSearchRequest {
    pub vectors: Vec<Vec<f64>>,
    pub k: usize,
}

async fn post_search_batch(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<BatchSearchRequest>,
) -> ApiResult {
    let (generation, index) = state.index()?;
    let hits = index.batch_search(&req.vectors, req.k)?;
    Ok(json(&hits, Some(generation)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyRequest {
    pub vector: Vec<f64>,
    pub k: Option<usize>,
    pub mode: Option<String>,
    pub head: Option<String>,
    #[serde(default)]
    pub vote: Vote,
}

async fn post_classify(State(state): State<AppState>, ApiJson(req): ApiJson<ClassifyRequest>) -> ApiResult {
    match req.mode.as_deref().unwrap_or("knn") {
        "knn" => {
            let (generation, index) = state.index()?;
            let k = req.k.unwrap_or(DEFAULT_CLASSIFY_K);
            let hits = index.search(&req.vector, k)?;
            let scores = knn::classify_knn_with(&hits, k, req.vote, None)?;
            Ok(json(&scores, Some(generation)))
        }
        "zeroshot" => {
            let name = req
                .head
                .ok_or_else(|| ApiError::bad_request("zeroshot mode needs a head name"))?;
            let head = {
                let inner = state.read();
                if inner.heads.is_empty() {
                    return Err(ApiError::missing("no head", "POST /heads/{name} first"));
                }
                inner.heads.get(&name).cloned()
            }
            .ok_or_else(|| ApiError::bad_request(format!("unknown head {name:?}")))?;
            let scores = knn::zeroshot_classify(&req.vector, &head)?;
            Ok(json(&scores, None))
        }
        other => Err(ApiError::bad_request(format!(
            "unknown mode {other:?}; expected \"knn\" or \"zeroshot\""
        ))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressRequest {
    pub vector: Vec<f64>,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RegressResponse {
    pub months: u64,
}

async fn post_regress(State(state): State<AppState>, ApiJson(req): ApiJson<RegressRequest>) -> ApiResult {
    let (generation, index) = state.index()?;
    let k = req.k.unwrap_or(DEFAULT_REGRESS_K);
    let hits = index.search(&req.vector, k)?;
    let months = knn::regress_knn(&hits, k)?;
    Ok(json(&RegressResponse { months }, Some(generation)))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HeadSummary {
    pub name: String,
    pub classes: Vec<String>,
    pub dimension: usize,
    pub temperature: f64,
}

async fn post_head(State(state): State<AppState>, Path(name): Path<String>, TextBody(body): TextBody) -> ApiResult {
    let head = ClassifierHead::parse(&body)?;
    let summary = HeadSummary {
        name: name.clone(),
        classes: head.classes().to_vec(),
        dimension: head.dimension(),
        temperature: head.temperature(),
    };
    state.write().heads.insert(name, Arc::new(head));
    Ok(json(&summary, None))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub name: String,
    /// Query records; all records of the active corpus when absent.
    pub split: Option<Split>,
    pub k: Option<usize>,
    pub regress_k: Option<usize>,
    #[serde(default)]
    pub vote: Vote,
}

async fn post_evaluate(State(state): State<AppState>, ApiJson(req): ApiJson<EvaluateRequest>) -> ApiResult {
    let (generation, index) = state.index()?;
    let (corpus_generation, corpus) = state.corpus()?;
    if corpus_generation != generation {
        return Err(ApiError::stale_index());
    }
    let queries = select(&corpus, req.split, false);
    let config = EvaluationConfig {
        k: req.k.unwrap_or(DEFAULT_CLASSIFY_K),
        regress_k: req.regress_k.unwrap_or(DEFAULT_REGRESS_K),
        vote: req.vote,
    };
    let run = evaluation::evaluate(&req.name, &index, &queries, config)?;
    let response = json(&run, Some(generation));
    state.write().runs.insert(req.name, Arc::new(run));
    Ok(response)
}

async fn get_runs(State(state): State<AppState>) -> ApiResult {
    let summaries: Vec<RunSummary> = state.read().runs.values().map(|r| r.summary()).collect();
    Ok(json(&summaries, None))
}

fn run(state: &AppState, name: &str) -> Result<Arc<EvaluationRun>, ApiError> {
    state
        .read()
        .runs
        .get(name)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown run {name:?}")))
}

async fn get_roc(State(state): State<AppState>, Path((name, class)): Path<(String, String)>) -> ApiResult {
    let run = run(&state, &name)?;
    let curve = run
        .roc(&class)
        .ok_or_else(|| ApiError::not_found(format!("run {name:?} has no curve for class {class:?}")))?;
    Ok(json(curve, None))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeIndexRequest {
    #[serde(default)]
    pub aggregation: Aggregation,
    pub split: Option<Split>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct VolumeIndexSummary {
    pub aggregation: Aggregation,
    pub count: usize,
    pub generation: u64,
}

async fn post_volume_index(
    State(state): State<AppState>,
    TextBody(body): TextBody,
) -> ApiResult {
    let req: VolumeIndexRequest = optional_json(&body)?;
    let (generation, corpus) = state.corpus()?;
    let index = volume::build_volume_index(&select(&corpus, req.split, false), req.aggregation)?;
    let summary = VolumeIndexSummary {
        aggregation: req.aggregation,
        count: index.len(),
        generation,
    };
    let aggregation = req.aggregation;
    state.install(generation, |inner, built| {
        inner.volumes.insert(aggregation, built);
    }, index)?;
    Ok(json(&summary, Some(generation)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSearchRequest {
    pub slices: Vec<Vec<f64>>,
    /// Aggregation applied to the query slices.
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Aggregation of the index to search; defaults to `aggregation`.
    pub index: Option<Aggregation>,
    pub k: usize,
}

async fn post_volume_search(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<VolumeSearchRequest>,
) -> ApiResult {
    let (generation, index) = state.volume_index(req.index.unwrap_or(req.aggregation))?;
    let hits = volume::retrieve_volumes(&index, &req.slices, req.aggregation, req.k)?;
    Ok(json(&hits, Some(generation)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessRequest {
    pub run: String,
    pub grouping: String,
}

async fn post_fairness(State(state): State<AppState>, ApiJson(req): ApiJson<FairnessRequest>) -> ApiResult {
    let grouping: Grouping = req.grouping.parse()?;
    let run = run(&state, &req.run)?;
    let report = metrics::fairness_report(&run.classes, &run.scored_records(), grouping)?;
    Ok(json(&report, None))
}
