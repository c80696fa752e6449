//! HTTP JSON facade over the pipeline. Long stages (pillars, clusters) run
//! on the blocking pool and are polled through `GET /runs/{id}`; the other
//! routes answer synchronously.

use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Multipart, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use somonitor_core::cluster::{ClusterCard, ClusterConfig, ClusterPillar};
use somonitor_core::config::{Config, RankSection};
use somonitor_core::eval::EvalConfig;
use somonitor_core::pipeline::{artifact_kind, EvaluationReport, OpportunityReport, Pipeline, PipelineError, RankerSpec, RankingRun, StoryOutcome};
use somonitor_core::store::{parse_csv, parse_jsonl, ArtifactKey, DatasetFormat, DatasetHandle, DatasetStats};
use tower_http::cors::{Any, CorsLayer};

pub mod error;
pub mod runs;

pub use error::{ApiError, ErrorKind};
use runs::{Admission, RunDescriptor, RunRegistry, Stage};

pub const OPENAPI: &str = include_str!("../openapi.json");

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub runs: Arc<RunRegistry>,
}

impl AppState {
    pub fn new(pipeline: Pipeline) -> Self {
        Self { pipeline: Arc::new(pipeline), runs: Arc::new(RunRegistry::default()) }
    }

    /// A pipeline sharing this state's store and gateway under another config.
    fn with_config(&self, config: Config) -> Pipeline {
        Pipeline::with_parts(self.pipeline.store.clone(), self.pipeline.gateway.clone(), config)
    }
}

/// JSON body whose rejections become 400 responses.
#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
pub struct Body<T>(pub T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
pub struct Query<T>(pub T);

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(post_dataset))
        .route("/datasets/{id}/stats", get(dataset_stats))
        .route("/runs/pillars", post(run_pillars))
        .route("/runs/clusters", post(run_clusters))
        .route("/runs/{id}", get(get_run))
        .route("/personas", get(personas))
        .route("/challenges", get(challenges))
        .route("/rank", post(rank))
        .route("/evaluate", post(evaluate))
        .route("/opportunities", get(opportunities))
        .route("/stories", post(stories))
        .route("/spec", get(spec))
        .layer(CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any))
        .with_state(state)
}

pub async fn serve(pipeline: Pipeline, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::new(pipeline))).await
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorKind::Internal, format!("worker failed: {e}")))?
}

/// Applies the keys of `patch` over `base`. Keys `base` does not have are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<Map<String, Value>>) -> Result<T, ApiError> {
    let Some(patch) = patch else {
        return serde_json::from_value(serde_json::to_value(base).expect("config serializes"))
            .map_err(|e| ApiError::invalid(e.to_string()));
    };
    let Value::Object(mut merged) = serde_json::to_value(base).expect("config serializes") else {
        unreachable!("configs serialize to objects")
    };
    for (key, value) in patch {
        if !merged.contains_key(&key) {
            return Err(ApiError::invalid(format!("unknown config key `{key}`")));
        }
        merged.insert(key, value);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| ApiError::invalid(format!("invalid config: {e}")))
}

#[derive(Debug, Deserialize)]
struct PathRef {
    path: String,
    #[serde(default)]
    format: Option<DatasetFormat>,
}

fn ingest_bytes(pipeline: &Pipeline, bytes: &[u8], format: DatasetFormat, source: &str) -> Result<DatasetHandle, ApiError> {
    let records = match format {
        DatasetFormat::Jsonl => parse_jsonl(bytes)?,
        DatasetFormat::Csv => parse_csv(bytes)?,
    };
    Ok(pipeline.store.ingest_records(records.into_iter().map(|(_, r)| r).collect(), source)?)
}

/// Accepts a JSON path reference, a multipart upload (first file field), or
/// a raw JSONL/CSV body.
async fn post_dataset(State(state): State<AppState>, request: Request) -> Result<(StatusCode, Json<DatasetHandle>), ApiError> {
    let content_type = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let pipeline = state.pipeline.clone();
    let handle = if content_type.starts_with("multipart/form-data") {
        let mut multipart = Multipart::from_request(request, &state).await.map_err(|e| ApiError::invalid(e.body_text()))?;
        let field = multipart.next_field().await?.ok_or_else(|| ApiError::invalid("multipart body has no file field"))?;
        let name = field.file_name().unwrap_or("upload.jsonl").to_string();
        let bytes = field.bytes().await?;
        let format = DatasetFormat::from_path(std::path::Path::new(&name));
        blocking(move || ingest_bytes(&pipeline, &bytes, format, &format!("upload:{name}"))).await?
    } else if content_type.starts_with("application/json") {
        let Body(r) = Body::<PathRef>::from_request(request, &state).await?;
        let path = std::path::PathBuf::from(&r.path);
        if !path.is_file() {
            return Err(ApiError::not_found(format!("no such file `{}`", r.path)));
        }
        let format = r.format.unwrap_or_else(|| DatasetFormat::from_path(&path));
        blocking(move || Ok(pipeline.store.load_dataset(&path, format)?)).await?
    } else {
        let format = if content_type.starts_with("text/csv") { DatasetFormat::Csv } else { DatasetFormat::Jsonl };
        let bytes = axum::body::to_bytes(request.into_body(), usize::MAX)
            .await
            .map_err(|e| ApiError::invalid(format!("cannot read body: {e}")))?;
        blocking(move || ingest_bytes(&pipeline, &bytes, format, "upload")).await?
    };
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn dataset_stats(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<DatasetStats>, ApiError> {
    let pipeline = state.pipeline.clone();
    Ok(Json(blocking(move || Ok(pipeline.store.dataset_stats(&id)?)).await?))
}

fn accepted(descriptor: RunDescriptor) -> Response {
    (StatusCode::ACCEPTED, Json(descriptor)).into_response()
}

/// Starts `work` in the background unless the artifact exists (200, Done)
/// or the same stage is running on the dataset (409).
fn launch<F>(state: &AppState, run_id: String, dataset_id: String, stage: Stage, cached: bool, work: F) -> Result<Response, ApiError>
where
    F: FnOnce(&Pipeline, &(dyn Fn(f64) + Sync)) -> Result<(), PipelineError> + Send + 'static,
{
    if cached {
        return Ok(Json(state.runs.cached(&run_id, &dataset_id, stage)).into_response());
    }
    let descriptor = match state.runs.admit(&run_id, &dataset_id, stage) {
        Admission::Started(d) => d,
        Admission::Conflict(other) => return Err(ApiError::conflict(&other)),
    };
    let (pipeline, runs) = (state.pipeline.clone(), state.runs.clone());
    tokio::task::spawn_blocking(move || {
        runs.start(&run_id);
        let outcome = work(&pipeline, &|p| runs.progress(&run_id, p));
        if let Err(e) = &outcome {
            tracing::warn!(run_id = %run_id, error = %e, "run failed");
        }
        runs.finish(&run_id, outcome.map_err(|e| e.to_string()));
    });
    Ok(accepted(descriptor))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PillarsRunRequest {
    dataset_id: String,
}

async fn run_pillars(State(state): State<AppState>, Body(req): Body<PillarsRunRequest>) -> Result<Response, ApiError> {
    let pipeline = state.pipeline.clone();
    let ds = req.dataset_id.clone();
    let (run_id, cached) = blocking(move || {
        pipeline.store.handle(&ds)?;
        let run_id = pipeline.pillar_run_id(&ds)?;
        let key = ArtifactKey::new(somonitor_core::store::ArtifactKind::Pillars, &ds, &run_id);
        Ok((run_id, pipeline.store.has_artifact(&key)))
    })
    .await?;
    let ds = req.dataset_id.clone();
    launch(&state, run_id, req.dataset_id, Stage::Pillars, cached, move |p, progress| {
        p.pillars(&ds, progress).map(|_| ())
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClustersRunRequest {
    dataset_id: String,
    pillar: ClusterPillar,
    #[serde(default)]
    config: Option<Map<String, Value>>,
}

async fn run_clusters(State(state): State<AppState>, Body(req): Body<ClustersRunRequest>) -> Result<Response, ApiError> {
    let mut config: ClusterConfig = overlay(&state.pipeline.config.cluster, req.config)?;
    config.pillar = req.pillar;
    config.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    let pipeline = state.pipeline.clone();
    let ds = req.dataset_id.clone();
    let probe = config.clone();
    let (run_id, cached) = blocking(move || {
        pipeline.store.handle(&ds)?;
        let pillars = pipeline
            .store
            .latest_run(somonitor_core::store::ArtifactKind::Pillars, &ds)
            .map_err(|_| ApiError::not_found(format!("no pillar run for dataset `{ds}`; POST /runs/pillars first")))?;
        let run_id = pipeline.cluster_run_id(&ds, &pillars, &probe)?;
        Ok((run_id.clone(), pipeline.store.has_artifact(&ArtifactKey::new(artifact_kind(probe.pillar), &ds, run_id))))
    })
    .await?;
    let ds = req.dataset_id.clone();
    launch(&state, run_id, req.dataset_id, Stage::Clusters, cached, move |p, progress| {
        p.clusters(&ds, &config, progress).map(|_| ())
    })
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<RunDescriptor>, ApiError> {
    state.runs.get(&id).map(Json).ok_or_else(|| ApiError::not_found(format!("unknown run `{id}`")))
}

#[derive(Debug, Deserialize)]
struct DatasetQuery {
    dataset_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCards {
    pub dataset_id: String,
    pub run_id: String,
    pub pillar: ClusterPillar,
    pub cards: Vec<ClusterCard>,
}

async fn cards(state: AppState, dataset_id: String, pillar: ClusterPillar) -> Result<Json<ClusterCards>, ApiError> {
    let pipeline = state.pipeline.clone();
    let run = blocking(move || Ok(pipeline.latest_clusters(&dataset_id, pillar)?)).await?;
    Ok(Json(ClusterCards { dataset_id: run.dataset_id, run_id: run.run_id, pillar, cards: run.cards }))
}

async fn personas(State(state): State<AppState>, Query(q): Query<DatasetQuery>) -> Result<Json<ClusterCards>, ApiError> {
    cards(state, q.dataset_id, ClusterPillar::Audience).await
}

async fn challenges(State(state): State<AppState>, Query(q): Query<DatasetQuery>) -> Result<Json<ClusterCards>, ApiError> {
    cards(state, q.dataset_id, ClusterPillar::Insight).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RankRequest {
    dataset_id: String,
    ranker: RankerSpec,
    #[serde(default)]
    grounded: Option<bool>,
    #[serde(default)]
    config: Option<Map<String, Value>>,
}

async fn rank(State(state): State<AppState>, Body(req): Body<RankRequest>) -> Result<Json<RankingRun>, ApiError> {
    let spec = match (req.ranker, req.grounded) {
        (RankerSpec::Llm { .. }, Some(grounded)) => RankerSpec::Llm { grounded },
        (RankerSpec::Score { .. }, Some(true)) => return Err(ApiError::invalid("grounding applies only to llm rankers")),
        (spec, _) => spec,
    };
    let mut config = state.pipeline.config.clone();
    config.rank = overlay::<RankSection>(&config.rank, req.config)?;
    let pipeline = state.with_config(config);
    Ok(Json(blocking(move || Ok(pipeline.rank(&req.dataset_id, &spec, &|_| {})?)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    dataset_id: String,
    rankers: Vec<RankerSpec>,
    #[serde(default)]
    config: Option<Map<String, Value>>,
}

async fn evaluate(State(state): State<AppState>, Body(req): Body<EvaluateRequest>) -> Result<Json<EvaluationReport>, ApiError> {
    let mut config = state.pipeline.config.clone();
    config.eval = overlay::<EvalConfig>(&config.eval, req.config)?;
    let pipeline = state.with_config(config);
    Ok(Json(blocking(move || Ok(pipeline.evaluate(&req.dataset_id, &req.rankers, &|_| {})?)).await?))
}

#[derive(Debug, Deserialize)]
struct OpportunitiesQuery {
    dataset_id: String,
    own: String,
    competitor: String,
}

async fn opportunities(State(state): State<AppState>, Query(q): Query<OpportunitiesQuery>) -> Result<Json<OpportunityReport>, ApiError> {
    let pipeline = state.pipeline.clone();
    Ok(Json(blocking(move || Ok(pipeline.opportunities(&q.dataset_id, &q.own, &q.competitor)?)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoryRequest {
    dataset_id: String,
    persona_id: usize,
    challenge_id: usize,
    brand: String,
}

async fn stories(State(state): State<AppState>, Body(req): Body<StoryRequest>) -> Result<Json<StoryOutcome>, ApiError> {
    let pipeline = state.pipeline.clone();
    Ok(Json(
        blocking(move || Ok(pipeline.story(&req.dataset_id, req.persona_id, req.challenge_id, &req.brand)?)).await?,
    ))
}

async fn spec() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}
