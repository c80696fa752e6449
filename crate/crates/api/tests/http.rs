use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use somonitor_api::{router, AppState, OPENAPI};
use somonitor_core::cluster::{ClusterCard, ClusterConfig, ClusterKind, ClusterPillar};
use somonitor_core::config::Config;
use somonitor_core::domain::brand_shares;
use somonitor_core::gateway::offline::{HashingEmbedder, ScriptedBackend, HASHING_BACKEND_ID, SCRIPTED_BACKEND_ID};
use somonitor_core::gateway::{BackendError, CompletionBackend, CompletionRequest, Gateway};
use somonitor_core::pipeline::{ClusterRun, Pipeline};
use somonitor_core::store::{ArtifactKey, ArtifactKind, Store};
use somonitor_core::synth::{demo_backend, DEMO_CORPUS_JSONL};
use tower::ServiceExt;

/// Demo backend that can be held closed and can fail one template.
struct Gate {
    inner: ScriptedBackend,
    open: Mutex<bool>,
    cv: Condvar,
    fail_template: Option<&'static str>,
}

impl Gate {
    fn new(open: bool, fail_template: Option<&'static str>) -> Arc<Self> {
        Arc::new(Self { inner: demo_backend(), open: Mutex::new(open), cv: Condvar::new(), fail_template })
    }

    fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl CompletionBackend for Gate {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        drop(open);
        if request.template_id.as_deref() == self.fail_template {
            return Err(BackendError::Unavailable("model endpoint is down".into()));
        }
        self.inner.complete(request)
    }
}

fn app(root: &std::path::Path, backend: Arc<dyn CompletionBackend>) -> (Router, Arc<Store>) {
    let mut config = Config::default();
    config.store.root = root.to_path_buf();
    let store = Arc::new(Store::open(root).unwrap());
    let mut gateway = Gateway::new(config.gateway.clone());
    gateway.register_completion(SCRIPTED_BACKEND_ID, backend);
    gateway.register_embedding(HASHING_BACKEND_ID, Arc::new(HashingEmbedder::default()));
    let pipeline = Pipeline::with_parts(store.clone(), Arc::new(gateway), config);
    (router(AppState::new(pipeline)), store)
}

async fn send(app: &Router, request: Request<Body>) -> (StatusCode, Value) {
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let request = Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap();
    send(app, request).await
}

fn conforms(schema: &str, value: &Value) {
    let doc: Value = serde_json::from_str(OPENAPI).unwrap();
    let root = json!({ "$ref": format!("#/components/schemas/{schema}"), "components": doc["components"] });
    let validator = jsonschema::validator_for(&root).unwrap();
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema} violations: {errors:?}\n{value:#}");
}

async fn ingest_demo(app: &Router) -> String {
    let request = Request::post("/datasets")
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from(DEMO_CORPUS_JSONL))
        .unwrap();
    let (status, handle) = send(app, request).await;
    assert_eq!(status, StatusCode::CREATED, "{handle}");
    conforms("DatasetHandle", &handle);
    handle["dataset_id"].as_str().unwrap().to_string()
}

/// Polls a run until it settles, returning the progress values seen.
async fn wait(app: &Router, run_id: &str) -> (Value, Vec<f64>) {
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut seen = Vec::new();
    loop {
        let (status, run) = get(app, &format!("/runs/{run_id}")).await;
        assert_eq!(status, StatusCode::OK);
        conforms("RunDescriptor", &run);
        seen.push(run["progress"].as_f64().unwrap());
        if run["status"] == "done" || run["status"] == "failed" {
            return (run, seen);
        }
        assert!(Instant::now() < deadline, "run {run_id} did not settle");
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

async fn start_and_wait(app: &Router, uri: &str, body: Value) -> Value {
    let (status, run) = post(app, uri, body).await;
    assert!(status == StatusCode::ACCEPTED || status == StatusCode::OK, "{status} {run}");
    let (run, progress) = wait(app, run["run_id"].as_str().unwrap()).await;
    assert_eq!(run["status"], "done", "{run}");
    assert!(progress.windows(2).all(|w| w[0] <= w[1]), "progress went backwards: {progress:?}");
    run
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_flow_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Arc::new(demo_backend()));
    let ds = ingest_demo(&app).await;

    let (status, stats) = get(&app, &format!("/datasets/{ds}/stats")).await;
    assert_eq!(status, StatusCode::OK);
    conforms("DatasetStats", &stats);
    assert_eq!(stats["total"], 200);

    let pillars = start_and_wait(&app, "/runs/pillars", json!({ "dataset_id": ds })).await;
    let (status, again) = post(&app, "/runs/pillars", json!({ "dataset_id": ds })).await;
    assert_eq!(status, StatusCode::OK, "cached runs answer 200");
    assert_eq!((&again["run_id"], &again["status"]), (&pillars["run_id"], &json!("done")));

    for pillar in ["audience", "insight"] {
        start_and_wait(&app, "/runs/clusters", json!({ "dataset_id": ds, "pillar": pillar })).await;
    }
    let (status, personas) = get(&app, &format!("/personas?dataset_id={ds}")).await;
    assert_eq!(status, StatusCode::OK);
    conforms("ClusterCards", &personas);
    assert!(personas["cards"].as_array().unwrap().len() >= 2);
    let (status, challenges) = get(&app, &format!("/challenges?dataset_id={ds}")).await;
    assert_eq!(status, StatusCode::OK);
    conforms("ClusterCards", &challenges);

    let (status, ranking) = post(&app, "/rank", json!({ "dataset_id": ds, "ranker": "llm", "grounded": true })).await;
    assert_eq!(status, StatusCode::OK, "{ranking}");
    conforms("RankingRun", &ranking);
    assert_eq!(ranking["label"], "llm-gd");
    assert_eq!(ranking["list"]["run_orderings"].as_array().unwrap().len(), 5);

    let (status, report) = post(&app, "/evaluate", json!({ "dataset_id": ds, "rankers": ["score", "llm", "llm-gd"] })).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    conforms("EvaluationReport", &report);
    assert_eq!(report["rows"].as_array().unwrap().len(), 3 * 6);

    let (status, opp) = get(&app, &format!("/opportunities?dataset_id={ds}&own=Lumo&competitor=Trava")).await;
    assert_eq!(status, StatusCode::OK, "{opp}");
    conforms("OpportunityReport", &opp);
    let cell = &opp["selection"]["cell"];

    let body = json!({ "dataset_id": ds, "persona_id": cell["persona_id"], "challenge_id": cell["challenge_id"], "brand": "Lumo" });
    let (status, story) = post(&app, "/stories", body).await;
    assert_eq!(status, StatusCode::OK, "{story}");
    conforms("StoryOutcome", &story);
    assert!(!story["story"]["concluding_insight"].as_str().unwrap().is_empty());
    assert!(std::path::Path::new(story["brief_path"].as_str().unwrap()).is_file());

    let (status, _) = post(&app, "/stories", json!({ "dataset_id": ds, "persona_id": 99, "challenge_id": 0, "brand": "Lumo" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

fn card(id: usize, name: &str, counts: &[(&str, usize)]) -> ClusterCard {
    let brands: Vec<&str> = counts.iter().flat_map(|(b, n)| std::iter::repeat_n(*b, *n)).collect();
    ClusterCard {
        cluster_id: id,
        kind: ClusterKind::Persona,
        name: name.to_string(),
        description: format!("{name} fixture"),
        member_count: brands.len(),
        per_brand: brand_shares(brands),
        exemplar_ids: vec![format!("ad-{id}")],
        request_digest: "0".repeat(64),
    }
}

#[tokio::test]
async fn persona_fixture_cards() {
    let dir = tempfile::tempdir().unwrap();
    let (app, store) = app(dir.path(), Arc::new(demo_backend()));
    let cards = vec![
        card(0, "Efficiency Enthusiasts", &[("Brand A", 160), ("Brand B", 46)]),
        card(1, "Budget Seekers", &[("Brand A", 100), ("Brand B", 44)]),
        card(2, "Everyday Commuters", &[("Brand A", 589), ("Brand B", 118)]),
    ];
    let run = ClusterRun {
        run_id: "clusters-fixture".into(),
        dataset_id: "ds-fixture".into(),
        pillar: ClusterPillar::Audience,
        pillar_run_id: "pillars-fixture".into(),
        embedding_backend: HASHING_BACKEND_ID.into(),
        config: ClusterConfig::default(),
        k: 3,
        bic: 0.0,
        assignments: BTreeMap::new(),
        excluded: Vec::new(),
        centroids: Vec::new(),
        cards,
    };
    store.put_artifact(&ArtifactKey::new(ArtifactKind::Personas, "ds-fixture", "clusters-fixture"), &run).unwrap();

    let (status, body) = get(&app, "/personas?dataset_id=ds-fixture").await;
    assert_eq!(status, StatusCode::OK);
    conforms("ClusterCards", &body);
    let counts: Vec<u64> = body["cards"].as_array().unwrap().iter().map(|c| c["member_count"].as_u64().unwrap()).collect();
    assert_eq!(counts, [206, 144, 707]);
    assert_eq!(body["run_id"], "clusters-fixture");
    assert_eq!(body["cards"][0]["name"], "Efficiency Enthusiasts");

    let (status, _) = get(&app, "/challenges?dataset_id=ds-fixture").await;
    assert_eq!(status, StatusCode::NOT_FOUND, "no insight run yet");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn duplicate_in_flight_run_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Gate::new(false, None);
    let (app, _) = app(dir.path(), gate.clone());
    let ds = ingest_demo(&app).await;

    let (status, first) = post(&app, "/runs/pillars", json!({ "dataset_id": ds })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(first["status"], "pending");
    let (status, conflict) = post(&app, "/runs/pillars", json!({ "dataset_id": ds })).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["run_id"], first["run_id"]);

    // a held run must not block polling
    let (status, polled) = get(&app, &format!("/runs/{}", first["run_id"].as_str().unwrap())).await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(polled["status"], "done");

    gate.release();
    let (run, progress) = wait(&app, first["run_id"].as_str().unwrap()).await;
    assert_eq!(run["status"], "done");
    assert!(progress.windows(2).all(|w| w[0] <= w[1]), "{progress:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn backend_failures_are_502() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Gate::new(true, Some("ranking.v1")));
    let ds = ingest_demo(&app).await;
    let (status, body) = post(&app, "/rank", json!({ "dataset_id": ds, "ranker": "llm" })).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{body}");
    conforms("Error", &body);
    assert!(body["error"].as_str().unwrap().contains("model endpoint is down"), "{body}");

    let (status, ranking) = post(&app, "/rank", json!({ "dataset_id": ds, "ranker": "score" })).await;
    assert_eq!(status, StatusCode::OK, "score ranking needs no model: {ranking}");

    let (app, _) = app_failing_pillars(dir.path());
    let (status, run) = post(&app, "/runs/pillars", json!({ "dataset_id": ds })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (run, _) = wait(&app, run["run_id"].as_str().unwrap()).await;
    assert_eq!(run["status"], "failed");
    assert!(run["error"].as_str().unwrap().contains("failed"), "{run}");
}

fn app_failing_pillars(root: &std::path::Path) -> (Router, Arc<Store>) {
    app(root, Gate::new(true, Some("pillars.v1")))
}

#[tokio::test]
async fn bad_requests_are_400_and_unknown_ids_404() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Arc::new(demo_backend()));
    let ds = ingest_demo(&app).await;

    let malformed = Request::post("/rank").header(header::CONTENT_TYPE, "application/json").body(Body::from("{")).unwrap();
    assert_eq!(send(&app, malformed).await.0, StatusCode::BAD_REQUEST);
    for body in [
        json!({ "dataset_id": ds }),
        json!({ "dataset_id": ds, "ranker": "magic" }),
        json!({ "dataset_id": ds, "ranker": "score", "grounded": true }),
        json!({ "dataset_id": ds, "ranker": "score", "config": { "gamma": 1 } }),
        json!({ "dataset_id": ds, "ranker": "score", "extra": 1 }),
    ] {
        let (status, err) = post(&app, "/rank", body.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body} -> {err}");
        conforms("Error", &err);
    }
    let (status, _) = post(&app, "/evaluate", json!({ "dataset_id": ds, "rankers": ["score"], "config": { "relevance_size": 0 } })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, "/runs/clusters", json!({ "dataset_id": ds, "pillar": "tone" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = get(&app, "/opportunities?dataset_id=x").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let bad_rows = Request::post("/datasets").header(header::CONTENT_TYPE, "application/x-ndjson").body(Body::from("{\"id\":1}\n")).unwrap();
    assert_eq!(send(&app, bad_rows).await.0, StatusCode::BAD_REQUEST);

    assert_eq!(get(&app, "/datasets/ds-0000000000000000/stats").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/runs/pillars-nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(post(&app, "/runs/pillars", json!({ "dataset_id": "ds-0000000000000000" })).await.0, StatusCode::NOT_FOUND);
    let (status, err) = post(&app, "/runs/clusters", json!({ "dataset_id": ds, "pillar": "audience" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND, "clusters before pillars: {err}");
}

#[tokio::test]
async fn datasets_by_path_and_multipart() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Arc::new(demo_backend()));
    let file = dir.path().join("corpus.jsonl");
    std::fs::write(&file, DEMO_CORPUS_JSONL).unwrap();
    let (status, by_path) = post(&app, "/datasets", json!({ "path": file })).await;
    assert_eq!(status, StatusCode::CREATED, "{by_path}");

    let boundary = "XBOUNDARY";
    let multipart = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"corpus.jsonl\"\r\nContent-Type: application/x-ndjson\r\n\r\n{DEMO_CORPUS_JSONL}\r\n--{boundary}--\r\n"
    );
    let request = Request::post("/datasets")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(multipart))
        .unwrap();
    let (status, uploaded) = send(&app, request).await;
    assert_eq!(status, StatusCode::CREATED, "{uploaded}");
    assert_eq!(uploaded["dataset_id"], by_path["dataset_id"], "same content, same dataset id");

    let (status, _) = post(&app, "/datasets", json!({ "path": "/no/such/file.jsonl" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn spec_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(dir.path(), Arc::new(demo_backend()));
    let (status, doc) = get(&app, "/spec").await;
    assert_eq!(status, StatusCode::OK);
    let paths: Vec<&String> = doc["paths"].as_object().unwrap().keys().collect();
    for route in ["/datasets", "/runs/pillars", "/runs/clusters", "/runs/{id}", "/personas", "/challenges", "/rank", "/evaluate", "/opportunities", "/stories"] {
        assert!(paths.iter().any(|p| *p == route), "{route} undocumented");
    }

    let preflight = Request::builder()
        .method(Method::OPTIONS)
        .uri("/stories")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let response = app.clone().oneshot(preflight).await.unwrap();
    assert_eq!(response.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}
