mod common;

use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use indexmap::IndexMap;
use serde_json::{json, Value};
use tower::ServiceExt;

use repurpose::annotation::http::{router, ServiceState};
use repurpose::annotation::{AnnotationStore, CycleConfig, PoolItem, Sampler, Stratum};
use repurpose::classifier::{load_model, ForestConfig, ModelArtifact};
use repurpose::FeatureVector;

fn pool(n: usize) -> Vec<PoolItem> {
    (0..n)
        .map(|i| {
            let event = common::event(i, 100 + i as u64);
            let x = i as f64 / n as f64;
            let mut values = IndexMap::new();
            values.insert("nld_name".to_string(), x);
            values.insert("nld_description".to_string(), x);
            values.insert("noise".to_string(), ((i * 7) % 5) as f64);
            PoolItem {
                features: FeatureVector {
                    event_ref: event.event_ref.clone(),
                    values,
                    families: vec![],
                },
                event,
            }
        })
        .collect()
}

struct Harness {
    app: Router,
    _dir: tempfile::TempDir,
    model_path: std::path::PathBuf,
}

/// Service with `queued` of 40 pool events already in the queue.
fn harness(queued: usize, required: usize, token: Option<&str>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let pool = pool(40);
    let mut store = AnnotationStore::open(&dir.path().join("annotation")).unwrap();
    store.set_required_annotators(required).unwrap();
    if queued > 0 {
        let events: Vec<_> = pool.iter().take(queued).map(|p| p.event.clone()).collect();
        store
            .enqueue(&events, Stratum::Integrity, Sampler::TopKFollowers { k: queued })
            .unwrap();
    }
    let model_path = dir.path().join("model.json");
    let state = ServiceState {
        store,
        pool,
        model: ModelArtifact::baseline(),
        model_path: Some(model_path.clone()),
        cycle: CycleConfig {
            forest: ForestConfig {
                n_trees: 10,
                ..ForestConfig::default()
            },
            ..CycleConfig::default()
        },
        token: token.map(str::to_string),
    };
    Harness {
        app: router(Arc::new(Mutex::new(state))),
        _dir: dir,
        model_path,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    call_with(app, method, uri, body, None).await
}

async fn call_with(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
    token: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(v) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn register(app: &Router, annotator: &str) {
    let (status, _) = call(app, "POST", "/annotators", Some(json!({ "annotator_id": annotator }))).await;
    assert_eq!(status, StatusCode::CREATED);
}

async fn label(app: &Router, candidate: &str, annotator: &str, label: &str) -> (StatusCode, Value) {
    let (status, body) = call(
        app,
        "POST",
        "/labels",
        Some(json!({
            "candidate_id": candidate,
            "annotator_id": annotator,
            "label": label,
            "submitted_at": 1_600_000_000,
        })),
    )
    .await;
    (status, json_of(&body))
}

#[tokio::test]
async fn bearer_token_is_enforced_when_configured() {
    let h = harness(2, 1, Some("s3cret"));
    let (status, body) = call(&h.app, "GET", "/stats/queue", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert!(json_of(&body)["error"].is_string());
    let (status, _) = call_with(&h.app, "GET", "/stats/queue", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = call_with(&h.app, "GET", "/stats/queue", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["enqueued"], 2);
}

#[tokio::test]
async fn no_token_configured_means_open_access() {
    let h = harness(1, 1, None);
    let (status, _) = call(&h.app, "GET", "/stats/queue", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn labeling_flow_over_http() {
    // top followers first: c000001 is u3:0 down to c000004 for u0:0
    let h = harness(4, 2, None);
    register(&h.app, "ann1").await;
    register(&h.app, "ann2").await;

    let (status, _) = call(&h.app, "GET", "/candidates/next?annotator=ghost", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = call(&h.app, "GET", "/candidates/next?annotator=ann1", None).await;
    assert_eq!(status, StatusCode::OK);
    let first = json_of(&body);
    assert_eq!(first["candidate_id"], "c000001");
    assert!(first["event"]["prev"]["screen_name"].is_string());
    assert!(first["event"]["next"]["top_source"].is_string());

    let (status, _) = label(&h.app, "c000001", "ann1", "maybe").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = label(&h.app, "c999999", "ann1", "positive").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, reply) = label(&h.app, "c000001", "ann1", "positive").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["candidate_status"], "pending");
    let (_, reply) = label(&h.app, "c000001", "ann2", "positive").await;
    assert_eq!(reply["candidate_status"], "labeled");

    let (status, body) = call(&h.app, "GET", "/candidates/c000001", None).await;
    assert_eq!(status, StatusCode::OK);
    let detail = json_of(&body);
    assert_eq!(detail["labels"].as_array().unwrap().len(), 2);
    assert_eq!(detail["decision"]["resolution"], "positive");
    assert_eq!(detail["decision"]["method"], "unanimous");

    // ann1 moves on to the next unlabeled candidate
    let (_, body) = call(&h.app, "GET", "/candidates/next?annotator=ann1", None).await;
    assert_eq!(json_of(&body)["candidate_id"], "c000002");

    label(&h.app, "c000002", "ann1", "positive").await;
    label(&h.app, "c000002", "ann2", "negative").await;
    let (_, body) = call(&h.app, "GET", "/candidates/c000002", None).await;
    assert_eq!(json_of(&body)["decision"]["resolution"], "disagree");
    let (status, body) = call(
        &h.app,
        "POST",
        "/adjudications",
        Some(json!({ "candidate_id": "c000002", "label": "negative" })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let decision = json_of(&body);
    assert_eq!(decision["resolution"], "negative");
    assert_eq!(decision["method"], "adjudicated");

    let (status, _) = call(&h.app, "POST", "/candidates/c000003/skip", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = label(&h.app, "c000003", "ann1", "positive").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&h.app, "POST", "/candidates/c000404/skip", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    label(&h.app, "c000004", "ann1", "unsure").await;
    label(&h.app, "c000004", "ann2", "negative").await;
    for a in ["ann1", "ann2"] {
        let (status, _) = call(&h.app, "GET", &format!("/candidates/next?annotator={a}"), None).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
    }

    let (_, body) = call(&h.app, "GET", "/stats/queue", None).await;
    assert_eq!(
        json_of(&body),
        json!({ "enqueued": 4, "pending": 0, "labeled": 3, "skipped": 1 })
    );

    let (status, body) = call(&h.app, "GET", "/stats/agreement?mode=include_unsure", None).await;
    assert_eq!(status, StatusCode::OK);
    let with = json_of(&body);
    assert_eq!(with["pairs"][0]["items"], 3);
    let (_, body) = call(&h.app, "GET", "/stats/agreement?mode=exclude_unsure", None).await;
    let without = json_of(&body);
    assert_eq!(without["pairs"][0]["items"], 2);
    assert_eq!(without["fleiss_items"], 2);
    let (status, _) = call(&h.app, "GET", "/stats/agreement?mode=sometimes", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, csv) = call(&h.app, "GET", "/export/training.csv", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        String::from_utf8(csv.clone()).unwrap(),
        "event_ref,label\nu2:0,negative\nu3:0,positive\n"
    );
    let (_, again) = call(&h.app, "GET", "/export/training.csv", None).await;
    assert_eq!(csv, again);
    let (_, own) = call(&h.app, "GET", "/export/training.csv?annotator=ann1", None).await;
    assert_eq!(String::from_utf8(own).unwrap(), "event_ref,label\nu2:0,positive\nu3:0,positive\n");
}

#[tokio::test]
async fn resubmission_replaces_label_and_keeps_audit() {
    let h = harness(1, 1, None);
    register(&h.app, "ann1").await;
    label(&h.app, "c000001", "ann1", "negative").await;
    let (status, reply) = label(&h.app, "c000001", "ann1", "positive").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(reply["label"]["label"], "positive");
    let (_, body) = call(&h.app, "GET", "/candidates/c000001", None).await;
    let detail = json_of(&body);
    assert_eq!(detail["labels"].as_array().unwrap().len(), 1);
    assert_eq!(detail["decision"]["resolution"], "positive");
}

#[tokio::test]
async fn coded_case_and_confidence_round_trip() {
    let h = harness(1, 1, None);
    register(&h.app, "ann1").await;
    let (status, body) = call(
        &h.app,
        "POST",
        "/labels",
        Some(json!({
            "candidate_id": "c000001",
            "annotator_id": "ann1",
            "label": "positive",
            "coded_case": "rebranding",
            "confident": true,
        })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let reply = json_of(&body);
    assert_eq!(reply["label"]["coded_case"], "rebranding");
    assert_eq!(reply["label"]["confident"], true);
    assert!(reply["label"]["submitted_at"].as_i64().unwrap() > 1_600_000_000);
}

#[tokio::test]
async fn cycle_needs_labels() {
    let h = harness(2, 1, None);
    let (status, body) = call(&h.app, "POST", "/cycle", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json_of(&body)["error"].is_string());
}

#[tokio::test]
async fn cycle_enqueues_budget_and_retrains() {
    let h = harness(8, 1, None);
    register(&h.app, "ann1").await;
    for i in 1..=8 {
        let l = if i > 4 { "positive" } else { "negative" };
        label(&h.app, &format!("c{i:06}"), "ann1", l).await;
    }
    let (status, body) = call(&h.app, "POST", "/cycle", Some(json!({ "budget": 3 }))).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let reply = json_of(&body);
    assert_eq!(reply["scored"], 32);
    assert_eq!(reply["enqueued"].as_array().unwrap().len(), 3);
    let lineage = &reply["lineage"];
    assert_eq!(lineage["cycle"], 1);
    assert_eq!(lineage["training_rows"], 8);
    assert_ne!(lineage["parent_model"], lineage["model"]);
    let saved = load_model(&h.model_path).unwrap();
    assert_eq!(saved.trees.len(), 10);
    assert_eq!(
        repurpose::annotation::model_hash(&saved),
        lineage["model"].as_str().unwrap()
    );

    let (_, body) = call(&h.app, "GET", "/stats/queue", None).await;
    assert_eq!(json_of(&body)["enqueued"], 11);

    let (status, body) = call(
        &h.app,
        "POST",
        "/cycle",
        Some(json!({ "budget": 2, "priority": { "kind": "boundary", "threshold": 0.5 } })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let second = json_of(&body);
    assert_eq!(second["lineage"]["cycle"], 2);
    assert_eq!(second["lineage"]["parent_model"], lineage["model"]);
}

#[test]
fn popular_strata_never_admit_small_accounts() {
    let events: Vec<_> = (0..20).map(|i| common::event(i, if i % 2 == 0 { 4_999 } else { 5_000 + i as u64 })).collect();
    for (stratum, sampler) in [
        (Stratum::TopFollowers, Sampler::TopKFollowers { k: 20 }),
        (Stratum::RandomPopular, Sampler::Uniform { n: 20, seed: 3 }),
    ] {
        let mut store = AnnotationStore::in_memory();
        let out = store.enqueue(&events, stratum, sampler).unwrap();
        assert_eq!(out.enqueued.len(), 10);
        assert_eq!(out.rejected.len(), 10);
        assert!(store.gate_violations().is_empty());
        assert!(store
            .state()
            .candidates
            .values()
            .all(|c| c.event.prev.followers_count >= 5_000));
    }
}

#[test]
fn queue_state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let events: Vec<_> = (0..5).map(|i| common::event(i, 10)).collect();
    {
        let mut store = AnnotationStore::open(dir.path()).unwrap();
        store.register_annotator("ann1").unwrap();
        store
            .enqueue(&events, Stratum::Integrity, Sampler::Uniform { n: 3, seed: 1 })
            .unwrap();
    }
    let store = AnnotationStore::open(dir.path()).unwrap();
    assert_eq!(store.queue_counts().enqueued, 3);
    assert!(store.state().annotators.contains("ann1"));
}
