use std::path::Path;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use driftmap_core::synthetic::{generate_synthetic, SyntheticSpec};
use driftmap_core::load_snapshot;
use driftmap_server::{router, AppState};

fn app() -> Router {
    router(AppState::new(driftmap_server::client_for))
}

fn write_dataset(dir: &Path, n_points: usize, batches: usize) -> std::path::PathBuf {
    let spec = SyntheticSpec { n_points, batches, ..Default::default() };
    let data = generate_synthetic(&spec);
    let path = dir.join("data.jsonl");
    data.write(&path, dir.join("truth.json")).unwrap();
    path
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Bytes) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn session(app: &Router, dataset: &Path) -> u64 {
    let body = json!({
        "dataset_path": dataset,
        "run_config": {
            "timestep": "1 mo",
            "threshold": {"mode": "dynamic", "c": 100.0},
            "labels": {"source": "external_model", "backend": "mock"},
            "relax": {"max_iters": 200, "tol": 1e-4}
        }
    });
    let (status, created) = post(app, "/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{created}");
    created["session_id"].as_u64().unwrap()
}

#[tokio::test]
async fn advance_then_fetch_everything() {
    let dir = tempfile::tempdir().unwrap();
    let app = app();
    let id = session(&app, &write_dataset(dir.path(), 60, 3)).await;

    let (s, summary) = post(&app, &format!("/sessions/{id}/advance"), json!(null)).await;
    assert_eq!(s, StatusCode::OK, "{summary}");
    assert_eq!(summary["batch_index"], 0);
    assert_eq!(summary["remaining_batches"], 2);

    let (s, snap) = get(&app, &format!("/sessions/{id}/snapshots/0")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(snap["schema_version"], 1);
    assert!(!snap["clusters"].as_array().unwrap().is_empty(), "{snap}");
    assert_eq!(snap["nodes"].as_array().unwrap().len(), 20);
    for c in snap["clusters"].as_array().unwrap() {
        assert!(c["labels"]["llm"].as_str().unwrap().starts_with("MOCK: "));
    }

    assert_eq!(get(&app, &format!("/sessions/{id}/snapshots/5")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/sessions/999/live").await.0, StatusCode::NOT_FOUND);

    let (s, live) = get(&app, &format!("/sessions/{id}/live")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(live["batch_index"], 0);
    assert_eq!(live["nodes"], snap["nodes"]);
    assert_eq!(live["clusters"], snap["clusters"]);

    let cid = snap["clusters"][0]["cluster_id"].as_u64().unwrap();
    let (s, members) = get(&app, &format!("/sessions/{id}/clusters/{cid}/members")).await;
    assert_eq!(s, StatusCode::OK);
    let listed = members["members"].as_array().unwrap();
    assert_eq!(listed.len(), snap["clusters"][0]["member_ids"].as_array().unwrap().len());
    assert!(listed.iter().all(|m| m["kind"] == "text" && m["text"].is_string()));
    assert_eq!(get(&app, &format!("/sessions/{id}/clusters/4242/members")).await.0, StatusCode::NOT_FOUND);

    for k in 1..3 {
        let (s, summary) = post(&app, &format!("/sessions/{id}/advance"), json!(null)).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(summary["batch_index"], k);
    }
    assert_eq!(post(&app, &format!("/sessions/{id}/advance"), json!(null)).await.0, StatusCode::CONFLICT);

    let (s, forest) = get(&app, &format!("/sessions/{id}/lineage")).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<u64> = forest["nodes"].as_array().unwrap().iter().map(|n| n["cluster_id"].as_u64().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[tokio::test]
async fn responses_are_canonical_json() {
    let dir = tempfile::tempdir().unwrap();
    let app = app();
    let id = session(&app, &write_dataset(dir.path(), 30, 1)).await;
    call(&app, Request::post(format!("/sessions/{id}/advance")).body(Body::empty()).unwrap()).await;

    let (_, body) = call(&app, Request::get(format!("/sessions/{id}/snapshots/0")).body(Body::empty()).unwrap()).await;
    let text = std::str::from_utf8(&body).unwrap();
    let value: Value = serde_json::from_str(text).unwrap();
    assert_eq!(driftmap_core::io::to_canonical_json(&value).unwrap(), text);

    let saved = dir.path().join("snap.json");
    std::fs::write(&saved, text).unwrap();
    assert_eq!(load_snapshot(&saved).unwrap().batch_index, 0);
}

#[tokio::test]
async fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = app();
    let (s, err) = post(&app, "/sessions", json!({"dataset_path": dir.path().join("missing.jsonl")})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(err["error"].is_string());

    let data = write_dataset(dir.path(), 10, 1);
    let body = json!({"dataset_path": data, "run_config": {"z_spacing": -1.0}});
    assert_eq!(post(&app, "/sessions", body).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_advances_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let app = app();
    let id = session(&app, &write_dataset(dir.path(), 400, 2)).await;
    let uri = format!("/sessions/{id}/advance");
    let req = || Request::post(uri.as_str()).body(Body::empty()).unwrap();
    let (a, b) = tokio::join!(call(&app, req()), call(&app, req()));
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    // the loser did not consume a batch
    let (s, summary) = post(&app, &uri, json!(null)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(summary["batch_index"], 1);
}

async fn next_event(body: &mut Body, buf: &mut String) -> Option<(String, Value)> {
    loop {
        if let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let mut name = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    name = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = Some(v.trim().to_string());
                }
            }
            if let (Some(n), Some(d)) = (name, data) {
                return Some((n, serde_json::from_str(&d).unwrap()));
            }
            continue;
        }
        let frame = tokio::time::timeout(Duration::from_secs(60), body.frame()).await.ok()??.ok()?;
        if let Ok(bytes) = frame.into_data() {
            buf.push_str(std::str::from_utf8(&bytes).unwrap());
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stream_reports_in_batch_order() {
    let dir = tempfile::tempdir().unwrap();
    let app = app();
    let id = session(&app, &write_dataset(dir.path(), 90, 2)).await;
    let resp = app
        .clone()
        .oneshot(Request::get(format!("/sessions/{id}/stream")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();

    let driver = {
        let app = app.clone();
        tokio::spawn(async move {
            for _ in 0..2 {
                let (s, _) = call(&app, Request::post(format!("/sessions/{id}/advance")).body(Body::empty()).unwrap()).await;
                assert_eq!(s, StatusCode::OK);
            }
        })
    };

    let mut buf = String::new();
    let mut seen = Vec::new();
    let mut steps = 0;
    while seen.len() < 4 {
        let (name, data) = next_event(&mut body, &mut buf).await.expect("stream ended early");
        match name.as_str() {
            "step" => {
                steps += 1;
                assert_eq!(data["batch_index"].as_u64().unwrap() as usize, seen.len() / 2);
            }
            "batch_advanced" | "labeling_completed" => {
                let k = data["batch_index"].as_u64().unwrap();
                assert_eq!(k as usize, seen.len() / 2);
                if name == "batch_advanced" {
                    let (s, _) = get(&app, &format!("/sessions/{id}/snapshots/{k}")).await;
                    assert_eq!(s, StatusCode::OK, "snapshot {k} not fetchable on its event");
                }
                seen.push(name);
            }
            other => panic!("unexpected event {other}"),
        }
    }
    assert_eq!(seen, ["batch_advanced", "labeling_completed", "batch_advanced", "labeling_completed"]);
    assert!(steps >= 1);
    driver.await.unwrap();
}
