use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dipme_core::classifier::{MceConfig, TrainConfig};
use dipme_core::mapping::{node_training_set, train_node_model, GridConfig, SubsurfaceMap};
use dipme_core::sensor::CalibrationParams;
use dipme_core::simulator::{default_media_library, OperatorProfile, Simulator};
use dipme_service::{router, AppState, Engine, ServiceConfig};
use futures_util::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

/// A small node model trained for a couple of epochs; enough to exercise the
/// pipeline, not to classify well.
fn model() -> dipme_core::Checkpoint {
    static MODEL: OnceLock<dipme_core::Checkpoint> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let dips = node_training_set(
                &Simulator::default(),
                &default_media_library(),
                1,
                2,
                &[OperatorProfile::default()],
                &CalibrationParams::default(),
                9,
            )
            .unwrap();
            let tc = TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            };
            train_node_model(&dips, &Default::default(), &MceConfig::tiny(128), &tc).unwrap()
        })
        .clone()
}

fn state(delay: Duration, persist: Option<std::path::PathBuf>) -> Arc<AppState> {
    let config = ServiceConfig {
        sampling_delay: delay,
        persist_path: persist,
        ..ServiceConfig::default()
    };
    Arc::new(AppState::restore(model(), Engine::default(), config).unwrap())
}

fn instant() -> Arc<AppState> {
    state(Duration::ZERO, None)
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn new_session(state: &Arc<AppState>, body: Value) -> String {
    let (s, v) = call(state, "POST", "/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_and_media() {
    let st = instant();
    let (s, v) = call(&st, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["v"], 1);
    assert_eq!(v["status"], "ok");
    let (_, v) = call(&st, "GET", "/media", None).await;
    let classes = v["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 6);
    assert_eq!(classes[4]["name"], "Mung");
}

#[tokio::test]
async fn default_scene_and_empty_reveal() {
    let st = instant();
    let id = new_session(&st, json!({ "v": 1 })).await;
    let (s, v) = call(&st, "GET", &format!("/sessions/{id}/reveal"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["agreement"].is_null());
    let names: Vec<&str> = v["layers"].as_array().unwrap().iter().map(|l| l["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["Mung", "Millet", "Sand", "SimuSoil", "Millet", "Mung"]);
}

#[tokio::test]
async fn same_seed_gives_same_scene() {
    let st = instant();
    let a = new_session(&st, json!({ "seed": 42 })).await;
    let b = new_session(&st, json!({ "seed": 42, "scene": "random" })).await;
    let c = new_session(&st, json!({ "seed": 43 })).await;
    let scene = |id: String| {
        let st = st.clone();
        async move { call(&st, "GET", &format!("/sessions/{id}/reveal"), None).await.1["scene"].clone() }
    };
    let (sa, sb, sc) = (scene(a).await, scene(b).await, scene(c).await);
    assert_eq!(sa, sb);
    assert_ne!(sa["regions"], sc["regions"]);
}

#[tokio::test]
async fn invalid_requests_are_client_errors() {
    let st = instant();
    let overlapping = json!({ "scene": { "width": 0.4, "depth": 0.18, "seed": 0, "regions": [
        { "x": [0.0, 0.4], "layers": [[0.0, 0.1, "Sand"], [0.05, 0.18, "Mung"]] }
    ]}});
    let (s, v) = call(&st, "POST", "/sessions", Some(overlapping)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    assert_eq!(v["v"], 1);
    let (s, _) = call(&st, "POST", "/sessions", Some(json!({ "checkpoint": "/nonexistent/model.json" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&st, "POST", "/sessions", Some(json!({ "v": 7 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&st, "POST", "/sessions", Some(json!({ "bogus": 1 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = new_session(&st, json!({})).await;
    let (s, _) = call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.5 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&st, "POST", "/sessions/nope/dips", Some(json!({ "x": 0.1 }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&st, "GET", "/sessions/nope/reveal", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn dip_updates_map_locally() {
    let st = instant();
    let id = new_session(&st, json!({ "seed": 5, "scene": "default" })).await;
    let (s, first) = call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.1 }))).await;
    assert_eq!(s, StatusCode::OK, "{first}");
    let nodes = first["event"]["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 5);
    for n in nodes {
        let sum: f64 = n["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    assert!(!first["trace"]["fz"].as_array().unwrap().is_empty());

    let (_, second) = call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.1 }))).await;
    let r = GridConfig::default().radius();
    let grid = GridConfig::default().grid;
    let cells = second["delta"]["cells"].as_array().unwrap();
    assert!(!cells.is_empty());
    for c in cells {
        let (x, _) = grid.center(c[0].as_u64().unwrap() as usize, c[1].as_u64().unwrap() as usize);
        assert!((x - 0.1).abs() <= r + grid.dx, "cell at x = {x}");
    }

    let (_, m) = call(&st, "GET", &format!("/sessions/{id}/map"), None).await;
    assert_eq!(m["v"], 1);
    assert_eq!(m["dips"], 2);
    let map: SubsurfaceMap = serde_json::from_value(json!({ "grid": m["grid"], "cells": m["cells"], "colormap": m["colormap"] })).unwrap();
    assert_eq!(map.grid, grid);
    let (_, rv) = call(&st, "GET", &format!("/sessions/{id}/reveal"), None).await;
    let a = rv["agreement"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&a));
}

#[tokio::test]
async fn sessions_are_isolated() {
    let st = instant();
    let a = new_session(&st, json!({ "seed": 1 })).await;
    let b = new_session(&st, json!({ "seed": 1 })).await;
    let (_, before) = call(&st, "GET", &format!("/sessions/{b}/map"), None).await;
    call(&st, "POST", &format!("/sessions/{a}/dips"), Some(json!({ "x": 0.2 }))).await;
    let (_, after) = call(&st, "GET", &format!("/sessions/{b}/map"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["dips"], 0);
}

#[tokio::test]
async fn persistence_reproduces_maps() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sessions.json");
    let st = state(Duration::ZERO, Some(path.clone()));
    let id = new_session(&st, json!({ "seed": 3 })).await;
    for x in [0.05, 0.3, 0.17] {
        call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": x }))).await;
    }
    let (_, before) = call(&st, "GET", &format!("/sessions/{id}/map"), None).await;
    st.flush().await.unwrap();

    let again = state(Duration::ZERO, Some(path));
    let (s, after) = call(&again, "GET", &format!("/sessions/{id}/map"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(before, after);
    // The dip counter survives too, so the next dip is the same in both.
    let (_, d1) = call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.25 }))).await;
    let (_, d2) = call(&again, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.25 }))).await;
    assert_eq!(d1["event"]["nodes"], d2["event"]["nodes"]);
}

#[tokio::test]
async fn real_time_round_trip_under_two_seconds() {
    let st = state(dipme_service::REAL_TIME_SAMPLING, None);
    let id = new_session(&st, json!({})).await;
    let t = Instant::now();
    let (s, _) = call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.3 }))).await;
    let elapsed = t.elapsed();
    assert_eq!(s, StatusCode::OK);
    assert!(elapsed >= Duration::from_millis(1280), "{elapsed:?}");
    assert!(elapsed < Duration::from_secs(2), "{elapsed:?}");
}

#[tokio::test]
async fn stream_pushes_trace_nodes_and_delta() {
    let st = instant();
    let id = new_session(&st, json!({})).await;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(dipme_service::serve(listener, st.clone(), async {
        let _ = stopped.await;
    }));

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/sessions/{id}/stream")).await.unwrap();
    let next = |msg: Option<Result<tokio_tungstenite::tungstenite::Message, _>>| -> Value {
        serde_json::from_str(msg.unwrap().unwrap().to_text().unwrap()).unwrap()
    };
    assert_eq!(next(ws.next().await)["type"], "hello");
    call(&st, "POST", &format!("/sessions/{id}/dips"), Some(json!({ "x": 0.1 }))).await;
    let mut kinds = vec![];
    loop {
        let m = next(ws.next().await);
        assert_eq!(m["v"], 1);
        let kind = m["type"].as_str().unwrap().to_string();
        kinds.push(kind.clone());
        if kind == "map_delta" {
            break;
        }
    }
    assert_eq!(kinds.iter().filter(|k| *k == "trace").count(), ServiceConfig::default().trace_frames);
    assert_eq!(&kinds[kinds.len() - 2..], ["nodes", "map_delta"]);
    drop(ws);
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}

#[tokio::test]
async fn graceful_shutdown_flushes_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let st = state(Duration::ZERO, Some(path.clone()));
    new_session(&st, json!({ "seed": 8 })).await;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    dipme_service::serve(listener, st, async {}).await.unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["v"], 1);
    assert_eq!(v["sessions"].as_array().unwrap().len(), 1);
}
