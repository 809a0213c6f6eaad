use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dipme_core::mapping::{Cell, DipEvent, Scene, SubsurfaceMap};
use dipme_core::simulator::{MediaClass, OperatorProfile};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use crate::{load_checkpoint, AppState, ServiceError, Session, SCHEMA_VERSION};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "v": SCHEMA_VERSION, "error": self.to_string() }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ServiceError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload.map(|Json(t)| t).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

fn check_version(v: Option<u32>) -> Result<(), ServiceError> {
    match v {
        Some(v) if v != SCHEMA_VERSION => Err(ServiceError::BadRequest(format!(
            "schema v{v} not supported, expected v{SCHEMA_VERSION}"
        ))),
        _ => Ok(()),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/media", get(media))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/dips", post(dip))
        .route("/sessions/{id}/map", get(map))
        .route("/sessions/{id}/reveal", get(reveal))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "v": SCHEMA_VERSION, "status": "ok", "sessions": state.len() }))
}

async fn media(State(state): State<Arc<AppState>>) -> Json<Value> {
    let classes: Vec<Value> = state
        .engine
        .library
        .iter()
        .map(|m| {
            json!({
                "index": m.class.index(),
                "name": m.class.name(),
                "particle_size_mm": [m.particle_size_band.0, m.particle_size_band.1],
                "color": state.engine.colormap.colors[m.class.index()],
            })
        })
        .collect();
    Json(json!({ "v": SCHEMA_VERSION, "classes": classes }))
}

/// A scene by name (`"default"`, `"random"`) or spelled out.
#[derive(Deserialize)]
#[serde(untagged)]
enum SceneSpec {
    Named(String),
    Explicit(Scene),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    v: Option<u32>,
    seed: Option<u64>,
    scene: Option<SceneSpec>,
    operator: Option<OperatorProfile>,
    /// Checkpoint file to use instead of the service's model.
    checkpoint: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, payload: Result<Json<CreateSession>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    check_version(req.v)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let scene = match req.scene {
        None if req.seed.is_some() => Scene::random(seed),
        None => Scene::default(),
        Some(SceneSpec::Named(name)) => match name.as_str() {
            "default" => Scene::default(),
            "random" => Scene::random(seed),
            _ => return Err(ServiceError::BadRequest(format!("unknown scene {name:?} (default, random)"))),
        },
        Some(SceneSpec::Explicit(s)) => s,
    };
    scene.validate()?;
    let operator = req.operator.unwrap_or_default();
    operator.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let model = match &req.checkpoint {
        Some(p) => {
            let path = std::path::PathBuf::from(p);
            Arc::new(tokio::task::spawn_blocking(move || load_checkpoint(&path)).await.map_err(join_error)??)
        }
        None => state.model.clone(),
    };
    let session = Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        seed,
        scene,
        operator,
        dips_issued: 0,
        events: Vec::new(),
        checkpoint: req.checkpoint,
        created: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64()),
    };
    let reply = json!({
        "v": SCHEMA_VERSION,
        "id": session.id,
        "seed": seed,
        "box": { "width": session.scene.width, "depth": session.scene.depth },
    });
    tracing::info!(id = %session.id, seed, "session created");
    state.insert(session, model);
    Ok(Json(reply))
}

fn join_error(e: tokio::task::JoinError) -> ServiceError {
    ServiceError::Persist(format!("worker failed: {e}"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DipRequest {
    v: Option<u32>,
    x: f64,
    operator: Option<OperatorProfile>,
}

#[derive(Serialize)]
struct Trace<'a> {
    depth: &'a [f32],
    fz: &'a [f32],
    mx: &'a [f32],
    my: &'a [f32],
}

fn delta_json(cells: &[(usize, usize, Cell)]) -> Value {
    json!({ "cells": cells })
}

fn nodes_message(dip: usize, event: &DipEvent) -> String {
    json!({ "v": SCHEMA_VERSION, "type": "nodes", "dip": dip, "event": event }).to_string()
}

async fn dip(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<DipRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    check_version(req.v)?;
    let slot = state.get(&id)?;
    let mut guard = slot.session.lock().await;
    let mut work = guard.clone();
    let model = slot.model.clone();
    let timestamp = state.elapsed_s();
    let st = state.clone();
    let (work, outcome) = tokio::task::spawn_blocking(move || {
        let out = st.engine.dip(&mut work, &model, req.x, req.operator.as_ref(), timestamp);
        (work, out)
    })
    .await
    .map_err(join_error)?;
    // A failed dip still consumes its seed.
    guard.dips_issued = work.dips_issued;
    let outcome = outcome?;
    *guard = work;
    let dip_index = guard.events.len() - 1;

    // Replay the acquisition over the sampling delay, one frame at a time.
    let n = outcome.trace.len();
    let frames = state.config.trace_frames.max(1);
    let pause = state.config.sampling_delay / frames as u32;
    for f in 0..frames {
        let (a, b) = (f * n / frames, (f + 1) * n / frames);
        let t = &outcome.trace;
        let msg = json!({
            "v": SCHEMA_VERSION,
            "type": "trace",
            "dip": dip_index,
            "frame": f,
            "frames": frames,
            "trace": Trace { depth: &t.depth[a..b], fz: &t.fz[a..b], mx: &t.mx[a..b], my: &t.my[a..b] },
        });
        let _ = slot.stream.send(msg.to_string());
        if !pause.is_zero() {
            tokio::time::sleep(pause).await;
        }
    }
    let _ = slot.stream.send(nodes_message(dip_index, &outcome.event));
    let delta = delta_json(&outcome.delta);
    let _ = slot
        .stream
        .send(json!({ "v": SCHEMA_VERSION, "type": "map_delta", "dip": dip_index, "delta": delta }).to_string());
    drop(guard);

    let t = &outcome.trace;
    Ok(Json(json!({
        "v": SCHEMA_VERSION,
        "dip": dip_index,
        "event": outcome.event,
        "trace": Trace { depth: &t.depth, fz: &t.fz, mx: &t.mx, my: &t.my },
        "delta": delta,
    })))
}

#[derive(Serialize)]
struct MapReply<'a> {
    v: u32,
    dips: usize,
    #[serde(flatten)]
    map: &'a SubsurfaceMap,
}

async fn map(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = state.get(&id)?;
    let events = slot.session.lock().await.events.clone();
    let map = state.engine.map(&events)?;
    let reply = MapReply {
        v: SCHEMA_VERSION,
        dips: events.len(),
        map: &map,
    };
    Ok(Json(serde_json::to_value(reply).map_err(|e| ServiceError::Persist(e.to_string()))?))
}

async fn reveal(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let slot = state.get(&id)?;
    let session = slot.session.lock().await.clone();
    let map = state.engine.map(&session.events)?;
    let layers: Vec<Value> = session
        .scene
        .regions
        .iter()
        .flat_map(|r| {
            r.layers.iter().map(move |&(top, bottom, class): &(f64, f64, MediaClass)| {
                json!({ "x": [r.x.0, r.x.1], "depth": [top, bottom], "class": class.index(), "name": class.name() })
            })
        })
        .collect();
    Ok(Json(json!({
        "v": SCHEMA_VERSION,
        "scene": session.scene,
        "layers": layers,
        "dips": session.events.len(),
        "agreement": map.agreement(&session.scene),
    })))
}

async fn stream(State(state): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Result<Response, ServiceError> {
    let slot = state.get(&id)?;
    let rx = slot.stream.subscribe();
    Ok(ws.on_upgrade(move |socket| forward(socket, rx, id)))
}

async fn forward(mut socket: WebSocket, mut rx: tokio::sync::broadcast::Receiver<String>, id: String) {
    let hello = json!({ "v": SCHEMA_VERSION, "type": "hello", "session": id }).to_string();
    if socket.send(Message::Text(hello.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    let note = json!({ "v": SCHEMA_VERSION, "type": "lagged", "missed": n }).to_string();
                    if socket.send(Message::Text(note.into())).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
