//! HTTP/JSON API and the server-sent event stream. Every handler runs its
//! read or write as a job on the event loop, so a response never reflects
//! state older than an event already delivered.

use std::collections::BTreeMap;
use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chainflow_core::canon::canonical_bytes;
use chainflow_core::crypto::Digest;
use chainflow_core::engine::{Rejection, WorkflowEngine};
use chainflow_core::node::NodeError;
use chainflow_core::petrinet::{Value, WorkflowModel};
use chainflow_core::worklist::pending_panel;
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use tokio::sync::broadcast;
use uuid::Uuid;

use crate::service::{Core, Handle, Unavailable};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    reason: String,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { status, code: code.into(), reason: reason.into() }
    }

    fn malformed(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed", reason)
    }

    fn not_found(reason: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", reason)
    }

    fn not_synced() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "not_synced", "no peer has sent its chain yet")
    }
}

impl From<Unavailable> for ApiError {
    fn from(e: Unavailable) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", e.to_string())
    }
}

impl From<Rejection> for ApiError {
    fn from(r: Rejection) -> Self {
        let status = match r {
            Rejection::MalformedModel(_) | Rejection::MalformedValues(_) => StatusCode::BAD_REQUEST,
            Rejection::UnknownModel(_) | Rejection::UnknownCase(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::CONFLICT,
        };
        Self::new(status, r.code(), r.to_string())
    }
}

impl From<NodeError> for ApiError {
    fn from(e: NodeError) -> Self {
        match e {
            NodeError::UnknownItem(_) => Self::new(StatusCode::NOT_FOUND, e.code(), e.to_string()),
            NodeError::NotActionable(_) => Self::new(StatusCode::CONFLICT, e.code(), e.to_string()),
            NodeError::Rejected(r) => r.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        canonical(self.status, &json!({"code": self.code, "reason": self.reason}))
    }
}

fn canonical(status: StatusCode, body: &impl Serialize) -> Response {
    match canonical_bytes(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "encoding", e.to_string()).into_response(),
    }
}

fn ok(body: &impl Serialize) -> Response {
    canonical(StatusCode::OK, body)
}

fn accepted(body: &impl Serialize) -> Response {
    canonical(StatusCode::ACCEPTED, body)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            ApiError::malformed(e.inner().to_string())
        } else {
            ApiError::malformed(format!("{path}: {}", e.inner()))
        }
    })
}

type ApiResult = Result<Response, ApiError>;

pub fn router(handle: Handle) -> Router {
    Router::new()
        .route("/models", get(list_models).post(install_model))
        .route("/cases", get(list_cases).post(launch_case))
        .route("/cases/{id}", get(get_case))
        .route("/worklist", get(worklist))
        .route("/worklist/{id}/complete", post(complete))
        .route("/transactions/pending", get(pending))
        .route("/chain/blocks", get(blocks))
        .route("/chain/tree", get(tree))
        .route("/chain/head", get(head))
        .route("/peers", get(peers))
        .route("/events", get(events))
        .with_state(handle)
}

async fn list_models(State(h): State<Handle>) -> ApiResult {
    let models = h
        .call(|c| {
            let head = c.node.chain().engine();
            let visible = c.node.visible();
            head.model_names()
                .into_iter()
                .map(|name| {
                    json!({
                        "name": name,
                        "confirmed": visible.model(&name).is_some(),
                        "model": head.model(&name).map(|m| (*m).clone()),
                    })
                })
                .collect::<Vec<_>>()
        })
        .await?;
    Ok(ok(&models))
}

async fn install_model(State(h): State<Handle>, body: Bytes) -> ApiResult {
    let model: WorkflowModel = parse(&body)?;
    let tx = h.call(move |c| writable(c).and_then(|c| Ok(c.node.install_model(model)?))).await??;
    Ok(accepted(&json!({"tx": tx})))
}

fn writable(c: &mut Core) -> Result<&mut Core, ApiError> {
    if c.synced() {
        Ok(c)
    } else {
        Err(ApiError::not_synced())
    }
}

fn case_json(c: &Core, id: Uuid) -> Option<Json> {
    let head = c.node.chain().engine().case(&id).map(|(s, _)| s.clone());
    let confirmed = c.node.visible().case(&id).map(|(s, _)| s.clone());
    let model = head.as_ref().or(confirmed.as_ref())?.model.clone();
    let view = |s: Option<chainflow_core::petrinet::CaseState>| s.map(|s| json!({"marking": s.marking, "values": s.values}));
    Some(json!({"case_id": id, "model": model, "head": view(head), "confirmed": view(confirmed)}))
}

async fn list_cases(State(h): State<Handle>) -> ApiResult {
    let cases = h
        .call(|c| {
            let mut ids = c.node.chain().engine().case_ids();
            ids.extend(c.node.visible().case_ids());
            ids.sort();
            ids.dedup();
            ids.into_iter().filter_map(|id| case_json(c, id)).collect::<Vec<_>>()
        })
        .await?;
    Ok(ok(&cases))
}

async fn get_case(State(h): State<Handle>, Path(id): Path<String>) -> ApiResult {
    let id: Uuid = id.parse().map_err(|_| ApiError::malformed(format!("`{id}` is not a case id")))?;
    match h.call(move |c| case_json(c, id)).await? {
        Some(v) => Ok(ok(&v)),
        None => Err(ApiError::not_found(format!("unknown case {id}"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LaunchRequest {
    model: String,
}

async fn launch_case(State(h): State<Handle>, body: Bytes) -> ApiResult {
    let LaunchRequest { model } = parse(&body)?;
    let (case_id, tx) = h.call(move |c| writable(c).and_then(|c| Ok(c.node.launch_case(&model)?))).await??;
    Ok(accepted(&json!({"case_id": case_id, "tx": tx})))
}

#[derive(Deserialize)]
struct RoleQuery {
    role: Option<String>,
}

async fn worklist(State(h): State<Handle>, Query(q): Query<RoleQuery>) -> ApiResult {
    let view = h.call(move |c| c.node.view(q.role.as_deref())).await?;
    Ok(ok(&view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteRequest {
    #[serde(default)]
    outputs: BTreeMap<String, Value>,
}

async fn complete(State(h): State<Handle>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let CompleteRequest { outputs } = if body.is_empty() { CompleteRequest { outputs: BTreeMap::new() } } else { parse(&body)? };
    let tx = h.call(move |c| writable(c).and_then(|c| Ok(c.node.complete(&id, &outputs)?))).await??;
    Ok(accepted(&json!({"tx": tx})))
}

async fn pending(State(h): State<Handle>) -> ApiResult {
    let entries = h
        .call(|c| {
            let chain = c.node.chain();
            pending_panel(chain.store(), chain.pool(), c.node.settings().confirmation_depth, c.node.design())
        })
        .await?;
    Ok(ok(&entries))
}

#[derive(Deserialize)]
struct FromQuery {
    from: Option<String>,
}

async fn blocks(State(h): State<Handle>, Query(q): Query<FromQuery>) -> ApiResult {
    let from = match q.from {
        Some(s) => Some(s.parse::<Digest>().map_err(|_| ApiError::malformed(format!("`{s}` is not a block hash")))?),
        None => None,
    };
    let blocks = h
        .call(move |c| {
            let chain = c.node.chain();
            chain.serve_chain(&from.unwrap_or_else(|| chain.store().genesis()))
        })
        .await?;
    Ok(ok(&blocks))
}

/// Every stored block, side branches and held orphans included.
async fn tree(State(h): State<Handle>) -> ApiResult {
    let tree = h
        .call(|c| {
            let store = c.node.chain().store();
            let mut out: Vec<Json> = store
                .all_blocks()
                .into_iter()
                .map(|b| json!({"block": *b, "main": store.is_on_main(&b.block_hash), "orphan": false}))
                .collect();
            out.extend(store.orphans().map(|b| json!({"block": **b, "main": false, "orphan": true})));
            out
        })
        .await?;
    Ok(ok(&tree))
}

async fn head(State(h): State<Handle>) -> ApiResult {
    let v = h
        .call(|c| {
            let store = c.node.chain().store();
            let visible = c.node.visible_head();
            json!({
                "hash": store.head(),
                "height": store.head_height(),
                "visible_hash": visible,
                "visible_height": store.block(&visible).map(|b| b.height),
                "confirmation_depth": c.node.settings().confirmation_depth,
                "design": c.node.design(),
                "difficulty": c.node.settings().difficulty,
                "node": c.node.name(),
            })
        })
        .await?;
    Ok(ok(&v))
}

async fn peers(State(h): State<Handle>) -> ApiResult {
    let v = h.call(|c| c.node.peers().entries().cloned().collect::<Vec<_>>()).await?;
    Ok(ok(&v))
}

/// Forwards published events until the subscriber falls a full buffer
/// behind, then ends the stream.
fn event_stream(rx: broadcast::Receiver<crate::service::Published>) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(p) => Some((Ok(Event::default().event(p.name).id(p.seq.to_string()).data(p.data)), rx)),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                tracing::warn!(missed = n, "event subscriber too slow; disconnecting");
                None
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    })
}

async fn events(State(h): State<Handle>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    Sse::new(event_stream(h.subscribe())).keep_alive(KeepAlive::default())
}
