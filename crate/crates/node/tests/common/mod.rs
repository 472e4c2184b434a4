#![allow(dead_code)]

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chainflow_core::crypto::NodeIdentity;
use chainflow_node::config::{NodeConfig, PeerConfig};
use chainflow_node::service::Core;
use chainflow_node::{api, start_with, Daemon, Handle};
use http_body_util::BodyExt;
use serde_json::Value as Json;
use tokio::net::TcpListener;
use tower::ServiceExt;

pub fn config(name: &str, mining: bool) -> NodeConfig {
    let mut c = NodeConfig::new(name, "testnet");
    c.mining.enabled = mining;
    c.mining.difficulty = 6;
    c.mining.nonce_budget = 256;
    c.confirmation_depth = 1;
    c
}

pub async fn listener() -> TcpListener {
    TcpListener::bind("127.0.0.1:0").await.unwrap()
}

pub async fn spawn(config: NodeConfig) -> Daemon {
    start_with(config, listener().await, listener().await).await.unwrap()
}

pub fn peer(name: &str, address: std::net::SocketAddr) -> PeerConfig {
    PeerConfig { name: name.into(), address: address.to_string(), public_key: NodeIdentity::for_name(name).public_key() }
}

/// Starts a fully meshed network; the first `miners` nodes mine.
pub async fn network(names: &[&str], miners: usize) -> Vec<Daemon> {
    let mut p2p = Vec::new();
    for _ in names {
        p2p.push(listener().await);
    }
    let addrs: Vec<_> = p2p.iter().map(|l| l.local_addr().unwrap()).collect();
    let mut out = Vec::new();
    for (i, l) in p2p.into_iter().enumerate() {
        let mut c = config(names[i], i < miners);
        c.peers = names.iter().zip(&addrs).filter(|(n, _)| **n != names[i]).map(|(n, a)| peer(n, *a)).collect();
        out.push(start_with(c, l, listener().await).await.unwrap());
    }
    out
}

pub async fn request(handle: &Handle, method: &str, uri: &str, body: Option<Json>) -> (StatusCode, Json) {
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
    let resp = api::router(handle.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { Json::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}

/// Polls `check` on the event loop until it holds or `secs` pass.
pub async fn until(handle: &Handle, secs: u64, check: impl Fn(&mut Core) -> bool + Send + Sync + Clone + 'static) -> bool {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(secs);
    while tokio::time::Instant::now() < deadline {
        let c = check.clone();
        if handle.call(move |core| c(core)).await.unwrap() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    false
}
