//! TCP peer connections: a signed `Hello` exchange, then length-prefixed
//! signed frames in both directions. Each connection has its own reader
//! and writer task; decoded messages are queued onto the event loop.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chainflow_core::crypto::{NodeIdentity, PublicKey};
use chainflow_core::p2p::{decode_body, FrameReader, Handshake, ProtocolError};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use crate::config::PeerConfig;
use crate::service::Input;

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);
const MAX_BACKOFF: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("handshake rejected: {0}")]
    Handshake(String),
    #[error("connection closed")]
    Closed,
}

pub struct PeerContext {
    pub identity: NodeIdentity,
    pub hello: Handshake,
    pub keys: BTreeMap<String, PublicKey>,
    pub input: mpsc::Sender<Input>,
    next_conn: AtomicU64,
}

impl PeerContext {
    pub fn new(identity: NodeIdentity, hello: Handshake, peers: &[PeerConfig], input: mpsc::Sender<Input>) -> Self {
        let keys = peers.iter().map(|p| (p.name.clone(), p.public_key)).collect();
        Self { identity, hello, keys, input, next_conn: AtomicU64::new(0) }
    }

    fn check(&self, theirs: &Handshake, expected: Option<&str>) -> Result<(), TransportError> {
        let ours = &self.hello;
        let mismatch = if theirs.network_id != ours.network_id {
            Some(format!("network `{}` differs from `{}`", theirs.network_id, ours.network_id))
        } else if theirs.genesis != ours.genesis {
            Some("genesis differs".to_string())
        } else if theirs.protocol_version != ours.protocol_version {
            Some(format!("protocol version {} is unsupported", theirs.protocol_version))
        } else if theirs.design != ours.design {
            Some(format!("peer runs the {} design", theirs.design))
        } else if expected.is_some_and(|e| e != theirs.node) {
            Some(format!("expected `{}`, got `{}`", expected.unwrap_or_default(), theirs.node))
        } else {
            None
        };
        mismatch.map_or(Ok(()), |m| Err(TransportError::Handshake(m)))
    }
}

async fn read_body(stream: &mut (impl AsyncReadExt + Unpin), reader: &mut FrameReader) -> Result<Vec<u8>, TransportError> {
    let mut buf = [0u8; 8192];
    loop {
        if let Some(body) = reader.next_body()? {
            return Ok(body);
        }
        let n = stream.read(&mut buf).await?;
        if n == 0 {
            return Err(TransportError::Closed);
        }
        reader.push(&buf[..n]);
    }
}

/// Drives one connection until it closes. `expected` is the peer we
/// dialled; accepted connections learn the name from the handshake.
pub async fn run_connection(stream: TcpStream, ctx: Arc<PeerContext>, expected: Option<String>) -> Result<(), TransportError> {
    stream.set_nodelay(true)?;
    let (mut rd, mut wr) = stream.into_split();
    wr.write_all(&ctx.hello.encode(&ctx.identity)?).await?;
    let mut reader = FrameReader::new();
    let body = tokio::time::timeout(HANDSHAKE_TIMEOUT, read_body(&mut rd, &mut reader))
        .await
        .map_err(|_| TransportError::Handshake("timed out".into()))??;
    let theirs = Handshake::decode(&body, |n| ctx.keys.get(n).copied())?;
    ctx.check(&theirs, expected.as_deref())?;
    let peer = theirs.node;

    let conn = ctx.next_conn.fetch_add(1, Ordering::Relaxed);
    let (frames, mut outbound) = mpsc::channel::<Vec<u8>>(crate::service::PEER_QUEUE);
    let writer = tokio::spawn(async move {
        while let Some(frame) = outbound.recv().await {
            if wr.write_all(&frame).await.is_err() {
                break;
            }
        }
    });
    if ctx.input.send(Input::LinkUp { peer: peer.clone(), conn, frames }).await.is_err() {
        writer.abort();
        return Err(TransportError::Closed);
    }

    let result = loop {
        let body = match read_body(&mut rd, &mut reader).await {
            Ok(b) => b,
            Err(e) => break e,
        };
        match decode_body(&body, |n| ctx.keys.get(n).copied()) {
            Ok(signed) if signed.sender == peer => {
                if ctx.input.send(Input::Message { from: peer.clone(), message: signed.message }).await.is_err() {
                    break TransportError::Closed;
                }
            }
            Ok(signed) => tracing::warn!(%peer, sender = %signed.sender, "message relayed under another name; ignored"),
            Err(e) => tracing::warn!(%peer, "dropping message: {e}"),
        }
    };
    writer.abort();
    let _ = ctx.input.send(Input::LinkDown { peer, conn }).await;
    match result {
        TransportError::Closed => Ok(()),
        e => Err(e),
    }
}

pub async fn accept_loop(listener: TcpListener, ctx: Arc<PeerContext>) {
    loop {
        match listener.accept().await {
            Ok((stream, addr)) => {
                let ctx = ctx.clone();
                tokio::spawn(async move {
                    if let Err(e) = run_connection(stream, ctx, None).await {
                        tracing::warn!(%addr, "inbound connection ended: {e}");
                    }
                });
            }
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(100)).await;
            }
        }
    }
}

/// Keeps a connection to `peer` open, redialling with backoff.
pub async fn dial_loop(peer: PeerConfig, ctx: Arc<PeerContext>) {
    let mut backoff = Duration::from_millis(100);
    loop {
        match TcpStream::connect(&peer.address).await {
            Ok(stream) => {
                backoff = Duration::from_millis(100);
                if let Err(e) = run_connection(stream, ctx.clone(), Some(peer.name.clone())).await {
                    tracing::warn!(peer = %peer.name, "connection ended: {e}");
                }
            }
            Err(e) => tracing::debug!(peer = %peer.name, "connect failed: {e}"),
        }
        if ctx.input.is_closed() {
            return;
        }
        tokio::time::sleep(backoff).await;
        backoff = (backoff * 2).min(MAX_BACKOFF);
    }
}

/// Only one side of each pair dials, so a pair never holds two links.
pub fn dials(local: &str, peer: &str) -> bool {
    local < peer
}
