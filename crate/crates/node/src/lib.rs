//! Workflow node daemon: loads a config, restores the block log, and runs
//! the event loop with its TCP peer transport and HTTP API.

pub mod api;
pub mod config;
pub mod handlers;
pub mod service;
pub mod transport;

use std::net::SocketAddr;
use std::sync::Arc;

use chainflow_core::chain::persist::{BlockLog, BlockLogError};
use chainflow_core::chain::Block;
use chainflow_core::crypto::Digest;
use chainflow_core::engine::EngineFault;
use chainflow_core::node::Node;
use chainflow_core::p2p::Handshake;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use config::{load_config, ConfigError, NodeConfig};
pub use service::{Handle, ServiceError};

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("network `{network}` has genesis {actual}, config expects {expected}")]
    Genesis { network: String, expected: Digest, actual: Digest },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Log(#[from] BlockLogError),
    #[error("stored block {block} cannot be replayed: {source}")]
    Restore { block: Digest, source: EngineFault },
    #[error("cannot create data directory: {0}")]
    DataDir(std::io::Error),
}

/// A started daemon. Dropping it leaves the tasks running; call
/// [`Daemon::wait`] to block on the event loop.
pub struct Daemon {
    pub handle: Handle,
    pub api_addr: SocketAddr,
    pub p2p_addr: SocketAddr,
    service: JoinHandle<Result<(), ServiceError>>,
    tasks: Vec<JoinHandle<()>>,
}

impl Daemon {
    /// Waits for the event loop to end and stops the network tasks.
    pub async fn wait(self) -> Result<(), ServiceError> {
        let result = self.service.await.unwrap_or(Ok(()));
        for t in self.tasks {
            t.abort();
        }
        result
    }

    /// Stops accepting connections and API requests.
    pub fn shutdown(self) {
        for t in self.tasks {
            t.abort();
        }
        self.service.abort();
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, StartError> {
    TcpListener::bind(addr).await.map_err(|source| StartError::Bind { addr, source })
}

/// Binds the configured addresses and starts the daemon.
pub async fn start(config: NodeConfig) -> Result<Daemon, StartError> {
    let p2p = bind(config.listen.p2p).await?;
    let api = bind(config.listen.api).await?;
    start_with(config, p2p, api).await
}

/// Starts on already bound listeners; lets callers pick free ports first.
pub async fn start_with(mut config: NodeConfig, p2p: TcpListener, api: TcpListener) -> Result<Daemon, StartError> {
    config.validate()?;
    let p2p_addr = p2p.local_addr().map_err(|source| StartError::Bind { addr: config.listen.p2p, source })?;
    let api_addr = api.local_addr().map_err(|source| StartError::Bind { addr: config.listen.api, source })?;
    config.listen.p2p = p2p_addr;
    config.listen.api = api_addr;

    let genesis = Block::genesis(&config.network_id).block_hash;
    if let Some(expected) = config.genesis {
        if expected != genesis {
            return Err(StartError::Genesis { network: config.network_id.clone(), expected, actual: genesis });
        }
    }
    let identity = config.identity()?;
    let mut node = Node::new(identity.clone(), config.settings());

    let log = match &config.data_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(StartError::DataDir)?;
            let (log, stored) = BlockLog::open(dir.join("blocks.jsonl"))?;
            let count = stored.len();
            for b in stored {
                let block = b.block_hash;
                node.accept_block(b, None).map_err(|source| StartError::Restore { block, source })?;
            }
            node.take_outbox();
            node.take_events();
            node.take_stored();
            tracing::info!(blocks = count, height = node.chain().head_height(), "restored block log");
            Some(log)
        }
        None => None,
    };

    let (service, handle) = service::Service::new(node, log, config.mining.clone(), config.handlers.clone());
    let service = tokio::spawn(service.run());

    let hello = Handshake {
        network_id: config.network_id.clone(),
        genesis,
        node: config.name.clone(),
        protocol_version: Handshake::PROTOCOL_VERSION,
        design: config.design,
    };
    let ctx = Arc::new(transport::PeerContext::new(identity, hello, &config.peers, handle.input()));
    let mut tasks = vec![tokio::spawn(transport::accept_loop(p2p, ctx.clone()))];
    for peer in config.peers.iter().filter(|p| transport::dials(&config.name, &p.name)) {
        tasks.push(tokio::spawn(transport::dial_loop(peer.clone(), ctx.clone())));
    }
    let app = api::router(handle.clone());
    tasks.push(tokio::spawn(async move {
        if let Err(e) = axum::serve(api, app).await {
            tracing::error!("api server stopped: {e}");
        }
    }));
    tracing::info!(node = %config.name, %p2p_addr, %api_addr, design = %config.design, "node started");
    Ok(Daemon { handle, api_addr, p2p_addr, service, tasks })
}
