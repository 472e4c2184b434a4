//! The single event loop that owns the node. API handlers, peer
//! connections and handler processes talk to it only through [`Input`]s;
//! everything it emits goes out through a broadcast channel.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chainflow_core::chain::persist::{BlockLog, BlockLogError};
use chainflow_core::engine::{EngineFault, WorkflowEngine};
use chainflow_core::node::{Node, NodeEvent};
use chainflow_core::p2p::{encode_message, Message};
use chainflow_core::petrinet::Value;
use chainflow_core::worklist::{WorkItem, WorkStatus};
use serde_json::json;
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::config::{HandlerSpec, MiningConfig};
use crate::handlers;

/// Capacity of each subscriber's event buffer; slower readers are cut off.
pub const EVENT_BUFFER: usize = 1024;
/// Outbound frames buffered per peer connection.
pub const PEER_QUEUE: usize = 1024;

pub type Job = Box<dyn FnOnce(&mut Core) + Send>;

pub enum Input {
    Job(Job),
    Message { from: String, message: Message },
    LinkUp { peer: String, conn: u64, frames: mpsc::Sender<Vec<u8>> },
    LinkDown { peer: String, conn: u64 },
    HandlerDone { item: String, result: Result<BTreeMap<String, Value>, String> },
}

/// One published event: its name and canonical JSON body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Published {
    pub seq: u64,
    pub name: String,
    pub data: String,
}

#[derive(Debug, Error)]
#[error("the node's event loop has stopped")]
pub struct Unavailable;

struct Link {
    conn: u64,
    frames: mpsc::Sender<Vec<u8>>,
}

pub struct Core {
    pub node: Node,
    log: Option<BlockLog>,
    links: BTreeMap<String, Link>,
    events: broadcast::Sender<Published>,
    next_seq: u64,
    mining: MiningConfig,
    handlers: Arc<BTreeMap<String, HandlerSpec>>,
    running_handlers: BTreeSet<String>,
    input: mpsc::WeakSender<Input>,
    synced: bool,
}

impl Core {
    /// True once some peer has answered a chain request, or when the node
    /// has no peers at all.
    pub fn synced(&self) -> bool {
        self.synced
    }

    pub fn connected(&self) -> Vec<String> {
        self.links.keys().cloned().collect()
    }

    pub fn mining(&self) -> &MiningConfig {
        &self.mining
    }

    /// Publishes an event that does not come from the node itself.
    pub fn publish(&mut self, name: &str, data: serde_json::Value) {
        let data = String::from_utf8(chainflow_core::canon::canonical_json_bytes(&data).expect("event has no floats"))
            .expect("utf-8");
        self.next_seq += 1;
        // No subscribers is fine.
        let _ = self.events.send(Published { seq: self.next_seq, name: name.to_string(), data });
    }

    /// Whether spending time on proof of work is useful right now.
    fn wants_to_mine(&self) -> bool {
        if !self.mining.enabled {
            return false;
        }
        if self.mining.idle {
            return true;
        }
        let chain = self.node.chain();
        let store = chain.store();
        if !chain.pool().is_empty() || store.has_rival_tip() {
            return true;
        }
        let head = store.head_height();
        let k = self.node.settings().confirmation_depth;
        (head.saturating_sub(k) + 1..=head).any(|h| store.main_block_at(h).is_some_and(|b| !b.transactions.is_empty()))
    }

    fn handle(&mut self, input: Input) -> Result<(), EngineFault> {
        match input {
            Input::Job(job) => job(self),
            Input::Message { from, message } => {
                self.synced |= matches!(message, Message::BlockchainSend { .. });
                self.node.handle_message(&from, message)?
            }
            Input::LinkUp { peer, conn, frames } => {
                tracing::info!(%peer, "peer connected");
                self.links.insert(peer.clone(), Link { conn, frames });
                self.node.on_link_up(&peer);
            }
            Input::LinkDown { peer, conn } => {
                if self.links.get(&peer).is_some_and(|l| l.conn == conn) {
                    tracing::info!(%peer, "peer disconnected");
                    self.links.remove(&peer);
                    self.node.on_link_down(&peer);
                }
            }
            Input::HandlerDone { item, result } => {
                self.running_handlers.remove(&item);
                let outcome = result.and_then(|outputs| self.node.complete(&item, &outputs).map_err(|e| e.to_string()));
                match outcome {
                    Ok(tx) => tracing::info!(%item, %tx, "handler completed work item"),
                    Err(reason) => {
                        tracing::warn!(%item, %reason, "handler failed");
                        self.publish("HandlerFailed", json!({"event": "HandlerFailed", "item": item, "reason": reason}));
                    }
                }
            }
        }
        Ok(())
    }

    fn mine_turn(&mut self) -> Result<(), EngineFault> {
        if let Some(hash) = self.node.mine_step(self.mining.nonce_budget)? {
            tracing::info!(block = %hash.short(), height = self.node.chain().head_height(), "mined block");
        }
        Ok(())
    }

    /// Publishes events, persists stored blocks and sends queued messages.
    fn flush(&mut self) -> Result<(), BlockLogError> {
        for e in self.node.take_events() {
            if let NodeEvent::WorkItem(item) = &e {
                self.maybe_run_handler(item);
            }
            self.publish(e.name(), e.to_json());
        }
        let stored = self.node.take_stored();
        if let Some(log) = &mut self.log {
            for b in stored {
                log.append(&b)?;
            }
        }
        for out in self.node.take_outbox() {
            let frame = match encode_message(&out.message, self.node.identity()) {
                Ok(f) => f,
                Err(e) => {
                    tracing::error!(kind = out.message.kind(), "cannot encode message: {e}");
                    continue;
                }
            };
            let targets: Vec<&String> = match &out.to {
                Some(peer) => self.links.keys().filter(|k| *k == peer).collect(),
                None => self.links.keys().collect(),
            };
            for peer in targets {
                if self.links[peer].frames.try_send(frame.clone()).is_err() {
                    tracing::warn!(%peer, kind = out.message.kind(), "peer queue full; message dropped");
                }
            }
        }
        Ok(())
    }

    fn maybe_run_handler(&mut self, item: &WorkItem) {
        if item.status != WorkStatus::Worklisted || item.tx.is_some() || self.running_handlers.contains(&item.id) {
            return;
        }
        let Some(model) = self.node.visible().model(&item.model) else { return };
        let Some(name) = model.transition(&item.transition).and_then(|t| t.handler.clone()) else { return };
        let Some(input) = self.input.upgrade() else { return };
        let Some(spec) = self.handlers.get(&name).cloned() else {
            self.publish(
                "HandlerFailed",
                json!({"event": "HandlerFailed", "item": item.id, "reason": format!("no handler `{name}` is configured")}),
            );
            return;
        };
        self.running_handlers.insert(item.id.clone());
        let item = item.clone();
        tokio::spawn(async move {
            let result = handlers::run(&spec, &item).await;
            let _ = input.send(Input::HandlerDone { item: item.id.clone(), result }).await;
        });
    }
}

/// Cheap, cloneable access to a running event loop.
#[derive(Clone)]
pub struct Handle {
    input: mpsc::Sender<Input>,
    events: broadcast::Sender<Published>,
}

impl Handle {
    /// Runs `f` on the event loop and returns its result.
    pub async fn call<R, F>(&self, f: F) -> Result<R, Unavailable>
    where
        R: Send + 'static,
        F: FnOnce(&mut Core) -> R + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |core| {
            let _ = tx.send(f(core));
        });
        self.input.send(Input::Job(job)).await.map_err(|_| Unavailable)?;
        rx.await.map_err(|_| Unavailable)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Published> {
        self.events.subscribe()
    }

    pub(crate) fn input(&self) -> mpsc::Sender<Input> {
        self.input.clone()
    }
}

pub struct Service {
    core: Core,
    rx: mpsc::Receiver<Input>,
}

impl Service {
    pub fn new(
        node: Node,
        log: Option<BlockLog>,
        mining: MiningConfig,
        handlers: BTreeMap<String, HandlerSpec>,
    ) -> (Self, Handle) {
        let node_has_no_peers = node.settings().peers.is_empty();
        let (input, rx) = mpsc::channel(4096);
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let core = Core {
            node,
            log,
            links: BTreeMap::new(),
            events: events.clone(),
            next_seq: 0,
            mining,
            handlers: Arc::new(handlers),
            running_handlers: BTreeSet::new(),
            input: input.downgrade(),
            synced: node_has_no_peers,
        };
        (Self { core, rx }, Handle { input, events })
    }

    /// Runs until every [`Handle`] is dropped. Returns early only on an
    /// engine fault, which means local state can no longer be trusted.
    pub async fn run(mut self) -> Result<(), ServiceError> {
        loop {
            let input = if self.core.wants_to_mine() {
                match self.rx.try_recv() {
                    Ok(i) => Some(i),
                    Err(mpsc::error::TryRecvError::Empty) => None,
                    Err(mpsc::error::TryRecvError::Disconnected) => return Ok(()),
                }
            } else {
                match self.rx.recv().await {
                    Some(i) => Some(i),
                    None => return Ok(()),
                }
            };
            match input {
                Some(i) => self.core.handle(i)?,
                None => {
                    self.core.mine_turn()?;
                    tokio::task::yield_now().await;
                }
            }
            self.core.flush()?;
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Fault(#[from] EngineFault),
    #[error(transparent)]
    Log(#[from] BlockLogError),
}
