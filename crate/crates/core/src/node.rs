//! A whole node without I/O: chain, validating and visible engines,
//! worklist and peer table, driven by method calls. Messages to send and
//! events to publish accumulate in queues the caller drains.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde_json::json;
use thiserror::Error;
use uuid::Uuid;

use crate::chain::{Block, Chain, ChainEvent, Members, MiningTemplate, ReceiveOutcome, SubmitResult};
use crate::crypto::{digest, Digest, NodeIdentity};
use crate::engine::{AnyEngine, Design, EngineFault, Rejection, WorkflowEngine};
use crate::p2p::{Message, PeerInfo, PeerTable};
use crate::petrinet::{Value, WorkflowModel};
use crate::tx::{Transaction, TxBody, TxId};
use crate::worklist::{Alert, WorkItem, WorkStatus, Worklist, WorklistView};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSettings {
    pub network_id: String,
    pub design: Design,
    pub confirmation_depth: u64,
    pub difficulty: u32,
    pub max_block_txs: usize,
    pub peers: Vec<PeerInfo>,
}

impl NodeSettings {
    pub fn new(network_id: impl Into<String>, design: Design) -> Self {
        Self {
            network_id: network_id.into(),
            design,
            confirmation_depth: 2,
            difficulty: 16,
            max_block_txs: 500,
            peers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    /// `None` broadcasts to every connected peer.
    pub to: Option<String>,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeEvent {
    Chain(ChainEvent),
    TxAccepted { tx: TxId, origin: String, kind: String },
    TxDropped { tx: TxId, reason: Rejection },
    TxReturned { tx: TxId },
    WorkItem(WorkItem),
    Alert(Alert),
}

impl NodeEvent {
    pub fn name(&self) -> &'static str {
        match self {
            NodeEvent::Chain(e) => e.name(),
            NodeEvent::TxAccepted { .. } => "TxAccepted",
            NodeEvent::TxDropped { .. } => "TxDropped",
            NodeEvent::TxReturned { .. } => "TxReturned",
            NodeEvent::WorkItem(_) => "WorkItem",
            NodeEvent::Alert(_) => "Alert",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            NodeEvent::Chain(e) => e.summary(),
            NodeEvent::TxAccepted { tx, origin, kind } => {
                json!({"event": self.name(), "tx": tx, "origin": origin, "kind": kind})
            }
            NodeEvent::TxDropped { tx, reason } => json!({"event": self.name(), "tx": tx, "reason": reason}),
            NodeEvent::TxReturned { tx } => json!({"event": self.name(), "tx": tx}),
            NodeEvent::WorkItem(i) => json!({"event": self.name(), "item": i}),
            NodeEvent::Alert(a) => json!({"event": self.name(), "alert": a}),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("unknown work item `{0}`")]
    UnknownItem(String),
    #[error("work item `{0}` is not awaiting completion")]
    NotActionable(String),
    #[error("{0}")]
    Rejected(Rejection),
}

impl NodeError {
    pub fn code(&self) -> String {
        match self {
            NodeError::UnknownItem(_) => "unknown_item".into(),
            NodeError::NotActionable(_) => "not_actionable".into(),
            NodeError::Rejected(r) => r.code(),
        }
    }
}

pub struct Node {
    identity: NodeIdentity,
    settings: NodeSettings,
    chain: Chain<AnyEngine>,
    visible: AnyEngine,
    visible_head: Digest,
    worklist: Worklist,
    peers: PeerTable,
    outbox: Vec<Outgoing>,
    events: Vec<NodeEvent>,
    stored: Vec<Arc<Block>>,
    seen_blocks: HashSet<Digest>,
    seen_txs: HashSet<TxId>,
    next_seq: u64,
    template: Option<MiningTemplate>,
}

impl Node {
    pub fn new(identity: NodeIdentity, settings: NodeSettings) -> Self {
        let mut members: Members = settings.peers.iter().map(|p| (p.name.clone(), p.public_key)).collect();
        members.insert(identity.name.clone(), identity.public_key());
        let chain = Chain::new(&settings.network_id, settings.difficulty, members, AnyEngine::new(settings.design));
        let genesis = chain.head();
        Self {
            worklist: Worklist::new(identity.name.clone(), settings.confirmation_depth),
            peers: PeerTable::new(identity.name.clone(), settings.peers.clone()),
            visible: AnyEngine::new(settings.design),
            visible_head: genesis,
            chain,
            identity,
            settings,
            outbox: Vec::new(),
            events: Vec::new(),
            stored: Vec::new(),
            seen_blocks: HashSet::new(),
            seen_txs: HashSet::new(),
            next_seq: 0,
            template: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.identity.name
    }

    pub fn identity(&self) -> &NodeIdentity {
        &self.identity
    }

    pub fn settings(&self) -> &NodeSettings {
        &self.settings
    }

    pub fn design(&self) -> Design {
        self.settings.design
    }

    pub fn chain(&self) -> &Chain<AnyEngine> {
        &self.chain
    }

    /// Engine state at `K` blocks below the head.
    pub fn visible(&self) -> &AnyEngine {
        &self.visible
    }

    pub fn visible_head(&self) -> Digest {
        self.visible_head
    }

    pub fn worklist(&self) -> &Worklist {
        &self.worklist
    }

    pub fn peers(&self) -> &PeerTable {
        &self.peers
    }

    pub fn peers_mut(&mut self) -> &mut PeerTable {
        &mut self.peers
    }

    pub fn view(&self, role: Option<&str>) -> WorklistView {
        self.worklist.view(self.chain.store(), self.chain.pool(), self.settings.design, role)
    }

    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    /// Blocks stored since the last call, for persistence.
    pub fn take_stored(&mut self) -> Vec<Arc<Block>> {
        std::mem::take(&mut self.stored)
    }

    fn send(&mut self, to: Option<&str>, message: Message) {
        self.outbox.push(Outgoing { to: to.map(str::to_string), message });
    }

    /// A connection to `peer` came up: ask for its peers, chain and pool.
    pub fn on_link_up(&mut self, peer: &str) {
        self.peers.set_connected(peer, true);
        let head = self.chain.head();
        self.send(Some(peer), Message::PeersRequest {});
        self.send(Some(peer), Message::BlockchainRequest { from_hash: head });
        self.send(Some(peer), Message::TransactionPoolRequest {});
    }

    pub fn on_link_down(&mut self, peer: &str) {
        self.peers.set_connected(peer, false);
    }

    pub fn handle_message(&mut self, from: &str, message: Message) -> Result<(), EngineFault> {
        match message {
            Message::BlockRequest { hash } => {
                let store = self.chain.store();
                let block = store.block(&hash).or_else(|| store.orphans().find(|b| b.block_hash == hash));
                if let Some(b) = block {
                    let block = (**b).clone();
                    self.send(Some(from), Message::BlockSend { block });
                }
            }
            Message::BlockSend { block } => self.accept_block(block, Some(from))?,
            Message::PeersRequest {} => {
                let mut peers = self.peers.infos();
                peers.push(PeerInfo {
                    name: self.identity.name.clone(),
                    address: self.identity.address.clone(),
                    public_key: self.identity.public_key(),
                });
                self.send(Some(from), Message::PeersSend { peers });
            }
            Message::PeersSend { peers } => {
                self.peers.merge(&peers);
            }
            Message::TransactionSend { transaction } => {
                self.accept_transaction(transaction);
            }
            Message::TransactionPoolRequest {} => {
                let transactions = self.chain.serve_pool();
                self.send(Some(from), Message::TransactionPoolSend { transactions });
            }
            Message::TransactionPoolSend { transactions } => {
                for tx in transactions {
                    self.accept_transaction(tx);
                }
            }
            Message::BlockchainRequest { from_hash } => {
                let blocks = self.chain.serve_chain(&from_hash);
                self.send(Some(from), Message::BlockchainSend { blocks });
            }
            Message::BlockchainSend { blocks } => {
                for b in blocks {
                    self.accept_block(b, Some(from))?;
                }
            }
        }
        Ok(())
    }

    /// Feeds a block through the chain, gossips what was stored and requests
    /// missing parents from `from` (or from everyone for local blocks).
    pub fn accept_block(&mut self, block: Block, from: Option<&str>) -> Result<(), EngineFault> {
        if !self.seen_blocks.insert(block.block_hash) {
            return Ok(());
        }
        let outcome = self.chain.receive_block(block)?;
        self.absorb(outcome, from)
    }

    fn absorb(&mut self, outcome: ReceiveOutcome, from: Option<&str>) -> Result<(), EngineFault> {
        for parent in &outcome.missing_parents {
            self.send(from, Message::BlockRequest { hash: *parent });
        }
        for hash in &outcome.stored {
            self.seen_blocks.insert(*hash);
            let block = self.chain.store().block(hash).expect("just stored").clone();
            self.stored.push(block.clone());
            self.send(None, Message::BlockSend { block: (*block).clone() });
        }
        let head_changed = outcome.head_changed();
        self.events.extend(outcome.events.into_iter().map(NodeEvent::Chain));
        self.events.extend(outcome.returned_to_pool.into_iter().map(|tx| NodeEvent::TxReturned { tx }));
        for (tx, reason) in outcome.dropped {
            // A contradicted transaction may become valid again after a
            // later reorganization; let it back in if it is re-sent.
            self.seen_txs.remove(&tx.id());
            self.events.push(NodeEvent::TxDropped { tx: tx.id(), reason });
        }
        if head_changed {
            self.template = None;
            self.sync_visible()?;
            self.reconcile();
        }
        Ok(())
    }

    /// Pool admission for a transaction from the network.
    pub fn accept_transaction(&mut self, tx: Transaction) -> SubmitResult {
        if self.seen_txs.contains(&tx.id()) {
            return SubmitResult::Duplicate;
        }
        let result = self.chain.submit_transaction(tx.clone());
        if result == SubmitResult::Accepted {
            self.seen_txs.insert(tx.id());
            self.template = None;
            self.events.push(NodeEvent::TxAccepted {
                tx: tx.id(),
                origin: tx.origin().to_string(),
                kind: tx.body().kind().to_string(),
            });
            self.send(None, Message::TransactionSend { transaction: tx });
        }
        result
    }

    /// Signs `body` and submits it to the local pool.
    pub fn submit_body(&mut self, body: TxBody) -> Result<TxId, Rejection> {
        let tx = Transaction::sign(&self.identity, self.next_seq, body)
            .map_err(|e| Rejection::MalformedValues(e.to_string()))?;
        self.next_seq += 1;
        let id = tx.id();
        match self.accept_transaction(tx) {
            SubmitResult::Accepted | SubmitResult::Duplicate => Ok(id),
            SubmitResult::Rejected(r) => Err(r),
        }
    }

    pub fn install_model(&mut self, model: WorkflowModel) -> Result<TxId, Rejection> {
        self.submit_body(TxBody::ModelUpdate { model })
    }

    /// Fresh case id derived from the node name and its transaction counter.
    fn next_case_id(&self) -> Uuid {
        let d = digest(format!("case:{}:{}", self.identity.name, self.next_seq).as_bytes());
        uuid::Builder::from_random_bytes(d.0[..16].try_into().expect("16 bytes")).into_uuid()
    }

    pub fn launch_case(&mut self, model: &str) -> Result<(Uuid, TxId), Rejection> {
        let case_id = self.next_case_id();
        let body = self.chain.engine().launch_body(model, case_id)?;
        Ok((case_id, self.submit_body(body)?))
    }

    /// Completes a worklisted item with `outputs`. A rejection leaves the
    /// item worklisted with the reason attached.
    pub fn complete(&mut self, item_id: &str, outputs: &BTreeMap<String, Value>) -> Result<TxId, NodeError> {
        let item = self.worklist.item(item_id).ok_or_else(|| NodeError::UnknownItem(item_id.to_string()))?;
        if item.status != WorkStatus::Worklisted {
            return Err(NodeError::NotActionable(item_id.to_string()));
        }
        let (case_id, transition) = (item.case_id, item.transition.clone());
        let body = self.chain.completion_body(case_id, &transition, outputs);
        let result = body.and_then(|b| self.submit_body(b));
        match result {
            Ok(tx) => {
                if let Some(i) = self.worklist.mark_submitted(item_id, tx) {
                    self.events.push(NodeEvent::WorkItem(i));
                }
                self.push_last_alert();
                Ok(tx)
            }
            Err(r) => {
                if let Some(i) = self.worklist.mark_rejected(item_id, r.to_string()) {
                    self.events.push(NodeEvent::WorkItem(i));
                }
                self.push_last_alert();
                Err(NodeError::Rejected(r))
            }
        }
    }

    fn push_last_alert(&mut self) {
        if let Some(a) = self.worklist.alerts().last() {
            self.events.push(NodeEvent::Alert(a.clone()));
        }
    }

    /// Tries up to `budget` nonces on the current template. A found block is
    /// accepted locally and gossiped.
    pub fn mine_step(&mut self, budget: u64) -> Result<Option<Digest>, EngineFault> {
        if self.template.as_ref().map(|t| t.prev_hash()) != Some(self.chain.head()) {
            self.template = None;
        }
        let template = match &mut self.template {
            Some(t) => t,
            None => {
                let t = self.chain.mining_template(&self.identity.name, self.settings.max_block_txs);
                self.template.insert(t)
            }
        };
        let Some(block) = template.mine_step(self.settings.difficulty, budget) else {
            return Ok(None);
        };
        self.template = None;
        let hash = block.block_hash;
        self.accept_block(block, None)?;
        Ok(Some(hash))
    }

    /// Mines until a block is found; for small simulation difficulties.
    pub fn mine_block(&mut self) -> Result<Digest, EngineFault> {
        loop {
            if let Some(h) = self.mine_step(1 << 16)? {
                return Ok(h);
            }
        }
    }

    /// Moves the visible engine to the main-branch block `K` below the head.
    fn sync_visible(&mut self) -> Result<(), EngineFault> {
        let store = self.chain.store();
        let target_height = store.head_height().saturating_sub(self.settings.confirmation_depth);
        let target = store.main_hash_at(target_height).expect("main height");
        while !store.is_on_main(&self.visible_head) {
            let b = store.block(&self.visible_head).expect("visible head is stored").clone();
            self.visible.disconnect_block(&b, store)?;
            self.visible_head = b.prev_hash;
        }
        let mut height = store.block(&self.visible_head).expect("stored").height;
        while height > target_height {
            let b = store.main_block_at(height).expect("main").clone();
            self.visible.disconnect_block(&b, store)?;
            self.visible_head = b.prev_hash;
            height -= 1;
        }
        while height < target_height {
            height += 1;
            let b = store.main_block_at(height).expect("main").clone();
            self.visible.connect_block(&b, store)?;
            self.visible_head = b.block_hash;
        }
        debug_assert_eq!(self.visible_head, target);
        Ok(())
    }

    fn reconcile(&mut self) {
        let (changed, alerts) = self.worklist.reconcile(self.chain.store(), self.chain.pool(), &self.visible);
        self.events.extend(changed.into_iter().map(NodeEvent::WorkItem));
        self.events.extend(alerts.into_iter().map(NodeEvent::Alert));
    }
}
