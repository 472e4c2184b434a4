//! Per-node blockchain: block store with main and side branches, orphans,
//! the transaction pool, fixed-difficulty mining and reorganization.
//!
//! Workflow permissibility is delegated to a [`WorkflowEngine`]; the chain
//! only decides *when* the engine is asked and what happens to blocks and
//! pool entries on a negative answer.

mod block;
pub mod persist;
mod pool;
mod store;

pub use block::{Block, MiningTemplate};
pub use pool::TransactionPool;
pub use store::{ChainStore, NotOnMainBranch, DEFAULT_ORPHAN_CAP};

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::crypto::{Digest, PublicKey};
use crate::engine::{EngineFault, Rejection, WorkflowEngine};
use crate::tx::{Transaction, TxId};

/// Why a received block was refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "code", content = "detail", rename_all = "snake_case")]
pub enum BlockRejection {
    #[error("block hash does not match its content")]
    HashMismatch,
    #[error("hash has {bits} leading zero bits, {required} required")]
    InsufficientWork { bits: u32, required: u32 },
    #[error("miner `{0}` is not a network member")]
    UnknownMiner(String),
    #[error("bad linkage: {0}")]
    BadLinkage(String),
    #[error("transaction {0} appears twice")]
    DuplicateTransaction(TxId),
    #[error("transaction {tx} is invalid: {reason}")]
    InvalidTransaction { tx: TxId, reason: Rejection },
    #[error("descends from invalid block {0}")]
    InvalidAncestor(Digest),
}

/// Observable effect of receiving a block.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainEvent {
    HeadAdvanced { block: Arc<Block> },
    /// `undone` newest first, `applied` oldest first.
    Reorganized { undone: Vec<Arc<Block>>, applied: Vec<Arc<Block>> },
    OrphanHeld { block: Arc<Block> },
    BlockRejected { block: Digest, reason: BlockRejection },
}

impl ChainEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ChainEvent::HeadAdvanced { .. } => "HeadAdvanced",
            ChainEvent::Reorganized { .. } => "Reorganized",
            ChainEvent::OrphanHeld { .. } => "OrphanHeld",
            ChainEvent::BlockRejected { .. } => "BlockRejected",
        }
    }

    /// Compact JSON form with block hashes instead of bodies.
    pub fn summary(&self) -> serde_json::Value {
        let hashes = |v: &[Arc<Block>]| v.iter().map(|b| b.block_hash.to_hex()).collect::<Vec<_>>();
        match self {
            ChainEvent::HeadAdvanced { block } => {
                json!({"event": self.name(), "block": block.block_hash, "height": block.height, "txs": block.transactions.len()})
            }
            ChainEvent::Reorganized { undone, applied } => {
                json!({"event": self.name(), "undone": hashes(undone), "applied": hashes(applied)})
            }
            ChainEvent::OrphanHeld { block } => {
                json!({"event": self.name(), "block": block.block_hash, "missing_parent": block.prev_hash})
            }
            ChainEvent::BlockRejected { block, reason } => {
                json!({"event": self.name(), "block": block, "reason": reason})
            }
        }
    }
}

/// Everything that happened while handling one incoming block, including
/// the retried orphans it unlocked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiveOutcome {
    pub events: Vec<ChainEvent>,
    /// Blocks newly stored (main or side branch), in processing order.
    pub stored: Vec<Digest>,
    /// Parents to request from peers.
    pub missing_parents: Vec<Digest>,
    /// Transactions of undone blocks put back into the pool.
    pub returned_to_pool: Vec<TxId>,
    /// Pool entries contradicted by the new head, with the reason.
    pub dropped: Vec<(Transaction, Rejection)>,
}

impl ReceiveOutcome {
    pub fn head_changed(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e, ChainEvent::HeadAdvanced { .. } | ChainEvent::Reorganized { .. }))
    }

    fn merge(&mut self, other: ReceiveOutcome) {
        self.events.extend(other.events);
        self.stored.extend(other.stored);
        self.missing_parents.extend(other.missing_parents);
        self.returned_to_pool.extend(other.returned_to_pool);
        self.dropped.extend(other.dropped);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitResult {
    Accepted,
    /// Already pending or already on the main branch; nothing changed.
    Duplicate,
    Rejected(Rejection),
}

impl SubmitResult {
    pub fn is_accepted(&self) -> bool {
        matches!(self, SubmitResult::Accepted | SubmitResult::Duplicate)
    }
}

/// Network members and their verification keys.
pub type Members = BTreeMap<String, PublicKey>;

/// One node's chain, pool and validating engine.
#[derive(Debug, Clone)]
pub struct Chain<E> {
    store: ChainStore,
    pool: TransactionPool,
    engine: E,
    difficulty: u32,
    members: Members,
}

impl<E: WorkflowEngine> Chain<E> {
    pub fn new(network_id: &str, difficulty: u32, members: Members, engine: E) -> Self {
        Self {
            store: ChainStore::new(Block::genesis(network_id)),
            pool: TransactionPool::new(),
            engine,
            difficulty,
            members,
        }
    }

    pub fn store(&self) -> &ChainStore {
        &self.store
    }

    pub fn pool(&self) -> &TransactionPool {
        &self.pool
    }

    pub fn engine(&self) -> &E {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut E {
        &mut self.engine
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn members(&self) -> &Members {
        &self.members
    }

    pub fn head(&self) -> Digest {
        self.store.head()
    }

    pub fn head_height(&self) -> u64 {
        self.store.head_height()
    }

    pub fn confirmation_depth(&self, hash: &Digest) -> Result<u64, NotOnMainBranch> {
        self.store.confirmation_depth(hash)
    }

    pub fn get_predecessor(&self, hash: &Digest) -> Option<&Arc<Block>> {
        self.store.get_predecessor(hash)
    }

    /// Answer to a chain request: main-branch blocks strictly above `from`.
    pub fn serve_chain(&self, from: &Digest) -> Vec<Block> {
        self.store.blocks_above(from).into_iter().map(|b| (*b).clone()).collect()
    }

    /// Answer to a pool request, in insertion order.
    pub fn serve_pool(&self) -> Vec<Transaction> {
        self.pool.snapshot()
    }

    fn check_signature(&self, tx: &Transaction) -> Result<(), Rejection> {
        let key = self
            .members
            .get(tx.origin())
            .ok_or_else(|| Rejection::UnknownSigner(tx.origin().to_string()))?;
        tx.verify(key).map_err(|_| Rejection::BadSignature)
    }

    /// Validates `tx` against the head plus the whole pool and appends it.
    pub fn submit_transaction(&mut self, tx: Transaction) -> SubmitResult {
        let id = tx.id();
        if self.pool.contains(&id) || self.store.main_tx_block(&id).is_some() {
            return SubmitResult::Duplicate;
        }
        if let Err(r) = self.check_signature(&tx) {
            return SubmitResult::Rejected(r);
        }
        let pending: Vec<&Transaction> = self.pool.iter().collect();
        if let Err(r) = self.engine.validate_transaction(&tx, &pending, &self.store) {
            return SubmitResult::Rejected(r);
        }
        self.engine.on_pending(&tx);
        self.pool.push(tx);
        SubmitResult::Accepted
    }

    /// Completion transaction body computed against the head plus the pool.
    pub fn completion_body(
        &mut self,
        case_id: uuid::Uuid,
        transition: &str,
        outputs: &BTreeMap<String, crate::petrinet::Value>,
    ) -> Result<crate::tx::TxBody, Rejection> {
        let pending: Vec<&Transaction> = self.pool.iter().collect();
        self.engine.completion_body(case_id, transition, outputs, &pending, &self.store)
    }

    /// Pool transactions that are valid in sequence against the head, in
    /// pool order, at most `max`.
    pub fn candidate_transactions(&mut self, max: usize) -> Vec<Transaction> {
        let mut picked: Vec<Transaction> = Vec::new();
        for tx in self.pool.iter() {
            if picked.len() >= max {
                break;
            }
            let pending: Vec<&Transaction> = picked.iter().collect();
            if self.engine.validate_transaction(tx, &pending, &self.store).is_ok() {
                picked.push(tx.clone());
            }
        }
        picked
    }

    /// A mining template on top of the current head.
    pub fn mining_template(&mut self, miner: &str, max_txs: usize) -> MiningTemplate {
        let txs = self.candidate_transactions(max_txs);
        let head = self.store.head_block();
        MiningTemplate::new(head.block_hash, head.height + 1, miner, txs)
    }

    fn check_structure(&self, block: &Block) -> Result<(), BlockRejection> {
        if block.compute_hash().ok() != Some(block.block_hash) {
            return Err(BlockRejection::HashMismatch);
        }
        if block.height == 0 {
            return Err(BlockRejection::BadLinkage("foreign genesis block".into()));
        }
        if !block.meets_difficulty(self.difficulty) {
            return Err(BlockRejection::InsufficientWork {
                bits: block.block_hash.leading_zero_bits(),
                required: self.difficulty,
            });
        }
        if !self.members.contains_key(&block.miner) {
            return Err(BlockRejection::UnknownMiner(block.miner.clone()));
        }
        let mut ids = HashSet::new();
        for tx in &block.transactions {
            if !ids.insert(tx.id()) {
                return Err(BlockRejection::DuplicateTransaction(tx.id()));
            }
            self.check_signature(tx)
                .map_err(|reason| BlockRejection::InvalidTransaction { tx: tx.id(), reason })?;
        }
        Ok(())
    }

    fn validate_block_txs(engine: &mut E, store: &ChainStore, block: &Block) -> Result<(), BlockRejection> {
        let txs: Vec<&Transaction> = block.transactions.iter().collect();
        for (i, tx) in txs.iter().enumerate() {
            let reject = |reason| BlockRejection::InvalidTransaction { tx: tx.id(), reason };
            if store.main_tx_block(&tx.id()).is_some() {
                return Err(reject(Rejection::AlreadyOnChain));
            }
            engine.validate_transaction(tx, &txs[..i], store).map_err(reject)?;
        }
        Ok(())
    }

    fn connect(&mut self, block: &Arc<Block>) -> Result<(), EngineFault> {
        self.store.push_main(block.block_hash);
        self.engine.connect_block(block, &self.store)?;
        Ok(())
    }

    fn disconnect(&mut self) -> Result<Arc<Block>, EngineFault> {
        let block = self.store.pop_main();
        self.engine.disconnect_block(&block, &self.store)?;
        Ok(block)
    }

    /// Rejects `hash` and everything stored or held that descends from it.
    fn reject_subtree(&mut self, hash: Digest, reason: BlockRejection, out: &mut ReceiveOutcome) {
        out.events.push(ChainEvent::BlockRejected { block: hash, reason });
        let mut stack = vec![hash];
        while let Some(h) = stack.pop() {
            stack.extend(self.store.children(&h).copied().collect::<Vec<_>>());
            stack.extend(self.store.take_orphans_of(&h).iter().map(|b| b.block_hash));
            self.store.remove_side_block(&h);
            self.store.mark_invalid(h);
        }
    }

    /// Handles an incoming block and any held orphans it unlocks.
    pub fn receive_block(&mut self, block: Block) -> Result<ReceiveOutcome, EngineFault> {
        let mut out = ReceiveOutcome::default();
        let mut queue = VecDeque::from([Arc::new(block)]);
        let mut head_changed = false;
        while let Some(b) = queue.pop_front() {
            let hash = b.block_hash;
            let (stored, changed) = self.process_block(b, &mut out)?;
            head_changed |= changed;
            if stored {
                queue.extend(self.store.take_orphans_of(&hash));
            }
        }
        if head_changed {
            out.dropped.extend(self.revalidate_pool());
        }
        Ok(out)
    }

    /// Returns (stored, head changed).
    fn process_block(&mut self, block: Arc<Block>, out: &mut ReceiveOutcome) -> Result<(bool, bool), EngineFault> {
        let hash = block.block_hash;
        if self.store.is_known(&hash) {
            return Ok((false, false));
        }
        if let Err(reason) = self.check_structure(&block) {
            // A forged block must not poison the hash of a genuine one.
            if reason != BlockRejection::HashMismatch {
                self.store.mark_invalid(hash);
            }
            out.events.push(ChainEvent::BlockRejected { block: hash, reason });
            return Ok((false, false));
        }
        if self.store.is_invalid(&block.prev_hash) {
            self.store.mark_invalid(hash);
            out.events.push(ChainEvent::BlockRejected { block: hash, reason: BlockRejection::InvalidAncestor(block.prev_hash) });
            return Ok((false, false));
        }
        let Some(parent) = self.store.block(&block.prev_hash).cloned() else {
            out.missing_parents.push(block.prev_hash);
            out.events.push(ChainEvent::OrphanHeld { block: block.clone() });
            self.store.hold_orphan(block);
            return Ok((false, false));
        };
        if block.height != parent.height + 1 {
            self.store.mark_invalid(hash);
            out.events.push(ChainEvent::BlockRejected {
                block: hash,
                reason: BlockRejection::BadLinkage(format!("height {} after parent height {}", block.height, parent.height)),
            });
            return Ok((false, false));
        }

        if block.prev_hash == self.store.head() {
            if let Err(reason) = Self::validate_block_txs(&mut self.engine, &self.store, &block) {
                self.store.mark_invalid(hash);
                out.events.push(ChainEvent::BlockRejected { block: hash, reason });
                return Ok((false, false));
            }
            self.store.insert(block.clone());
            self.connect(&block)?;
            for tx in &block.transactions {
                self.pool.remove(&tx.id());
            }
            out.stored.push(hash);
            out.events.push(ChainEvent::HeadAdvanced { block });
            return Ok((true, true));
        }

        self.store.insert(block.clone());
        out.stored.push(hash);
        if block.height <= self.store.head_height() {
            return Ok((true, false));
        }
        let changed = self.reorganize(hash, out)?;
        Ok((self.store.contains(&hash), changed))
    }

    /// Switches the main branch to the stored branch ending at `tip`.
    /// Returns whether the head changed.
    fn reorganize(&mut self, tip: Digest, out: &mut ReceiveOutcome) -> Result<bool, EngineFault> {
        let Some((fork_height, path)) = self.store.branch_from_main(&tip) else {
            return Ok(false);
        };
        let old_height = self.store.head_height();
        let mut undone = Vec::new();
        while self.store.head_height() > fork_height {
            undone.push(self.disconnect()?);
        }
        let mut applied = Vec::new();
        let mut failure = None;
        for b in path {
            match Self::validate_block_txs(&mut self.engine, &self.store, &b) {
                Ok(()) => {
                    self.connect(&b)?;
                    applied.push(b);
                }
                Err(reason) => {
                    failure = Some((b.block_hash, reason));
                    break;
                }
            }
        }
        let mut sub = ReceiveOutcome::default();
        if let Some((bad, reason)) = failure {
            self.reject_subtree(bad, reason, &mut sub);
        }
        if self.store.head_height() <= old_height {
            // The valid part of the branch is not longer: restore the old main branch.
            for _ in 0..applied.len() {
                self.disconnect()?;
            }
            for b in undone.iter().rev() {
                self.connect(b)?;
            }
            out.merge(sub);
            return Ok(false);
        }

        let mut new_main: HashSet<TxId> = HashSet::new();
        for b in &applied {
            for tx in &b.transactions {
                new_main.insert(tx.id());
                self.pool.remove(&tx.id());
            }
        }
        let mut returned = Vec::new();
        for b in undone.iter().rev() {
            for tx in &b.transactions {
                if !new_main.contains(&tx.id()) {
                    out.returned_to_pool.push(tx.id());
                    returned.push(tx.clone());
                }
            }
        }
        self.pool.prepend(returned);
        out.events.push(ChainEvent::Reorganized { undone, applied });
        out.merge(sub);
        Ok(true)
    }

    /// Re-checks every pool entry in order against the head and the kept
    /// entries before it; drops entries already on the main branch and
    /// returns the contradicted ones.
    pub fn revalidate_pool(&mut self) -> Vec<(Transaction, Rejection)> {
        let mut kept: Vec<Transaction> = Vec::new();
        let mut dropped = Vec::new();
        for tx in self.pool.snapshot() {
            if self.store.main_tx_block(&tx.id()).is_some() {
                continue;
            }
            let pending: Vec<&Transaction> = kept.iter().collect();
            match self.engine.validate_transaction(&tx, &pending, &self.store) {
                Ok(()) => kept.push(tx),
                Err(r) => dropped.push((tx, r)),
            }
        }
        self.pool.replace(kept);
        dropped
    }
}

/// Why a fresh replay of a main branch failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("block at height {height} is invalid against its prefix: {reason}")]
    Invalid { height: u64, reason: BlockRejection },
    #[error(transparent)]
    Fault(#[from] EngineFault),
}

/// Re-executes `blocks` (genesis excluded, ascending) from scratch on
/// `engine`, validating every transaction against its chain prefix.
pub fn replay<E: WorkflowEngine>(genesis: Block, blocks: &[Arc<Block>], mut engine: E) -> Result<E, ReplayError> {
    let mut store = ChainStore::new(genesis);
    for b in blocks {
        Chain::<E>::validate_block_txs(&mut engine, &store, b)
            .map_err(|reason| ReplayError::Invalid { height: b.height, reason })?;
        store.insert(b.clone());
        store.push_main(b.block_hash);
        engine.connect_block(b, &store)?;
    }
    Ok(engine)
}

/// Replays the main branch of `chain` into `engine`.
pub fn replay_main<E: WorkflowEngine, F: WorkflowEngine>(chain: &Chain<F>, engine: E) -> Result<E, ReplayError> {
    let store = chain.store();
    let genesis = (**store.main_block_at(0).expect("genesis")).clone();
    let blocks: Vec<Arc<Block>> = (1..=store.head_height()).filter_map(|h| store.main_block_at(h).cloned()).collect();
    replay(genesis, &blocks, engine)
}
