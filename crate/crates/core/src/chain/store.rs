use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;

use super::Block;
use crate::crypto::Digest;
use crate::tx::TxId;

pub const DEFAULT_ORPHAN_CAP: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("block is not on the main branch")]
pub struct NotOnMainBranch;

/// Blocks by hash, the main branch, side branches and orphans.
///
/// The main branch is kept as a height-indexed vector of hashes; every
/// stored block that is not on it belongs to a side branch.
#[derive(Debug, Clone)]
pub struct ChainStore {
    blocks: HashMap<Digest, Arc<Block>>,
    children: HashMap<Digest, BTreeSet<Digest>>,
    main: Vec<Digest>,
    main_txs: HashMap<TxId, Digest>,
    orphans: IndexMap<Digest, Arc<Block>>,
    invalid: HashSet<Digest>,
    orphan_cap: usize,
}

impl ChainStore {
    pub fn new(genesis: Block) -> Self {
        let hash = genesis.block_hash;
        let mut blocks = HashMap::new();
        blocks.insert(hash, Arc::new(genesis));
        Self {
            blocks,
            children: HashMap::new(),
            main: vec![hash],
            main_txs: HashMap::new(),
            orphans: IndexMap::new(),
            invalid: HashSet::new(),
            orphan_cap: DEFAULT_ORPHAN_CAP,
        }
    }

    pub fn with_orphan_cap(mut self, cap: usize) -> Self {
        self.orphan_cap = cap.max(1);
        self
    }

    pub fn genesis(&self) -> Digest {
        self.main[0]
    }

    pub fn head(&self) -> Digest {
        *self.main.last().expect("genesis always present")
    }

    pub fn head_block(&self) -> Arc<Block> {
        self.blocks[&self.head()].clone()
    }

    pub fn head_height(&self) -> u64 {
        (self.main.len() - 1) as u64
    }

    pub fn block(&self, hash: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(hash)
    }

    pub fn contains(&self, hash: &Digest) -> bool {
        self.blocks.contains_key(hash)
    }

    pub fn is_orphan(&self, hash: &Digest) -> bool {
        self.orphans.contains_key(hash)
    }

    pub fn is_invalid(&self, hash: &Digest) -> bool {
        self.invalid.contains(hash)
    }

    pub fn is_known(&self, hash: &Digest) -> bool {
        self.contains(hash) || self.is_orphan(hash) || self.is_invalid(hash)
    }

    pub fn is_on_main(&self, hash: &Digest) -> bool {
        self.blocks
            .get(hash)
            .is_some_and(|b| self.main.get(b.height as usize) == Some(hash))
    }

    pub fn main_hash_at(&self, height: u64) -> Option<Digest> {
        self.main.get(height as usize).copied()
    }

    pub fn main_block_at(&self, height: u64) -> Option<&Arc<Block>> {
        self.main_hash_at(height).and_then(|h| self.blocks.get(&h))
    }

    /// Main-branch hashes from genesis to head.
    pub fn main_branch(&self) -> &[Digest] {
        &self.main
    }

    /// Number of main-branch blocks strictly above `hash`.
    pub fn confirmation_depth(&self, hash: &Digest) -> Result<u64, NotOnMainBranch> {
        let block = self.blocks.get(hash).ok_or(NotOnMainBranch)?;
        if !self.is_on_main(hash) {
            return Err(NotOnMainBranch);
        }
        Ok(self.head_height() - block.height)
    }

    /// Stored parent; `None` for genesis, orphans and unknown blocks.
    pub fn get_predecessor(&self, hash: &Digest) -> Option<&Arc<Block>> {
        let block = self.blocks.get(hash)?;
        if block.is_genesis() {
            return None;
        }
        self.blocks.get(&block.prev_hash)
    }

    pub fn children(&self, hash: &Digest) -> impl Iterator<Item = &Digest> {
        self.children.get(hash).into_iter().flatten()
    }

    /// Main-branch block containing `tx`, if any.
    pub fn main_tx_block(&self, tx: &TxId) -> Option<Digest> {
        self.main_txs.get(tx).copied()
    }

    /// Depth of the main-branch block holding `tx`.
    pub fn tx_depth(&self, tx: &TxId) -> Option<u64> {
        let block = self.main_txs.get(tx)?;
        self.confirmation_depth(block).ok()
    }

    /// Main-branch blocks strictly above `from`, ascending; the whole chain
    /// after genesis when `from` is not on the main branch.
    pub fn blocks_above(&self, from: &Digest) -> Vec<Arc<Block>> {
        let start = if self.is_on_main(from) { self.blocks[from].height + 1 } else { 1 };
        (start..=self.head_height())
            .filter_map(|h| self.main_block_at(h).cloned())
            .collect()
    }

    /// Every stored block ordered by (height, hash); used by displays.
    pub fn all_blocks(&self) -> Vec<Arc<Block>> {
        let mut v: Vec<_> = self.blocks.values().cloned().collect();
        v.sort_by(|a, b| (a.height, a.block_hash).cmp(&(b.height, b.block_hash)));
        v
    }

    /// Whether a side-branch block is as high as the head, so the next
    /// block decides between them.
    pub fn has_rival_tip(&self) -> bool {
        let head = self.head_height();
        self.blocks.values().any(|b| b.height == head && !self.is_on_main(&b.block_hash))
    }

    pub fn orphans(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.orphans.values()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub(crate) fn insert(&mut self, block: Arc<Block>) {
        let hash = block.block_hash;
        self.children.entry(block.prev_hash).or_default().insert(hash);
        self.blocks.insert(hash, block);
    }

    pub(crate) fn remove_side_block(&mut self, hash: &Digest) {
        if let Some(b) = self.blocks.remove(hash) {
            if let Some(set) = self.children.get_mut(&b.prev_hash) {
                set.remove(hash);
            }
        }
    }

    pub(crate) fn mark_invalid(&mut self, hash: Digest) {
        self.invalid.insert(hash);
    }

    /// Holds an orphan; returns the evicted oldest orphan when over capacity.
    pub(crate) fn hold_orphan(&mut self, block: Arc<Block>) -> Option<Digest> {
        self.orphans.insert(block.block_hash, block);
        if self.orphans.len() > self.orphan_cap {
            return self.orphans.shift_remove_index(0).map(|(h, _)| h);
        }
        None
    }

    /// Removes and returns orphans whose parent is `parent`, oldest first.
    pub(crate) fn take_orphans_of(&mut self, parent: &Digest) -> Vec<Arc<Block>> {
        let hashes: Vec<Digest> = self
            .orphans
            .values()
            .filter(|b| b.prev_hash == *parent)
            .map(|b| b.block_hash)
            .collect();
        hashes.iter().filter_map(|h| self.orphans.shift_remove(h)).collect()
    }

    pub(crate) fn push_main(&mut self, hash: Digest) {
        let block = self.blocks[&hash].clone();
        debug_assert_eq!(block.height as usize, self.main.len());
        for tx in &block.transactions {
            self.main_txs.insert(tx.id(), hash);
        }
        self.main.push(hash);
    }

    pub(crate) fn pop_main(&mut self) -> Arc<Block> {
        assert!(self.main.len() > 1, "cannot pop genesis");
        let hash = self.main.pop().expect("non-empty");
        let block = self.blocks[&hash].clone();
        for tx in &block.transactions {
            self.main_txs.remove(&tx.id());
        }
        block
    }

    /// Path from the main branch to `tip`: (fork point height, blocks above
    /// the fork ascending). `None` if the path leaves the stored set.
    pub(crate) fn branch_from_main(&self, tip: &Digest) -> Option<(u64, Vec<Arc<Block>>)> {
        let mut path = Vec::new();
        let mut cur = *tip;
        loop {
            if self.is_on_main(&cur) {
                path.reverse();
                return Some((self.blocks[&cur].height, path));
            }
            let b = self.blocks.get(&cur)?;
            path.push(b.clone());
            cur = b.prev_hash;
        }
    }
}
