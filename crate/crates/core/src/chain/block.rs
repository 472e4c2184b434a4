use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::canon::{canonical_bytes, CanonicalizationError};
use crate::crypto::{digest, Digest};
use crate::tx::Transaction;

/// A hash-linked block of signed workflow transactions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub prev_hash: Digest,
    pub height: u64,
    pub nonce: u64,
    pub miner: String,
    pub transactions: Vec<Transaction>,
    pub block_hash: Digest,
}

#[derive(Serialize)]
struct BlockContent<'a> {
    prev_hash: &'a Digest,
    height: u64,
    nonce: u64,
    miner: &'a str,
    transactions: &'a [Transaction],
}

impl Block {
    /// The network's fixed first block; every node derives the same one.
    pub fn genesis(network_id: &str) -> Block {
        let mut b = Block {
            prev_hash: Digest::ZERO,
            height: 0,
            nonce: 0,
            miner: format!("genesis:{network_id}"),
            transactions: Vec::new(),
            block_hash: Digest::ZERO,
        };
        b.block_hash = b.compute_hash().expect("genesis is canonical");
        b
    }

    /// Canonical bytes of everything except `block_hash`.
    pub fn content_bytes(&self) -> Result<Vec<u8>, CanonicalizationError> {
        canonical_bytes(&BlockContent {
            prev_hash: &self.prev_hash,
            height: self.height,
            nonce: self.nonce,
            miner: &self.miner,
            transactions: &self.transactions,
        })
    }

    pub fn compute_hash(&self) -> Result<Digest, CanonicalizationError> {
        Ok(digest(&self.content_bytes()?))
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.prev_hash == Digest::ZERO
    }

    pub fn meets_difficulty(&self, bits: u32) -> bool {
        self.block_hash.leading_zero_bits() >= bits
    }
}

/// A candidate block split around its nonce so each attempt only hashes
/// the pre-absorbed prefix state plus the digits and the suffix.
pub struct MiningTemplate {
    block: Block,
    prefix: Sha256,
    suffix: Vec<u8>,
    next_nonce: u64,
}

impl MiningTemplate {
    pub fn new(prev_hash: Digest, height: u64, miner: &str, transactions: Vec<Transaction>) -> Self {
        let block = Block { prev_hash, height, nonce: 0, miner: miner.to_string(), transactions, block_hash: Digest::ZERO };
        let bytes = block.content_bytes().expect("candidate block is canonical");
        // Keys are sorted: height, miner, nonce, prev_hash, transactions. The
        // miner string is JSON-escaped, so this pattern cannot occur before
        // the real nonce field.
        let marker = b",\"nonce\":0,\"prev_hash\":";
        let at = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .expect("nonce field present");
        let split = at + b",\"nonce\":".len();
        let mut prefix = Sha256::new();
        prefix.update(&bytes[..split]);
        let suffix = bytes[split + 1..].to_vec();
        Self { block, prefix, suffix, next_nonce: 0 }
    }

    pub fn height(&self) -> u64 {
        self.block.height
    }

    pub fn prev_hash(&self) -> Digest {
        self.block.prev_hash
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.block.transactions
    }

    fn hash_with(&self, nonce: u64) -> Digest {
        let mut h = self.prefix.clone();
        h.update(nonce.to_string().as_bytes());
        h.update(&self.suffix);
        Digest(h.finalize().into())
    }

    /// Tries up to `budget` nonces; returns the sealed block on success.
    pub fn mine_step(&mut self, difficulty: u32, budget: u64) -> Option<Block> {
        for _ in 0..budget {
            let nonce = self.next_nonce;
            self.next_nonce = self.next_nonce.wrapping_add(1);
            let hash = self.hash_with(nonce);
            if hash.leading_zero_bits() >= difficulty {
                let mut block = self.block.clone();
                block.nonce = nonce;
                block.block_hash = hash;
                return Some(block);
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::NodeIdentity;
    use crate::petrinet::fixtures::seq;
    use crate::tx::TxBody;

    #[test]
    fn genesis_is_deterministic_per_network() {
        assert_eq!(Block::genesis("net"), Block::genesis("net"));
        assert_ne!(Block::genesis("net").block_hash, Block::genesis("other").block_hash);
        let g = Block::genesis("net");
        assert!(g.is_genesis());
        assert_eq!(g.compute_hash().unwrap(), g.block_hash);
    }

    #[test]
    fn template_hash_matches_full_recomputation() {
        let id = NodeIdentity::for_name("n\",\"nonce\":0,\"prev_hash\":");
        let tx = Transaction::sign(&id, 0, TxBody::ModelUpdate { model: seq("a", "b") }).unwrap();
        let mut t = MiningTemplate::new(digest(b"parent"), 7, &id.name, vec![tx]);
        for _ in 0..20 {
            let b = t.mine_step(0, 1).unwrap();
            assert_eq!(b.compute_hash().unwrap(), b.block_hash);
        }
    }

    #[test]
    fn zero_difficulty_first_nonce_wins() {
        let mut t = MiningTemplate::new(Digest::ZERO, 1, "n1", vec![]);
        let b = t.mine_step(0, 1).unwrap();
        assert_eq!(b.nonce, 0);
    }

    #[test]
    fn difficulty_eight_has_leading_zero_bits() {
        let mut t = MiningTemplate::new(digest(b"x"), 1, "n1", vec![]);
        let b = t.mine_step(8, 1_000_000).expect("found within budget");
        assert_eq!(b.compute_hash().unwrap(), b.block_hash);
        assert!(b.block_hash.leading_zero_bits() >= 8);
    }

    #[test]
    fn budget_exhaustion_is_not_found() {
        let mut t = MiningTemplate::new(digest(b"x"), 1, "n1", vec![]);
        assert!(t.mine_step(64, 10).is_none());
    }
}
