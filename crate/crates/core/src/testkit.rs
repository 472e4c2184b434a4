//! Deterministic fixtures shared by test suites and the simulator.

use std::collections::BTreeMap;

use uuid::Uuid;

use crate::chain::{Block, MiningTemplate};
use crate::crypto::{Digest, NodeIdentity};
use crate::node::NodeSettings;
use crate::p2p::PeerInfo;
use crate::petrinet::fixtures::seq;
use crate::tx::{Transaction, TxBody};

/// Peer entries for `names`, with keys derived from the names.
pub fn peer_infos(names: &[&str]) -> Vec<PeerInfo> {
    names
        .iter()
        .map(|n| PeerInfo { name: n.to_string(), address: format!("sim://{n}"), public_key: NodeIdentity::for_name(n).public_key() })
        .collect()
}

pub fn settings(names: &[&str], network_id: &str, design: crate::engine::Design, depth: u64, difficulty: u32) -> NodeSettings {
    let mut s = NodeSettings::new(network_id, design);
    s.confirmation_depth = depth;
    s.difficulty = difficulty;
    s.peers = peer_infos(names);
    s
}

/// The example chain: main branch 0-1-2-3-4, competing side branch 2b-3b,
/// and a block 6 whose parent 5 is withheld.
///
/// Transactions are named after their block and slot (`Tx21` is the first
/// transaction of block 2). `Tx22` and `Tx32` are included on both branches.
pub struct ExampleChain {
    pub network_id: String,
    pub difficulty: u32,
    pub blocks: BTreeMap<&'static str, Block>,
    pub txs: BTreeMap<&'static str, Transaction>,
    pub miners: [&'static str; 2],
}

impl ExampleChain {
    pub fn build(difficulty: u32) -> Self {
        let n1 = NodeIdentity::for_name("n1");
        let n2 = NodeIdentity::for_name("n2");
        let mut txs = BTreeMap::new();
        let mut seqs = [0u64; 2];
        let mut sign = |name: &'static str, who: usize, body: TxBody| {
            let id = if who == 0 { &n1 } else { &n2 };
            let tx = Transaction::sign(id, seqs[who], body).expect("canonical");
            seqs[who] += 1;
            txs.insert(name, tx);
        };
        sign("Tx11", 0, TxBody::ModelUpdate { model: seq("n1", "n2") });
        let names = [
            "Tx12", "Tx21", "Tx22", "Tx23", "Tx21b", "Tx23b", "Tx31", "Tx32", "Tx33", "Tx31b", "Tx33b", "Tx41", "Tx51", "Tx61",
        ];
        for (i, name) in names.iter().enumerate() {
            let case_id = Uuid::from_u128(0xf1_0000 + i as u128);
            sign(name, i % 2, TxBody::InitCase { model: "SEQ".into(), case_id });
        }

        let mut blocks: BTreeMap<&'static str, Block> = BTreeMap::new();
        let layout: [(&'static str, &str, &str, &[&str]); 8] = [
            ("1", "0", "n1", &["Tx11", "Tx12"]),
            ("2", "1", "n1", &["Tx21", "Tx22", "Tx23"]),
            ("2b", "1", "n2", &["Tx21b", "Tx22", "Tx23b"]),
            ("3", "2", "n1", &["Tx31", "Tx32", "Tx33"]),
            ("3b", "2b", "n2", &["Tx31b", "Tx32", "Tx33b"]),
            ("4", "3", "n1", &["Tx41"]),
            ("5", "4", "n2", &["Tx51"]),
            ("6", "5", "n1", &["Tx61"]),
        ];
        let genesis = Block::genesis("example");
        for (name, parent, miner, tx_names) in layout {
            let (prev, height): (Digest, u64) = if parent == "0" {
                (genesis.block_hash, 1)
            } else {
                let p = &blocks[parent];
                (p.block_hash, p.height + 1)
            };
            let body = tx_names.iter().map(|t| txs[t].clone()).collect();
            let mut t = MiningTemplate::new(prev, height, miner, body);
            let block = t.mine_step(difficulty, u64::MAX).expect("found");
            blocks.insert(name, block);
        }
        Self { network_id: "example".into(), difficulty, blocks, txs, miners: ["n1", "n2"] }
    }

    pub fn block(&self, name: &str) -> &Block {
        &self.blocks[name]
    }

    pub fn tx_name(&self, id: &Digest) -> Option<&'static str> {
        self.txs.iter().find(|(_, t)| t.id() == *id).map(|(n, _)| *n)
    }

    pub fn settings(&self, design: crate::engine::Design) -> NodeSettings {
        settings(&self.miners, &self.network_id, design, 2, self.difficulty)
    }
}
