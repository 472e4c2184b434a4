//! The nine-message peer protocol, its framed wire codec and the peer table.

mod codec;
pub mod sim;

pub use codec::{decode_body, decode_frame, encode_message, frame_body, FrameReader, Handshake, ProtocolError, SignedMessage, MAX_FRAME};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::Block;
use crate::crypto::{Digest, PublicKey};
use crate::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub name: String,
    pub address: String,
    pub public_key: PublicKey,
}

/// Wire messages. The tag becomes the frame's `type`, the fields its `payload`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", deny_unknown_fields)]
pub enum Message {
    BlockRequest { hash: Digest },
    BlockSend { block: Block },
    PeersRequest {},
    PeersSend { peers: Vec<PeerInfo> },
    TransactionSend { transaction: Transaction },
    TransactionPoolRequest {},
    TransactionPoolSend { transactions: Vec<Transaction> },
    BlockchainRequest { from_hash: Digest },
    BlockchainSend { blocks: Vec<Block> },
}

impl Message {
    pub const TYPES: [&'static str; 9] = [
        "BlockRequest",
        "BlockSend",
        "PeersRequest",
        "PeersSend",
        "TransactionSend",
        "TransactionPoolRequest",
        "TransactionPoolSend",
        "BlockchainRequest",
        "BlockchainSend",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            Message::BlockRequest { .. } => "BlockRequest",
            Message::BlockSend { .. } => "BlockSend",
            Message::PeersRequest {} => "PeersRequest",
            Message::PeersSend { .. } => "PeersSend",
            Message::TransactionSend { .. } => "TransactionSend",
            Message::TransactionPoolRequest {} => "TransactionPoolRequest",
            Message::TransactionPoolSend { .. } => "TransactionPoolSend",
            Message::BlockchainRequest { .. } => "BlockchainRequest",
            Message::BlockchainSend { .. } => "BlockchainSend",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerEntry {
    pub info: PeerInfo,
    pub connected: bool,
}

/// Configured peers by name. The local node is never listed, and only
/// configured members are ever added.
#[derive(Debug, Clone, Default)]
pub struct PeerTable {
    local: String,
    peers: BTreeMap<String, PeerEntry>,
}

impl PeerTable {
    pub fn new(local: impl Into<String>, configured: impl IntoIterator<Item = PeerInfo>) -> Self {
        let local = local.into();
        let peers = configured
            .into_iter()
            .filter(|p| p.name != local)
            .map(|p| (p.name.clone(), PeerEntry { info: p, connected: false }))
            .collect();
        Self { local, peers }
    }

    pub fn get(&self, name: &str) -> Option<&PeerEntry> {
        self.peers.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.peers.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PeerEntry> {
        self.peers.values()
    }

    pub fn infos(&self) -> Vec<PeerInfo> {
        self.peers.values().map(|e| e.info.clone()).collect()
    }

    pub fn key_of(&self, name: &str) -> Option<PublicKey> {
        self.peers.get(name).map(|e| e.info.public_key)
    }

    pub fn set_connected(&mut self, name: &str, connected: bool) {
        if let Some(e) = self.peers.get_mut(name) {
            e.connected = connected;
        }
    }

    /// Updates addresses of known peers whose key matches; everything else
    /// (self, strangers, key changes) is ignored. Returns the number updated.
    pub fn merge(&mut self, received: &[PeerInfo]) -> usize {
        let mut n = 0;
        for p in received {
            if p.name == self.local {
                continue;
            }
            if let Some(e) = self.peers.get_mut(&p.name) {
                if e.info.public_key == p.public_key && e.info.address != p.address {
                    e.info.address = p.address.clone();
                    n += 1;
                }
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::NodeIdentity;

    fn info(name: &str) -> PeerInfo {
        let id = NodeIdentity::for_name(name);
        PeerInfo { name: name.into(), address: format!("{name}:1"), public_key: id.public_key() }
    }

    #[test]
    fn table_excludes_self_and_strangers() {
        let mut t = PeerTable::new("n1", [info("n1"), info("n2"), info("n3")]);
        assert_eq!(t.names().cloned().collect::<Vec<_>>(), ["n2", "n3"]);
        let mut moved = info("n2");
        moved.address = "elsewhere:2".into();
        let mut impostor = info("n3");
        impostor.public_key = NodeIdentity::for_name("x").public_key();
        impostor.address = "evil:1".into();
        assert_eq!(t.merge(&[moved, impostor, info("n9"), info("n1")]), 1);
        assert_eq!(t.get("n2").unwrap().info.address, "elsewhere:2");
        assert_eq!(t.get("n3").unwrap().info.address, "n3:1");
        assert!(t.get("n9").is_none());
    }
}
