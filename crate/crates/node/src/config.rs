//! Daemon configuration: one canonical-JSON file per node, with command
//! line overrides applied on top.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chainflow_core::canon::canonical_bytes;
use chainflow_core::crypto::{Digest, NodeIdentity, PublicKey};
use chainflow_core::engine::Design;
use chainflow_core::node::NodeSettings;
use chainflow_core::p2p::PeerInfo;
use chainflow_core::petrinet::Value;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("peer `{0}` is listed twice")]
    DuplicatePeer(String),
    #[error("peer list contains this node (`{0}`)")]
    SelfPeer(String),
    #[error("difficulty {0} is out of range 0-32")]
    Difficulty(u32),
    #[error("nonce budget must be positive")]
    NonceBudget,
    #[error("node name is empty")]
    EmptyName,
    #[error("key file {path}: {message}")]
    Key { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerConfig {
    pub name: String,
    /// `host:port` of the peer's p2p listener.
    pub address: String,
    pub public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_difficulty")]
    pub difficulty: u32,
    /// Nonces tried per turn of the event loop.
    #[serde(default = "default_budget")]
    pub nonce_budget: u64,
    /// Mine even when nothing is pending or waiting for confirmation.
    #[serde(default)]
    pub idle: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { enabled: false, difficulty: default_difficulty(), nonce_budget: default_budget(), idle: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListenConfig {
    #[serde(default = "default_p2p")]
    pub p2p: SocketAddr,
    #[serde(default = "default_api")]
    pub api: SocketAddr,
}

impl Default for ListenConfig {
    fn default() -> Self {
        Self { p2p: default_p2p(), api: default_api() }
    }
}

/// How an activity with an external handler is executed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HandlerSpec {
    /// Completes with the given outputs.
    Mock {
        #[serde(default)]
        outputs: BTreeMap<String, Value>,
    },
    /// Runs `program args...` with the work item as JSON on stdin and reads
    /// the outputs object from stdout.
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub name: String,
    /// File holding the hex Ed25519 seed; created on first start when
    /// missing. Without it the key is derived from the name, which only
    /// suits local experiments.
    #[serde(default)]
    pub key_file: Option<PathBuf>,
    pub network_id: String,
    /// Expected genesis hash; startup fails when the network id yields
    /// another.
    #[serde(default)]
    pub genesis: Option<Digest>,
    #[serde(default)]
    pub peers: Vec<PeerConfig>,
    #[serde(default = "default_design")]
    pub design: Design,
    #[serde(default = "default_depth")]
    pub confirmation_depth: u64,
    #[serde(default)]
    pub mining: MiningConfig,
    #[serde(default)]
    pub listen: ListenConfig,
    #[serde(default)]
    pub handlers: BTreeMap<String, HandlerSpec>,
    /// Directory for the block log; nothing is persisted without it.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
}

fn default_difficulty() -> u32 {
    16
}
fn default_budget() -> u64 {
    1 << 14
}
fn default_depth() -> u64 {
    2
}
fn default_design() -> Design {
    Design::Actions
}
fn default_p2p() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 7000))
}
fn default_api() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8000))
}

impl NodeConfig {
    /// A config with every optional field at its default.
    pub fn new(name: impl Into<String>, network_id: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            key_file: None,
            network_id: network_id.into(),
            genesis: None,
            peers: Vec::new(),
            design: default_design(),
            confirmation_depth: default_depth(),
            mining: MiningConfig::default(),
            listen: ListenConfig::default(),
            handlers: BTreeMap::new(),
            data_dir: None,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical_bytes(self).expect("config holds no floats")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() {
            return Err(ConfigError::EmptyName);
        }
        if self.mining.difficulty > 32 {
            return Err(ConfigError::Difficulty(self.mining.difficulty));
        }
        if self.mining.nonce_budget == 0 {
            return Err(ConfigError::NonceBudget);
        }
        let mut seen = BTreeSet::new();
        for p in &self.peers {
            if p.name == self.name {
                return Err(ConfigError::SelfPeer(p.name.clone()));
            }
            if !seen.insert(&p.name) {
                return Err(ConfigError::DuplicatePeer(p.name.clone()));
            }
        }
        Ok(())
    }

    /// Loads the signing key, generating and storing one if the key file
    /// does not exist yet.
    pub fn identity(&self) -> Result<NodeIdentity, ConfigError> {
        let address = self.listen.p2p.to_string();
        let Some(path) = &self.key_file else {
            let mut id = NodeIdentity::for_name(&self.name);
            id.address = address;
            return Ok(id);
        };
        let key_err = |message: String| ConfigError::Key { path: path.clone(), message };
        match std::fs::read_to_string(path) {
            Ok(text) => {
                let bytes = hex::decode(text.trim()).map_err(|e| key_err(e.to_string()))?;
                let seed: [u8; 32] = bytes.try_into().map_err(|_| key_err("expected 32 hex-encoded bytes".into()))?;
                Ok(NodeIdentity::from_seed(&self.name, address, seed))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let id = NodeIdentity::generate(&self.name, address, &mut rand::rngs::OsRng);
                std::fs::write(path, hex::encode(id.seed())).map_err(|e| key_err(e.to_string()))?;
                Ok(id)
            }
            Err(e) => Err(key_err(e.to_string())),
        }
    }

    pub fn settings(&self) -> NodeSettings {
        let mut s = NodeSettings::new(&self.network_id, self.design);
        s.confirmation_depth = self.confirmation_depth;
        s.difficulty = self.mining.difficulty;
        s.peers = self
            .peers
            .iter()
            .map(|p| PeerInfo { name: p.name.clone(), address: p.address.clone(), public_key: p.public_key })
            .collect();
        s
    }
}

pub fn load_config(path: &Path) -> Result<NodeConfig, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    NodeConfig::from_json(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = NodeConfig::from_json(br#"{"name": "n1", "network_id": "net"}"#).unwrap();
        assert_eq!(c.confirmation_depth, 2);
        assert_eq!(c.mining.difficulty, 16);
        assert!(!c.mining.enabled);
        assert_eq!(c.design, Design::Actions);
        assert_eq!(c, NodeConfig::new("n1", "net"));
    }

    #[test]
    fn duplicate_peer_is_an_error() {
        let key = NodeIdentity::for_name("n2").public_key().to_base64();
        let doc = format!(
            r#"{{"name": "n1", "network_id": "net", "peers": [
                {{"name": "n2", "address": "127.0.0.1:1", "public_key": "{key}"}},
                {{"name": "n2", "address": "127.0.0.1:2", "public_key": "{key}"}}]}}"#
        );
        assert!(matches!(NodeConfig::from_json(doc.as_bytes()), Err(ConfigError::DuplicatePeer(n)) if n == "n2"));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = NodeConfig::from_json(br#"{"name": "n1", "network_id": "net", "mining": {"difficulty": "hard"}}"#)
            .unwrap_err();
        match err {
            ConfigError::Schema { path, .. } => assert_eq!(path, "mining.difficulty"),
            other => panic!("{other}"),
        }
        let err = NodeConfig::from_json(br#"{"name": "n1", "network_id": "net", "colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn canonical_round_trip_is_stable() {
        let mut c = NodeConfig::new("n1", "net");
        c.handlers.insert("check".into(), HandlerSpec::Mock { outputs: BTreeMap::new() });
        let bytes = c.to_canonical();
        let back = NodeConfig::from_json(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_canonical(), bytes);
    }

    #[test]
    fn key_file_is_created_then_reused() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = NodeConfig::new("n1", "net");
        c.key_file = Some(dir.path().join("n1.key"));
        let a = c.identity().unwrap();
        let b = c.identity().unwrap();
        assert_eq!(a.public_key(), b.public_key());
        assert_ne!(a.public_key(), NodeIdentity::for_name("n1").public_key());
    }
}
