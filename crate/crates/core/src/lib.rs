//! Core of a blockchain-backed inter-organizational workflow system:
//! canonical encoding and signatures, Petri-net workflow semantics, the
//! chain state machine, the two workflow engine designs, worklists, the
//! peer protocol and the sans-IO node that ties them together.

pub mod canon;
pub mod chain;
pub mod crypto;
pub mod engine;
pub mod petrinet;
pub mod tx;
pub mod node;
pub mod p2p;
pub mod worklist;
pub mod testkit;
