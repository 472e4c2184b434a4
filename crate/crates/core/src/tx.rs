//! Signed workflow transactions for both engine designs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::canon::{canonical_bytes, CanonicalizationError};
use crate::crypto::{digest, try_verify, Digest, NodeIdentity, PublicKey, Signature, VerificationError};
use crate::petrinet::{Marking, Value, WorkflowModel};

pub type TxId = Digest;

/// Transaction payload, tagged by `type`.
///
/// `ModelUpdate` is shared by both designs. `InitCase` and `FireTransition`
/// belong to the actions-on-chain engine; `InstanceState` to the
/// states-on-chain engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum TxBody {
    ModelUpdate {
        model: WorkflowModel,
    },
    InitCase {
        model: String,
        case_id: Uuid,
    },
    FireTransition {
        case_id: Uuid,
        transition: String,
        inputs: BTreeMap<String, Value>,
        pre_values: BTreeMap<String, Value>,
        post_values: BTreeMap<String, Value>,
    },
    InstanceState {
        case_id: Uuid,
        model: String,
        marking: Marking,
        values: BTreeMap<String, Value>,
    },
}

impl TxBody {
    pub fn kind(&self) -> &'static str {
        match self {
            TxBody::ModelUpdate { .. } => "ModelUpdate",
            TxBody::InitCase { .. } => "InitCase",
            TxBody::FireTransition { .. } => "FireTransition",
            TxBody::InstanceState { .. } => "InstanceState",
        }
    }

    pub fn case_id(&self) -> Option<Uuid> {
        match self {
            TxBody::ModelUpdate { .. } => None,
            TxBody::InitCase { case_id, .. }
            | TxBody::FireTransition { case_id, .. }
            | TxBody::InstanceState { case_id, .. } => Some(*case_id),
        }
    }
}

/// Wire form: the body's fields flattened next to `origin`, `seq` and `signature`.
#[derive(Serialize, Deserialize, Clone)]
struct TxWire {
    #[serde(flatten)]
    body: TxBody,
    origin: String,
    seq: u64,
    signature: Signature,
}

#[derive(Serialize)]
struct TxUnsigned<'a> {
    #[serde(flatten)]
    body: &'a TxBody,
    origin: &'a str,
    seq: u64,
}

/// A signed transaction. `seq` is a per-origin counter that keeps
/// otherwise identical actions distinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TxWire", into = "TxWire")]
pub struct Transaction {
    body: TxBody,
    origin: String,
    seq: u64,
    signature: Signature,
    id: TxId,
}

impl From<Transaction> for TxWire {
    fn from(tx: Transaction) -> Self {
        TxWire { body: tx.body, origin: tx.origin, seq: tx.seq, signature: tx.signature }
    }
}

impl TryFrom<TxWire> for Transaction {
    type Error = CanonicalizationError;

    fn try_from(w: TxWire) -> Result<Self, Self::Error> {
        let id = digest(&unsigned_bytes(&w.body, &w.origin, w.seq)?);
        Ok(Transaction { body: w.body, origin: w.origin, seq: w.seq, signature: w.signature, id })
    }
}

fn unsigned_bytes(body: &TxBody, origin: &str, seq: u64) -> Result<Vec<u8>, CanonicalizationError> {
    canonical_bytes(&TxUnsigned { body, origin, seq })
}

impl Transaction {
    pub fn sign(identity: &NodeIdentity, seq: u64, body: TxBody) -> Result<Self, CanonicalizationError> {
        let bytes = unsigned_bytes(&body, &identity.name, seq)?;
        let signature = identity.sign(&bytes);
        Ok(Transaction { id: digest(&bytes), body, origin: identity.name.clone(), seq, signature })
    }

    pub fn id(&self) -> TxId {
        self.id
    }

    pub fn body(&self) -> &TxBody {
        &self.body
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn verify(&self, key: &PublicKey) -> Result<(), VerificationError> {
        let bytes = unsigned_bytes(&self.body, &self.origin, self.seq).map_err(|_| VerificationError::BadSignature)?;
        try_verify(key, &bytes, &self.signature)
    }

    /// Test helper: a copy with a replaced body but the old signature.
    #[doc(hidden)]
    pub fn with_forged_body(&self, body: TxBody) -> Self {
        let id = digest(&unsigned_bytes(&body, &self.origin, self.seq).expect("canonical"));
        Transaction { body, origin: self.origin.clone(), seq: self.seq, signature: self.signature, id }
    }
}
