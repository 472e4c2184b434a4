//! The interface between the chain and a workflow engine, plus the two
//! engine designs: actions on chain and states on chain.

mod actions;
mod states;

pub use actions::ActionsEngine;
pub use states::{HeadView, StatesEngine};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::chain::{Block, ChainStore};
use crate::crypto::Digest;
use crate::petrinet::{CaseState, Value, WorkflowModel};
use crate::tx::{Transaction, TxBody};

/// Which engine design a network runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Actions,
    States,
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::Actions => "actions",
            Design::States => "states",
        })
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "actions" => Ok(Design::Actions),
            "states" => Ok(Design::States),
            other => Err(format!("unknown design `{other}` (expected actions or states)")),
        }
    }
}

/// Why a transaction is not permissible. Serialized as `{code, detail}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "code", content = "detail", rename_all = "snake_case")]
pub enum Rejection {
    #[error("signature does not verify")]
    BadSignature,
    #[error("signer `{0}` is not a network member")]
    UnknownSigner(String),
    #[error("transaction is already on the main branch")]
    AlreadyOnChain,
    #[error("transaction appears twice in one block")]
    DuplicateInBlock,
    #[error("{0} transactions are not used by this engine design")]
    WrongDesign(String),
    #[error("malformed model: {0}")]
    MalformedModel(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("case {0} already exists")]
    DuplicateCase(Uuid),
    #[error("unknown case {0}")]
    UnknownCase(Uuid),
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{transition}` is assigned to `{actor}`, not `{origin}`")]
    NotAssignedActor { transition: String, actor: String, origin: String },
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("transition `{0}` is not enabled once pending transactions are applied")]
    NotEnabledAfterPending(String),
    #[error("pre-value of `{0}` does not match the current value")]
    PreValueMismatch(String),
    #[error("malformed values: {0}")]
    MalformedValues(String),
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("case belongs to model `{expected}`, not `{got}`")]
    ModelMismatch { expected: String, got: String },
    #[error("state is unreachable: {0}")]
    Unreachable(String),
    #[error("reachability undecided within limits: {0}")]
    Indeterminate(String),
}

impl Rejection {
    /// Coarse category: signature problems versus workflow permissibility.
    pub fn category(&self) -> &'static str {
        match self {
            Rejection::BadSignature | Rejection::UnknownSigner(_) => "BadSignature",
            _ => "InvalidWorkflowAction",
        }
    }

    pub fn code(&self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.get("code").and_then(|c| c.as_str()).map(str::to_string))
            .unwrap_or_default()
    }
}

/// A block that passed validation could not be applied or reverted; the
/// engine and the chain disagree.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("engine inconsistency at block {block}: {detail}")]
pub struct EngineFault {
    pub block: Digest,
    pub detail: String,
}

/// What a block did to engine state, per case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum EngineEffect {
    ModelInstalled { model: String },
    ModelRetracted { model: String },
    CaseOpened { case_id: Uuid },
    CaseChanged { case_id: Uuid },
    CaseRemoved { case_id: Uuid },
}

/// The calls a chain makes into its workflow engine, and the reads the
/// node needs from it.
pub trait WorkflowEngine {
    fn design(&self) -> Design;

    /// Judges `tx` against current state plus `pending` (in order). Must
    /// leave the engine's observable state unchanged.
    fn validate_transaction(
        &mut self,
        tx: &Transaction,
        pending: &[&Transaction],
        chain: &ChainStore,
    ) -> Result<(), Rejection>;

    /// `block` became the new head (do-block / update-head).
    fn connect_block(&mut self, block: &Block, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault>;

    /// `block`, the current head, is popped (undo-block / reset-head to its parent).
    fn disconnect_block(&mut self, block: &Block, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault>;

    fn case(&self, case_id: &Uuid) -> Option<(&CaseState, &WorkflowModel)>;

    fn case_ids(&self) -> Vec<Uuid>;

    fn model(&self, name: &str) -> Option<Arc<WorkflowModel>>;

    fn model_names(&self) -> Vec<String>;

    /// Canonical JSON of the semantic state (models and cases).
    fn state_json(&self) -> serde_json::Value;

    fn state_digest(&self) -> Digest {
        let bytes = crate::canon::canonical_json_bytes(&self.state_json()).expect("engine state is canonical");
        crate::crypto::digest(&bytes)
    }

    fn case_states(&self) -> BTreeMap<Uuid, CaseState> {
        self.case_ids()
            .into_iter()
            .filter_map(|id| self.case(&id).map(|(c, _)| (id, c.clone())))
            .collect()
    }

    /// Body that launches a new case of `model`.
    fn launch_body(&self, model: &str, case_id: Uuid) -> Result<TxBody, Rejection>;

    /// Body recording completion of `transition` on `case_id` with `outputs`,
    /// computed against the validating state (head plus `pending`).
    fn completion_body(
        &mut self,
        case_id: Uuid,
        transition: &str,
        outputs: &BTreeMap<String, Value>,
        pending: &[&Transaction],
        chain: &ChainStore,
    ) -> Result<TxBody, Rejection>;

    /// Optional notice that `tx` entered some transaction pool.
    fn on_pending(&mut self, _tx: &Transaction) {}
}

/// Runtime choice between the two designs.
#[derive(Debug, Clone)]
pub enum AnyEngine {
    Actions(ActionsEngine),
    States(StatesEngine),
}

impl AnyEngine {
    pub fn new(design: Design) -> Self {
        match design {
            Design::Actions => AnyEngine::Actions(ActionsEngine::new()),
            Design::States => AnyEngine::States(StatesEngine::new()),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEngine::Actions($e) => $body,
            AnyEngine::States($e) => $body,
        }
    };
}

impl WorkflowEngine for AnyEngine {
    fn design(&self) -> Design {
        delegate!(self, e => e.design())
    }

    fn validate_transaction(&mut self, tx: &Transaction, pending: &[&Transaction], chain: &ChainStore) -> Result<(), Rejection> {
        delegate!(self, e => e.validate_transaction(tx, pending, chain))
    }

    fn connect_block(&mut self, block: &Block, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        delegate!(self, e => e.connect_block(block, chain))
    }

    fn disconnect_block(&mut self, block: &Block, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        delegate!(self, e => e.disconnect_block(block, chain))
    }

    fn case(&self, case_id: &Uuid) -> Option<(&CaseState, &WorkflowModel)> {
        delegate!(self, e => e.case(case_id))
    }

    fn case_ids(&self) -> Vec<Uuid> {
        delegate!(self, e => e.case_ids())
    }

    fn model(&self, name: &str) -> Option<Arc<WorkflowModel>> {
        delegate!(self, e => e.model(name))
    }

    fn model_names(&self) -> Vec<String> {
        delegate!(self, e => e.model_names())
    }

    fn state_json(&self) -> serde_json::Value {
        delegate!(self, e => e.state_json())
    }

    fn launch_body(&self, model: &str, case_id: Uuid) -> Result<TxBody, Rejection> {
        delegate!(self, e => e.launch_body(model, case_id))
    }

    fn completion_body(
        &mut self,
        case_id: Uuid,
        transition: &str,
        outputs: &BTreeMap<String, Value>,
        pending: &[&Transaction],
        chain: &ChainStore,
    ) -> Result<TxBody, Rejection> {
        delegate!(self, e => e.completion_body(case_id, transition, outputs, pending, chain))
    }

    fn on_pending(&mut self, tx: &Transaction) {
        delegate!(self, e => e.on_pending(tx))
    }
}

/// Checks user-supplied outputs against an activity's declared outputs and
/// variable types.
pub(crate) fn check_outputs(
    model: &WorkflowModel,
    transition: &str,
    outputs: &BTreeMap<String, Value>,
) -> Result<(), Rejection> {
    let activity = model
        .transition(transition)
        .ok_or_else(|| Rejection::UnknownTransition(transition.to_string()))?;
    let types = model.variable_types();
    for (name, value) in outputs {
        if !activity.outputs.contains(name) {
            return Err(Rejection::MalformedValues(format!("`{name}` is not an output of `{transition}`")));
        }
        if types.get(name) != Some(&value.value_type()) {
            return Err(Rejection::MalformedValues(format!("`{name}` has the wrong type")));
        }
    }
    Ok(())
}
