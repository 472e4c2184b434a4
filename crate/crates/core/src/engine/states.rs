//! States on chain: case states are read off the chain, and a new state is
//! valid when it is reachable from every state it could follow.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde_json::json;
use uuid::Uuid;

use super::{check_outputs, Design, EngineEffect, EngineFault, Rejection, WorkflowEngine};
use crate::canon::canonical_bytes;
use crate::chain::{Block, ChainStore};
use crate::crypto::{digest, Digest};
use crate::petrinet::{fire, is_enabled, is_reachable, CaseState, Marking, ReachLimits, Reachability, Value, WorkflowModel};
use crate::tx::{Transaction, TxBody};

#[derive(Debug, Clone, PartialEq)]
pub struct ViewCase {
    pub state: CaseState,
    pub model: Arc<WorkflowModel>,
}

/// Latest case states and models at or below `head`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadView {
    pub head: Digest,
    pub models: BTreeMap<String, Arc<WorkflowModel>>,
    pub cases: BTreeMap<Uuid, ViewCase>,
}

impl HeadView {
    pub fn empty(head: Digest) -> Self {
        Self { head, models: BTreeMap::new(), cases: BTreeMap::new() }
    }

    /// The view after `block`, whose parent is `self.head`.
    pub fn advance(&self, block: &Block) -> Result<HeadView, String> {
        let mut next = self.clone();
        next.head = block.block_hash;
        for tx in &block.transactions {
            match tx.body() {
                TxBody::ModelUpdate { model } => {
                    next.models.insert(model.name.clone(), Arc::new(model.clone()));
                }
                TxBody::InstanceState { case_id, model, marking, values } => {
                    let bound = match next.cases.get(case_id) {
                        Some(c) => c.model.clone(),
                        None => next.models.get(model).cloned().ok_or_else(|| format!("unknown model {model}"))?,
                    };
                    let state = CaseState { case_id: *case_id, model: model.clone(), marking: marking.clone(), values: values.clone() };
                    next.cases.insert(*case_id, ViewCase { state, model: bound });
                }
                other => return Err(format!("{} is not a state transaction", other.kind())),
            }
        }
        Ok(next)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let model_digest = |m: &WorkflowModel| digest(&canonical_bytes(m).expect("model is canonical")).to_hex();
        let models: BTreeMap<&String, String> = self.models.iter().map(|(k, m)| (k, model_digest(m))).collect();
        let cases: BTreeMap<String, serde_json::Value> = self
            .cases
            .iter()
            .map(|(id, c)| (id.to_string(), json!({"state": c.state, "model": model_digest(&c.model)})))
            .collect();
        json!({"models": models, "cases": cases})
    }
}

/// Engine whose only state is a cache of head views keyed by block hash.
#[derive(Debug, Clone)]
pub struct StatesEngine {
    view: Arc<HeadView>,
    memo: HashMap<Digest, Arc<HeadView>>,
    limits: ReachLimits,
}

impl Default for StatesEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl StatesEngine {
    pub fn new() -> Self {
        Self { view: Arc::new(HeadView::empty(Digest::ZERO)), memo: HashMap::new(), limits: ReachLimits::default() }
    }

    pub fn with_limits(mut self, limits: ReachLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn view(&self) -> &HeadView {
        &self.view
    }

    /// Drops every cached view; the next reset rebuilds from the chain.
    pub fn clear_cache(&mut self) {
        self.memo.clear();
    }

    /// Rebuilds the view at `hash` by reading the chain backwards to the
    /// nearest cached view (or genesis) and folding forward.
    pub fn reset_head(&mut self, hash: Digest, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        let fault = |detail: String| EngineFault { block: hash, detail };
        let mut stack: Vec<Arc<Block>> = Vec::new();
        let mut cur = hash;
        let base = loop {
            if let Some(v) = self.memo.get(&cur) {
                break v.clone();
            }
            let block = chain.block(&cur).ok_or_else(|| fault(format!("block {cur} is not stored")))?;
            if block.is_genesis() {
                let v = Arc::new(HeadView::empty(cur));
                self.memo.insert(cur, v.clone());
                break v;
            }
            stack.push(block.clone());
            cur = block.prev_hash;
        };
        let mut view = base;
        for block in stack.into_iter().rev() {
            let next = Arc::new(view.advance(&block).map_err(fault)?);
            self.memo.insert(block.block_hash, next.clone());
            view = next;
        }
        let effects = diff(&self.view, &view);
        self.view = view;
        Ok(effects)
    }

    fn lookup_model(&self, name: &str, pending: &[&Transaction]) -> Option<Arc<WorkflowModel>> {
        let pending_model = pending.iter().rev().find_map(|tx| match tx.body() {
            TxBody::ModelUpdate { model } if model.name == name => Some(Arc::new(model.clone())),
            _ => None,
        });
        pending_model.or_else(|| self.view.models.get(name).cloned())
    }

    fn pending_states<'p>(pending: &[&'p Transaction], case_id: Uuid) -> Vec<(&'p String, &'p Marking, &'p BTreeMap<String, Value>)> {
        pending
            .iter()
            .filter_map(|tx| match tx.body() {
                TxBody::InstanceState { case_id: c, model, marking, values } if *c == case_id => Some((model, marking, values)),
                _ => None,
            })
            .collect()
    }

    fn check_state(
        &self,
        case_id: Uuid,
        model_name: &str,
        marking: &Marking,
        values: &BTreeMap<String, Value>,
        pending: &[&Transaction],
    ) -> Result<(), Rejection> {
        let earlier = Self::pending_states(pending, case_id);
        let (model, mut sources) = match self.view.cases.get(&case_id) {
            Some(c) => (c.model.clone(), vec![c.state.marking.clone()]),
            None => {
                let creator = earlier.first().map(|(m, _, _)| m.as_str()).unwrap_or(model_name);
                let model = self.lookup_model(creator, pending).ok_or_else(|| Rejection::UnknownModel(creator.to_string()))?;
                let initial = model.initial_marking.clone();
                (model, vec![initial])
            }
        };
        if model.name != model_name {
            return Err(Rejection::ModelMismatch { expected: model.name.clone(), got: model_name.to_string() });
        }
        sources.extend(earlier.iter().map(|(_, m, _)| (*m).clone()));

        model.check_marking(marking).map_err(|e| Rejection::MalformedValues(e.to_string()))?;
        model.check_values(values).map_err(Rejection::MalformedValues)?;
        let constraints = model.global_constraints().map_err(|e| Rejection::ConstraintViolation(e.to_string()))?;
        for c in &constraints {
            match c.evaluate(values) {
                Ok(true) => {}
                Ok(false) => return Err(Rejection::ConstraintViolation(c.source().to_string())),
                Err(e) => return Err(Rejection::ConstraintViolation(format!("{}: {e}", c.source()))),
            }
        }
        for from in &sources {
            match is_reachable(&model, from, marking, self.limits) {
                Ok(Reachability::Reachable) => {}
                Ok(Reachability::Unreachable) => {
                    return Err(Rejection::Unreachable(format!("{marking} from {from}")));
                }
                Ok(Reachability::LimitExceeded) => {
                    return Err(Rejection::Indeterminate(format!("{marking} from {from}")));
                }
                Err(e) => return Err(Rejection::MalformedValues(e.to_string())),
            }
        }
        Ok(())
    }
}

fn diff(old: &HeadView, new: &HeadView) -> Vec<EngineEffect> {
    let mut out = Vec::new();
    for (name, m) in &new.models {
        if old.models.get(name).map(|o| Arc::ptr_eq(o, m) || o == m) != Some(true) {
            out.push(EngineEffect::ModelInstalled { model: name.clone() });
        }
    }
    for name in old.models.keys().filter(|n| !new.models.contains_key(*n)) {
        out.push(EngineEffect::ModelRetracted { model: name.clone() });
    }
    for (id, c) in &new.cases {
        match old.cases.get(id) {
            None => out.push(EngineEffect::CaseOpened { case_id: *id }),
            Some(o) if o.state != c.state => out.push(EngineEffect::CaseChanged { case_id: *id }),
            Some(_) => {}
        }
    }
    for id in old.cases.keys().filter(|id| !new.cases.contains_key(*id)) {
        out.push(EngineEffect::CaseRemoved { case_id: *id });
    }
    out
}

impl WorkflowEngine for StatesEngine {
    fn design(&self) -> Design {
        Design::States
    }

    fn validate_transaction(&mut self, tx: &Transaction, pending: &[&Transaction], _chain: &ChainStore) -> Result<(), Rejection> {
        match tx.body() {
            TxBody::ModelUpdate { model } => model.validate().map_err(|e| Rejection::MalformedModel(e.to_string())),
            TxBody::InstanceState { case_id, model, marking, values } => {
                self.check_state(*case_id, model, marking, values, pending)
            }
            other => Err(Rejection::WrongDesign(other.kind().to_string())),
        }
    }

    fn connect_block(&mut self, block: &Block, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        self.reset_head(block.block_hash, chain)
    }

    fn disconnect_block(&mut self, block: &Block, chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        self.reset_head(block.prev_hash, chain)
    }

    fn case(&self, case_id: &Uuid) -> Option<(&CaseState, &WorkflowModel)> {
        self.view.cases.get(case_id).map(|c| (&c.state, c.model.as_ref()))
    }

    fn case_ids(&self) -> Vec<Uuid> {
        self.view.cases.keys().copied().collect()
    }

    fn model(&self, name: &str) -> Option<Arc<WorkflowModel>> {
        self.view.models.get(name).cloned()
    }

    fn model_names(&self) -> Vec<String> {
        self.view.models.keys().cloned().collect()
    }

    fn state_json(&self) -> serde_json::Value {
        self.view.to_json()
    }

    fn launch_body(&self, model: &str, case_id: Uuid) -> Result<TxBody, Rejection> {
        let m = self.view.models.get(model).ok_or_else(|| Rejection::UnknownModel(model.to_string()))?;
        let initial = CaseState::initial(case_id, m);
        Ok(TxBody::InstanceState { case_id, model: m.name.clone(), marking: initial.marking, values: initial.values })
    }

    fn completion_body(
        &mut self,
        case_id: Uuid,
        transition: &str,
        outputs: &BTreeMap<String, Value>,
        pending: &[&Transaction],
        _chain: &ChainStore,
    ) -> Result<TxBody, Rejection> {
        let case = self.view.cases.get(&case_id).ok_or(Rejection::UnknownCase(case_id))?;
        check_outputs(&case.model, transition, outputs)?;
        let latest = Self::pending_states(pending, case_id).pop();
        let (marking, values) = match latest {
            Some((_, m, v)) if is_enabled(&case.model, m, transition) => (m.clone(), v.clone()),
            _ => (case.state.marking.clone(), case.state.values.clone()),
        };
        let marking = fire(&case.model, &marking, transition).map_err(|_| Rejection::NotEnabled(transition.to_string()))?;
        let mut values = values;
        values.extend(outputs.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(TxBody::InstanceState { case_id, model: case.state.model.clone(), marking, values })
    }
}
