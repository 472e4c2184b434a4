//! Actions on chain: the engine keeps its own case state and executes,
//! or undoes, the actions recorded in blocks.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::json;
use uuid::Uuid;

use super::{check_outputs, Design, EngineEffect, EngineFault, Rejection, WorkflowEngine};
use crate::canon::canonical_bytes;
use crate::chain::{Block, ChainStore};
use crate::crypto::digest;
use crate::petrinet::{fire, is_enabled, unfire, CaseState, ConstraintExpr, Value, WorkflowModel};
use crate::tx::{Transaction, TxBody};

#[derive(Debug, Clone, PartialEq)]
struct BoundCase {
    state: CaseState,
    model: Arc<WorkflowModel>,
}

/// Engine state: versioned models and cases bound to the model version
/// current when they were created.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionsEngine {
    models: BTreeMap<String, Vec<Arc<WorkflowModel>>>,
    cases: BTreeMap<Uuid, BoundCase>,
}

impl ActionsEngine {
    pub fn new() -> Self {
        Self::default()
    }

    fn current_model(&self, name: &str) -> Option<&Arc<WorkflowModel>> {
        self.models.get(name).and_then(|v| v.last())
    }

    /// Executes one transaction. Assumes it was validated; errors describe
    /// why it could not be applied.
    fn apply(&mut self, body: &TxBody) -> Result<EngineEffect, String> {
        match body {
            TxBody::ModelUpdate { model } => {
                self.models.entry(model.name.clone()).or_default().push(Arc::new(model.clone()));
                Ok(EngineEffect::ModelInstalled { model: model.name.clone() })
            }
            TxBody::InitCase { model, case_id } => {
                let m = self.current_model(model).ok_or_else(|| format!("unknown model {model}"))?.clone();
                if self.cases.contains_key(case_id) {
                    return Err(format!("case {case_id} exists"));
                }
                self.cases.insert(*case_id, BoundCase { state: CaseState::initial(*case_id, &m), model: m });
                Ok(EngineEffect::CaseOpened { case_id: *case_id })
            }
            TxBody::FireTransition { case_id, transition, post_values, .. } => {
                let case = self.cases.get_mut(case_id).ok_or_else(|| format!("unknown case {case_id}"))?;
                case.state.marking = fire(&case.model, &case.state.marking, transition).map_err(|e| e.to_string())?;
                for (k, v) in post_values {
                    case.state.values.insert(k.clone(), v.clone());
                }
                Ok(EngineEffect::CaseChanged { case_id: *case_id })
            }
            TxBody::InstanceState { .. } => Err("InstanceState is not an action".into()),
        }
    }

    /// Exact inverse of [`apply`](Self::apply).
    fn revert(&mut self, body: &TxBody) -> Result<EngineEffect, String> {
        match body {
            TxBody::ModelUpdate { model } => {
                let stack = self.models.get_mut(&model.name).ok_or("model stack missing")?;
                match stack.pop() {
                    Some(top) if *top == *model => {}
                    _ => return Err(format!("model {} is not the newest version", model.name)),
                }
                if stack.is_empty() {
                    self.models.remove(&model.name);
                }
                Ok(EngineEffect::ModelRetracted { model: model.name.clone() })
            }
            TxBody::InitCase { case_id, .. } => {
                self.cases.remove(case_id).ok_or_else(|| format!("unknown case {case_id}"))?;
                Ok(EngineEffect::CaseRemoved { case_id: *case_id })
            }
            TxBody::FireTransition { case_id, transition, pre_values, post_values, .. } => {
                let case = self.cases.get_mut(case_id).ok_or_else(|| format!("unknown case {case_id}"))?;
                for (k, v) in post_values {
                    if case.state.values.get(k) != Some(v) {
                        return Err(format!("`{k}` no longer holds the post-value"));
                    }
                }
                case.state.marking = unfire(&case.model, &case.state.marking, transition).map_err(|e| e.to_string())?;
                for (k, v) in pre_values {
                    case.state.values.insert(k.clone(), v.clone());
                }
                Ok(EngineEffect::CaseChanged { case_id: *case_id })
            }
            TxBody::InstanceState { .. } => Err("InstanceState is not an action".into()),
        }
    }

    /// Applies the pending transactions that matter for `case`: model
    /// updates and transactions of the same case. Returns what was applied,
    /// for reverting.
    fn apply_pending<'p>(&mut self, pending: &[&'p Transaction], case: Option<Uuid>) -> Vec<&'p TxBody> {
        let mut applied = Vec::new();
        for tx in pending {
            let body = tx.body();
            let relevant = match body {
                TxBody::ModelUpdate { .. } => true,
                other => case.is_some() && other.case_id() == case,
            };
            if relevant && self.apply(body).is_ok() {
                applied.push(body);
            }
        }
        applied
    }

    fn revert_pending(&mut self, applied: Vec<&TxBody>) {
        for body in applied.into_iter().rev() {
            self.revert(body).expect("pending transaction reverts cleanly");
        }
    }

    fn check(&self, tx: &Transaction, enabled_at_head: bool) -> Result<(), Rejection> {
        match tx.body() {
            TxBody::ModelUpdate { model } => model.validate().map_err(|e| Rejection::MalformedModel(e.to_string())),
            TxBody::InitCase { model, case_id } => {
                if self.current_model(model).is_none() {
                    return Err(Rejection::UnknownModel(model.clone()));
                }
                if self.cases.contains_key(case_id) {
                    return Err(Rejection::DuplicateCase(*case_id));
                }
                Ok(())
            }
            TxBody::FireTransition { case_id, transition, inputs, pre_values, post_values } => {
                let case = self.cases.get(case_id).ok_or(Rejection::UnknownCase(*case_id))?;
                let model = &case.model;
                let activity =
                    model.transition(transition).ok_or_else(|| Rejection::UnknownTransition(transition.clone()))?;
                if activity.actor != tx.origin() {
                    return Err(Rejection::NotAssignedActor {
                        transition: transition.clone(),
                        actor: activity.actor.clone(),
                        origin: tx.origin().to_string(),
                    });
                }
                if !is_enabled(model, &case.state.marking, transition) {
                    return Err(if enabled_at_head {
                        Rejection::NotEnabledAfterPending(transition.clone())
                    } else {
                        Rejection::NotEnabled(transition.clone())
                    });
                }
                let same_keys = |m: &BTreeMap<String, Value>, names: &[String]| {
                    m.len() == names.len() && names.iter().all(|n| m.contains_key(n))
                };
                if !same_keys(pre_values, &activity.outputs) || !same_keys(post_values, &activity.outputs) {
                    return Err(Rejection::MalformedValues(format!(
                        "pre- and post-values must list exactly the outputs of `{transition}`"
                    )));
                }
                if !same_keys(inputs, &activity.inputs) {
                    return Err(Rejection::MalformedValues(format!("inputs must list exactly the inputs of `{transition}`")));
                }
                check_outputs(model, transition, post_values)?;
                for (k, v) in pre_values.iter().chain(inputs.iter()) {
                    if case.state.values.get(k) != Some(v) {
                        return Err(Rejection::PreValueMismatch(k.clone()));
                    }
                }
                let mut after = case.state.values.clone();
                after.extend(post_values.iter().map(|(k, v)| (k.clone(), v.clone())));
                for c in &activity.constraints {
                    let expr = ConstraintExpr::parse(c).map_err(|e| Rejection::ConstraintViolation(format!("{c}: {e}")))?;
                    match expr.evaluate(&after) {
                        Ok(true) => {}
                        Ok(false) => return Err(Rejection::ConstraintViolation(c.clone())),
                        Err(e) => return Err(Rejection::ConstraintViolation(format!("{c}: {e}"))),
                    }
                }
                Ok(())
            }
            TxBody::InstanceState { .. } => Err(Rejection::WrongDesign("InstanceState".into())),
        }
    }
}

impl WorkflowEngine for ActionsEngine {
    fn design(&self) -> Design {
        Design::Actions
    }

    fn validate_transaction(&mut self, tx: &Transaction, pending: &[&Transaction], _chain: &ChainStore) -> Result<(), Rejection> {
        if let TxBody::InstanceState { .. } = tx.body() {
            return Err(Rejection::WrongDesign("InstanceState".into()));
        }
        let case = tx.body().case_id();
        let enabled_at_head = match tx.body() {
            TxBody::FireTransition { case_id, transition, .. } => self
                .cases
                .get(case_id)
                .is_some_and(|c| is_enabled(&c.model, &c.state.marking, transition)),
            _ => false,
        };
        let applied = self.apply_pending(pending, case);
        let result = self.check(tx, enabled_at_head);
        self.revert_pending(applied);
        result
    }

    fn connect_block(&mut self, block: &Block, _chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        let mut effects = Vec::new();
        for tx in &block.transactions {
            let effect = self
                .apply(tx.body())
                .map_err(|detail| EngineFault { block: block.block_hash, detail })?;
            effects.push(effect);
        }
        Ok(effects)
    }

    fn disconnect_block(&mut self, block: &Block, _chain: &ChainStore) -> Result<Vec<EngineEffect>, EngineFault> {
        let mut effects = Vec::new();
        for tx in block.transactions.iter().rev() {
            let effect = self
                .revert(tx.body())
                .map_err(|detail| EngineFault { block: block.block_hash, detail })?;
            effects.push(effect);
        }
        Ok(effects)
    }

    fn case(&self, case_id: &Uuid) -> Option<(&CaseState, &WorkflowModel)> {
        self.cases.get(case_id).map(|c| (&c.state, c.model.as_ref()))
    }

    fn case_ids(&self) -> Vec<Uuid> {
        self.cases.keys().copied().collect()
    }

    fn model(&self, name: &str) -> Option<Arc<WorkflowModel>> {
        self.current_model(name).cloned()
    }

    fn model_names(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    fn state_json(&self) -> serde_json::Value {
        let model_digest = |m: &WorkflowModel| digest(&canonical_bytes(m).expect("model is canonical")).to_hex();
        let models: BTreeMap<&String, Vec<String>> =
            self.models.iter().map(|(k, v)| (k, v.iter().map(|m| model_digest(m)).collect())).collect();
        let cases: BTreeMap<String, serde_json::Value> = self
            .cases
            .iter()
            .map(|(id, c)| (id.to_string(), json!({"state": c.state, "model": model_digest(&c.model)})))
            .collect();
        json!({"models": models, "cases": cases})
    }

    fn launch_body(&self, model: &str, case_id: Uuid) -> Result<TxBody, Rejection> {
        Ok(TxBody::InitCase { model: model.to_string(), case_id })
    }

    fn completion_body(
        &mut self,
        case_id: Uuid,
        transition: &str,
        outputs: &BTreeMap<String, Value>,
        pending: &[&Transaction],
        _chain: &ChainStore,
    ) -> Result<TxBody, Rejection> {
        let applied = self.apply_pending(pending, Some(case_id));
        let result = (|| {
            let case = self.cases.get(&case_id).ok_or(Rejection::UnknownCase(case_id))?;
            check_outputs(&case.model, transition, outputs)?;
            let activity = case.model.transition(transition).expect("checked above");
            let current = |k: &String| case.state.values.get(k).cloned().map(|v| (k.clone(), v));
            let inputs = activity.inputs.iter().filter_map(current).collect();
            let pre_values: BTreeMap<String, Value> = activity.outputs.iter().filter_map(current).collect();
            let mut post_values = pre_values.clone();
            post_values.extend(outputs.iter().map(|(k, v)| (k.clone(), v.clone())));
            Ok(TxBody::FireTransition { case_id, transition: transition.to_string(), inputs, pre_values, post_values })
        })();
        self.revert_pending(applied);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::NodeIdentity;
    use crate::petrinet::fixtures::{deferred_choice, seq};
    use crate::petrinet::Marking;

    fn chain() -> ChainStore {
        ChainStore::new(Block::genesis("t"))
    }

    fn sign(who: &str, seq: u64, body: TxBody) -> Transaction {
        Transaction::sign(&NodeIdentity::for_name(who), seq, body).unwrap()
    }

    fn block(txs: Vec<Transaction>) -> Block {
        crate::chain::MiningTemplate::new(crate::crypto::Digest::ZERO, 1, "m", txs).mine_step(0, 1).unwrap()
    }

    fn engine_with_case(model: WorkflowModel, case: Uuid) -> ActionsEngine {
        let mut e = ActionsEngine::new();
        let name = model.name.clone();
        let b = block(vec![
            sign("n1", 0, TxBody::ModelUpdate { model }),
            sign("n1", 1, TxBody::InitCase { model: name, case_id: case }),
        ]);
        e.connect_block(&b, &chain()).unwrap();
        e
    }

    fn fire_tx(e: &mut ActionsEngine, who: &str, seq: u64, case: Uuid, t: &str, outputs: &[(&str, Value)]) -> Transaction {
        let outputs = outputs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let body = e.completion_body(case, t, &outputs, &[], &chain()).unwrap();
        sign(who, seq, body)
    }

    #[test]
    fn enabled_fire_is_valid_and_applies() {
        let c = Uuid::from_u128(1);
        let mut e = engine_with_case(seq("n1", "n2"), c);
        let tx = fire_tx(&mut e, "n1", 5, c, "A", &[("x", Value::Integer(3))]);
        assert_eq!(e.validate_transaction(&tx, &[], &chain()), Ok(()));
        e.connect_block(&block(vec![tx]), &chain()).unwrap();
        let (state, _) = e.case(&c).unwrap();
        assert_eq!(state.marking, Marking::from_counts([("p1", 1)]));
        assert_eq!(state.values["x"], Value::Integer(3));
    }

    #[test]
    fn deferred_choice_loser_is_not_enabled_after_pending() {
        let c = Uuid::from_u128(2);
        let mut e = engine_with_case(deferred_choice("n1", "n2", "n3"), c);
        let a = fire_tx(&mut e, "n1", 5, c, "A", &[("choice", Value::String("a".into()))]);
        let b = fire_tx(&mut e, "n2", 5, c, "B", &[("choice", Value::String("b".into()))]);
        let before = e.clone();
        assert_eq!(
            e.validate_transaction(&b, &[&a], &chain()),
            Err(Rejection::NotEnabledAfterPending("B".into()))
        );
        assert_eq!(e, before);
    }

    #[test]
    fn stale_pre_value_is_rejected() {
        let c = Uuid::from_u128(3);
        let mut e = engine_with_case(seq("n1", "n1"), c);
        let a = fire_tx(&mut e, "n1", 5, c, "A", &[("x", Value::Integer(4))]);
        e.connect_block(&block(vec![a]), &chain()).unwrap();
        let stale = sign(
            "n1",
            6,
            TxBody::FireTransition {
                case_id: c,
                transition: "B".into(),
                inputs: [("x".to_string(), Value::Integer(4))].into(),
                pre_values: [("x".to_string(), Value::Integer(0))].into(),
                post_values: [("x".to_string(), Value::Integer(1))].into(),
            },
        );
        assert_eq!(e.validate_transaction(&stale, &[], &chain()), Err(Rejection::PreValueMismatch("x".into())));
    }

    #[test]
    fn constraint_and_actor_checks() {
        let c = Uuid::from_u128(4);
        let mut e = engine_with_case(seq("n1", "n2"), c);
        let big = fire_tx(&mut e, "n1", 5, c, "A", &[("x", Value::Integer(11))]);
        assert_eq!(e.validate_transaction(&big, &[], &chain()), Err(Rejection::ConstraintViolation("x <= 10".into())));
        let wrong = fire_tx(&mut e, "n2", 5, c, "A", &[("x", Value::Integer(1))]);
        assert!(matches!(e.validate_transaction(&wrong, &[], &chain()), Err(Rejection::NotAssignedActor { .. })));
        let b = fire_tx(&mut e, "n2", 6, c, "B", &[("x", Value::Integer(1))]);
        assert_eq!(e.validate_transaction(&b, &[], &chain()), Err(Rejection::NotEnabled("B".into())));
    }

    #[test]
    fn init_case_needs_model_and_fresh_id_among_pending() {
        let mut e = ActionsEngine::new();
        let c = Uuid::from_u128(5);
        let init = sign("n1", 1, TxBody::InitCase { model: "SEQ".into(), case_id: c });
        assert_eq!(e.validate_transaction(&init, &[], &chain()), Err(Rejection::UnknownModel("SEQ".into())));
        let mu = sign("n1", 0, TxBody::ModelUpdate { model: seq("n1", "n2") });
        assert_eq!(e.validate_transaction(&init, &[&mu], &chain()), Ok(()));
        let again = sign("n2", 1, TxBody::InitCase { model: "SEQ".into(), case_id: c });
        assert_eq!(e.validate_transaction(&again, &[&mu, &init], &chain()), Err(Rejection::DuplicateCase(c)));
        assert_eq!(e, ActionsEngine::new());
    }

    #[test]
    fn connect_then_disconnect_is_identity() {
        let c = Uuid::from_u128(6);
        let mut e = engine_with_case(seq("n1", "n1"), c);
        let before = e.state_json();
        let a = fire_tx(&mut e, "n1", 5, c, "A", &[("x", Value::Integer(7))]);
        let mu = sign("n1", 6, TxBody::ModelUpdate { model: seq("n2", "n2") });
        let b = block(vec![a, mu]);
        e.connect_block(&b, &chain()).unwrap();
        assert_ne!(e.state_json(), before);
        e.disconnect_block(&b, &chain()).unwrap();
        assert_eq!(e.state_json(), before);
    }
}
