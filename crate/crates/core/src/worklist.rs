//! User-facing work items across the transaction lifecycle.
//!
//! Items are created only from the *visible* state (the engine state at
//! `K` blocks below the head) and their status follows the local
//! transaction through pool, block and confirmation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::chain::{ChainStore, TransactionPool};
use crate::crypto::Digest;
use crate::engine::{Design, WorkflowEngine};
use crate::petrinet::{case_status, enabled_transitions, CaseStatus, Marking, Value};
use crate::tx::{TxBody, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WorkStatus {
    Worklisted,
    PendingInPool,
    Mined { depth: u64 },
    Confirmed,
    Rejected { reason: String },
    Undone,
    /// No longer enabled in the visible state (for example the other branch
    /// of a deferred choice was confirmed).
    Withdrawn,
}

impl WorkStatus {
    fn in_flight(&self) -> bool {
        matches!(self, WorkStatus::PendingInPool | WorkStatus::Mined { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkItem {
    pub id: String,
    pub case_id: Uuid,
    pub model: String,
    pub transition: String,
    pub role: Option<String>,
    pub inputs: BTreeMap<String, Value>,
    #[serde(flatten)]
    pub status: WorkStatus,
    pub tx: Option<TxId>,
    pub block: Option<Digest>,
    /// Last error reported for a completion attempt.
    pub notice: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warn,
    Alert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub seq: u64,
    pub severity: Severity,
    pub item: Option<String>,
    pub case_id: Option<Uuid>,
    pub tx: Option<TxId>,
    pub message: String,
}

/// A pool or mined-but-unconfirmed transaction shown to the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingEntry {
    pub tx: TxId,
    pub origin: String,
    pub kind: String,
    pub case_id: Option<Uuid>,
    /// Activity name for action transactions.
    pub transition: Option<String>,
    /// Target marking for state transactions; no activity is inferred.
    pub target_marking: Option<Marking>,
    pub stage: String,
    pub depth: Option<u64>,
    pub required_depth: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorklistView {
    pub items: Vec<WorkItem>,
    pub pending: Vec<PendingEntry>,
    pub alerts: Vec<Alert>,
    pub archive: Vec<WorkItem>,
}

#[derive(Debug, Clone)]
pub struct Worklist {
    node: String,
    depth: u64,
    next_id: u64,
    next_alert: u64,
    items: BTreeMap<String, WorkItem>,
    /// Confirmed items are still watched so a deep reorganization is noticed.
    confirmed: BTreeMap<String, WorkItem>,
    archive: Vec<WorkItem>,
    alerts: Vec<Alert>,
    alert_cap: usize,
}

impl Worklist {
    pub fn new(node: impl Into<String>, confirmation_depth: u64) -> Self {
        Self {
            node: node.into(),
            depth: confirmation_depth,
            next_id: 0,
            next_alert: 0,
            items: BTreeMap::new(),
            confirmed: BTreeMap::new(),
            archive: Vec::new(),
            alerts: Vec::new(),
            alert_cap: 1000,
        }
    }

    pub fn confirmation_depth(&self) -> u64 {
        self.depth
    }

    pub fn item(&self, id: &str) -> Option<&WorkItem> {
        self.items.get(id)
    }

    pub fn items(&self) -> impl Iterator<Item = &WorkItem> {
        self.items.values()
    }

    /// Items the user can act on.
    pub fn actionable(&self) -> impl Iterator<Item = &WorkItem> {
        self.items.values().filter(|i| i.status == WorkStatus::Worklisted)
    }

    pub fn archive(&self) -> &[WorkItem] {
        &self.archive
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    /// First actionable item for (case, transition).
    pub fn find(&self, case_id: Uuid, transition: &str) -> Option<&WorkItem> {
        self.actionable().find(|i| i.case_id == case_id && i.transition == transition)
    }

    fn alert(&mut self, severity: Severity, item: Option<&WorkItem>, message: String) -> Alert {
        let a = Alert {
            seq: self.next_alert,
            severity,
            item: item.map(|i| i.id.clone()),
            case_id: item.map(|i| i.case_id),
            tx: item.and_then(|i| i.tx),
            message,
        };
        self.next_alert += 1;
        self.alerts.push(a.clone());
        if self.alerts.len() > self.alert_cap {
            self.alerts.remove(0);
        }
        a
    }

    /// The completion transaction for `id` entered the pool.
    pub fn mark_submitted(&mut self, id: &str, tx: TxId) -> Option<WorkItem> {
        let item = self.items.get_mut(id)?;
        item.status = WorkStatus::PendingInPool;
        item.tx = Some(tx);
        item.notice = None;
        let item = item.clone();
        let msg = format!("{} on case {} submitted; pending", item.transition, item.case_id);
        self.alert(Severity::Info, Some(&item), msg);
        Some(item)
    }

    /// The completion was refused; the item stays worklisted for a retry.
    pub fn mark_rejected(&mut self, id: &str, reason: String) -> Option<WorkItem> {
        let item = self.items.get_mut(id)?;
        item.notice = Some(reason.clone());
        let item = item.clone();
        self.alert(Severity::Warn, Some(&item), format!("{} rejected: {reason}", item.transition));
        Some(item)
    }

    fn archive_item(&mut self, mut item: WorkItem, status: WorkStatus) -> WorkItem {
        item.status = status;
        self.archive.push(item.clone());
        item
    }

    /// Brings item statuses in line with the chain and pool, then creates
    /// and withdraws items from the visible state. Returns changed items.
    pub fn reconcile<V: WorkflowEngine>(
        &mut self,
        store: &ChainStore,
        pool: &TransactionPool,
        visible: &V,
    ) -> (Vec<WorkItem>, Vec<Alert>) {
        let mut changed = Vec::new();
        let mut alerts = Vec::new();

        for id in self.items.keys().cloned().collect::<Vec<_>>() {
            let item = self.items[&id].clone();
            let Some(tx) = item.tx else { continue };
            if !item.status.in_flight() {
                continue;
            }
            let was_mined = matches!(item.status, WorkStatus::Mined { .. });
            if let Some(depth) = store.tx_depth(&tx) {
                let block = store.main_tx_block(&tx);
                if depth >= self.depth {
                    let mut done = self.items.remove(&id).expect("present");
                    done.block = block;
                    let done = self.archive_item(done, WorkStatus::Confirmed);
                    self.confirmed.insert(id, done.clone());
                    changed.push(done);
                } else if item.status != (WorkStatus::Mined { depth }) || item.block != block {
                    let it = self.items.get_mut(&id).expect("present");
                    it.status = WorkStatus::Mined { depth };
                    it.block = block;
                    changed.push(it.clone());
                }
            } else if pool.contains(&tx) {
                if was_mined {
                    let it = self.items.get_mut(&id).expect("present");
                    it.status = WorkStatus::PendingInPool;
                    it.block = None;
                    let it = it.clone();
                    changed.push(it.clone());
                    alerts.push(self.alert(Severity::Alert, Some(&it), format!("{} was undone by a reorganization and returned to the pool", it.transition)));
                }
            } else {
                let item = self.items.remove(&id).expect("present");
                let (status, severity, msg) = if was_mined {
                    (WorkStatus::Undone, Severity::Alert, format!("{} was undone by a reorganization", item.transition))
                } else {
                    (
                        WorkStatus::Rejected { reason: "contradicted by the chain".into() },
                        Severity::Warn,
                        format!("{} was contradicted and dropped from the pool", item.transition),
                    )
                };
                let item = self.archive_item(item, status);
                alerts.push(self.alert(severity, Some(&item), msg));
                changed.push(item);
            }
        }

        for id in self.confirmed.keys().cloned().collect::<Vec<_>>() {
            let item = &self.confirmed[&id];
            let tx = item.tx.expect("confirmed items have a transaction");
            if store.main_tx_block(&tx).is_some() {
                continue;
            }
            let item = self.confirmed.remove(&id).expect("present");
            let item = self.archive_item(item, WorkStatus::Undone);
            alerts.push(self.alert(Severity::Alert, Some(&item), format!("confirmed {} was undone by a deep reorganization", item.transition)));
            changed.push(item);
        }
        // Forget confirmations buried far below any plausible reorganization.
        let horizon = store.head_height().saturating_sub(self.depth + 64);
        self.confirmed.retain(|_, i| {
            i.block.and_then(|b| store.block(&b)).map_or(true, |b| b.height >= horizon)
        });

        let mut wanted: Vec<(Uuid, String, String, Option<String>, BTreeMap<String, Value>)> = Vec::new();
        for case_id in visible.case_ids() {
            let Some((state, model)) = visible.case(&case_id) else { continue };
            if case_status(model, &state.marking) != CaseStatus::Running {
                continue;
            }
            for t in enabled_transitions(model, &state.marking) {
                let activity = model.transition(t).expect("enabled transition exists");
                if activity.actor != self.node {
                    continue;
                }
                let inputs = activity
                    .inputs
                    .iter()
                    .filter_map(|k| state.values.get(k).map(|v| (k.clone(), v.clone())))
                    .collect();
                wanted.push((case_id, t.to_string(), model.name.clone(), activity.role.clone(), inputs));
            }
        }

        for id in self.items.keys().cloned().collect::<Vec<_>>() {
            let item = &self.items[&id];
            if item.status != WorkStatus::Worklisted {
                continue;
            }
            if !wanted.iter().any(|(c, t, ..)| *c == item.case_id && *t == item.transition) {
                let item = self.items.remove(&id).expect("present");
                changed.push(self.archive_item(item, WorkStatus::Withdrawn));
            }
        }

        for (case_id, transition, model, role, inputs) in wanted {
            if let Some(existing) = self
                .items
                .values_mut()
                .find(|i| i.case_id == case_id && i.transition == transition)
            {
                if existing.status == WorkStatus::Worklisted && existing.inputs != inputs {
                    existing.inputs = inputs;
                    changed.push(existing.clone());
                }
                continue;
            }
            let id = format!("w{}", self.next_id);
            self.next_id += 1;
            let item = WorkItem {
                id: id.clone(),
                case_id,
                model,
                transition,
                role,
                inputs,
                status: WorkStatus::Worklisted,
                tx: None,
                block: None,
                notice: None,
            };
            self.items.insert(id, item.clone());
            changed.push(item);
        }
        (changed, alerts)
    }

    pub fn view(&self, store: &ChainStore, pool: &TransactionPool, design: Design, role: Option<&str>) -> WorklistView {
        WorklistView {
            items: self
                .items
                .values()
                .filter(|i| role.is_none() || i.role.as_deref() == role)
                .cloned()
                .collect(),
            pending: pending_panel(store, pool, self.depth, design),
            alerts: self.alerts.clone(),
            archive: self.archive.clone(),
        }
    }
}

/// Pool entries followed by main-branch transactions not yet at depth `k`.
pub fn pending_panel(store: &ChainStore, pool: &TransactionPool, k: u64, design: Design) -> Vec<PendingEntry> {
    let entry = |tx: &crate::tx::Transaction, stage: &str, depth: Option<u64>| {
        let (transition, target_marking) = match (tx.body(), design) {
            (TxBody::FireTransition { transition, .. }, Design::Actions) => (Some(transition.clone()), None),
            (TxBody::InstanceState { marking, .. }, Design::States) => (None, Some(marking.clone())),
            _ => (None, None),
        };
        PendingEntry {
            tx: tx.id(),
            origin: tx.origin().to_string(),
            kind: tx.body().kind().to_string(),
            case_id: tx.body().case_id(),
            transition,
            target_marking,
            stage: stage.to_string(),
            depth,
            required_depth: k,
        }
    };
    let mut out: Vec<PendingEntry> = pool.iter().map(|tx| entry(tx, "pending", None)).collect();
    let head = store.head_height();
    let low = (head + 1).saturating_sub(k).max(1);
    for h in low..=head {
        let b = store.main_block_at(h).expect("main height");
        for tx in &b.transactions {
            out.push(entry(tx, "mined", Some(head - h)));
        }
    }
    out
}
