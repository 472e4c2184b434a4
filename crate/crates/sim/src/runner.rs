//! The tick scheduler: scripted actions, seeded mining, then message
//! delivery until the tick is drained. Nodes are stepped in declaration
//! order, so a scenario and seed fully determine the run.

use std::collections::{BTreeMap, BTreeSet};

use chainflow_core::canon::canonical_json_bytes;
use chainflow_core::chain::{replay, replay_main, ChainEvent};
use chainflow_core::crypto::{Digest, NodeIdentity, PublicKey};
use chainflow_core::engine::{AnyEngine, Design, EngineFault, WorkflowEngine};
use chainflow_core::node::{Node, NodeError, NodeEvent, NodeSettings};
use chainflow_core::p2p::sim::SimNetwork;
use chainflow_core::p2p::{decode_frame, encode_message, PeerInfo};
use chainflow_core::petrinet::{Marking, Value, ValueType, WorkflowModel};
use chainflow_core::tx::{TxBody, TxId};
use chainflow_core::worklist::WorkStatus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;
use uuid::Uuid;

use crate::assertions::{self, AssertionResult};
use crate::scenario::{Action, AssertionSpec, Scenario, ScriptedAction};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("tick {tick}, node {node}: {message}")]
    Script { tick: u64, node: String, message: String },
    #[error("engine fault on {node}: {fault}")]
    Fault { node: String, fault: EngineFault },
}

/// Confirmed state of one case: marking and variable values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseSnapshot {
    pub marking: Marking,
    pub values: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub name: String,
    pub head: Digest,
    pub height: u64,
    /// Digest of the validating engine state at the head.
    pub head_state: Digest,
    /// Digest of the visible engine state, `K` blocks below the head.
    pub confirmed_state: Digest,
    /// Visible case states keyed by scenario case label.
    pub cases: BTreeMap<String, CaseSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencySample {
    pub node: usize,
    pub depth: u64,
    pub submitted: u64,
    pub confirmed: u64,
}

impl LatencySample {
    pub fn ticks(&self) -> u64 {
        self.confirmed - self.submitted
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub blocks_mined: u64,
    /// Mined blocks that did not end up on the final main branch.
    pub stale_blocks: u64,
    pub reorgs: u64,
    /// Transactions reverted by reorganizations, counted per node.
    pub undone_txs: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub replay_checks: u64,
    pub replay_mismatches: Vec<String>,
    /// Mined blocks whose hash misses the difficulty target.
    pub pow_violations: u64,
    pub latencies: Vec<LatencySample>,
    pub unconfirmed_txs: u64,
    /// Completions submitted again after their transaction was dropped.
    pub resubmissions: u64,
}

impl Metrics {
    pub fn mean_latency(&self, depth: Option<u64>) -> Option<f64> {
        let xs: Vec<u64> =
            self.latencies.iter().filter(|s| depth.map_or(true, |d| s.depth == d)).map(|s| s.ticks()).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<u64>() as f64 / xs.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub design: Design,
    pub ticks: u64,
    pub quiescent: bool,
    /// One canonical JSON document per line.
    pub trace: Vec<String>,
    pub nodes: Vec<NodeSummary>,
    pub metrics: Metrics,
    pub assertions: Vec<AssertionResult>,
    /// Waiting optional actions that never became possible.
    pub skipped_actions: usize,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn trace_jsonl(&self) -> String {
        let mut s = self.trace.join("\n");
        s.push('\n');
        s
    }

    pub fn converged(&self) -> bool {
        self.quiescent
            && self.nodes.windows(2).all(|w| {
                w[0].head == w[1].head && w[0].head_state == w[1].head_state && w[0].confirmed_state == w[1].confirmed_state
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Progress {
    Pending,
    Done,
}

pub(crate) struct Submission {
    node: usize,
    tick: u64,
}

/// A running simulation. Most callers want [`run`].
pub struct Sim<'s> {
    pub(crate) scenario: &'s Scenario,
    pub(crate) tick: u64,
    pub(crate) nodes: Vec<Node>,
    index: BTreeMap<String, usize>,
    keys: BTreeMap<String, PublicKey>,
    net: SimNetwork,
    mining_rng: ChaCha8Rng,
    progress: Vec<Progress>,
    /// Transaction each completed action last submitted.
    submitted: Vec<Option<TxId>>,
    pub(crate) cases: BTreeMap<String, Uuid>,
    outstanding: BTreeMap<TxId, Submission>,
    mined: Vec<Digest>,
    pub(crate) metrics: Metrics,
    trace: Vec<String>,
    max_depth: u64,
}

fn line(v: &Json) -> String {
    String::from_utf8(canonical_json_bytes(v).expect("trace entries hold no floats")).expect("utf-8")
}

fn default_value(ty: ValueType, transition: &str) -> Value {
    match ty {
        ValueType::Integer => Value::Integer(1),
        ValueType::Decimal => Value::parse_decimal("1").expect("literal"),
        ValueType::String => Value::String(transition.to_lowercase()),
        ValueType::Boolean => Value::Boolean(true),
    }
}

/// Declared outputs of `transition` not given explicitly get a default.
fn fill_outputs(model: &WorkflowModel, transition: &str, given: &BTreeMap<String, Value>) -> BTreeMap<String, Value> {
    let mut out = given.clone();
    if let Some(a) = model.transition(transition) {
        let types = model.variable_types();
        for o in &a.outputs {
            if let Some(ty) = types.get(o) {
                out.entry(o.clone()).or_insert_with(|| default_value(*ty, transition));
            }
        }
    }
    out
}

impl<'s> Sim<'s> {
    pub fn new(scenario: &'s Scenario) -> Self {
        let infos: Vec<PeerInfo> = scenario
            .nodes
            .iter()
            .map(|n| PeerInfo {
                name: n.name.clone(),
                address: format!("sim://{}", n.name),
                public_key: NodeIdentity::for_name(&n.name).public_key(),
            })
            .collect();
        let nodes = scenario
            .nodes
            .iter()
            .map(|spec| {
                let mut settings = NodeSettings::new(&scenario.network_id, spec.design);
                settings.confirmation_depth = spec.confirmation_depth;
                settings.difficulty = scenario.difficulty;
                settings.peers = infos.iter().filter(|p| p.name != spec.name).cloned().collect();
                let mut identity = NodeIdentity::for_name(&spec.name);
                identity.address = format!("sim://{}", spec.name);
                Node::new(identity, settings)
            })
            .collect();
        let mut net = SimNetwork::new(scenario.seed, scenario.latency);
        for l in &scenario.links {
            net.set_link(&l.from, &l.to, l.latency);
        }
        for p in &scenario.partitions {
            net.add_partition(p.clone());
        }
        Self {
            scenario,
            tick: 0,
            nodes,
            index: scenario.nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect(),
            keys: infos.iter().map(|p| (p.name.clone(), p.public_key)).collect(),
            net,
            mining_rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x6d69_6e69_6e67),
            progress: vec![Progress::Pending; scenario.actions.len()],
            submitted: vec![None; scenario.actions.len()],
            cases: BTreeMap::new(),
            outstanding: BTreeMap::new(),
            mined: Vec::new(),
            metrics: Metrics::default(),
            trace: Vec::new(),
            max_depth: scenario.nodes.iter().map(|n| n.confirmation_depth).max().unwrap_or(0),
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn record(&mut self, node: usize, body: Json) {
        let mut v = json!({"tick": self.tick, "node": self.scenario.nodes[node].name});
        if let (Some(obj), Json::Object(extra)) = (v.as_object_mut(), body) {
            obj.extend(extra);
        }
        self.trace.push(line(&v));
    }

    fn script_error(&self, a: &ScriptedAction, message: impl Into<String>) -> RunError {
        RunError::Script { tick: self.tick, node: a.node.clone(), message: message.into() }
    }

    /// Publishes node `i`'s events and sends its outbox.
    fn drain(&mut self, i: usize) -> Result<(), RunError> {
        let events = self.nodes[i].take_events();
        let mut reorganized = false;
        for e in &events {
            if let NodeEvent::Chain(ChainEvent::Reorganized { undone, .. }) = e {
                reorganized = true;
                self.metrics.reorgs += 1;
                self.metrics.undone_txs += undone.iter().map(|b| b.transactions.len() as u64).sum::<u64>();
            }
            self.record(i, json!({"event": e.to_json()}));
        }
        if reorganized {
            self.check_against_replay(i)?;
        }
        self.nodes[i].take_stored();
        let from = self.scenario.nodes[i].name.clone();
        for out in self.nodes[i].take_outbox() {
            let frame = encode_message(&out.message, self.nodes[i].identity()).map_err(|e| RunError::Script {
                tick: self.tick,
                node: from.clone(),
                message: format!("cannot encode {}: {e}", out.message.kind()),
            })?;
            let targets: Vec<String> = match out.to {
                Some(to) => vec![to],
                None => self.scenario.nodes.iter().filter(|n| n.name != from).map(|n| n.name.clone()).collect(),
            };
            for to in targets {
                self.net.send(self.tick, &from, &to, frame.clone());
            }
        }
        Ok(())
    }

    /// Compares the incrementally maintained engines of node `i` with a
    /// fresh replay of its main branch.
    fn check_against_replay(&mut self, i: usize) -> Result<(), RunError> {
        let node = &self.nodes[i];
        let name = &self.scenario.nodes[i].name;
        let fault = |fault| RunError::Fault { node: name.clone(), fault };
        self.metrics.replay_checks += 1;
        match replay_main(node.chain(), AnyEngine::new(node.design())) {
            Ok(fresh) if fresh.state_json() == node.chain().engine().state_json() => {}
            Ok(_) => self.metrics.replay_mismatches.push(format!("tick {}: {name} head state differs from replay", self.tick)),
            Err(chainflow_core::chain::ReplayError::Fault(f)) => return Err(fault(f)),
            Err(e) => self.metrics.replay_mismatches.push(format!("tick {}: {name}: {e}", self.tick)),
        }
        let store = node.chain().store();
        let target = store.head_height().saturating_sub(node.settings().confirmation_depth);
        let blocks: Vec<_> = (1..=target).filter_map(|h| store.main_block_at(h).cloned()).collect();
        let genesis = (**store.main_block_at(0).expect("genesis")).clone();
        match replay(genesis, &blocks, AnyEngine::new(node.design())) {
            Ok(fresh) if fresh.state_json() == node.visible().state_json() => {}
            Ok(_) => {
                self.metrics.replay_mismatches.push(format!("tick {}: {name} visible state differs from replay", self.tick))
            }
            Err(chainflow_core::chain::ReplayError::Fault(f)) => return Err(fault(f)),
            Err(e) => self.metrics.replay_mismatches.push(format!("tick {}: {name}: {e}", self.tick)),
        }
        Ok(())
    }

    fn link_changes(&mut self) -> Result<(), RunError> {
        let n = self.nodes.len();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (a, b) = (self.scenario.nodes[i].name.clone(), self.scenario.nodes[j].name.clone());
                let now = self.net.is_partitioned(&a, &b, self.tick);
                let before = self.tick > 0 && self.net.is_partitioned(&a, &b, self.tick - 1);
                if self.tick == 0 && !now || before && !now {
                    self.nodes[i].on_link_up(&b);
                    if self.tick > 0 {
                        self.record(i, json!({"link": "up", "peer": b}));
                    }
                } else if now && (self.tick == 0 || !before) {
                    self.nodes[i].on_link_down(&b);
                    self.record(i, json!({"link": "down", "peer": b}));
                }
            }
            self.drain(i)?;
        }
        Ok(())
    }

    fn case_id(&self, label: &str) -> Option<Uuid> {
        self.cases.get(label).copied()
    }

    /// Whether `a` can run now. Errors are scenario bugs.
    fn ready(&self, a: &ScriptedAction) -> Result<bool, RunError> {
        let node = &self.nodes[self.index[&a.node]];
        Ok(match &a.action {
            Action::Install { .. } => true,
            Action::Launch { model, .. } => {
                node.chain().engine().model(model).is_some()
                    || node.design() == Design::Actions
                        && node.chain().pool().iter().any(|t| matches!(t.body(), TxBody::ModelUpdate { model: m } if &m.name == model))
            }
            Action::Complete { case, transition, .. } => match self.case_id(case) {
                Some(id) => node.worklist().find(id, transition).is_some(),
                None => false,
            },
            Action::Retry { case, transition, .. } => match self.case_id(case) {
                Some(id) => {
                    let earlier_failed = node.worklist().archive().iter().any(|i| {
                        i.case_id == id
                            && i.transition == *transition
                            && matches!(i.status, WorkStatus::Undone | WorkStatus::Rejected { .. })
                    });
                    node.worklist()
                        .find(id, transition)
                        .is_some_and(|i| earlier_failed || i.notice.is_some())
                }
                None => false,
            },
        })
    }

    fn execute(&mut self, k: usize) -> Result<(), RunError> {
        let a = self.scenario.actions[k].clone();
        let i = self.index[&a.node];
        let tick = self.tick;
        let mut result = json!({"action": a.action.kind()});
        let submitted = match &a.action {
            Action::Install { model } => {
                result["model"] = json!(model.name);
                self.nodes[i].install_model(model.clone()).map_err(NodeError::Rejected)
            }
            Action::Launch { model, case } => {
                result["case"] = json!(case);
                match self.nodes[i].launch_case(model) {
                    Ok((id, tx)) => {
                        if self.cases.insert(case.clone(), id).is_some() {
                            return Err(self.script_error(&a, format!("case `{case}` launched twice")));
                        }
                        result["case_id"] = json!(id);
                        Ok(tx)
                    }
                    Err(r) => Err(NodeError::Rejected(r)),
                }
            }
            Action::Complete { case, transition, outputs } | Action::Retry { case, transition, outputs } => {
                result["case"] = json!(case);
                result["transition"] = json!(transition);
                let id = self.case_id(case).ok_or_else(|| self.script_error(&a, format!("case `{case}` is not launched")))?;
                let node = &self.nodes[i];
                let item = node
                    .worklist()
                    .find(id, transition)
                    .ok_or_else(|| self.script_error(&a, format!("no work item for {transition} on case `{case}`")))?
                    .id
                    .clone();
                let outputs = match node.visible().model(&node.worklist().item(&item).expect("found").model) {
                    Some(m) => fill_outputs(&m, transition, outputs),
                    None => outputs.clone(),
                };
                result["item"] = json!(item);
                self.nodes[i].complete(&item, &outputs)
            }
        };
        if let Some(old) = self.submitted[k].take() {
            self.outstanding.remove(&old);
            self.metrics.resubmissions += 1;
            result["resubmits"] = json!(old);
        }
        match submitted {
            Ok(tx) => {
                result["tx"] = json!(tx);
                self.submitted[k] = matches!(a.action, Action::Complete { .. }).then_some(tx);
                self.outstanding.insert(tx, Submission { node: i, tick });
            }
            Err(e) => {
                result["rejected"] = json!({"code": e.code(), "reason": e.to_string()});
            }
        }
        self.progress[k] = Progress::Done;
        self.record(i, result);
        self.drain(i)
    }

    /// A completion whose transaction left both the pool and the main
    /// branch, while its task is back on the worklist, is submitted again.
    fn resubmission_due(&self, k: usize) -> bool {
        let Some(tx) = &self.submitted[k] else { return false };
        let Action::Complete { case, transition, .. } = &self.scenario.actions[k].action else { return false };
        let node = &self.nodes[self.index[&self.scenario.actions[k].node]];
        !node.chain().pool().contains(tx)
            && node.chain().store().main_tx_block(tx).is_none()
            && self.case_id(case).is_some_and(|id| node.worklist().find(id, transition).is_some())
    }

    fn run_actions(&mut self) -> Result<(), RunError> {
        let mut groups_checked: BTreeSet<String> = BTreeSet::new();
        for k in 0..self.scenario.actions.len() {
            if self.resubmission_due(k) {
                self.execute(k)?;
                continue;
            }
            let a = &self.scenario.actions[k];
            if self.progress[k] == Progress::Done || a.tick > self.tick {
                continue;
            }
            if let Some(g) = &a.group {
                if !groups_checked.insert(g.clone()) {
                    continue;
                }
                let members: Vec<usize> = (0..self.scenario.actions.len())
                    .filter(|&m| self.scenario.actions[m].group.as_ref() == Some(g) && self.progress[m] == Progress::Pending)
                    .collect();
                let all_ready = members
                    .iter()
                    .map(|&m| {
                        let b = &self.scenario.actions[m];
                        Ok(b.tick <= self.tick && self.ready(b)?)
                    })
                    .collect::<Result<Vec<bool>, RunError>>()?
                    .into_iter()
                    .all(|r| r);
                if all_ready {
                    for m in members {
                        self.execute(m)?;
                    }
                }
                continue;
            }
            if self.ready(a)? {
                self.execute(k)?;
            } else if !a.wait {
                return Err(self.script_error(a, format!("{} is not possible", a.action)));
            }
        }
        Ok(())
    }

    /// A node keeps mining while something remains to bury under `K`
    /// blocks, or while a competing branch ties its head.
    fn has_work(&self, i: usize) -> bool {
        let chain = self.nodes[i].chain();
        let store = chain.store();
        if !chain.pool().is_empty() || store.orphans().next().is_some() {
            return true;
        }
        let head = store.head_height();
        let busy_to = (0..=head)
            .rev()
            .find(|h| store.main_block_at(*h).is_some_and(|b| !b.transactions.is_empty()))
            .unwrap_or(0);
        if busy_to > 0 && head - busy_to < self.max_depth {
            return true;
        }
        store.has_rival_tip()
    }

    fn actions_outstanding(&self) -> bool {
        self.scenario
            .actions
            .iter()
            .zip(&self.progress)
            .any(|(a, p)| *p == Progress::Pending && (!a.optional || a.tick > self.tick))
    }

    fn mine(&mut self) -> Result<(), RunError> {
        let pending_script = self.actions_outstanding();
        for i in 0..self.nodes.len() {
            let p = self.scenario.nodes[i].mining_rate.0;
            let hit = self.mining_rng.gen_bool(p);
            if !hit || !(pending_script || self.has_work(i)) {
                continue;
            }
            let name = self.scenario.nodes[i].name.clone();
            let hash = self.nodes[i].mine_block().map_err(|fault| RunError::Fault { node: name, fault })?;
            if hash.leading_zero_bits() < self.scenario.difficulty {
                self.metrics.pow_violations += 1;
            }
            self.metrics.blocks_mined += 1;
            self.mined.push(hash);
            let height = self.nodes[i].chain().head_height();
            self.record(i, json!({"mined": hash, "height": height}));
            self.drain(i)?;
        }
        Ok(())
    }

    fn deliver(&mut self) -> Result<(), RunError> {
        loop {
            let batch = self.net.deliver(self.tick);
            if batch.is_empty() {
                return Ok(());
            }
            for m in batch {
                let i = self.index[&m.to];
                let keys = &self.keys;
                match decode_frame(&m.frame, |n| keys.get(n).copied()) {
                    Ok(signed) => {
                        let kind = signed.message.kind();
                        self.nodes[i]
                            .handle_message(&m.from, signed.message)
                            .map_err(|fault| RunError::Fault { node: m.to.clone(), fault })?;
                        self.record(i, json!({"received": kind, "from": m.from, "sent_at": m.sent_at}));
                    }
                    Err(e) => self.record(i, json!({"protocol_error": e.to_string(), "from": m.from})),
                }
                self.drain(i)?;
            }
        }
    }

    fn check_confirmations(&mut self) {
        let mut done = Vec::new();
        for (tx, s) in &self.outstanding {
            let node = &self.nodes[s.node];
            let k = node.settings().confirmation_depth;
            if node.chain().store().tx_depth(tx).is_some_and(|d| d >= k) {
                done.push(*tx);
                self.metrics.latencies.push(LatencySample { node: s.node, depth: k, submitted: s.tick, confirmed: self.tick });
            }
        }
        for tx in done {
            let s = self.outstanding.remove(&tx).expect("outstanding");
            let latency = self.tick - s.tick;
            self.record(s.node, json!({"confirmed": tx, "latency": latency}));
        }
    }

    /// Nothing can change any more without new input.
    fn settled(&self) -> bool {
        let t = self.tick;
        if self.scenario.actions.iter().zip(&self.progress).any(|(a, p)| *p == Progress::Pending && a.tick > t)
            || self.scenario.partitions.iter().any(|p| p.until > t)
            || self.net.in_flight() > 0
            || (0..self.scenario.actions.len()).any(|k| self.resubmission_due(k))
        {
            return false;
        }
        let head = self.nodes[0].chain().head();
        self.nodes.iter().all(|n| n.chain().head() == head) && (0..self.nodes.len()).all(|i| !self.has_work(i))
    }

    fn work(&mut self) -> Result<(), RunError> {
        self.link_changes()?;
        self.run_actions()?;
        self.mine()?;
        self.deliver()?;
        self.check_confirmations();
        Ok(())
    }

    /// Runs the current tick and moves to the next.
    pub fn step(&mut self) -> Result<(), RunError> {
        self.work()?;
        self.tick += 1;
        Ok(())
    }

    /// Runs until quiescence or the tick limit and returns the report.
    pub fn run(mut self) -> Result<RunReport, RunError> {
        let mut quiescent = false;
        while self.tick < self.scenario.stop.max_ticks {
            self.work()?;
            if self.settled() {
                let ready = self
                    .scenario
                    .actions
                    .iter()
                    .zip(&self.progress)
                    .filter(|(_, p)| **p == Progress::Pending)
                    .map(|(a, _)| self.ready(a))
                    .collect::<Result<Vec<_>, _>>()?;
                if !ready.iter().any(|r| *r) {
                    if let Some((a, _)) = self
                        .scenario
                        .actions
                        .iter()
                        .zip(&self.progress)
                        .find(|(a, p)| **p == Progress::Pending && !a.optional)
                    {
                        return Err(self.script_error(a, format!("{} never became possible", a.action)));
                    }
                    if self.scenario.stop.quiescence {
                        quiescent = true;
                        break;
                    }
                }
            }
            self.tick += 1;
        }
        Ok(self.finish(quiescent))
    }

    fn summaries(&self) -> Vec<NodeSummary> {
        let labels: BTreeMap<Uuid, &String> = self.cases.iter().map(|(l, id)| (*id, l)).collect();
        self.nodes
            .iter()
            .map(|n| NodeSummary {
                name: n.name().to_string(),
                head: n.chain().head(),
                height: n.chain().head_height(),
                head_state: n.chain().engine().state_digest(),
                confirmed_state: n.visible().state_digest(),
                cases: n
                    .visible()
                    .case_states()
                    .into_iter()
                    .map(|(id, c)| {
                        let label = labels.get(&id).map_or_else(|| id.to_string(), |l| l.to_string());
                        (label, CaseSnapshot { marking: c.marking, values: c.values })
                    })
                    .collect(),
            })
            .collect()
    }

    fn finish(mut self, quiescent: bool) -> RunReport {
        let main: BTreeSet<Digest> = {
            let store = self.nodes[0].chain().store();
            (0..=store.head_height()).filter_map(|h| store.main_hash_at(h)).collect()
        };
        self.metrics.stale_blocks = self.mined.iter().filter(|h| !main.contains(h)).count() as u64;
        self.metrics.messages_delivered = self.net.delivered();
        self.metrics.messages_dropped = self.net.dropped();
        self.metrics.unconfirmed_txs = self.outstanding.len() as u64;
        let nodes = self.summaries();
        let skipped_actions = self.progress.iter().filter(|p| **p == Progress::Pending).count();
        let results: Vec<AssertionResult> = self
            .scenario
            .assertions
            .iter()
            .filter(|a| !matches!(a, AssertionSpec::DesignsEquivalent))
            .map(|a| assertions::evaluate(a, &self, &nodes, quiescent))
            .collect();
        let metrics_line = json!({
            "final": {
                "tick": self.tick,
                "quiescent": quiescent,
                "nodes": nodes.iter().map(|n| json!({
                    "name": n.name, "head": n.head, "height": n.height,
                    "head_state": n.head_state, "confirmed_state": n.confirmed_state,
                })).collect::<Vec<_>>(),
                "metrics": {
                    "blocks_mined": self.metrics.blocks_mined,
                    "stale_blocks": self.metrics.stale_blocks,
                    "reorgs": self.metrics.reorgs,
                    "undone_txs": self.metrics.undone_txs,
                    "messages_delivered": self.metrics.messages_delivered,
                    "messages_dropped": self.metrics.messages_dropped,
                    "replay_checks": self.metrics.replay_checks,
                    "replay_mismatches": self.metrics.replay_mismatches.len(),
                    "pow_violations": self.metrics.pow_violations,
                    "latencies": self.metrics.latencies.iter().map(|s| s.ticks()).collect::<Vec<_>>(),
                    "unconfirmed_txs": self.metrics.unconfirmed_txs,
                    "resubmissions": self.metrics.resubmissions,
                },
                "assertions": results.iter().map(|r| json!({"name": r.name, "passed": r.passed})).collect::<Vec<_>>(),
            }
        });
        self.trace.push(line(&metrics_line));
        RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            design: self.scenario.design(),
            ticks: self.tick,
            quiescent,
            trace: std::mem::take(&mut self.trace),
            nodes,
            metrics: std::mem::take(&mut self.metrics),
            assertions: results,
            skipped_actions,
        }
    }
}

/// Runs `scenario` and evaluates its assertions. A `designs_equivalent`
/// assertion runs the scenario a second time under the other design.
pub fn run(scenario: &Scenario) -> Result<RunReport, RunError> {
    let mut report = Sim::new(scenario).run()?;
    if let Some(pos) = scenario.assertions.iter().position(|a| matches!(a, AssertionSpec::DesignsEquivalent)) {
        let other = match scenario.design() {
            Design::Actions => Design::States,
            Design::States => Design::Actions,
        };
        let mut mirrored = scenario.with_design(other);
        mirrored.assertions.retain(|a| !matches!(a, AssertionSpec::DesignsEquivalent));
        let mirror = Sim::new(&mirrored).run()?;
        let result = assertions::designs_equivalent(&report, &mirror);
        report.assertions.insert(pos.min(report.assertions.len()), result);
    }
    Ok(report)
}

/// Runs with the seed replaced.
pub fn run_seeded(scenario: &Scenario, seed: u64) -> Result<RunReport, RunError> {
    let mut s = scenario.clone();
    s.seed = seed;
    run(&s)
}
