//! End-of-run checks. Each yields a verdict plus human-readable evidence.

use std::collections::{BTreeMap, BTreeSet};

use chainflow_core::chain::replay_main;
use chainflow_core::engine::{AnyEngine, Design, WorkflowEngine};
use chainflow_core::node::Node;
use chainflow_core::petrinet::{fire, is_enabled, is_reachable, ReachLimits, Reachability};
use chainflow_core::tx::TxBody;
use chainflow_core::worklist::{WorkItem, WorkStatus};
use serde::Serialize;
use uuid::Uuid;

use crate::runner::{NodeSummary, RunReport, Sim};
use crate::scenario::AssertionSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub evidence: String,
}

impl AssertionResult {
    fn new(name: &str, passed: bool, evidence: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, evidence: evidence.into() }
    }
}

pub(crate) fn evaluate(spec: &AssertionSpec, sim: &Sim<'_>, nodes: &[NodeSummary], quiescent: bool) -> AssertionResult {
    match spec {
        AssertionSpec::ConvergedHeads => converged_heads(nodes, quiescent),
        AssertionSpec::NoInvalidConfirmed => no_invalid_confirmed(sim.nodes()),
        AssertionSpec::ReorgReplay => {
            let m = &sim.metrics;
            let evidence = match m.replay_mismatches.first() {
                Some(first) => format!("{} of {} checks mismatched; first: {first}", m.replay_mismatches.len(), m.replay_checks),
                None => format!("{} reorganizations checked against replay", m.replay_checks),
            };
            AssertionResult::new(spec.name(), m.replay_mismatches.is_empty(), evidence)
        }
        AssertionSpec::DeferredChoiceExclusive { case, alternatives } => match sim.cases.get(case) {
            Some(id) => deferred_choice_exclusive(sim.nodes(), *id, alternatives),
            None => AssertionResult::new(spec.name(), false, format!("case `{case}` was never launched")),
        },
        AssertionSpec::DesignsEquivalent => {
            AssertionResult::new(spec.name(), false, "needs a mirrored run; use runner::run")
        }
        AssertionSpec::LatencyBound { k, tolerance, min_samples } => {
            let rate = sim.scenario.block_rate();
            latency_bound(&sim.metrics.latencies.iter().filter(|s| s.depth == *k).map(|s| s.ticks()).collect::<Vec<_>>(), *k, rate, tolerance.0, *min_samples)
        }
    }
}

/// All nodes quiescent on one head, with equal head and confirmed states.
pub fn converged_heads(nodes: &[NodeSummary], quiescent: bool) -> AssertionResult {
    let heads: BTreeSet<_> = nodes.iter().map(|n| n.head).collect();
    let confirmed: BTreeSet<_> = nodes.iter().map(|n| n.confirmed_state).collect();
    let states: BTreeSet<_> = nodes.iter().map(|n| n.head_state).collect();
    let passed = quiescent && heads.len() == 1 && confirmed.len() == 1 && states.len() == 1;
    let evidence = format!(
        "quiescent={quiescent}, {} distinct heads, {} distinct head states, {} distinct confirmed states",
        heads.len(),
        states.len(),
        confirmed.len()
    );
    AssertionResult::new("converged_heads", passed, evidence)
}

/// Replays every node's main branch from genesis with full validation.
pub fn no_invalid_confirmed(nodes: &[Node]) -> AssertionResult {
    for n in nodes {
        match replay_main(n.chain(), AnyEngine::new(n.design())) {
            Ok(fresh) if fresh.state_json() == n.chain().engine().state_json() => {}
            Ok(_) => {
                return AssertionResult::new("no_invalid_confirmed", false, format!("{}: replayed state differs", n.name()))
            }
            Err(e) => return AssertionResult::new("no_invalid_confirmed", false, format!("{}: {e}", n.name())),
        }
    }
    AssertionResult::new("no_invalid_confirmed", true, format!("{} main branches replayed cleanly", nodes.len()))
}

/// Alternatives that fired in the case's confirmed history on `node`.
fn confirmed_alternatives(node: &Node, case_id: Uuid, alternatives: &[String]) -> Vec<String> {
    let store = node.chain().store();
    let top = store.head_height().saturating_sub(node.settings().confirmation_depth);
    match node.design() {
        Design::Actions => (1..=top)
            .filter_map(|h| store.main_block_at(h))
            .flat_map(|b| b.transactions.iter())
            .filter_map(|t| match t.body() {
                TxBody::FireTransition { case_id: c, transition, .. } if *c == case_id && alternatives.contains(transition) => {
                    Some(transition.clone())
                }
                _ => None,
            })
            .collect(),
        Design::States => {
            // Only states are recorded. Each confirmed step is matched to the
            // alternative whose firing leads to it.
            let Some((_, model)) = node.visible().case(&case_id) else { return Vec::new() };
            let mut prev = model.initial_marking.clone();
            let mut taken = Vec::new();
            for h in 1..=top {
                let Some(b) = store.main_block_at(h) else { continue };
                for t in &b.transactions {
                    let TxBody::InstanceState { case_id: c, marking, .. } = t.body() else { continue };
                    if *c != case_id {
                        continue;
                    }
                    let leads_to = |t: &String| {
                        is_enabled(&model, &prev, t) && {
                            let after = fire(&model, &prev, t).expect("enabled");
                            after == *marking
                                || is_reachable(&model, &after, marking, ReachLimits::default()) == Ok(Reachability::Reachable)
                        }
                    };
                    taken.extend(alternatives.iter().filter(|t| leads_to(t)).cloned());
                    prev = marking.clone();
                }
            }
            taken
        }
    }
}

/// Exactly one alternative confirmed, the same one on every node, and every
/// submitted losing attempt ended rejected, undone or withdrawn after a
/// refusal.
pub fn deferred_choice_exclusive(nodes: &[Node], case_id: Uuid, alternatives: &[String]) -> AssertionResult {
    let name = "deferred_choice_exclusive";
    let mut winner: Option<String> = None;
    for n in nodes {
        let taken = confirmed_alternatives(n, case_id, alternatives);
        if taken.len() != 1 {
            return AssertionResult::new(name, false, format!("{}: confirmed alternatives {taken:?}", n.name()));
        }
        match &winner {
            Some(w) if *w != taken[0] => {
                return AssertionResult::new(name, false, format!("{} confirmed {} but others {w}", n.name(), taken[0]))
            }
            _ => winner = Some(taken[0].clone()),
        }
    }
    let winner = winner.unwrap_or_default();
    let mut losers = Vec::new();
    for n in nodes {
        // The archive records every transition an item went through; the
        // last record, or the live item, is its final status.
        let wl = n.worklist();
        let mut last: BTreeMap<&str, &WorkItem> = BTreeMap::new();
        for item in wl.archive().iter().chain(wl.items()) {
            last.insert(item.id.as_str(), item);
        }
        for item in last.values().filter(|i| i.case_id == case_id && i.transition != winner && alternatives.contains(&i.transition)) {
            let ok = match &item.status {
                WorkStatus::Rejected { .. } | WorkStatus::Undone | WorkStatus::Withdrawn => true,
                WorkStatus::Worklisted => item.tx.is_none() && item.notice.is_some(),
                _ => false,
            };
            if item.tx.is_some() || item.notice.is_some() {
                losers.push(format!("{}:{}={}", n.name(), item.transition, status_name(&item.status)));
            }
            if !ok {
                return AssertionResult::new(
                    name,
                    false,
                    format!("{}: losing item {} ended {}", n.name(), item.id, status_name(&item.status)),
                );
            }
        }
    }
    AssertionResult::new(name, true, format!("{winner} confirmed everywhere; losers: [{}]", losers.join(", ")))
}

fn status_name(s: &WorkStatus) -> &'static str {
    match s {
        WorkStatus::Worklisted => "worklisted",
        WorkStatus::PendingInPool => "pending",
        WorkStatus::Mined { .. } => "mined",
        WorkStatus::Confirmed => "confirmed",
        WorkStatus::Rejected { .. } => "rejected",
        WorkStatus::Undone => "undone",
        WorkStatus::Withdrawn => "withdrawn",
    }
}

/// Mean submit-to-confirm latency against the expectation `(k + 1) / rate`
/// for a geometric block interval.
pub fn latency_bound(samples: &[u64], k: u64, rate: f64, tolerance: f64, min_samples: usize) -> AssertionResult {
    let expected = (k + 1) as f64 / rate;
    if samples.len() < min_samples {
        return AssertionResult::new(
            "latency_bound",
            false,
            format!("only {} samples for K={k}, need {min_samples}", samples.len()),
        );
    }
    let mean = samples.iter().sum::<u64>() as f64 / samples.len() as f64;
    let rel = (mean - expected).abs() / expected;
    AssertionResult::new(
        "latency_bound",
        rel <= tolerance,
        format!("K={k}: mean {mean:.2} ticks vs expected {expected:.2} ({:+.1}%), n={}", (mean / expected - 1.0) * 100.0, samples.len()),
    )
}

/// Both runs converged and hold identical confirmed case states.
pub fn designs_equivalent(a: &RunReport, b: &RunReport) -> AssertionResult {
    let name = "designs_equivalent";
    if !a.converged() || !b.converged() {
        return AssertionResult::new(name, false, format!("converged: {}={}, {}={}", a.design, a.converged(), b.design, b.converged()));
    }
    let (ca, cb) = (&a.nodes[0].cases, &b.nodes[0].cases);
    if ca != cb {
        let differing: Vec<&String> = ca.keys().chain(cb.keys()).filter(|k| ca.get(*k) != cb.get(*k)).collect();
        return AssertionResult::new(name, false, format!("cases differ: {differing:?}"));
    }
    AssertionResult::new(name, true, format!("{} cases identical under {} and {}", ca.len(), a.design, b.design))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_bound_tolerance() {
        let samples = vec![20u64; 200];
        assert!(latency_bound(&samples, 0, 0.05, 0.3, 200).passed);
        assert!(!latency_bound(&samples, 2, 0.05, 0.3, 200).passed);
        assert!(!latency_bound(&samples[..10], 0, 0.05, 0.3, 200).passed);
    }
}
