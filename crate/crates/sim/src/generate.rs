//! Seeded scenario generators for the shipped suites.

use chainflow_core::engine::Design;
use chainflow_core::p2p::sim::{Latency, PartitionWindow};
use chainflow_core::petrinet::fixtures::{deferred_choice, parallel, seq};
use chainflow_core::petrinet::WorkflowModel;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Action, AssertionSpec, NodeSpec, Rate, Scenario, ScriptedAction, StopCondition};

fn act(tick: u64, node: &str, action: Action) -> ScriptedAction {
    ScriptedAction { tick, node: node.to_string(), action, wait: true, optional: false, group: None }
}

fn complete(case: &str, transition: &str) -> Action {
    Action::Complete { case: case.into(), transition: transition.into(), outputs: Default::default() }
}

fn named(mut m: WorkflowModel, name: &str) -> WorkflowModel {
    m.name = name.to_string();
    m
}

fn base(name: String, seed: u64, nodes: Vec<NodeSpec>) -> Scenario {
    Scenario {
        name,
        seed,
        network_id: "sim".into(),
        difficulty: 6,
        nodes,
        latency: Latency::ZERO,
        links: Vec::new(),
        partitions: Vec::new(),
        actions: Vec::new(),
        stop: StopCondition::default(),
        assertions: vec![AssertionSpec::ConvergedHeads, AssertionSpec::NoInvalidConfirmed, AssertionSpec::ReorgReplay],
    }
}

fn node(name: &str, design: Design, depth: u64, rate: f64) -> NodeSpec {
    NodeSpec { name: name.into(), design, confirmation_depth: depth, mining_rate: Rate(rate) }
}

/// Which model family a generated case uses.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Family {
    Seq,
    Choice,
    Par,
}

/// Installs one model per family and scripts `cases` launches with the
/// completions each family needs. Choice cases let both alternatives race
/// only when `races` is set; otherwise only the first alternative is tried.
fn script_cases(rng: &mut ChaCha8Rng, s: &mut Scenario, cases: usize, races: bool) {
    let names: Vec<String> = s.nodes.iter().map(|n| n.name.clone()).collect();
    let pick = |rng: &mut ChaCha8Rng| names.choose(rng).expect("nodes").clone();
    let (a, b, c, d) = (pick(rng), pick(rng), pick(rng), pick(rng));
    let families = [
        (Family::Seq, named(seq(&a, &b), "SEQ")),
        (Family::Choice, named(deferred_choice(&b, &c, &a), "DC")),
        (Family::Par, named(parallel(&a, &c, &d, &b), "PAR")),
    ];
    let installer = pick(rng);
    for (_, m) in &families {
        s.actions.push(act(rng.gen_range(0..5), &installer, Action::Install { model: m.clone() }));
    }
    for k in 0..cases {
        let (family, model) = families.choose(rng).expect("families");
        let label = format!("c{k}");
        let start = rng.gen_range(5..120);
        s.actions.push(act(start, &pick(rng), Action::Launch { model: model.name.clone(), case: label.clone() }));
        let actor = |t: &str| model.transition(t).expect("fixture transition").actor.clone();
        let mut at = start;
        let mut next = |rng: &mut ChaCha8Rng| {
            at += rng.gen_range(0..40);
            at
        };
        match family {
            Family::Seq => {
                for t in ["A", "B"] {
                    s.actions.push(act(next(rng), &actor(t), complete(&label, t)));
                }
            }
            Family::Par => {
                for t in ["Split", "Left", "Right", "Join"] {
                    s.actions.push(act(next(rng), &actor(t), complete(&label, t)));
                }
            }
            Family::Choice => {
                let tick = next(rng);
                let alts: &[&str] = if races { &["A", "B"] } else { &["A"] };
                for t in alts {
                    let mut x = act(tick + rng.gen_range(0..10), &actor(t), complete(&label, t));
                    x.optional = races;
                    s.actions.push(x);
                }
                for t in ["CA", "CB"] {
                    let mut x = act(tick, &actor(t), complete(&label, t));
                    x.optional = true;
                    s.actions.push(x);
                }
                s.assertions.push(AssertionSpec::DeferredChoiceExclusive {
                    case: label.clone(),
                    alternatives: alts.iter().map(|t| t.to_string()).collect(),
                });
            }
        }
    }
}

fn random_partitions(rng: &mut ChaCha8Rng, names: &[String], max: usize) -> Vec<PartitionWindow> {
    let count = rng.gen_range(0..=max);
    let mut out: Vec<PartitionWindow> = Vec::new();
    for _ in 0..count {
        let from = out.last().map_or(0, |p| p.until) + rng.gen_range(5..150);
        let until = from + rng.gen_range(5..60);
        let mut shuffled = names.to_vec();
        shuffled.shuffle(rng);
        let cut = rng.gen_range(1..shuffled.len());
        out.push(PartitionWindow { from, until, groups: vec![shuffled[..cut].to_vec(), shuffled[cut..].to_vec()] });
    }
    out
}

/// Random network: 2-6 nodes, latency up to 20 ticks, up to two partition
/// windows, mixed confirmation depths and a handful of cases.
pub fn random(index: u64, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(index));
    let n = rng.gen_range(2..=6);
    let design = if rng.gen_bool(0.5) { Design::Actions } else { Design::States };
    let nodes: Vec<NodeSpec> = (1..=n)
        .map(|i| {
            let rate = if i == 1 || rng.gen_bool(0.7) { rng.gen_range(0.01..0.06) } else { 0.0 };
            node(&format!("n{i}"), design, rng.gen_range(0..=3), (rate * 1000.0f64).round() / 1000.0)
        })
        .collect();
    let mut s = base(format!("random-{index}"), seed.wrapping_add(index), nodes);
    let min = rng.gen_range(0..=5);
    s.latency = Latency { min, max: rng.gen_range(min..=20) };
    let names: Vec<String> = s.nodes.iter().map(|n| n.name.clone()).collect();
    s.partitions = random_partitions(&mut rng, &names, 2);
    let cases = rng.gen_range(2..=5);
    script_cases(&mut rng, &mut s, cases, true);
    s
}

/// Two nodes complete the alternatives of a deferred choice in the same
/// tick while messages take five ticks; a third closes the case.
pub fn deferred_choice_race(seed: u64, design: Design) -> Scenario {
    let nodes = vec![node("n1", design, 2, 0.08), node("n2", design, 2, 0.08), node("n3", design, 2, 0.04)];
    let mut s = base(format!("dc-race-{design}"), seed, nodes);
    s.latency = Latency::fixed(5);
    s.actions.push(act(0, "n1", Action::Install { model: deferred_choice("n1", "n2", "n3") }));
    s.actions.push(act(1, "n3", Action::Launch { model: "DC".into(), case: "race".into() }));
    for (n, t) in [("n1", "A"), ("n2", "B")] {
        let mut x = act(1, n, complete("race", t));
        x.group = Some("race".into());
        s.actions.push(x);
    }
    for t in ["CA", "CB"] {
        let mut x = act(1, "n3", complete("race", t));
        x.optional = true;
        s.actions.push(x);
    }
    s.assertions
        .push(AssertionSpec::DeferredChoiceExclusive { case: "race".into(), alternatives: vec!["A".into(), "B".into()] });
    s
}

/// One miner with block chance `rate`; `launches` cases submitted at
/// staggered ticks from both nodes, all measured to depth `k`.
pub fn latency(k: u64, rate: f64, launches: usize, seed: u64, design: Design) -> Scenario {
    let nodes = vec![node("n1", design, k, rate), node("n2", design, k, 0.0)];
    let mut s = base(format!("latency-k{k}"), seed, nodes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    s.actions.push(act(0, "n1", Action::Install { model: seq("n1", "n2") }));
    let mut tick = 10;
    for i in 0..launches {
        tick += rng.gen_range(1..12);
        let who = if i % 2 == 0 { "n1" } else { "n2" };
        s.actions.push(act(tick, who, Action::Launch { model: "SEQ".into(), case: format!("l{i}") }));
    }
    s.stop.max_ticks = 200_000;
    s.assertions.push(AssertionSpec::LatencyBound { k, tolerance: Rate(0.3), min_samples: 200 });
    s
}

/// A race-free random scenario for comparing the two designs.
pub fn mirrored(index: u64, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7_919).wrapping_add(index));
    let n = rng.gen_range(2..=4);
    let depth = rng.gen_range(0..=3);
    let nodes: Vec<NodeSpec> =
        (1..=n).map(|i| node(&format!("n{i}"), Design::Actions, depth, if i == 1 { 0.05 } else { 0.02 })).collect();
    let mut s = base(format!("mirrored-{index}"), seed.wrapping_add(index), nodes);
    s.latency = Latency { min: 0, max: rng.gen_range(0..=10) };
    let names: Vec<String> = s.nodes.iter().map(|n| n.name.clone()).collect();
    s.partitions = random_partitions(&mut rng, &names, 1);
    let cases = rng.gen_range(2..=4);
    script_cases(&mut rng, &mut s, cases, false);
    s.assertions.push(AssertionSpec::DesignsEquivalent);
    s
}

/// Two nodes split for fifty ticks while each launches a case; the slower
/// side's branch loses when the partition heals and its transactions go
/// back to the pool.
pub fn forced_fork(seed: u64) -> Scenario {
    let nodes = vec![node("n1", Design::Actions, 2, 0.15), node("n2", Design::Actions, 2, 0.05)];
    let mut s = base("forced-fork".into(), seed, nodes);
    s.latency = Latency::fixed(1);
    s.partitions = vec![PartitionWindow { from: 10, until: 60, groups: vec![vec!["n1".into()], vec!["n2".into()]] }];
    s.actions.push(act(0, "n1", Action::Install { model: seq("n1", "n2") }));
    s.actions.push(act(15, "n1", Action::Launch { model: "SEQ".into(), case: "left".into() }));
    s.actions.push(act(15, "n2", Action::Launch { model: "SEQ".into(), case: "right".into() }));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate() {
        for i in 0..50 {
            random(i, 1).validate().unwrap();
            mirrored(i, 1).validate().unwrap();
        }
        deferred_choice_race(3, Design::States).validate().unwrap();
        latency(2, 0.05, 10, 1, Design::Actions).validate().unwrap();
        forced_fork(1).validate().unwrap();
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(random(4, 9).to_canonical(), random(4, 9).to_canonical());
        assert_ne!(random(4, 9).to_canonical(), random(5, 9).to_canonical());
    }
}
