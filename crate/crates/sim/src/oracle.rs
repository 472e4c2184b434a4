//! Random Petri nets checked against an exhaustive enumeration that shares
//! no code with the engine's reachability search.

use std::collections::BTreeSet;

use chainflow_core::petrinet::fixtures::activity;
use chainflow_core::petrinet::{is_reachable, Marking, ReachLimits, Reachability, WorkflowModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::batch::{map, Mode};

/// Nets are kept only if no reachable marking puts more than this many
/// tokens on a place, so enumeration is exhaustive.
pub const TOKEN_BOUND: u8 = 3;
const MAX_PLACES: usize = 10;
const MAX_TRANSITIONS: usize = 8;
const ENUMERATION_CAP: usize = 50_000;

/// A net as plain vectors: per transition (consumed, produced) token counts.
#[derive(Debug, Clone)]
pub struct RandomNet {
    pub places: usize,
    pub transitions: Vec<(Vec<u8>, Vec<u8>)>,
    pub initial: Vec<u8>,
}

impl RandomNet {
    pub fn generate(rng: &mut ChaCha8Rng) -> Self {
        let places = rng.gen_range(1..=MAX_PLACES);
        let count = rng.gen_range(1..=MAX_TRANSITIONS);
        let mut transitions = Vec::with_capacity(count);
        for _ in 0..count {
            let mut pre = vec![0u8; places];
            let mut post = vec![0u8; places];
            for _ in 0..rng.gen_range(1..=2) {
                pre[rng.gen_range(0..places)] += rng.gen_range(1..=2);
            }
            for _ in 0..rng.gen_range(0..=2) {
                post[rng.gen_range(0..places)] += rng.gen_range(1..=2);
            }
            transitions.push((pre, post));
        }
        let mut initial = vec![0u8; places];
        for _ in 0..rng.gen_range(1..=TOKEN_BOUND) {
            initial[rng.gen_range(0..places)] += 1;
        }
        Self { places, transitions, initial }
    }

    /// Every marking reachable from `from`, or `None` when some marking
    /// exceeds the token bound or the set grows past the cap.
    pub fn enumerate(&self, from: &[u8]) -> Option<BTreeSet<Vec<u8>>> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from.to_vec()];
        seen.insert(from.to_vec());
        while let Some(m) = stack.pop() {
            for (pre, post) in &self.transitions {
                if m.iter().zip(pre).any(|(have, need)| have < need) {
                    continue;
                }
                let next: Vec<u8> = (0..self.places).map(|p| m[p] - pre[p] + post[p]).collect();
                if next.iter().any(|n| *n > TOKEN_BOUND) {
                    return None;
                }
                if seen.insert(next.clone()) {
                    if seen.len() > ENUMERATION_CAP {
                        return None;
                    }
                    stack.push(next);
                }
            }
        }
        Some(seen)
    }

    fn place(p: usize) -> String {
        format!("p{p}")
    }

    fn marking(v: &[u8]) -> Marking {
        Marking::from_counts(v.iter().enumerate().filter(|(_, n)| **n > 0).map(|(p, n)| (Self::place(p), u32::from(*n))))
    }

    pub fn to_model(&self) -> WorkflowModel {
        let expand = |v: &[u8]| -> Vec<String> {
            v.iter().enumerate().flat_map(|(p, n)| std::iter::repeat(Self::place(p)).take(*n as usize)).collect()
        };
        let transitions = self
            .transitions
            .iter()
            .enumerate()
            .map(|(i, (pre, post))| {
                let ins = expand(pre);
                let outs = expand(post);
                let ins: Vec<&str> = ins.iter().map(String::as_str).collect();
                let outs: Vec<&str> = outs.iter().map(String::as_str).collect();
                activity(&format!("t{i}"), "oracle", &ins, &outs)
            })
            .collect();
        WorkflowModel {
            name: "RANDOM".into(),
            places: (0..self.places).map(Self::place).collect(),
            transitions,
            variables: Vec::new(),
            initial_marking: Self::marking(&self.initial),
            final_markings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub net: usize,
    pub from: Vec<u8>,
    pub to: Vec<u8>,
    pub expected: bool,
    pub got: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OracleReport {
    pub nets: usize,
    pub queries: usize,
    pub reachable_queries: usize,
    pub mismatches: Vec<Mismatch>,
}

/// Draws the `index`th bounded net for `seed` (unbounded draws are skipped).
fn bounded_net(seed: u64, index: usize) -> (RandomNet, BTreeSet<Vec<u8>>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    loop {
        let net = RandomNet::generate(&mut rng);
        if let Some(reach) = net.enumerate(&net.initial) {
            return (net, reach, rng);
        }
    }
}

/// Checks `queries` (from, to) pairs on one net. Sources are drawn from the
/// reachable set; targets are half reachable, half arbitrary bounded markings.
fn check_net(seed: u64, index: usize, queries: usize) -> (usize, usize, Vec<Mismatch>) {
    let (net, reach, mut rng) = bounded_net(seed, index);
    let model = net.to_model();
    let states: Vec<&Vec<u8>> = reach.iter().collect();
    let mut mismatches = Vec::new();
    let mut reachable = 0;
    for q in 0..queries {
        let from = (*states.choose(&mut rng).expect("initial is reachable")).clone();
        let from_reach = net.enumerate(&from).expect("subset of a bounded set");
        let to: Vec<u8> = if q % 2 == 0 {
            (*from_reach.iter().collect::<Vec<_>>().choose(&mut rng).expect("from reaches itself")).clone()
        } else {
            (0..net.places).map(|_| rng.gen_range(0..=TOKEN_BOUND)).collect()
        };
        let expected = from_reach.contains(&to);
        reachable += usize::from(expected);
        let got = is_reachable(&model, &RandomNet::marking(&from), &RandomNet::marking(&to), ReachLimits::default());
        let agrees = matches!(
            (&got, expected),
            (Ok(Reachability::Reachable), true) | (Ok(Reachability::Unreachable), false)
        );
        if !agrees {
            mismatches.push(Mismatch { net: index, from, to, expected, got: format!("{got:?}") });
        }
    }
    (queries, reachable, mismatches)
}

/// Compares the engine's reachability with enumeration on `nets` random
/// bounded nets, `queries` checks each.
pub fn sweep(nets: usize, queries: usize, seed: u64, mode: Mode) -> OracleReport {
    let indices: Vec<usize> = (0..nets).collect();
    let results = map(&indices, mode, |i| check_net(seed, *i, queries));
    let mut report = OracleReport { nets, ..Default::default() };
    for (q, r, m) in results {
        report.queries += q;
        report.reachable_queries += r;
        report.mismatches.extend(m);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_of_a_cycle() {
        // p0 -> p1 -> p0 with one token: two markings.
        let net = RandomNet {
            places: 2,
            transitions: vec![(vec![1, 0], vec![0, 1]), (vec![0, 1], vec![1, 0])],
            initial: vec![1, 0],
        };
        let r = net.enumerate(&net.initial).unwrap();
        assert_eq!(r, BTreeSet::from([vec![1, 0], vec![0, 1]]));
    }

    #[test]
    fn generator_nets_are_bounded() {
        for i in 0..20 {
            let (net, reach, _) = bounded_net(7, i);
            assert!(reach.iter().all(|m| m.iter().all(|n| *n <= TOKEN_BOUND)));
            assert!(net.places <= MAX_PLACES && net.transitions.len() <= MAX_TRANSITIONS);
        }
    }

    #[test]
    fn small_sweep_agrees() {
        let r = sweep(25, 4, 11, Mode::Sequential);
        assert!(r.mismatches.is_empty(), "{:?}", r.mismatches);
        assert!(r.reachable_queries > 0 && r.reachable_queries < r.queries);
    }
}
