//! Bounded breadth-first reachability.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Marking, SemanticsError, WorkflowModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachLimits {
    /// Maximum number of distinct markings explored.
    pub max_states: usize,
    /// Markings with more tokens than this on any place are not explored.
    pub max_tokens: u32,
}

impl Default for ReachLimits {
    fn default() -> Self {
        Self { max_states: 100_000, max_tokens: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reachability {
    Reachable,
    Unreachable,
    /// The search was cut short by a limit, so the answer is unknown.
    LimitExceeded,
}

struct DenseNet {
    /// (input arcs, output arcs) per transition, as (place index, weight).
    transitions: Vec<(Vec<(usize, u32)>, Vec<(usize, u32)>)>,
}

fn to_dense(index: &HashMap<&str, usize>, marking: &Marking) -> Vec<u32> {
    let mut v = vec![0u32; index.len()];
    for (p, n) in marking.iter() {
        v[index[p]] = n;
    }
    v
}

/// Decides whether `to` is reachable from `from` by some firing sequence.
///
/// Only markings within `limits.max_tokens` per place are explored. The
/// result is `Reachable` if `to` is found among them, `Unreachable` if the
/// bounded search was exhaustive, and `LimitExceeded` otherwise.
pub fn is_reachable(
    model: &WorkflowModel,
    from: &Marking,
    to: &Marking,
    limits: ReachLimits,
) -> Result<Reachability, SemanticsError> {
    model.check_marking(from)?;
    model.check_marking(to)?;
    if from == to {
        return Ok(Reachability::Reachable);
    }
    let index: HashMap<&str, usize> = model.places.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
    let net = DenseNet {
        transitions: model
            .transitions
            .iter()
            .map(|t| {
                let ins = t.in_arcs.iter().map(|(p, w)| (index[p.as_str()], *w)).collect();
                let outs = t.out_arcs.iter().map(|(p, w)| (index[p.as_str()], *w)).collect();
                (ins, outs)
            })
            .collect(),
    };
    let start = to_dense(&index, from);
    let target = to_dense(&index, to);

    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut queue = VecDeque::new();
    let mut pruned = start.iter().any(|n| *n > limits.max_tokens);
    if !pruned {
        seen.insert(start.clone());
        queue.push_back(start);
    }
    while let Some(m) = queue.pop_front() {
        for (ins, outs) in &net.transitions {
            if ins.iter().any(|(p, w)| m[*p] < *w) {
                continue;
            }
            let mut next = m.clone();
            for (p, w) in ins {
                next[*p] -= w;
            }
            let mut over = false;
            for (p, w) in outs {
                next[*p] += w;
                over |= next[*p] > limits.max_tokens;
            }
            if over {
                pruned = true;
                continue;
            }
            if next == target {
                return Ok(Reachability::Reachable);
            }
            if seen.insert(next.clone()) {
                if seen.len() > limits.max_states {
                    return Ok(Reachability::LimitExceeded);
                }
                queue.push_back(next);
            }
        }
    }
    Ok(if pruned { Reachability::LimitExceeded } else { Reachability::Unreachable })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn identity_is_reachable() {
        let m = seq("a", "b");
        let p0 = Marking::from_counts([("p0", 1)]);
        assert_eq!(is_reachable(&m, &p0, &p0, ReachLimits::default()), Ok(Reachability::Reachable));
    }

    #[test]
    fn seq_forward_and_backward() {
        let m = seq("a", "b");
        let p0 = Marking::from_counts([("p0", 1)]);
        let p2 = Marking::from_counts([("p2", 1)]);
        assert_eq!(is_reachable(&m, &p0, &p2, ReachLimits::default()), Ok(Reachability::Reachable));
        assert_eq!(is_reachable(&m, &p2, &p0, ReachLimits::default()), Ok(Reachability::Unreachable));
    }

    #[test]
    fn deferred_choice_branches_exclude_each_other() {
        let m = deferred_choice("a", "b", "c");
        let pa = Marking::from_counts([("pa", 1)]);
        let pb = Marking::from_counts([("pb", 1)]);
        assert_eq!(is_reachable(&m, &pa, &pb, ReachLimits::default()), Ok(Reachability::Unreachable));
    }

    #[test]
    fn unbounded_net_hits_limits() {
        // t: p -> p + q grows q forever; the target is never reachable.
        let mut net = seq("a", "b");
        net.places = vec!["p".into(), "q".into(), "r".into()];
        net.transitions = vec![activity("grow", "a", &["p"], &["p", "q"])];
        net.initial_marking = Marking::from_counts([("p", 1)]);
        let from = Marking::from_counts([("p", 1)]);
        let to = Marking::from_counts([("r", 1)]);
        assert_eq!(is_reachable(&net, &from, &to, ReachLimits::default()), Ok(Reachability::LimitExceeded));
        let tight = ReachLimits { max_states: 5, max_tokens: 1_000 };
        assert_eq!(is_reachable(&net, &from, &to, tight), Ok(Reachability::LimitExceeded));
        let three_q = Marking::from_counts([("p", 1), ("q", 3)]);
        assert_eq!(is_reachable(&net, &from, &three_q, ReachLimits::default()), Ok(Reachability::Reachable));
    }

    #[test]
    fn invalid_marking_is_an_error() {
        let m = seq("a", "b");
        let bad = Marking::from_counts([("zz", 1)]);
        assert!(is_reachable(&m, &bad, &bad, ReachLimits::default()).is_err());
    }
}
