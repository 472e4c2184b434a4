//! Scenario files: who runs, how the network behaves, and what users do.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chainflow_core::engine::Design;
use chainflow_core::p2p::sim::{Latency, PartitionWindow};
use chainflow_core::petrinet::{Value, WorkflowModel};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A probability written as a decimal string (`"0.05"`), since canonical
/// JSON carries no floating-point numbers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rate(pub f64);

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Rate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a decimal number"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("`{s}` is outside [0, 1]"));
        }
        Ok(Rate(v))
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub design: Design,
    #[serde(default = "default_depth")]
    pub confirmation_depth: u64,
    /// Chance of finding a block in any one tick.
    #[serde(default)]
    pub mining_rate: Rate,
}

fn default_depth() -> u64 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    pub latency: Latency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Install {
        model: WorkflowModel,
    },
    /// Launches a case of `model`; `case` is the label later actions use.
    Launch {
        model: String,
        case: String,
    },
    Complete {
        case: String,
        transition: String,
        #[serde(default)]
        outputs: BTreeMap<String, Value>,
    },
    /// Completes a re-worklisted item whose earlier attempt was undone or
    /// rejected.
    Retry {
        case: String,
        transition: String,
        #[serde(default)]
        outputs: BTreeMap<String, Value>,
    },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Install { model } => write!(f, "install {}", model.name),
            Action::Launch { model, case } => write!(f, "launch {model} as `{case}`"),
            Action::Complete { case, transition, .. } => write!(f, "complete {transition} on `{case}`"),
            Action::Retry { case, transition, .. } => write!(f, "retry {transition} on `{case}`"),
        }
    }
}

impl Action {
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Install { .. } => "install",
            Action::Launch { .. } => "launch",
            Action::Complete { .. } => "complete",
            Action::Retry { .. } => "retry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAction {
    pub tick: u64,
    pub node: String,
    pub action: Action,
    /// Keep trying on later ticks until the action's precondition holds.
    #[serde(default)]
    pub wait: bool,
    /// A waiting action that never becomes possible is not an error.
    #[serde(default)]
    pub optional: bool,
    /// Actions sharing a group run together, on the first tick all are ready.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopCondition {
    pub max_ticks: u64,
    /// End as soon as the network is quiescent.
    pub quiescence: bool,
}

impl Default for StopCondition {
    fn default() -> Self {
        Self { max_ticks: 20_000, quiescence: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AssertionSpec {
    ConvergedHeads,
    NoInvalidConfirmed,
    ReorgReplay,
    DeferredChoiceExclusive { case: String, alternatives: Vec<String> },
    DesignsEquivalent,
    LatencyBound { k: u64, tolerance: Rate, min_samples: usize },
}

impl AssertionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AssertionSpec::ConvergedHeads => "converged_heads",
            AssertionSpec::NoInvalidConfirmed => "no_invalid_confirmed",
            AssertionSpec::ReorgReplay => "reorg_replay",
            AssertionSpec::DeferredChoiceExclusive { .. } => "deferred_choice_exclusive",
            AssertionSpec::DesignsEquivalent => "designs_equivalent",
            AssertionSpec::LatencyBound { .. } => "latency_bound",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_network")]
    pub network_id: String,
    #[serde(default = "default_difficulty")]
    pub difficulty: u32,
    pub nodes: Vec<NodeSpec>,
    #[serde(default = "default_latency")]
    pub latency: Latency,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub partitions: Vec<PartitionWindow>,
    #[serde(default)]
    pub actions: Vec<ScriptedAction>,
    #[serde(default)]
    pub stop: StopCondition,
    #[serde(default)]
    pub assertions: Vec<AssertionSpec>,
}

fn default_network() -> String {
    "sim".into()
}

fn default_difficulty() -> u32 {
    6
}

fn default_latency() -> Latency {
    Latency::ZERO
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario declares no nodes")]
    NoNodes,
    #[error("node `{0}` is declared twice")]
    DuplicateNode(String),
    #[error("`{0}` is not a declared node")]
    UnknownNode(String),
    #[error("model `{0}` is launched but never installed")]
    UnknownModel(String),
    #[error("case label `{0}` is used but never launched")]
    UnknownCase(String),
    #[error("case label `{0}` is launched twice")]
    DuplicateCase(String),
    #[error("nodes mix designs; a network runs a single design")]
    MixedDesigns,
    #[error("difficulty {0} is out of range 0-32")]
    Difficulty(u32),
    #[error("latency range {0}..{1} is empty")]
    Latency(u64, u64),
}

impl Scenario {
    /// Parses a scenario document, reporting the field path of any error.
    pub fn from_json(bytes: &[u8]) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read(path)?)
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        chainflow_core::canon::canonical_bytes(self).expect("scenarios hold no floats")
    }

    pub fn design(&self) -> Design {
        self.nodes[0].design
    }

    pub fn node(&self, name: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Combined chance per tick that some node finds a block.
    pub fn block_rate(&self) -> f64 {
        1.0 - self.nodes.iter().map(|n| 1.0 - n.mining_rate.0).product::<f64>()
    }

    /// The same scenario with every node switched to `design`.
    pub fn with_design(&self, design: Design) -> Self {
        let mut s = self.clone();
        for n in &mut s.nodes {
            n.design = design;
        }
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.nodes.is_empty() {
            return Err(ScenarioError::NoNodes);
        }
        if self.difficulty > 32 {
            return Err(ScenarioError::Difficulty(self.difficulty));
        }
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(ScenarioError::DuplicateNode(n.name.clone()));
            }
            if n.design != self.nodes[0].design {
                return Err(ScenarioError::MixedDesigns);
            }
        }
        let known = |n: &str| if names.contains(n) { Ok(()) } else { Err(ScenarioError::UnknownNode(n.to_string())) };
        let latencies = std::iter::once(&self.latency).chain(self.links.iter().map(|l| &l.latency));
        for l in latencies {
            if l.min > l.max {
                return Err(ScenarioError::Latency(l.min, l.max));
            }
        }
        for l in &self.links {
            known(&l.from)?;
            known(&l.to)?;
        }
        for p in &self.partitions {
            for n in p.groups.iter().flatten() {
                known(n)?;
            }
        }
        let mut models = BTreeSet::new();
        let mut cases = BTreeSet::new();
        for a in &self.actions {
            known(&a.node)?;
            match &a.action {
                Action::Install { model } => {
                    models.insert(model.name.as_str());
                }
                Action::Launch { model, case } => {
                    if !models.contains(model.as_str()) {
                        return Err(ScenarioError::UnknownModel(model.clone()));
                    }
                    if !cases.insert(case.as_str()) {
                        return Err(ScenarioError::DuplicateCase(case.clone()));
                    }
                }
                Action::Complete { case, .. } | Action::Retry { case, .. } => {
                    if !cases.contains(case.as_str()) {
                        return Err(ScenarioError::UnknownCase(case.clone()));
                    }
                }
            }
        }
        if let Some(AssertionSpec::DeferredChoiceExclusive { case, .. }) = self
            .assertions
            .iter()
            .find(|a| matches!(a, AssertionSpec::DeferredChoiceExclusive { case, .. } if !cases.contains(case.as_str())))
        {
            return Err(ScenarioError::UnknownCase(case.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"name":"m","seed":1,"nodes":[{"name":"n1","design":"actions","mining_rate":"0.1"}]}"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = Scenario::from_json(MINIMAL.as_bytes()).unwrap();
        assert_eq!(s.nodes[0].confirmation_depth, 2);
        assert_eq!(s.difficulty, 6);
        assert_eq!(s.stop, StopCondition::default());
        assert_eq!(s.nodes[0].mining_rate, Rate(0.1));
    }

    #[test]
    fn canonical_form_round_trips() {
        let s = Scenario::from_json(MINIMAL.as_bytes()).unwrap();
        let bytes = s.to_canonical();
        let again = Scenario::from_json(&bytes).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.to_canonical(), bytes);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("\"0.1\"", "\"lots\"");
        let err = Scenario::from_json(bad.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("nodes[0].mining_rate"), "{err}");
    }

    #[test]
    fn references_must_resolve() {
        let bad = MINIMAL.replace(
            "]}",
            r#"],"actions":[{"tick":0,"node":"n9","action":{"kind":"launch","model":"X","case":"c"}}]}"#,
        );
        assert!(matches!(Scenario::from_json(bad.as_bytes()), Err(ScenarioError::UnknownNode(n)) if n == "n9"));
    }
}
