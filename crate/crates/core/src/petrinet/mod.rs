//! Plain Petri-net workflow models: actor-assigned transitions, typed case
//! variables, data constraints, firing and reachability.

mod constraint;
mod reach;
mod value;

pub use constraint::{evaluate, CmpOp, ConstraintError, ConstraintExpr, Expr};
pub use reach::{is_reachable, ReachLimits, Reachability};
pub use value::{Value, ValueType};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

/// Token counts per place. Zero entries are never stored, so two equal
/// markings always have equal canonical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Marking(BTreeMap<String, u32>);

impl<'de> Deserialize<'de> for Marking {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, u32>::deserialize(d)?;
        Ok(Marking::from_counts(raw))
    }
}

impl Marking {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<K: Into<String>>(counts: impl IntoIterator<Item = (K, u32)>) -> Self {
        let mut m = Marking::new();
        for (k, v) in counts {
            m.add(&k.into(), v);
        }
        m
    }

    pub fn tokens(&self, place: &str) -> u32 {
        self.0.get(place).copied().unwrap_or(0)
    }

    pub fn add(&mut self, place: &str, n: u32) {
        if n > 0 {
            *self.0.entry(place.to_string()).or_insert(0) += n;
        }
    }

    /// Removes `n` tokens; false (and no change) if fewer are present.
    pub fn remove(&mut self, place: &str, n: u32) -> bool {
        let have = self.tokens(place);
        if have < n {
            return false;
        }
        if have == n {
            self.0.remove(place);
        } else if n > 0 {
            self.0.insert(place.to_string(), have - n);
        }
        true
    }

    /// True when every count in `other` is covered by `self`.
    pub fn covers(&self, other: &BTreeMap<String, u32>) -> bool {
        other.iter().all(|(p, n)| self.tokens(p) >= *n)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn total(&self) -> u64 {
        self.0.values().map(|v| u64::from(*v)).sum()
    }
}

impl fmt::Display for Marking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (p, n)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}:{n}")?;
        }
        f.write_str("}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

/// A transition: one activity assigned to exactly one actor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Activity {
    pub name: String,
    pub actor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
    pub in_arcs: BTreeMap<String, u32>,
    pub out_arcs: BTreeMap<String, u32>,
    #[serde(default)]
    pub constraints: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handler: Option<String>,
}

/// The model file document, shipped verbatim in model updates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowModel {
    pub name: String,
    pub places: Vec<String>,
    pub transitions: Vec<Activity>,
    #[serde(default)]
    pub variables: Vec<VariableDecl>,
    pub initial_marking: Marking,
    #[serde(default)]
    pub final_markings: Vec<Marking>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("model name is empty")]
    EmptyName,
    #[error("duplicate place `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition `{0}`")]
    DuplicateTransition(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("transition `{transition}` references undeclared place `{place}`")]
    UnknownPlace { transition: String, place: String },
    #[error("marking references undeclared place `{0}`")]
    UnknownMarkingPlace(String),
    #[error("transition `{transition}` references undeclared variable `{variable}`")]
    UnknownVariable { transition: String, variable: String },
    #[error("transition `{0}` has no actor")]
    MissingActor(String),
    #[error("arc weight must be positive on `{0}`")]
    ZeroWeight(String),
    #[error("default of `{0}` does not match its declared type")]
    BadDefault(String),
    #[error("initial marking is empty")]
    EmptyInitialMarking,
    #[error("constraint on `{transition}`: {error}")]
    Constraint { transition: String, error: ConstraintError },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("transition `{0}` is not enabled")]
    NotEnabled(String),
    #[error("transition `{0}` cannot be unfired from this marking")]
    NotUnfireable(String),
    #[error("marking references undeclared place `{0}`")]
    InvalidMarking(String),
}

impl WorkflowModel {
    /// Structural checks: unique names, declared places and variables,
    /// well-typed constraints.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.is_empty() {
            return Err(ModelError::EmptyName);
        }
        let mut places = BTreeSet::new();
        for p in &self.places {
            if !places.insert(p.as_str()) {
                return Err(ModelError::DuplicatePlace(p.clone()));
            }
        }
        let mut vars = BTreeMap::new();
        for v in &self.variables {
            if vars.insert(v.name.clone(), v.ty).is_some() {
                return Err(ModelError::DuplicateVariable(v.name.clone()));
            }
            if let Some(d) = &v.default {
                if d.value_type() != v.ty {
                    return Err(ModelError::BadDefault(v.name.clone()));
                }
            }
        }
        let mut names = BTreeSet::new();
        for t in &self.transitions {
            if !names.insert(t.name.as_str()) {
                return Err(ModelError::DuplicateTransition(t.name.clone()));
            }
            if t.actor.is_empty() {
                return Err(ModelError::MissingActor(t.name.clone()));
            }
            for (p, w) in t.in_arcs.iter().chain(t.out_arcs.iter()) {
                if !places.contains(p.as_str()) {
                    return Err(ModelError::UnknownPlace { transition: t.name.clone(), place: p.clone() });
                }
                if *w == 0 {
                    return Err(ModelError::ZeroWeight(t.name.clone()));
                }
            }
            for v in t.inputs.iter().chain(t.outputs.iter()) {
                if !vars.contains_key(v) {
                    return Err(ModelError::UnknownVariable { transition: t.name.clone(), variable: v.clone() });
                }
            }
            for c in &t.constraints {
                let expr = ConstraintExpr::parse(c)
                    .map_err(|error| ModelError::Constraint { transition: t.name.clone(), error })?;
                expr.type_check(&vars)
                    .map_err(|error| ModelError::Constraint { transition: t.name.clone(), error })?;
            }
        }
        if self.initial_marking.is_empty() {
            return Err(ModelError::EmptyInitialMarking);
        }
        for m in std::iter::once(&self.initial_marking).chain(self.final_markings.iter()) {
            if let Some((p, _)) = m.iter().find(|(p, _)| !places.contains(p)) {
                return Err(ModelError::UnknownMarkingPlace(p.to_string()));
            }
        }
        Ok(())
    }

    pub fn transition(&self, name: &str) -> Option<&Activity> {
        self.transitions.iter().find(|t| t.name == name)
    }

    pub fn variable_types(&self) -> BTreeMap<String, ValueType> {
        self.variables.iter().map(|v| (v.name.clone(), v.ty)).collect()
    }

    /// Initial values of a fresh case.
    pub fn initial_values(&self) -> BTreeMap<String, Value> {
        self.variables
            .iter()
            .map(|v| (v.name.clone(), v.default.clone().unwrap_or_else(|| Value::default_for(v.ty))))
            .collect()
    }

    /// Every activity constraint, parsed; used where constraints apply to
    /// the whole case state rather than to one activity's outputs.
    pub fn global_constraints(&self) -> Result<Vec<ConstraintExpr>, ConstraintError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in &self.transitions {
            for c in &t.constraints {
                if seen.insert(c.as_str()) {
                    out.push(ConstraintExpr::parse(c)?);
                }
            }
        }
        Ok(out)
    }

    pub fn check_marking(&self, marking: &Marking) -> Result<(), SemanticsError> {
        match marking.iter().find(|(p, _)| !self.places.iter().any(|q| q == p)) {
            Some((p, _)) => Err(SemanticsError::InvalidMarking(p.to_string())),
            None => Ok(()),
        }
    }

    /// Values cover exactly the declared variables, each with its declared type.
    pub fn check_values(&self, values: &BTreeMap<String, Value>) -> Result<(), String> {
        if values.len() != self.variables.len() {
            return Err(format!("expected {} variables, got {}", self.variables.len(), values.len()));
        }
        for v in &self.variables {
            match values.get(&v.name) {
                None => return Err(format!("missing variable `{}`", v.name)),
                Some(val) if val.value_type() != v.ty => {
                    return Err(format!("`{}` should be {}, got {}", v.name, v.ty, val.value_type()))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Transitions enabled at `marking`, in model order.
pub fn enabled_transitions<'m>(model: &'m WorkflowModel, marking: &Marking) -> Vec<&'m str> {
    model
        .transitions
        .iter()
        .filter(|t| marking.covers(&t.in_arcs))
        .map(|t| t.name.as_str())
        .collect()
}

pub fn is_enabled(model: &WorkflowModel, marking: &Marking, transition: &str) -> bool {
    model.transition(transition).is_some_and(|t| marking.covers(&t.in_arcs))
}

pub fn fire(model: &WorkflowModel, marking: &Marking, transition: &str) -> Result<Marking, SemanticsError> {
    let t = model
        .transition(transition)
        .ok_or_else(|| SemanticsError::UnknownTransition(transition.to_string()))?;
    if !marking.covers(&t.in_arcs) {
        return Err(SemanticsError::NotEnabled(transition.to_string()));
    }
    let mut next = marking.clone();
    for (p, n) in &t.in_arcs {
        next.remove(p, *n);
    }
    for (p, n) in &t.out_arcs {
        next.add(p, *n);
    }
    Ok(next)
}

/// Exact inverse of [`fire`].
pub fn unfire(model: &WorkflowModel, marking: &Marking, transition: &str) -> Result<Marking, SemanticsError> {
    let t = model
        .transition(transition)
        .ok_or_else(|| SemanticsError::UnknownTransition(transition.to_string()))?;
    if !marking.covers(&t.out_arcs) {
        return Err(SemanticsError::NotUnfireable(transition.to_string()));
    }
    let mut prev = marking.clone();
    for (p, n) in &t.out_arcs {
        prev.remove(p, *n);
    }
    for (p, n) in &t.in_arcs {
        prev.add(p, *n);
    }
    Ok(prev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Running,
    Finished,
    Deadlocked,
}

pub fn case_status(model: &WorkflowModel, marking: &Marking) -> CaseStatus {
    if model.final_markings.iter().any(|f| f == marking) {
        CaseStatus::Finished
    } else if enabled_transitions(model, marking).is_empty() {
        CaseStatus::Deadlocked
    } else {
        CaseStatus::Running
    }
}

/// Control-flow and data state of one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseState {
    pub case_id: Uuid,
    pub model: String,
    pub marking: Marking,
    pub values: BTreeMap<String, Value>,
}

impl CaseState {
    pub fn initial(case_id: Uuid, model: &WorkflowModel) -> Self {
        Self {
            case_id,
            model: model.name.clone(),
            marking: model.initial_marking.clone(),
            values: model.initial_values(),
        }
    }
}

/// Small models used across the test suites.
pub mod fixtures {
    use super::*;

    fn arcs(places: &[&str]) -> BTreeMap<String, u32> {
        let mut m = BTreeMap::new();
        for p in places {
            *m.entry(p.to_string()).or_insert(0) += 1;
        }
        m
    }

    pub fn activity(name: &str, actor: &str, inputs: &[&str], outputs: &[&str]) -> Activity {
        Activity {
            name: name.into(),
            actor: actor.into(),
            role: None,
            inputs: vec![],
            outputs: vec![],
            in_arcs: arcs(inputs),
            out_arcs: arcs(outputs),
            constraints: vec![],
            handler: None,
        }
    }

    /// p0 -A-> p1 -B-> p2, with an integer `x` written by both activities
    /// under the constraint `x <= 10`.
    pub fn seq(actor_a: &str, actor_b: &str) -> WorkflowModel {
        let mut a = activity("A", actor_a, &["p0"], &["p1"]);
        a.outputs = vec!["x".into()];
        a.constraints = vec!["x <= 10".into()];
        let mut b = activity("B", actor_b, &["p1"], &["p2"]);
        b.inputs = vec!["x".into()];
        b.outputs = vec!["x".into()];
        b.constraints = vec!["x <= 10".into()];
        WorkflowModel {
            name: "SEQ".into(),
            places: vec!["p0".into(), "p1".into(), "p2".into()],
            transitions: vec![a, b],
            variables: vec![VariableDecl { name: "x".into(), ty: ValueType::Integer, default: None }],
            initial_marking: Marking::from_counts([("p0", 1)]),
            final_markings: vec![Marking::from_counts([("p2", 1)])],
        }
    }

    /// Deferred choice: A or B consume p0, then C finishes the case.
    pub fn deferred_choice(actor_a: &str, actor_b: &str, actor_c: &str) -> WorkflowModel {
        let mut a = activity("A", actor_a, &["p0"], &["pa"]);
        a.outputs = vec!["choice".into()];
        let mut b = activity("B", actor_b, &["p0"], &["pb"]);
        b.outputs = vec!["choice".into()];
        let mut c1 = activity("CA", actor_c, &["pa"], &["end"]);
        c1.inputs = vec!["choice".into()];
        let mut c2 = activity("CB", actor_c, &["pb"], &["end"]);
        c2.inputs = vec!["choice".into()];
        WorkflowModel {
            name: "DC".into(),
            places: vec!["p0".into(), "pa".into(), "pb".into(), "end".into()],
            transitions: vec![a, b, c1, c2],
            variables: vec![VariableDecl { name: "choice".into(), ty: ValueType::String, default: None }],
            initial_marking: Marking::from_counts([("p0", 1)]),
            final_markings: vec![Marking::from_counts([("end", 1)])],
        }
    }

    /// AND-split into two branches joined again; used for deadlock checks.
    pub fn parallel(actor_split: &str, actor_left: &str, actor_right: &str, actor_join: &str) -> WorkflowModel {
        let split = activity("Split", actor_split, &["i"], &["l0", "r0"]);
        let mut left = activity("Left", actor_left, &["l0"], &["l1"]);
        left.outputs = vec!["left".into()];
        let mut right = activity("Right", actor_right, &["r0"], &["r1"]);
        right.outputs = vec!["right".into()];
        let mut join = activity("Join", actor_join, &["l1", "r1"], &["o"]);
        join.inputs = vec!["left".into(), "right".into()];
        WorkflowModel {
            name: "PAR".into(),
            places: ["i", "l0", "r0", "l1", "r1", "o"].iter().map(|s| s.to_string()).collect(),
            transitions: vec![split, left, right, join],
            variables: vec![
                VariableDecl { name: "left".into(), ty: ValueType::Integer, default: None },
                VariableDecl { name: "right".into(), ty: ValueType::Integer, default: None },
            ],
            initial_marking: Marking::from_counts([("i", 1)]),
            final_markings: vec![Marking::from_counts([("o", 1)])],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn enabled_examples() {
        let seq = seq("n1", "n2");
        assert!(enabled_transitions(&seq, &Marking::new()).is_empty());
        assert_eq!(enabled_transitions(&seq, &Marking::from_counts([("p0", 1)])), vec!["A"]);
        let dc = deferred_choice("n1", "n2", "n3");
        assert_eq!(enabled_transitions(&dc, &Marking::from_counts([("p0", 1)])), vec!["A", "B"]);
    }

    #[test]
    fn fire_and_unfire() {
        let seq = seq("n1", "n2");
        let m0 = Marking::from_counts([("p0", 1)]);
        let m1 = fire(&seq, &m0, "A").unwrap();
        assert_eq!(m1, Marking::from_counts([("p1", 1)]));
        assert_eq!(unfire(&seq, &m1, "A").unwrap(), m0);
        assert_eq!(fire(&seq, &m0, "B"), Err(SemanticsError::NotEnabled("B".into())));
        assert_eq!(unfire(&seq, &m0, "A"), Err(SemanticsError::NotUnfireable("A".into())));
        assert_eq!(fire(&seq, &m0, "Z"), Err(SemanticsError::UnknownTransition("Z".into())));
    }

    #[test]
    fn statuses() {
        let seq = seq("n1", "n2");
        assert_eq!(case_status(&seq, &Marking::from_counts([("p2", 1)])), CaseStatus::Finished);
        assert_eq!(case_status(&seq, &Marking::from_counts([("p1", 1)])), CaseStatus::Running);
        // one branch done, its sibling token lost: the join can never fire
        let par = parallel("n1", "n1", "n2", "n3");
        let stuck = Marking::from_counts([("l1", 1)]);
        assert!(enabled_transitions(&par, &stuck).is_empty());
        assert_eq!(case_status(&par, &stuck), CaseStatus::Deadlocked);
    }

    #[test]
    fn fixtures_are_valid_models() {
        seq("a", "b").validate().unwrap();
        deferred_choice("a", "b", "c").validate().unwrap();
        parallel("a", "b", "c", "d").validate().unwrap();
    }

    #[test]
    fn model_validation_errors() {
        let mut m = seq("a", "b");
        m.transitions[0].in_arcs.insert("nowhere".into(), 1);
        assert!(matches!(m.validate(), Err(ModelError::UnknownPlace { .. })));

        let mut m = seq("a", "b");
        m.transitions[1].outputs.push("y".into());
        assert!(matches!(m.validate(), Err(ModelError::UnknownVariable { .. })));

        let mut m = seq("a", "b");
        m.transitions[0].constraints.push("x == \"s\"".into());
        assert!(matches!(m.validate(), Err(ModelError::Constraint { .. })));

        let mut m = seq("a", "b");
        m.initial_marking = Marking::new();
        assert_eq!(m.validate(), Err(ModelError::EmptyInitialMarking));

        let mut m = seq("a", "b");
        m.variables.push(m.variables[0].clone());
        assert!(matches!(m.validate(), Err(ModelError::DuplicateVariable(_))));
    }

    #[test]
    fn model_file_round_trip() {
        let m = deferred_choice("a", "b", "c");
        let bytes = crate::canon::canonical_bytes(&m).unwrap();
        let back: WorkflowModel = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(crate::canon::canonical_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn marking_drops_zero_counts() {
        let m: Marking = serde_json::from_str(r#"{"a":0,"b":2}"#).unwrap();
        assert_eq!(m, Marking::from_counts([("b", 2)]));
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"b":2}"#);
    }

    proptest! {
        #[test]
        fn unfire_inverts_fire(tokens in proptest::collection::vec(0u32..3, 6), pick in 0usize..4) {
            let par = parallel("a", "b", "c", "d");
            let places = ["i", "l0", "r0", "l1", "r1", "o"];
            let m = Marking::from_counts(places.iter().zip(tokens.iter()).map(|(p, n)| (*p, *n)));
            let enabled = enabled_transitions(&par, &m);
            prop_assume!(!enabled.is_empty());
            let t = enabled[pick % enabled.len()];
            let next = fire(&par, &m, t).unwrap();
            prop_assert_eq!(unfire(&par, &next, t).unwrap(), m);
        }
    }
}
