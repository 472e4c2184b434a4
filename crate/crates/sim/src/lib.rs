//! Deterministic multi-node simulation of the workflow network.
//!
//! A [`Scenario`] names the nodes, the network's latency and partitions, and
//! the user actions to replay. [`run`] steps every node tick by tick over
//! the in-process transport and returns a [`RunReport`]: a line-per-event
//! trace, final state digests, metrics and assertion verdicts.

pub mod assertions;
pub mod batch;
pub mod generate;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod scenario;

pub use batch::{run_batch, Mode};
pub use runner::{run, run_seeded, RunError, RunReport, Sim};
pub use scenario::{Scenario, ScenarioError};
