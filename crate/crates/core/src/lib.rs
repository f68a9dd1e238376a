//! Structure-driven workflow orchestration over a self-organizing network
//! of atomic agents.
//!
//! Atomic agents are built from goal/procedure pairs. Novel goals are
//! answered by retrieving agents above a similarity threshold, decomposing
//! the goal when nothing matches, composing the agents' procedures with
//! sequential, conditional and nesting operators, verifying the result and
//! repairing it through structural hypotheses. Agents carry a life value
//! that drives selection, archival and refresh.

pub mod agents;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod goal;
pub mod io;
pub mod orchestrator;
pub mod repair;
pub mod rng;
pub mod workflow;

pub use error::{Error, Result};
