//! Simulation and exhaustive verification of eventual Byzantine agreement
//! under sending-omission failures.
//!
//! Three information-exchange contexts (minimal, basic, full information)
//! run the concrete decision protocols; small systems are enumerated
//! exhaustively and checked against an epistemic model checker.

pub mod commgraph;
pub mod epistemic;
pub mod error;
pub mod exchange;
pub mod metrics;
pub mod model;
pub mod protocols;
pub mod simulator;
pub mod verification;

pub use error::{Error, Result};
pub use model::{AgentId, AgentSet, ContextId, Decision, FailurePattern, Params, RunRecord, Scenario, Value};
pub use protocols::Action;
