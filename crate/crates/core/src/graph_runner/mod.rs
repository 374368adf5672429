//! Executes a [`SymProgram`](crate::graph_gen::SymProgram) once per step,
//! driven by decisions and feeds from the skeleton interpreter.

mod channels;
mod machine;
mod store;
mod worker;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::LoopId;
use crate::interp::trace::HandleId;
use crate::trace_graph::NodeId;

pub use channels::{run_pass, ChannelSet, LazyIo, RunnerEnds, SkeletonEnds, ThreadedIo, DEFAULT_CAPACITY};
pub use machine::{IoStop, MachineStop, PassIo, PassMachine};
pub use store::{InFlightPass, PassVars, VariableStore};
pub use worker::{Job, Worker};

/// Where a dynamically bound input comes from in this execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BindSource {
    /// The output with this sequence number.
    Handle(HandleId),
    /// The next value on the input's feed slot.
    Feed,
}

/// Path information sent from the skeleton to the graph runner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Case { branch: NodeId, case_index: u32 },
    Loop { loop_id: LoopId, cont: bool },
    Bind { node: NodeId, input: u8, source: BindSource },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PassStats {
    /// Kernel execution including dispatch.
    pub exec: Duration,
    /// Blocked on decisions or feeds.
    pub stall: Duration,
    pub wall: Duration,
    pub ops_executed: usize,
    pub fetches_served: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunnerFault {
    #[error("decision mismatch: expected {expected}, got {got:?}")]
    DecisionMismatch { expected: String, got: Decision },
    #[error("kernel failed: {0}")]
    Kernel(String),
    #[error("unresolved input: {0}")]
    Unresolved(String),
    #[error("channel closed")]
    ChannelClosed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PassOutcome {
    /// The program ran to its end. Variable writes are staged in the
    /// overlay; the orchestrator commits them once the skeleton confirms
    /// the step.
    Completed,
    Cancelled,
    Faulted(RunnerFault),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassResult {
    pub outcome: PassOutcome,
    pub stats: PassStats,
}

#[cfg(test)]
mod tests;
