//! The TraceGraph: per-step traces merged into a DAG with Start/End nodes,
//! nested loop nodes and feed/fetch annotations, plus the cursor that
//! validates a live trace against it.

mod cursor;
mod export;
mod graph;

pub use cursor::{Advance, Cursor};
pub use export::{GraphJson, GraphJsonError, LevelJson, NodeJson, JSON_VERSION};
pub use graph::{
    pick_latest, InputBinding, Level, LevelId, LoopNode, MatchKey, MergeReport, Node, NodeId, NodeKind, OpNode,
    TraceGraph,
};

#[cfg(test)]
mod tests;
