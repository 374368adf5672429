use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{LoopId, SiteId, SourceLoc};
use crate::tensor::{Attrs, OpKind};

/// Sequence number of an op output within one step. The skeleton and the
/// graph runner number outputs identically because they execute the same
/// op sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandleId(pub u32);

impl fmt::Display for HandleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// An external input position: the consuming op's site and input index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeedSlot {
    pub site: SiteId,
    pub input: u8,
}

impl fmt::Display for FeedSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.site, self.input)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueRef {
    Handle(HandleId),
    External(FeedSlot),
}

/// Equality key of an operation: kind, attributes and program location.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpKey {
    pub kind: OpKind,
    pub attrs: Attrs,
    pub loc: SourceLoc,
}

impl fmt::Display for OpKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if !self.attrs.is_empty() {
            write!(f, "{{{}}}", self.attrs)?;
        }
        write!(f, " @{}", self.loc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpEvent {
    pub key: OpKey,
    pub inputs: Vec<ValueRef>,
    pub outputs: Vec<HandleId>,
    /// Set when an output of this event is materialized on the host.
    pub fetch_after: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    Op(OpEvent),
    LoopEnter(LoopId),
    LoopIterStart(LoopId),
    LoopExit(LoopId),
    StepEnd,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("malformed trace: {0}")]
pub struct MalformedTrace(pub String);

impl Trace {
    pub fn op_events(&self) -> impl Iterator<Item = &OpEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Op(op) => Some(op),
            _ => None,
        })
    }

    /// Checks marker balance, handle resolution and the final `StepEnd`.
    pub fn check_well_formed(&self) -> Result<(), MalformedTrace> {
        let mut open: Vec<(LoopId, bool)> = Vec::new();
        let mut produced: BTreeSet<HandleId> = BTreeSet::new();
        let mut ended = false;
        for (i, ev) in self.events.iter().enumerate() {
            if ended {
                return Err(MalformedTrace(format!("event {i} after StepEnd")));
            }
            match ev {
                TraceEvent::Op(op) => {
                    if let Some((l, false)) = open.last() {
                        return Err(MalformedTrace(format!("op at event {i} inside {l} before its first iteration")));
                    }
                    for input in &op.inputs {
                        if let ValueRef::Handle(h) = input {
                            if !produced.contains(h) {
                                return Err(MalformedTrace(format!("event {i} reads unproduced handle {h}")));
                            }
                        }
                    }
                    for h in &op.outputs {
                        if !produced.insert(*h) {
                            return Err(MalformedTrace(format!("handle {h} produced twice")));
                        }
                    }
                }
                TraceEvent::LoopEnter(l) => {
                    if let Some((o, false)) = open.last() {
                        return Err(MalformedTrace(format!("{l} entered inside {o} before its first iteration")));
                    }
                    open.push((*l, false));
                }
                TraceEvent::LoopIterStart(l) => match open.last_mut() {
                    Some((o, started)) if o == l => *started = true,
                    _ => return Err(MalformedTrace(format!("unbalanced iteration marker for {l} at event {i}"))),
                },
                TraceEvent::LoopExit(l) => match open.pop() {
                    Some((o, _)) if o == *l => {}
                    _ => return Err(MalformedTrace(format!("unbalanced exit marker for {l} at event {i}"))),
                },
                TraceEvent::StepEnd => {
                    if !open.is_empty() {
                        return Err(MalformedTrace("StepEnd inside an open loop".into()));
                    }
                    ended = true;
                }
            }
        }
        if !ended {
            return Err(MalformedTrace("missing StepEnd".into()));
        }
        Ok(())
    }

    /// Flattened key sequence of op events (loop markers dropped).
    pub fn key_sequence(&self) -> Vec<OpKey> {
        self.op_events().map(|e| e.key.clone()).collect()
    }
}

/// Records trace events during eager execution.
#[derive(Debug, Default)]
pub struct TraceRecorder {
    trace: Trace,
    event_of: HashMap<HandleId, usize>,
}

impl TraceRecorder {
    pub fn op(&mut self, kind: OpKind, attrs: Attrs, loc: SourceLoc, inputs: Vec<ValueRef>, outputs: Vec<HandleId>) {
        let idx = self.trace.events.len();
        for h in &outputs {
            self.event_of.insert(*h, idx);
        }
        self.trace.events.push(TraceEvent::Op(OpEvent {
            key: OpKey { kind, attrs, loc },
            inputs,
            outputs,
            fetch_after: false,
        }));
    }

    pub fn marker(&mut self, ev: TraceEvent) {
        self.trace.events.push(ev);
    }

    pub fn mark_fetched(&mut self, h: HandleId) {
        if let Some(&idx) = self.event_of.get(&h) {
            if let TraceEvent::Op(op) = &mut self.trace.events[idx] {
                op.fetch_after = true;
            }
        }
    }

    pub fn finish(mut self) -> Trace {
        self.trace.events.push(TraceEvent::StepEnd);
        self.trace
    }
}
