use std::collections::HashMap;

use crate::frontend::LoopId;
use crate::graph_runner::{BindSource, Decision};
use crate::interp::trace::{HandleId, OpEvent, TraceEvent, ValueRef};

use super::graph::{pick_latest, InputBinding, LevelId, MatchKey, NodeId, NodeKind, TraceGraph};

/// Result of feeding one event to a [`Cursor`].
#[derive(Clone, Debug, PartialEq)]
pub enum Advance {
    /// The event matched. `node` is the op node reached, if the event was an
    /// op; markers that are still buffered report `None`.
    Matched { node: Option<NodeId>, decisions: Vec<Decision> },
    Diverged(String),
}

#[derive(Clone, Debug)]
struct Frame {
    level: LevelId,
    /// `None` inside a loop frame before its first iteration.
    pos: Option<NodeId>,
    loop_node: Option<NodeId>,
    iters: u32,
}

/// Walks a [`TraceGraph`] along a live event stream, emitting the decisions
/// the graph runner needs to follow the same path.
///
/// Loop markers are buffered from a `LoopEnter` until the loop instance
/// either produces an op (the buffer is replayed strictly) or closes without
/// one (the buffer is dropped, mirroring how the merge drops op-free loops).
#[derive(Clone, Debug)]
pub struct Cursor<'g> {
    g: &'g TraceGraph,
    frames: Vec<Frame>,
    pending: Vec<TraceEvent>,
    pending_open: usize,
    last: HashMap<NodeId, HandleId>,
    producer: HashMap<HandleId, NodeId>,
    finished: bool,
    diverged: bool,
}

type Step = Result<(), String>;

impl<'g> Cursor<'g> {
    pub fn new(g: &'g TraceGraph) -> Self {
        let root = g.root();
        Cursor {
            g,
            frames: vec![Frame { level: root, pos: Some(g.level(root).start), loop_node: None, iters: 0 }],
            pending: Vec::new(),
            pending_open: 0,
            last: HashMap::new(),
            producer: HashMap::new(),
            finished: false,
            diverged: false,
        }
    }

    pub fn graph(&self) -> &'g TraceGraph {
        self.g
    }

    /// Current position in the innermost level.
    pub fn position(&self) -> Option<NodeId> {
        self.frames.last().and_then(|f| f.pos)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn advance(&mut self, ev: &TraceEvent) -> Advance {
        if self.diverged {
            return Advance::Diverged("cursor already diverged".into());
        }
        if self.finished {
            self.diverged = true;
            return Advance::Diverged("event after StepEnd".into());
        }
        let mut out = Vec::new();
        match self.step(ev, &mut out) {
            Ok(node) => Advance::Matched { node, decisions: out },
            Err(msg) => {
                self.diverged = true;
                Advance::Diverged(msg)
            }
        }
    }

    /// The node that produced `h`, provided it is flagged for fetching.
    pub fn check_fetch(&self, h: HandleId) -> Result<NodeId, String> {
        let node = *self.producer.get(&h).ok_or_else(|| format!("handle {h} was not produced in this step"))?;
        match self.g.node(node).as_op() {
            Some(op) if op.fetch => Ok(node),
            _ => Err(format!("{node} is not a fetch point")),
        }
    }

    pub fn producer(&self, h: HandleId) -> Option<NodeId> {
        self.producer.get(&h).copied()
    }

    fn step(&mut self, ev: &TraceEvent, out: &mut Vec<Decision>) -> Result<Option<NodeId>, String> {
        match ev {
            TraceEvent::LoopEnter(_) => {
                self.pending.push(ev.clone());
                self.pending_open += 1;
                Ok(None)
            }
            TraceEvent::LoopIterStart(_) | TraceEvent::LoopExit(_) if !self.pending.is_empty() => {
                self.pending.push(ev.clone());
                if matches!(ev, TraceEvent::LoopExit(_)) {
                    self.pending_open -= 1;
                    if self.pending_open == 0 {
                        self.pending.clear();
                    }
                }
                Ok(None)
            }
            TraceEvent::LoopIterStart(l) => self.iter_start(*l, out).map(|_| None),
            TraceEvent::LoopExit(l) => self.exit(*l, out).map(|_| None),
            TraceEvent::Op(op) => {
                self.flush(out)?;
                self.op(op, out).map(Some)
            }
            TraceEvent::StepEnd => {
                if !self.pending.is_empty() || self.frames.len() != 1 {
                    return Err("StepEnd inside an open loop".into());
                }
                self.close_level(out)?;
                self.finished = true;
                Ok(None)
            }
        }
    }

    fn flush(&mut self, out: &mut Vec<Decision>) -> Step {
        let pending = std::mem::take(&mut self.pending);
        self.pending_open = 0;
        let mut i = 0;
        while i < pending.len() {
            match &pending[i] {
                TraceEvent::LoopEnter(l) => {
                    let mut depth = 0usize;
                    let mut close = None;
                    for (j, e) in pending.iter().enumerate().skip(i) {
                        match e {
                            TraceEvent::LoopEnter(_) => depth += 1,
                            TraceEvent::LoopExit(_) => {
                                depth -= 1;
                                if depth == 0 {
                                    close = Some(j);
                                    break;
                                }
                            }
                            _ => {}
                        }
                    }
                    match close {
                        // closed before any op: an op-free instance
                        Some(j) => i = j,
                        None => self.enter(*l, out)?,
                    }
                }
                TraceEvent::LoopIterStart(l) => self.iter_start(*l, out)?,
                TraceEvent::LoopExit(l) => self.exit(*l, out)?,
                _ => unreachable!("only loop markers are buffered"),
            }
            i += 1;
        }
        Ok(())
    }

    /// Moves from the current position to the child with `key`, emitting a
    /// case decision when the position branches.
    fn take_child(&mut self, key: &MatchKey<'_>, out: &mut Vec<Decision>) -> Result<NodeId, String> {
        let frame = self.frames.last_mut().expect("root frame");
        let pos = frame.pos.ok_or("op before the first loop iteration")?;
        let (idx, child) =
            self.g.child_matching(pos, key).ok_or_else(|| format!("no successor of {pos} matches {key:?}"))?;
        if self.g.node(pos).children.len() > 1 {
            out.push(Decision::Case { branch: pos, case_index: idx as u32 });
        }
        frame.pos = Some(child);
        Ok(child)
    }

    /// Moves from the current position to the level's End.
    fn close_level(&mut self, out: &mut Vec<Decision>) -> Step {
        let frame = self.frames.last_mut().expect("root frame");
        let Some(pos) = frame.pos else { return Ok(()) };
        let end = self.g.level(frame.level).end;
        let children = &self.g.node(pos).children;
        let idx = children.iter().position(|&c| c == end).ok_or_else(|| format!("{pos} cannot end its level here"))?;
        if children.len() > 1 {
            out.push(Decision::Case { branch: pos, case_index: idx as u32 });
        }
        frame.pos = Some(end);
        Ok(())
    }

    fn enter(&mut self, l: LoopId, out: &mut Vec<Decision>) -> Step {
        let node = self.take_child(&MatchKey::Loop(l), out)?;
        let body = self.g.node(node).as_loop().expect("loop key").body;
        self.frames.push(Frame { level: body, pos: None, loop_node: Some(node), iters: 0 });
        Ok(())
    }

    fn loop_frame(&self, l: LoopId) -> Result<NodeId, String> {
        let frame = self.frames.last().expect("root frame");
        match frame.loop_node {
            Some(n) if self.g.node(n).as_loop().map(|x| x.loop_id) == Some(l) => Ok(n),
            _ => Err(format!("marker for {l} outside its loop")),
        }
    }

    fn iter_start(&mut self, l: LoopId, out: &mut Vec<Decision>) -> Step {
        let node = self.loop_frame(l)?;
        self.close_level(out)?;
        let lp = self.g.node(node).as_loop().expect("loop frame");
        let frame = self.frames.last_mut().expect("loop frame");
        frame.iters += 1;
        match lp.constant_trip() {
            Some(k) if frame.iters > k => return Err(format!("{l} is unrolled {k} times; iteration {} started", frame.iters)),
            Some(_) => {}
            None => out.push(Decision::Loop { loop_id: l, cont: true }),
        }
        frame.pos = Some(self.g.level(frame.level).start);
        Ok(())
    }

    fn exit(&mut self, l: LoopId, out: &mut Vec<Decision>) -> Step {
        let node = self.loop_frame(l)?;
        self.close_level(out)?;
        let lp = self.g.node(node).as_loop().expect("loop frame");
        let iters = self.frames.last().expect("loop frame").iters;
        match lp.constant_trip() {
            Some(k) if iters != k => return Err(format!("{l} is unrolled {k} times; ran {iters}")),
            Some(_) => {}
            None => out.push(Decision::Loop { loop_id: l, cont: false }),
        }
        self.frames.pop();
        Ok(())
    }

    fn op(&mut self, ev: &OpEvent, out: &mut Vec<Decision>) -> Result<NodeId, String> {
        let node = self.take_child(&MatchKey::Op(&ev.key), out)?;
        let NodeKind::Op(op) = &self.g.node(node).kind else { unreachable!("op key") };
        if op.inputs.len() != ev.inputs.len() {
            return Err(format!("{node} expects {} inputs, event has {}", op.inputs.len(), ev.inputs.len()));
        }
        for (i, (b, r)) in op.inputs.iter().zip(&ev.inputs).enumerate() {
            let input = i as u8;
            match (b, r) {
                (InputBinding::Feed(s), ValueRef::External(s2)) if s == s2 => {}
                (InputBinding::Latest(cands), ValueRef::Handle(h)) => {
                    let picked = pick_latest(cands, |n| self.last.get(&n).copied());
                    if picked.map(|(_, p)| p) != Some(*h) {
                        return Err(format!("input {i} of {node} is {h}, not the latest candidate"));
                    }
                }
                (InputBinding::Dynamic(s), ValueRef::External(s2)) if s == s2 => {
                    out.push(Decision::Bind { node, input, source: BindSource::Feed })
                }
                (InputBinding::Dynamic(_), ValueRef::Handle(h)) => {
                    out.push(Decision::Bind { node, input, source: BindSource::Handle(*h) })
                }
                _ => return Err(format!("input {i} of {node} does not fit its binding")),
            }
        }
        for h in &ev.outputs {
            self.last.insert(node, *h);
            self.producer.insert(*h, node);
        }
        Ok(node)
    }
}
