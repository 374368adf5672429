use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use crate::frontend::SourceLoc;
use crate::graph_runner::Decision;
use crate::tensor::{infer_shape_in, Attrs, OpKind, Shape, Tensor};
use crate::trace_graph::{Advance, Cursor, InputBinding, NodeId};

use super::eval::Backend;
use super::trace::{FeedSlot, HandleId, OpEvent, OpKey, Trace, TraceEvent, TraceRecorder, ValueRef};
use super::{RunErrorKind, TensorVal};

/// The skeleton's connection to a graph runner pass.
pub trait RunnerLink {
    /// Hands over path decisions and external values, in program order.
    fn publish(&mut self, decisions: &[Decision], feeds: Vec<(FeedSlot, Arc<Tensor>)>) -> Result<(), RunErrorKind>;
    /// The runner will push one output of `node` (a fetch point just ran).
    fn expect_fetch(&mut self, node: NodeId);
    fn fetch(&mut self, node: NodeId, h: HandleId) -> Result<Arc<Tensor>, RunErrorKind>;
    /// End of step: every decision has been published.
    fn finish(&mut self) -> Result<(), RunErrorKind>;
    /// Time spent blocked on fetched values so far.
    fn stall(&self) -> Duration;
}

/// Host-only execution of a step. Ops are shape-inferred and matched
/// against the TraceGraph; their kernels run in the graph runner.
pub struct SkeletonBackend<'g, 'l> {
    cursor: Cursor<'g>,
    link: &'l mut dyn RunnerLink,
    var_shapes: BTreeMap<String, Shape>,
    shapes: HashMap<HandleId, Shape>,
    seq: u32,
    fetched: HashMap<HandleId, Arc<Tensor>>,
    prints: Vec<String>,
    recorder: Option<TraceRecorder>,
    check_errors: Vec<String>,
    ops: usize,
}

impl<'g, 'l> SkeletonBackend<'g, 'l> {
    /// `var_shapes` are the shapes of the committed variables at step start.
    pub fn new(cursor: Cursor<'g>, link: &'l mut dyn RunnerLink, var_shapes: BTreeMap<String, Shape>) -> Self {
        SkeletonBackend {
            cursor,
            link,
            var_shapes,
            shapes: HashMap::new(),
            seq: 0,
            fetched: HashMap::new(),
            prints: Vec::new(),
            recorder: None,
            check_errors: Vec::new(),
            ops: 0,
        }
    }

    /// Also records the step's trace and checks fetched shapes.
    pub fn with_checks(mut self) -> Self {
        self.recorder = Some(TraceRecorder::default());
        self
    }

    fn advance(&mut self, ev: &TraceEvent) -> Result<(Option<NodeId>, Vec<Decision>), RunErrorKind> {
        match self.cursor.advance(ev) {
            Advance::Matched { node, decisions } => Ok((node, decisions)),
            Advance::Diverged(msg) => Err(RunErrorKind::Diverged(msg)),
        }
    }

    /// Closes the step: matches `StepEnd` and lets the runner finish.
    pub fn end_step(&mut self) -> Result<(), RunErrorKind> {
        let (_, decisions) = self.advance(&TraceEvent::StepEnd)?;
        self.link.publish(&decisions, Vec::new())?;
        self.link.finish()
    }

    /// Printed lines, held back until the step is committed.
    pub fn take_prints(&mut self) -> Vec<String> {
        std::mem::take(&mut self.prints)
    }

    pub fn take_trace(&mut self) -> Option<Trace> {
        self.recorder.take().map(TraceRecorder::finish)
    }

    pub fn check_errors(&self) -> &[String] {
        &self.check_errors
    }

    pub fn ops(&self) -> usize {
        self.ops
    }

    pub fn stall(&self) -> Duration {
        self.link.stall()
    }
}

impl Backend for SkeletonBackend<'_, '_> {
    fn op(&mut self, kind: OpKind, attrs: Attrs, loc: SourceLoc, inputs: &[TensorVal]) -> Result<TensorVal, RunErrorKind> {
        let in_shapes: Vec<Shape> = inputs.iter().map(|t| t.shape.clone()).collect();
        let var_shapes = &self.var_shapes;
        let mut shapes = infer_shape_in(kind, &attrs, &in_shapes, &|n| var_shapes.get(n).cloned())?;
        let shape = shapes.pop().ok_or_else(|| RunErrorKind::Internal(format!("{kind} has no output")))?;
        if kind == OpKind::AssignVar {
            let name = attrs.str("var_name")?.to_string();
            self.var_shapes.insert(name, shape.clone());
        }
        let refs: Vec<ValueRef> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| match t.handle {
                Some(h) => ValueRef::Handle(h),
                None => ValueRef::External(FeedSlot { site: loc.site, input: i as u8 }),
            })
            .collect();
        let h = HandleId(self.seq);
        self.seq += 1;
        self.ops += 1;
        if let Some(rec) = &mut self.recorder {
            rec.op(kind, attrs.clone(), loc.clone(), refs.clone(), vec![h]);
        }
        let ev = TraceEvent::Op(OpEvent { key: OpKey { kind, attrs, loc }, inputs: refs, outputs: vec![h], fetch_after: false });
        let (node, decisions) = self.advance(&ev)?;
        let node = node.ok_or_else(|| RunErrorKind::Internal("op matched no node".into()))?;
        let op = self.cursor.graph().node(node).as_op().expect("op node");
        let mut feeds = Vec::new();
        for (i, (b, t)) in op.inputs.iter().zip(inputs).enumerate() {
            if t.handle.is_none() && matches!(b, InputBinding::Feed(_) | InputBinding::Dynamic(_)) {
                let data = t.data.clone().ok_or_else(|| RunErrorKind::Internal("external value without data".into()))?;
                feeds.push((FeedSlot { site: op.key.loc.site, input: i as u8 }, data));
            }
        }
        let fetch = op.fetch;
        self.link.publish(&decisions, feeds)?;
        if fetch {
            self.link.expect_fetch(node);
        }
        self.shapes.insert(h, shape.clone());
        Ok(TensorVal { shape, handle: Some(h), data: None })
    }

    fn materialize(&mut self, t: &TensorVal) -> Result<Arc<Tensor>, RunErrorKind> {
        if let Some(d) = &t.data {
            return Ok(d.clone());
        }
        let h = t.handle.ok_or_else(|| RunErrorKind::Internal("tensor without data or handle".into()))?;
        if let Some(d) = self.fetched.get(&h) {
            return Ok(d.clone());
        }
        let node = self.cursor.check_fetch(h).map_err(RunErrorKind::Diverged)?;
        let data = self.link.fetch(node, h)?;
        if let Some(rec) = &mut self.recorder {
            rec.mark_fetched(h);
            if data.shape() != t.shape.as_slice() {
                self.check_errors.push(format!("{h}: fetched shape {:?}, inferred {:?}", data.shape(), t.shape));
            }
        }
        self.fetched.insert(h, data.clone());
        Ok(data)
    }

    fn marker(&mut self, ev: TraceEvent) -> Result<(), RunErrorKind> {
        if let Some(rec) = &mut self.recorder {
            rec.marker(ev.clone());
        }
        let (_, decisions) = self.advance(&ev)?;
        if !decisions.is_empty() {
            self.link.publish(&decisions, Vec::new())?;
        }
        Ok(())
    }

    fn print(&mut self, line: String) {
        self.prints.push(line);
    }

    fn declare_var(&mut self, name: &str, _value: Tensor) -> Result<(), RunErrorKind> {
        Err(RunErrorKind::Internal(format!("variable `{name}` declared inside a step")))
    }
}
