use std::collections::BTreeMap;
use std::sync::Arc;

use crate::frontend::SourceLoc;
use crate::tensor::{execute_kernel, Attrs, CostConfig, OpKind, Tensor};

use super::eval::Backend;
use super::trace::{FeedSlot, HandleId, Trace, TraceEvent, TraceRecorder, ValueRef};
use super::{Output, RunErrorKind, TensorVal};

/// Runs kernels inline against the variables. In a step it numbers outputs
/// and can record the trace; in the prologue nothing is numbered.
pub struct EagerBackend<'a> {
    vars: &'a mut BTreeMap<String, Tensor>,
    cost: &'a CostConfig,
    out: &'a mut Output,
    seq: Option<u32>,
    recorder: Option<TraceRecorder>,
}

impl<'a> EagerBackend<'a> {
    pub fn prologue(vars: &'a mut BTreeMap<String, Tensor>, cost: &'a CostConfig, out: &'a mut Output) -> Self {
        EagerBackend { vars, cost, out, seq: None, recorder: None }
    }

    pub fn step(
        vars: &'a mut BTreeMap<String, Tensor>,
        cost: &'a CostConfig,
        out: &'a mut Output,
        record: bool,
    ) -> Self {
        EagerBackend { vars, cost, out, seq: Some(0), recorder: record.then(TraceRecorder::default) }
    }

    /// The recorded trace, terminated by `StepEnd`.
    pub fn finish(self) -> Option<Trace> {
        self.recorder.map(TraceRecorder::finish)
    }
}

impl Backend for EagerBackend<'_> {
    fn op(&mut self, kind: OpKind, attrs: Attrs, loc: SourceLoc, inputs: &[TensorVal]) -> Result<TensorVal, RunErrorKind> {
        let data: Vec<Arc<Tensor>> = inputs
            .iter()
            .map(|t| t.data.clone().ok_or_else(|| RunErrorKind::Internal("eager value without data".into())))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Tensor> = data.iter().map(|t| t.as_ref()).collect();
        let mut outs = execute_kernel(kind, &attrs, &refs, self.cost, self.vars)?;
        let out = outs.pop().ok_or_else(|| RunErrorKind::Internal(format!("{kind} produced no output")))?;
        let handle = self.seq.as_mut().map(|s| {
            let h = HandleId(*s);
            *s += 1;
            h
        });
        if let Some(rec) = &mut self.recorder {
            let refs = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| match t.handle {
                    Some(h) => ValueRef::Handle(h),
                    None => ValueRef::External(FeedSlot { site: loc.site, input: i as u8 }),
                })
                .collect();
            rec.op(kind, attrs, loc, refs, handle.into_iter().collect());
        }
        Ok(TensorVal { shape: out.shape().to_vec(), handle, data: Some(Arc::new(out)) })
    }

    fn materialize(&mut self, t: &TensorVal) -> Result<Arc<Tensor>, RunErrorKind> {
        if let (Some(rec), Some(h)) = (&mut self.recorder, t.handle) {
            rec.mark_fetched(h);
        }
        t.data.clone().ok_or_else(|| RunErrorKind::Internal("eager value without data".into()))
    }

    fn marker(&mut self, ev: TraceEvent) -> Result<(), RunErrorKind> {
        if let Some(rec) = &mut self.recorder {
            rec.marker(ev);
        }
        Ok(())
    }

    fn print(&mut self, line: String) {
        self.out.emit(line);
    }

    fn declare_var(&mut self, name: &str, value: Tensor) -> Result<(), RunErrorKind> {
        self.vars.insert(name.to_string(), value);
        Ok(())
    }
}
