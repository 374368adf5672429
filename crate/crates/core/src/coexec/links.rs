use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::graph_runner::{
    Decision, IoStop, Job, LazyIo, MachineStop, PassMachine, PassOutcome, PassResult, PassStats, RunnerFault,
    SkeletonEnds, VariableStore, Worker,
};
use crate::interp::{FeedSlot, HandleId, RunErrorKind, RunnerLink};
use crate::tensor::Tensor;
use crate::trace_graph::NodeId;

/// Link to a pass on the worker thread. The job is submitted on first
/// use, so the runner starts with the step's first decisions and feeds
/// already queued instead of stalling on them.
pub(super) struct ThreadedLink<'w> {
    worker: &'w Worker,
    job: Option<Job>,
    ends: SkeletonEnds,
}

impl<'w> ThreadedLink<'w> {
    pub(super) fn new(worker: &'w Worker, job: Job, ends: SkeletonEnds) -> Self {
        ThreadedLink { worker, job: Some(job), ends }
    }

    fn launch(&mut self) {
        if let Some(job) = self.job.take() {
            self.worker.submit(job);
        }
    }

    /// Waits for the pass, cancelling it first when the step was abandoned.
    /// Returns the result, the store, and the total host stall.
    pub(super) fn join(mut self, cancel: bool) -> (PassResult, VariableStore, Duration) {
        if let Some(job) = self.job.take() {
            // never launched: nothing ran
            let result = PassResult { outcome: PassOutcome::Cancelled, stats: PassStats::default() };
            return (result, job.store, self.ends.stall);
        }
        if cancel {
            self.ends.cancel();
        }
        let started = Instant::now();
        let (result, store) = self.worker.wait();
        (result, store, self.ends.stall + started.elapsed())
    }
}

fn closed<T>(_: T) -> RunErrorKind {
    RunErrorKind::ChannelClosed
}

impl RunnerLink for ThreadedLink<'_> {
    fn publish(&mut self, decisions: &[Decision], feeds: Vec<(FeedSlot, Arc<Tensor>)>) -> Result<(), RunErrorKind> {
        if decisions.is_empty() && feeds.is_empty() {
            return Ok(());
        }
        for d in decisions {
            self.ends.send_decision(*d).map_err(closed)?;
        }
        for (slot, t) in feeds {
            self.ends.send_feed(slot, t).map_err(closed)?;
        }
        self.launch();
        // one core is enough to overlap, but only if the runner gets to
        // pick up what was just queued
        std::thread::yield_now();
        Ok(())
    }

    fn expect_fetch(&mut self, node: NodeId) {
        self.ends.expect_fetch(node);
    }

    fn fetch(&mut self, _node: NodeId, h: HandleId) -> Result<Arc<Tensor>, RunErrorKind> {
        self.launch();
        self.ends.fetch(h).map_err(closed)
    }

    fn finish(&mut self) -> Result<(), RunErrorKind> {
        self.launch();
        self.ends.drain().map_err(closed)
    }

    fn stall(&self) -> Duration {
        self.ends.stall
    }
}

/// Serialized link: the pass runs on the caller's thread, only when the
/// skeleton needs a value or ends the step.
pub(super) struct LazyLink<'a> {
    machine: PassMachine<'a>,
    io: LazyIo,
    store: &'a mut VariableStore,
    fault: Option<RunnerFault>,
    stall: Duration,
}

impl<'a> LazyLink<'a> {
    pub(super) fn new(machine: PassMachine<'a>, store: &'a mut VariableStore) -> Self {
        LazyLink { machine, io: LazyIo::default(), store, fault: None, stall: Duration::ZERO }
    }

    fn drive(&mut self, want: Option<HandleId>) -> Result<MachineStop, RunErrorKind> {
        if let Some(f) = &self.fault {
            return Err(RunErrorKind::Runner(f.clone()));
        }
        self.io.want = want;
        let started = Instant::now();
        let r = self.machine.run(&mut self.io, self.store);
        self.stall += started.elapsed();
        r.map_err(|f| {
            self.fault = Some(f.clone());
            RunErrorKind::Runner(f)
        })
    }

    pub(super) fn into_result(self, wall: Duration) -> (PassResult, Duration) {
        let outcome = match self.fault {
            Some(f) => PassOutcome::Faulted(f),
            None if self.machine.is_finished() => PassOutcome::Completed,
            None => PassOutcome::Cancelled,
        };
        let mut stats = self.machine.stats;
        stats.wall = wall;
        (PassResult { outcome, stats }, self.stall)
    }
}

impl RunnerLink for LazyLink<'_> {
    fn publish(&mut self, decisions: &[Decision], feeds: Vec<(FeedSlot, Arc<Tensor>)>) -> Result<(), RunErrorKind> {
        self.io.decisions.extend(decisions.iter().copied());
        for (slot, t) in feeds {
            self.io.feeds.entry(slot).or_default().push_back(t);
        }
        Ok(())
    }

    fn expect_fetch(&mut self, _node: NodeId) {}

    fn fetch(&mut self, _node: NodeId, h: HandleId) -> Result<Arc<Tensor>, RunErrorKind> {
        if let Some(t) = self.io.fetched.get(&h) {
            return Ok(t.clone());
        }
        match self.drive(Some(h))? {
            MachineStop::Paused | MachineStop::Finished => {}
            MachineStop::Io(IoStop::Starved) => {
                return Err(RunErrorKind::Internal(format!("pass starved before producing {h}")))
            }
            MachineStop::Io(_) => return Err(RunErrorKind::ChannelClosed),
        }
        self.io.fetched.get(&h).cloned().ok_or_else(|| RunErrorKind::Internal(format!("pass never produced {h}")))
    }

    fn finish(&mut self) -> Result<(), RunErrorKind> {
        match self.drive(None)? {
            MachineStop::Finished => Ok(()),
            other => Err(RunErrorKind::Internal(format!("pass stopped at step end: {other:?}"))),
        }
    }

    fn stall(&self) -> Duration {
        self.stall
    }
}
