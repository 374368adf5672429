use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, select, Receiver, Select, Sender, TryRecvError, TrySendError};

use crate::graph_gen::SymProgram;
use crate::interp::trace::{FeedSlot, HandleId};
use crate::tensor::{CostConfig, Tensor};
use crate::trace_graph::NodeId;

use super::machine::{IoStop, MachineStop, PassIo, PassMachine};
use super::store::VariableStore;
use super::{Decision, PassOutcome, PassResult, RunnerFault};

pub const DEFAULT_CAPACITY: usize = 64;

type FetchMsg = (HandleId, Arc<Tensor>);

/// Fresh per-step channels between skeleton and graph runner.
pub struct ChannelSet {
    pub skeleton: SkeletonEnds,
    pub runner: RunnerEnds,
}

impl ChannelSet {
    pub fn new(feed_slots: &[FeedSlot], fetch_nodes: &[NodeId], capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let (dtx, drx) = bounded(capacity);
        let (ctx, crx) = bounded(1);
        let mut feeds_tx = HashMap::new();
        let mut feeds_rx = HashMap::new();
        for &slot in feed_slots {
            let (tx, rx) = bounded(capacity);
            feeds_tx.insert(slot, tx);
            feeds_rx.insert(slot, rx);
        }
        let mut fetch_tx = HashMap::new();
        let mut fetch_rx = HashMap::new();
        for &node in fetch_nodes {
            let (tx, rx) = bounded(capacity);
            fetch_tx.insert(node, tx);
            fetch_rx.insert(node, rx);
        }
        ChannelSet {
            skeleton: SkeletonEnds {
                decisions: dtx,
                feeds: feeds_tx,
                fetches: fetch_rx,
                cancel: Some(ctx),
                pending: VecDeque::new(),
                cached: HashMap::new(),
                stall: Duration::ZERO,
            },
            runner: RunnerEnds { decisions: drx, feeds: feeds_rx, fetches: fetch_tx, cancel: crx },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Closed;

/// Interpreter side. Fetch pushes are received strictly in the order the
/// runner makes them; a blocked send keeps draining that order so a full
/// fetch queue can never wedge both sides.
pub struct SkeletonEnds {
    decisions: Sender<Decision>,
    feeds: HashMap<FeedSlot, Sender<Arc<Tensor>>>,
    fetches: HashMap<NodeId, Receiver<FetchMsg>>,
    cancel: Option<Sender<()>>,
    pending: VecDeque<NodeId>,
    cached: HashMap<HandleId, Arc<Tensor>>,
    /// Time spent blocked waiting for fetched values.
    pub stall: Duration,
}

impl SkeletonEnds {
    /// Records that the runner will push one output of `node`.
    pub fn expect_fetch(&mut self, node: NodeId) {
        self.pending.push_back(node);
    }

    pub fn send_decision(&mut self, d: Decision) -> Result<(), Closed> {
        let tx = self.decisions.clone();
        self.send(&tx, d)
    }

    pub fn send_feed(&mut self, slot: FeedSlot, t: Arc<Tensor>) -> Result<(), Closed> {
        let tx = self.feeds.get(&slot).cloned().ok_or(Closed)?;
        self.send(&tx, t)
    }

    fn send<T>(&mut self, tx: &Sender<T>, mut v: T) -> Result<(), Closed> {
        loop {
            match tx.try_send(v) {
                Ok(()) => return Ok(()),
                Err(TrySendError::Disconnected(_)) => return Err(Closed),
                Err(TrySendError::Full(back)) => v = back,
            }
            let front = self.pending.front().and_then(|n| self.fetches.get(n)).cloned();
            let mut sel = Select::new();
            let send_idx = sel.send(tx);
            let recv_idx = front.as_ref().map(|rx| sel.recv(rx));
            let started = Instant::now();
            let oper = sel.select();
            self.stall += started.elapsed();
            if oper.index() == send_idx {
                return oper.send(tx, v).map_err(|_| Closed);
            }
            debug_assert_eq!(Some(oper.index()), recv_idx);
            let (h, t) = oper.recv(front.as_ref().expect("selected receiver")).map_err(|_| Closed)?;
            self.pending.pop_front();
            self.cached.insert(h, t);
        }
    }

    fn recv_next(&mut self) -> Result<(), Closed> {
        let node = self.pending.pop_front().ok_or(Closed)?;
        let rx = self.fetches.get(&node).ok_or(Closed)?;
        let started = Instant::now();
        let (h, t) = rx.recv().map_err(|_| Closed)?;
        self.stall += started.elapsed();
        self.cached.insert(h, t);
        Ok(())
    }

    /// Blocks until the runner has pushed the output numbered `h`.
    pub fn fetch(&mut self, h: HandleId) -> Result<Arc<Tensor>, Closed> {
        loop {
            if let Some(t) = self.cached.get(&h) {
                return Ok(t.clone());
            }
            self.recv_next()?;
        }
    }

    /// Receives every outstanding fetch push.
    pub fn drain(&mut self) -> Result<(), Closed> {
        while !self.pending.is_empty() {
            self.recv_next()?;
        }
        Ok(())
    }

    pub fn cancel(&mut self) {
        if let Some(tx) = self.cancel.take() {
            let _ = tx.try_send(());
        }
    }
}

/// Graph runner side.
pub struct RunnerEnds {
    decisions: Receiver<Decision>,
    feeds: HashMap<FeedSlot, Receiver<Arc<Tensor>>>,
    fetches: HashMap<NodeId, Sender<FetchMsg>>,
    cancel: Receiver<()>,
}

/// Blocking IO over [`RunnerEnds`]; every wait is cancel-interruptible.
pub struct ThreadedIo {
    ends: RunnerEnds,
    pub stall: Duration,
}

impl ThreadedIo {
    pub fn new(ends: RunnerEnds) -> Self {
        ThreadedIo { ends, stall: Duration::ZERO }
    }

    fn recv<T>(rx: &Receiver<T>, cancel: &Receiver<()>, stall: &mut Duration) -> Result<T, IoStop> {
        match rx.try_recv() {
            Ok(v) => return Ok(v),
            Err(TryRecvError::Disconnected) => return Err(IoStop::Closed),
            Err(TryRecvError::Empty) => {}
        }
        let started = Instant::now();
        let r = select! {
            recv(rx) -> v => v.map_err(|_| IoStop::Closed),
            recv(cancel) -> _ => Err(IoStop::Cancelled),
        };
        *stall += started.elapsed();
        r
    }
}

impl PassIo for ThreadedIo {
    fn cancelled(&mut self) -> bool {
        !matches!(self.ends.cancel.try_recv(), Err(TryRecvError::Empty))
    }

    fn decision(&mut self) -> Result<Decision, IoStop> {
        Self::recv(&self.ends.decisions, &self.ends.cancel, &mut self.stall)
    }

    fn feed(&mut self, slot: FeedSlot) -> Result<Arc<Tensor>, IoStop> {
        let rx = self.ends.feeds.get(&slot).ok_or(IoStop::Closed)?;
        Self::recv(rx, &self.ends.cancel, &mut self.stall)
    }

    fn fetch(&mut self, node: NodeId, seq: HandleId, value: Arc<Tensor>) -> Result<(), IoStop> {
        let tx = self.ends.fetches.get(&node).ok_or(IoStop::Closed)?;
        let msg = match tx.try_send((seq, value)) {
            Ok(()) => return Ok(()),
            Err(TrySendError::Disconnected(_)) => return Err(IoStop::Closed),
            Err(TrySendError::Full(m)) => m,
        };
        select! {
            send(tx, msg) -> r => r.map_err(|_| IoStop::Closed),
            recv(self.ends.cancel) -> _ => Err(IoStop::Cancelled),
        }
    }
}

/// Runs one pass to completion on the calling thread over blocking
/// channels.
pub fn run_pass(sp: &SymProgram, ends: RunnerEnds, store: &mut VariableStore, cost: &CostConfig) -> PassResult {
    let started = Instant::now();
    store.begin_pass();
    let mut io = ThreadedIo::new(ends);
    let mut machine = PassMachine::new(sp, cost);
    let outcome = match machine.run(&mut io, store) {
        Ok(MachineStop::Finished) => PassOutcome::Completed,
        Ok(MachineStop::Io(IoStop::Cancelled)) => PassOutcome::Cancelled,
        Ok(MachineStop::Io(IoStop::Closed)) => PassOutcome::Faulted(RunnerFault::ChannelClosed),
        Ok(MachineStop::Io(IoStop::Starved)) | Ok(MachineStop::Paused) => {
            PassOutcome::Faulted(RunnerFault::Unresolved("blocking pass stopped early".into()))
        }
        Err(f) => PassOutcome::Faulted(f),
    };
    let mut stats = machine.stats;
    stats.stall = io.stall;
    stats.wall = started.elapsed();
    PassResult { outcome, stats }
}

/// In-thread queues for lazy execution: the skeleton buffers, the pass runs
/// only when a value is demanded.
#[derive(Default)]
pub struct LazyIo {
    pub decisions: VecDeque<Decision>,
    pub feeds: HashMap<FeedSlot, VecDeque<Arc<Tensor>>>,
    pub fetched: HashMap<HandleId, Arc<Tensor>>,
    /// Suspend the pass once this output has been fetched.
    pub want: Option<HandleId>,
}

impl PassIo for LazyIo {
    fn cancelled(&mut self) -> bool {
        false
    }

    fn decision(&mut self) -> Result<Decision, IoStop> {
        self.decisions.pop_front().ok_or(IoStop::Starved)
    }

    fn feed(&mut self, slot: FeedSlot) -> Result<Arc<Tensor>, IoStop> {
        self.feeds.get_mut(&slot).and_then(|q| q.pop_front()).ok_or(IoStop::Starved)
    }

    fn fetch(&mut self, _node: NodeId, seq: HandleId, value: Arc<Tensor>) -> Result<(), IoStop> {
        self.fetched.insert(seq, value);
        Ok(())
    }

    fn pause(&self) -> bool {
        self.want.is_some_and(|h| self.fetched.contains_key(&h))
    }
}
