use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::graph_gen::{SymInst, SymProgram};
use crate::interp::trace::{FeedSlot, HandleId};
use crate::tensor::{execute_kernel, CostConfig, Tensor};
use crate::trace_graph::{pick_latest, InputBinding, NodeId};

use super::store::VariableStore;
use super::{BindSource, Decision, PassStats, RunnerFault};

/// Why an IO request could not be served.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IoStop {
    Cancelled,
    /// The peer hung up.
    Closed,
    /// Nothing queued yet; the machine can be resumed later.
    Starved,
}

/// The pass's view of the interpreter side.
pub trait PassIo {
    fn cancelled(&mut self) -> bool;
    fn decision(&mut self) -> Result<Decision, IoStop>;
    fn feed(&mut self, slot: FeedSlot) -> Result<Arc<Tensor>, IoStop>;
    fn fetch(&mut self, node: NodeId, seq: HandleId, value: Arc<Tensor>) -> Result<(), IoStop>;
    /// Checked after every instruction; returning true suspends the pass.
    fn pause(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MachineStop {
    Finished,
    Paused,
    Io(IoStop),
}

enum Frame<'a> {
    Seq { insts: &'a [SymInst], pc: usize },
    Unrolled { bodies: &'a [SymProgram], next: usize },
}

/// Resumable executor for one pass over a [`SymProgram`]. Execution is a
/// sequential walk driven by an explicit frame stack, so it can stop at any
/// instruction boundary (or inside an op waiting for inputs) and continue
/// later.
pub struct PassMachine<'a> {
    frames: Vec<Frame<'a>>,
    cost: &'a CostConfig,
    seq: u32,
    fed: HashMap<FeedSlot, Arc<Tensor>>,
    last: HashMap<NodeId, (HandleId, Arc<Tensor>)>,
    by_seq: HashMap<HandleId, Arc<Tensor>>,
    partial: Vec<Arc<Tensor>>,
    pub stats: PassStats,
}

impl<'a> PassMachine<'a> {
    pub fn new(sp: &'a SymProgram, cost: &'a CostConfig) -> Self {
        PassMachine {
            frames: vec![Frame::Seq { insts: &sp.body, pc: 0 }],
            cost,
            seq: 0,
            fed: HashMap::new(),
            last: HashMap::new(),
            by_seq: HashMap::new(),
            partial: Vec::new(),
            stats: PassStats::default(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.frames.is_empty()
    }

    /// Output of the op that produced `seq`, if it has run.
    pub fn output(&self, seq: HandleId) -> Option<&Arc<Tensor>> {
        self.by_seq.get(&seq)
    }

    /// Runs until the program ends, IO stops it, or `io.pause()` holds.
    pub fn run(&mut self, io: &mut dyn PassIo, store: &mut VariableStore) -> Result<MachineStop, RunnerFault> {
        loop {
            if io.pause() {
                return Ok(MachineStop::Paused);
            }
            if io.cancelled() {
                return Ok(MachineStop::Io(IoStop::Cancelled));
            }
            let inst: &'a SymInst = match self.frames.last_mut() {
                None => return Ok(MachineStop::Finished),
                Some(Frame::Unrolled { bodies, next }) => {
                    let all: &'a [SymProgram] = bodies;
                    if *next < all.len() {
                        let body = &all[*next];
                        *next += 1;
                        self.frames.push(Frame::Seq { insts: &body.body, pc: 0 });
                    } else {
                        self.frames.pop();
                    }
                    continue;
                }
                Some(Frame::Seq { insts, pc }) => {
                    let all: &'a [SymInst] = insts;
                    if *pc >= all.len() {
                        self.frames.pop();
                        continue;
                    }
                    &all[*pc]
                }
            };
            if let Some(stop) = self.exec(inst, io, store)? {
                return Ok(MachineStop::Io(stop));
            }
        }
    }

    fn advance_pc(&mut self) {
        if let Some(Frame::Seq { pc, .. }) = self.frames.last_mut() {
            *pc += 1;
        }
    }

    /// Executes one instruction. `Some(stop)` leaves the program counter on
    /// the instruction so it is retried on resume.
    fn exec(
        &mut self,
        inst: &'a SymInst,
        io: &mut dyn PassIo,
        store: &mut VariableStore,
    ) -> Result<Option<IoStop>, RunnerFault> {
        match inst {
            SymInst::InputFeed { slot } => {
                let t = match io.feed(*slot) {
                    Ok(t) => t,
                    Err(stop) => return Ok(Some(stop)),
                };
                self.fed.insert(*slot, t);
                self.advance_pc();
            }
            SymInst::OutputFetch { node } => {
                let (seq, value) = self
                    .last
                    .get(node)
                    .cloned()
                    .ok_or_else(|| RunnerFault::Unresolved(format!("fetch of {node} before it ran")))?;
                if let Err(stop) = io.fetch(*node, seq, value) {
                    return Ok(Some(stop));
                }
                self.stats.fetches_served += 1;
                self.advance_pc();
            }
            SymInst::SwitchCase { branch, cases } => {
                let d = match io.decision() {
                    Ok(d) => d,
                    Err(stop) => return Ok(Some(stop)),
                };
                let case_index = match d {
                    Decision::Case { branch: b, case_index } if b == *branch => case_index as usize,
                    other => {
                        return Err(RunnerFault::DecisionMismatch {
                            expected: format!("case decision for {branch}"),
                            got: other,
                        })
                    }
                };
                let case = cases.get(case_index).ok_or_else(|| RunnerFault::DecisionMismatch {
                    expected: format!("case index below {} for {branch}", cases.len()),
                    got: d,
                })?;
                self.advance_pc();
                self.frames.push(Frame::Seq { insts: &case.body, pc: 0 });
            }
            SymInst::While { loop_id, body, .. } => {
                let d = match io.decision() {
                    Ok(d) => d,
                    Err(stop) => return Ok(Some(stop)),
                };
                match d {
                    Decision::Loop { loop_id: l, cont } if l == *loop_id => {
                        if cont {
                            // the pc stays on the While so the next decision is read here
                            self.frames.push(Frame::Seq { insts: &body.body, pc: 0 });
                        } else {
                            self.advance_pc();
                        }
                    }
                    other => {
                        return Err(RunnerFault::DecisionMismatch {
                            expected: format!("loop decision for {loop_id}"),
                            got: other,
                        })
                    }
                }
            }
            SymInst::UnrolledLoop { bodies, .. } => {
                self.advance_pc();
                self.frames.push(Frame::Unrolled { bodies, next: 0 });
            }
            SymInst::ExecOp { node, kind, attrs, inputs } => {
                while self.partial.len() < inputs.len() {
                    let i = self.partial.len();
                    let t = match &inputs[i] {
                        InputBinding::Feed(slot) => self
                            .fed
                            .get(slot)
                            .cloned()
                            .ok_or_else(|| RunnerFault::Unresolved(format!("feed {slot} was not read")))?,
                        InputBinding::Latest(cands) => {
                            let (n, _) = pick_latest(cands, |n| self.last.get(&n).map(|x| x.0))
                                .ok_or_else(|| RunnerFault::Unresolved(format!("no producer ran for input {i} of {node}")))?;
                            self.last[&n].1.clone()
                        }
                        InputBinding::Dynamic(slot) => {
                            let d = match io.decision() {
                                Ok(d) => d,
                                Err(stop) => return Ok(Some(stop)),
                            };
                            match d {
                                Decision::Bind { node: n, input, source } if n == *node && input as usize == i => {
                                    match source {
                                        BindSource::Handle(h) => self.by_seq.get(&h).cloned().ok_or_else(|| {
                                            RunnerFault::Unresolved(format!("bound handle {h} does not exist"))
                                        })?,
                                        // bind decisions and their feeds are published together
                                        BindSource::Feed => match io.feed(*slot) {
                                            Ok(t) => t,
                                            Err(IoStop::Starved) => {
                                                return Err(RunnerFault::Unresolved(format!(
                                                    "feed {slot} missing after its bind decision"
                                                )))
                                            }
                                            Err(stop) => return Ok(Some(stop)),
                                        },
                                    }
                                }
                                other => {
                                    return Err(RunnerFault::DecisionMismatch {
                                        expected: format!("bind decision for input {i} of {node}"),
                                        got: other,
                                    })
                                }
                            }
                        }
                    };
                    self.partial.push(t);
                }
                let started = Instant::now();
                let refs: Vec<&Tensor> = self.partial.iter().map(|t| t.as_ref()).collect();
                let out = execute_kernel(*kind, attrs, &refs, self.cost, &mut store.pass_vars())
                    .map_err(|e| RunnerFault::Kernel(format!("{node}: {e}")))?;
                self.stats.exec += started.elapsed();
                self.stats.ops_executed += 1;
                self.partial.clear();
                for t in out {
                    let h = HandleId(self.seq);
                    self.seq += 1;
                    let t = Arc::new(t);
                    self.by_seq.insert(h, t.clone());
                    self.last.insert(*node, (h, t));
                }
                self.advance_pc();
            }
        }
        Ok(None)
    }

    pub fn exec_time(&self) -> Duration {
        self.stats.exec
    }
}
