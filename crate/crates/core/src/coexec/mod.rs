//! The orchestrator. Runs a program in one of the execution modes and, in
//! the co-executing ones, drives the phase machine: trace steps eagerly
//! until a trace is covered, generate the symbolic program, then run the
//! skeleton against a graph pass per step, falling back to tracing when
//! the skeleton leaves the graph.

mod links;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::frontend::Program;
use crate::graph_gen::{structure, GenConfig, GenError, SymProgram};
use crate::graph_runner::{
    ChannelSet, Job, PassMachine, PassOutcome, PassResult, RunnerFault, VariableStore, Worker, DEFAULT_CAPACITY,
};
use crate::interp::{
    replay_step_imperative, run_prologue, run_skeleton_step, run_step_eager, run_traced_step, Cursors, DatasetSource,
    ExecState, FeedSlot, Output, RunError, RunErrorKind, RunResult, SkeletonBackend, StepOutcome,
};
use crate::tensor::{CostConfig, Shape};
use crate::trace_graph::{Cursor, MergeReport, NodeId, TraceGraph};

use links::{LazyLink, ThreadedLink};
pub use stats::{StepSeries, Stats};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Imperative,
    Coexec,
    Lazy,
    /// Co-execution plus per-step consistency assertions.
    SkeletonCheck,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Imperative, Mode::Coexec, Mode::Lazy, Mode::SkeletonCheck];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Imperative => "imperative",
            Mode::Coexec => "coexec",
            Mode::Lazy => "lazy",
            Mode::SkeletonCheck => "skeleton-check",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected imperative, coexec, lazy or skeleton-check)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Tracing,
    CoExec,
    /// The structured program would exceed the op budget.
    ImperativeOnly,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Tracing => "tracing",
            Phase::CoExec => "co-execution",
            Phase::ImperativeOnly => "imperative-only",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub cost: CostConfig,
    /// Op budget for the structured program.
    pub max_ops: usize,
    pub capacity: usize,
    /// Overrides the program's `steps` count.
    pub steps_override: Option<u64>,
    /// Echo printed lines to standard output as they are committed.
    pub echo: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Imperative,
            seed: 0,
            dataset: DatasetSource::default(),
            cost: CostConfig::default(),
            max_ops: GenConfig::default().max_ops,
            capacity: DEFAULT_CAPACITY,
            steps_override: None,
            echo: false,
        }
    }
}

impl RunConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

/// Everything a run produces.
#[derive(Debug)]
pub struct RunReport {
    pub result: RunResult,
    pub stats: Stats,
    /// The final TraceGraph (empty in imperative mode).
    pub graph: TraceGraph,
    /// The last generated program, if the run ended in co-execution.
    pub symbolic: Option<Arc<SymProgram>>,
    pub final_phase: Phase,
}

/// Runs `program` under `config.mode`.
pub fn run(program: &Program, config: &RunConfig) -> Result<RunReport, RunError> {
    let mut o = Orchestrator::new(program, config)?;
    o.run()?;
    Ok(o.finish())
}

/// Runs `steps` traced steps and returns the merged graph; used for dumps.
pub fn collect_traces(program: &Program, config: &RunConfig, steps: u64) -> Result<TraceGraph, RunError> {
    let mut o = Orchestrator::new(program, config)?;
    for step in 0..steps.min(config.steps_override.unwrap_or(program.step_count)) {
        o.state.step = step;
        o.trace_step().map_err(|e| o.annotate(e))?;
    }
    Ok(o.tg)
}

/// Timing of one step, as attributed to the four categories.
#[derive(Clone, Copy, Debug, Default)]
struct StepTimes {
    wall: Duration,
    host_stall: Duration,
    graph_exec: Duration,
    graph_stall: Duration,
}

/// The generated program plus its channel layout.
struct Compiled {
    program: Arc<SymProgram>,
    feed_slots: Vec<FeedSlot>,
    fetch_nodes: Vec<NodeId>,
}

struct Orchestrator<'p> {
    program: &'p Program,
    config: &'p RunConfig,
    cost: Arc<CostConfig>,
    state: ExecState,
    store: VariableStore,
    out: Output,
    phase: Phase,
    tg: TraceGraph,
    compiled: Option<Compiled>,
    worker: Option<Worker>,
    stats: Stats,
}

/// What a co-executed step left behind, whichever link ran it.
struct PassEnd {
    skeleton: Result<StepOutcome, RunError>,
    prints: Vec<String>,
    pass: PassResult,
    host_stall: Duration,
    check: Option<CheckData>,
}

struct CheckData {
    trace: Option<crate::interp::Trace>,
    errors: Vec<String>,
    ops: usize,
}

impl<'p> Orchestrator<'p> {
    fn new(program: &'p Program, config: &'p RunConfig) -> Result<Self, RunError> {
        let mut state = ExecState::new(program, config.seed, &config.dataset)?;
        let mut vars = BTreeMap::new();
        let mut out = Output { lines: Vec::new(), echo: config.echo };
        run_prologue(&mut state, program, &mut vars, &config.cost, &mut out)?;
        let phase = if config.mode == Mode::Imperative { Phase::ImperativeOnly } else { Phase::Tracing };
        let worker = matches!(config.mode, Mode::Coexec | Mode::SkeletonCheck).then(Worker::spawn);
        Ok(Orchestrator {
            program,
            config,
            cost: Arc::new(config.cost.clone()),
            state,
            store: VariableStore::new(vars),
            out,
            phase,
            tg: TraceGraph::new(),
            compiled: None,
            worker,
            stats: Stats::new(config.mode),
        })
    }

    fn annotate(&self, mut e: RunError) -> RunError {
        if e.step.is_none() {
            e.step = Some(self.state.step);
        }
        if self.config.mode != Mode::Imperative {
            e.phase.get_or_insert(self.phase);
        }
        e
    }

    fn run(&mut self) -> Result<(), RunError> {
        let steps = self.config.steps_override.unwrap_or(self.program.step_count);
        for step in 0..steps {
            self.state.step = step;
            let started = Instant::now();
            let mut times = match self.phase {
                Phase::ImperativeOnly => self.imperative_step(),
                Phase::Tracing => self.tracing_step(),
                Phase::CoExec => self.coexec_step(),
            }
            .map_err(|e| self.annotate(e))?;
            times.wall = started.elapsed();
            self.stats.record_step(times.wall, times.host_stall, times.graph_exec, times.graph_stall);
        }
        Ok(())
    }

    fn finish(self) -> RunReport {
        let mut stats = self.stats;
        stats.finalize();
        RunReport {
            result: RunResult { lines: self.out.lines, vars: self.store.committed().clone() },
            stats,
            graph: self.tg,
            symbolic: self.compiled.map(|c| c.program),
            final_phase: self.phase,
        }
    }

    fn imperative_step(&mut self) -> Result<StepTimes, RunError> {
        let vars = self.store.committed_mut();
        run_step_eager(&mut self.state, self.program, vars, &self.cost, &mut self.out, false)?;
        Ok(StepTimes::default())
    }

    fn trace_step(&mut self) -> Result<MergeReport, RunError> {
        let vars = self.store.committed_mut();
        let trace = run_traced_step(&mut self.state, self.program, vars, &self.cost, &mut self.out)?;
        self.merge(&trace)
    }

    fn merge(&mut self, trace: &crate::interp::Trace) -> Result<MergeReport, RunError> {
        self.stats.traces_collected += 1;
        self.tg.merge_trace(trace).map_err(|e| RunError::new(RunErrorKind::Internal(e.to_string())))
    }

    fn tracing_step(&mut self) -> Result<StepTimes, RunError> {
        let report = self.trace_step()?;
        if report.covered {
            self.regenerate();
        }
        Ok(StepTimes::default())
    }

    fn regenerate(&mut self) {
        self.stats.phase_transitions += 1;
        match structure(&self.tg, &GenConfig { max_ops: self.config.max_ops }) {
            Ok((sp, _)) => {
                self.stats.graph_regens += 1;
                self.compiled =
                    Some(Compiled { feed_slots: sp.feed_slots(), fetch_nodes: sp.fetch_nodes(), program: Arc::new(sp) });
                self.phase = Phase::CoExec;
            }
            Err(GenError::BudgetExceeded(_)) => {
                self.compiled = None;
                self.phase = Phase::ImperativeOnly;
            }
        }
    }

    fn var_shapes(&self) -> BTreeMap<String, Shape> {
        self.store.committed().iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    fn coexec_step(&mut self) -> Result<StepTimes, RunError> {
        let snapshot = self.state.dataset.cursors();
        let end = if self.config.mode == Mode::Lazy { self.lazy_pass() } else { self.threaded_pass() };
        let PassEnd { skeleton, prints, pass, host_stall, check } = end;
        let times = StepTimes {
            wall: Duration::ZERO,
            host_stall,
            graph_exec: pass.stats.exec,
            graph_stall: pass.stats.stall,
        };
        // a mismatch means the skeleton handed out a decision the graph does
        // not allow: a broken invariant whatever happened afterwards
        if let PassOutcome::Faulted(f @ RunnerFault::DecisionMismatch { .. }) = &pass.outcome {
            self.store.rollback();
            return Err(RunError::new(RunErrorKind::Runner(f.clone())));
        }
        match skeleton {
            Ok(StepOutcome::Completed) => {
                if let PassOutcome::Faulted(f) = &pass.outcome {
                    self.store.rollback();
                    return Err(RunError::new(RunErrorKind::Runner(f.clone())));
                }
                if pass.outcome != PassOutcome::Completed {
                    self.store.rollback();
                    return Err(RunError::new(RunErrorKind::Internal(format!(
                        "skeleton completed but the pass ended {:?}",
                        pass.outcome
                    ))));
                }
                if let Some(check) = check {
                    self.verify(check, &pass)?;
                }
                self.store.commit();
                for line in prints {
                    self.out.emit(line);
                }
                Ok(times)
            }
            // the runner runs ahead of the skeleton and may fault on a path
            // the skeleton is about to reject; its writes sit in the overlay,
            // so the step is simply replayed. A runtime error is replayed too:
            // the eager run reports it from a consistent state
            Ok(StepOutcome::Diverged(_)) | Err(_) => {
                self.store.rollback();
                self.fallback(snapshot)?;
                Ok(times)
            }
        }
    }

    fn fallback(&mut self, snapshot: Cursors) -> Result<(), RunError> {
        let vars = self.store.committed_mut();
        let trace = replay_step_imperative(&mut self.state, snapshot, self.program, vars, &self.cost, &mut self.out)?;
        self.merge(&trace)?;
        self.stats.steps_replayed += 1;
        self.stats.phase_transitions += 1;
        self.phase = Phase::Tracing;
        self.compiled = None;
        Ok(())
    }

    fn verify(&self, check: CheckData, pass: &PassResult) -> Result<(), RunError> {
        let fail = |msg: String| Err(RunError::new(RunErrorKind::Internal(format!("skeleton check: {msg}"))));
        if let Some(e) = check.errors.first() {
            return fail(e.clone());
        }
        let Some(trace) = check.trace else { return fail("no trace recorded".into()) };
        if let Err(e) = trace.check_well_formed() {
            return fail(e.to_string());
        }
        match self.tg.runs_within(&trace) {
            Ok(true) => {}
            Ok(false) => return fail("completed step is not covered by the graph".into()),
            Err(e) => return fail(e.to_string()),
        }
        if check.ops != pass.stats.ops_executed {
            return fail(format!("skeleton issued {} ops, the pass executed {}", check.ops, pass.stats.ops_executed));
        }
        Ok(())
    }

    fn threaded_pass(&mut self) -> PassEnd {
        let compiled = self.compiled.as_ref().expect("co-execution has a program");
        let worker = self.worker.as_ref().expect("co-execution has a worker");
        let channels = ChannelSet::new(&compiled.feed_slots, &compiled.fetch_nodes, self.config.capacity);
        let var_shapes = self.var_shapes();
        let job = Job {
            program: compiled.program.clone(),
            ends: channels.runner,
            store: std::mem::take(&mut self.store),
            cost: self.cost.clone(),
        };
        let mut link = ThreadedLink::new(worker, job, channels.skeleton);
        let mut backend = SkeletonBackend::new(Cursor::new(&self.tg), &mut link, var_shapes);
        if self.config.mode == Mode::SkeletonCheck {
            backend = backend.with_checks();
        }
        let skeleton = run_skeleton_step(&mut self.state, self.program, &mut backend);
        let prints = backend.take_prints();
        let check = (self.config.mode == Mode::SkeletonCheck).then(|| CheckData {
            trace: backend.take_trace(),
            errors: backend.check_errors().to_vec(),
            ops: backend.ops(),
        });
        drop(backend);
        let completed = matches!(skeleton, Ok(StepOutcome::Completed));
        let (pass, store, host_stall) = link.join(!completed);
        self.store = store;
        PassEnd { skeleton, prints, pass, host_stall, check }
    }

    fn lazy_pass(&mut self) -> PassEnd {
        let compiled = self.compiled.as_ref().expect("co-execution has a program");
        let var_shapes = self.var_shapes();
        let program = compiled.program.clone();
        let started = Instant::now();
        self.store.begin_pass();
        let mut link = LazyLink::new(PassMachine::new(&program, &self.cost), &mut self.store);
        let mut backend = SkeletonBackend::new(Cursor::new(&self.tg), &mut link, var_shapes);
        let skeleton = run_skeleton_step(&mut self.state, self.program, &mut backend);
        let prints = backend.take_prints();
        drop(backend);
        let (pass, host_stall) = link.into_result(started.elapsed());
        PassEnd { skeleton, prints, pass, host_stall, check: None }
    }
}
