//! Tree-walking interpreter with three backends: eager (the imperative
//! oracle, optionally recording a trace) and skeleton (host semantics only,
//! tensor work delegated to the graph runner).

mod dataset;
mod eager;
mod eval;
mod natives;
mod skeleton;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::coexec::{Phase, RunConfig};
use crate::frontend::{Pos, Program, StmtKind};
use crate::graph_runner::RunnerFault;
use crate::tensor::{ShapeError, Shape, Tensor};

pub use dataset::{parse_jsonl, synthetic_tensor, Cursors, Dataset, DatasetRecord, DatasetSource};
pub use eager::EagerBackend;
pub use eval::Backend;
pub use natives::{eval_native, fnv1a64, stream_seed, NativeStream, XorShift64Star};
pub use skeleton::{RunnerLink, SkeletonBackend};
pub use trace::{
    FeedSlot, HandleId, MalformedTrace, OpEvent, OpKey, Trace, TraceEvent, TraceRecorder, ValueRef,
};

/// A tensor as seen by host code: always has a shape; `handle` is set for
/// op outputs of the current step; `data` is absent for skeleton handles
/// that have not been fetched.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorVal {
    pub shape: Shape,
    pub handle: Option<HandleId>,
    pub data: Option<Arc<Tensor>>,
}

impl TensorVal {
    pub fn constant(t: Tensor) -> Self {
        TensorVal { shape: t.shape().to_vec(), handle: None, data: Some(Arc::new(t)) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Bool(bool),
    Str(String),
    List(Vec<f64>),
    Tensor(TensorVal),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "number",
            Value::Bool(_) => "bool",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Tensor(_) => "tensor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunErrorKind {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("dataset exhausted for input `{0}`")]
    DatasetExhausted(String),
    #[error("condition is a {0}, not a bool")]
    NonBoolCondition(&'static str),
    #[error("type error: {0}")]
    Type(String),
    #[error("unknown native `{0}`")]
    UnknownNative(String),
    #[error("native `{name}` takes {expected} argument(s), got {got}")]
    NativeArity { name: String, expected: usize, got: usize },
    #[error("native failed: {0}")]
    Native(String),
    #[error("dataset: {0}")]
    Dataset(String),
    /// The live trace left the TraceGraph (skeleton only).
    #[error("diverged: {0}")]
    Diverged(String),
    #[error("graph runner channel closed")]
    ChannelClosed,
    #[error("graph runner fault: {0}")]
    Runner(RunnerFault),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub step: Option<u64>,
    /// Orchestrator phase, when the error surfaced under one.
    pub phase: Option<Phase>,
    pub pos: Option<Pos>,
    pub kind: RunErrorKind,
}

impl RunError {
    pub fn new(kind: RunErrorKind) -> Self {
        RunError { step: None, phase: None, pos: None, kind }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("runtime error")?;
        match self.step {
            Some(s) => write!(f, " in step {s}")?,
            None => f.write_str(" in prologue")?,
        }
        if let Some(p) = self.phase {
            write!(f, " ({p} phase)")?;
        }
        if let Some(p) = self.pos {
            write!(f, " at {p}")?;
        }
        write!(f, ": {}", self.kind)
    }
}

impl std::error::Error for RunError {}

impl From<RunErrorKind> for RunError {
    fn from(kind: RunErrorKind) -> Self {
        RunError::new(kind)
    }
}

/// Printed output. With `echo`, lines also go to standard output as they
/// are committed.
#[derive(Clone, Debug, Default)]
pub struct Output {
    pub lines: Vec<String>,
    pub echo: bool,
}

impl Output {
    pub fn emit(&mut self, line: String) {
        if self.echo {
            println!("{line}");
        }
        self.lines.push(line);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub lines: Vec<String>,
    pub vars: BTreeMap<String, Tensor>,
}

/// Interpreter state that outlives a single step.
#[derive(Clone, Debug)]
pub struct ExecState {
    pub prologue_env: HashMap<String, Value>,
    pub var_names: BTreeSet<String>,
    pub step: u64,
    pub natives: NativeStream,
    pub dataset: Dataset,
}

impl ExecState {
    pub fn new(program: &Program, seed: u64, dataset: &DatasetSource) -> Result<Self, RunError> {
        let var_names = program
            .prologue
            .iter()
            .filter_map(|s| match &s.kind {
                StmtKind::VarDecl { name, .. } => Some(name.clone()),
                _ => None,
            })
            .collect();
        Ok(ExecState {
            prologue_env: HashMap::new(),
            var_names,
            step: 0,
            natives: NativeStream::new(seed),
            dataset: Dataset::open(dataset).map_err(|e| RunError::new(RunErrorKind::Dataset(e)))?,
        })
    }
}

/// Runs the prologue eagerly, filling `vars` and the prologue environment.
pub fn run_prologue(
    state: &mut ExecState,
    program: &Program,
    vars: &mut BTreeMap<String, Tensor>,
    cost: &crate::tensor::CostConfig,
    out: &mut Output,
) -> Result<(), RunError> {
    let mut backend = EagerBackend::prologue(vars, cost, out);
    state.prologue_env = eval::run_prologue(state, program, &mut backend)?;
    Ok(())
}

/// Runs step `state.step` eagerly. Returns the trace when `record` is set.
pub fn run_step_eager(
    state: &mut ExecState,
    program: &Program,
    vars: &mut BTreeMap<String, Tensor>,
    cost: &crate::tensor::CostConfig,
    out: &mut Output,
    record: bool,
) -> Result<Option<Trace>, RunError> {
    let mut backend = EagerBackend::step(vars, cost, out, record);
    eval::run_step(state, program, &mut backend)?;
    Ok(backend.finish())
}

/// One traced imperative step: identical behavior to the imperative step
/// plus its trace.
pub fn run_traced_step(
    state: &mut ExecState,
    program: &Program,
    vars: &mut BTreeMap<String, Tensor>,
    cost: &crate::tensor::CostConfig,
    out: &mut Output,
) -> Result<Trace, RunError> {
    Ok(run_step_eager(state, program, vars, cost, out, true)?.expect("recording backend returns a trace"))
}

/// Re-executes an aborted step from its snapshot (dataset cursors of the
/// step start, variables already rolled back by the caller).
pub fn replay_step_imperative(
    state: &mut ExecState,
    snapshot: Cursors,
    program: &Program,
    vars: &mut BTreeMap<String, Tensor>,
    cost: &crate::tensor::CostConfig,
    out: &mut Output,
) -> Result<Trace, RunError> {
    state.dataset.restore(snapshot);
    run_traced_step(state, program, vars, cost, out)
}

/// Outcome of a skeleton step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Completed,
    Diverged(String),
}

/// Runs step `state.step` on a skeleton backend. Divergence is reported
/// as a value; other errors propagate.
pub fn run_skeleton_step(
    state: &mut ExecState,
    program: &Program,
    backend: &mut SkeletonBackend<'_, '_>,
) -> Result<StepOutcome, RunError> {
    let r = eval::run_step(state, program, backend).and_then(|_| backend.end_step().map_err(RunError::new));
    match r {
        Ok(()) => Ok(StepOutcome::Completed),
        Err(RunError { kind: RunErrorKind::Diverged(msg), .. }) => Ok(StepOutcome::Diverged(msg)),
        Err(e) => Err(e),
    }
}

/// The imperative oracle: prologue, then every step with kernels inline.
pub fn run_imperative(program: &Program, config: &RunConfig) -> Result<RunResult, RunError> {
    let mut state = ExecState::new(program, config.seed, &config.dataset)?;
    let mut vars = BTreeMap::new();
    let mut out = Output { lines: Vec::new(), echo: config.echo };
    run_prologue(&mut state, program, &mut vars, &config.cost, &mut out)?;
    for step in 0..config.steps_override.unwrap_or(program.step_count) {
        state.step = step;
        run_step_eager(&mut state, program, &mut vars, &config.cost, &mut out, false)?;
    }
    Ok(RunResult { lines: out.lines, vars })
}

/// Host rendering of a number: shortest round-trip decimal.
pub fn format_num(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests;
