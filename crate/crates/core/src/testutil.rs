//! Helpers shared by the unit tests.

use std::path::PathBuf;

use crate::coexec::{collect_traces, RunConfig};
use crate::frontend::{parse, Program};
use crate::interp::Trace;
use crate::trace_graph::TraceGraph;

pub fn corpus(name: &str) -> Program {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(format!("{name}.tl"));
    let src = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse(&src).unwrap()
}

pub fn corpus_graph(name: &str) -> TraceGraph {
    let p = corpus(name);
    collect_traces(&p, &RunConfig::default(), p.step_count).unwrap()
}

/// Traces of every step of a corpus program, recorded imperatively.
pub fn corpus_traces(name: &str, seed: u64) -> Vec<Trace> {
    use crate::interp::*;
    let p = corpus(name);
    let mut state = ExecState::new(&p, seed, &DatasetSource::default()).unwrap();
    let (mut vars, cost, mut out) = (Default::default(), Default::default(), Output::default());
    run_prologue(&mut state, &p, &mut vars, &cost, &mut out).unwrap();
    (0..p.step_count)
        .map(|step| {
            state.step = step;
            run_traced_step(&mut state, &p, &mut vars, &cost, &mut out).unwrap()
        })
        .collect()
}

/// Compares against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites it.
pub fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, want, "golden {name} differs");
}
