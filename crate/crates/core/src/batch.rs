//! Batch checking: many independent (program, config) runs compared
//! against the imperative oracle. With the `parallel` feature the items
//! fan out over rayon's pool; without it they run in order. Each
//! co-executed run still owns its own graph-pass thread.

use crate::coexec::{run, Mode, RunConfig};
use crate::frontend::{parse, Program};
use crate::interp::{run_imperative, RunError, RunResult};

/// Applies `f` to every item, in parallel when the `parallel` feature is on.
/// Output order follows input order either way.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// The sequential path, always available (the bench compares the two).
pub fn map_sequential<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

/// One program to check, named for reporting.
#[derive(Clone, Debug)]
pub struct Case {
    pub name: String,
    pub source: String,
    pub config: RunConfig,
}

/// Why a case failed; `None` from [`check`] means every mode agreed.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub name: String,
    pub mode: Option<Mode>,
    pub detail: String,
}

fn same(a: &Result<RunResult, RunError>, b: &Result<RunResult, RunError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x == y,
        // errors must agree on what went wrong, not on where it surfaced
        (Err(x), Err(y)) => x.kind == y.kind,
        _ => false,
    }
}

/// Runs `program` in each of `modes` and compares against imperative mode.
pub fn check_program(program: &Program, config: &RunConfig, modes: &[Mode]) -> Result<(), (Mode, String)> {
    let oracle = run_imperative(program, config);
    for &mode in modes {
        let got = run(program, &config.clone().with_mode(mode)).map(|r| r.result);
        if !same(&oracle, &got) {
            let show = |r: &Result<RunResult, RunError>| match r {
                Ok(r) => format!("{} lines, vars {:?}", r.lines.len(), r.vars.keys().collect::<Vec<_>>()),
                Err(e) => e.to_string(),
            };
            return Err((mode, format!("oracle: {}; got: {}", show(&oracle), show(&got))));
        }
    }
    Ok(())
}

/// Checks one case; parse errors are mismatches too.
pub fn check(case: &Case, modes: &[Mode]) -> Option<Mismatch> {
    let program = match parse(&case.source) {
        Ok(p) => p,
        Err(e) => return Some(Mismatch { name: case.name.clone(), mode: None, detail: e.to_string() }),
    };
    check_program(&program, &case.config, modes)
        .err()
        .map(|(mode, detail)| Mismatch { name: case.name.clone(), mode: Some(mode), detail })
}

/// Checks all cases, returning the failures in case order.
pub fn check_all(cases: &[Case], modes: &[Mode]) -> Vec<Mismatch> {
    map(cases, |c| check(c, modes)).into_iter().flatten().collect()
}

/// Cases for the fuzzed programs with the given seeds; each run uses its
/// program's seed.
pub fn fuzz_cases(seeds: impl IntoIterator<Item = u64>) -> Vec<Case> {
    seeds
        .into_iter()
        .map(|seed| Case {
            name: format!("fuzz-{seed}"),
            source: crate::fuzz::random_program(seed),
            config: RunConfig { seed, ..RunConfig::default() },
        })
        .collect()
}
