use std::collections::BTreeSet;

use thiserror::Error;

use crate::trace_graph::{LevelId, NodeId, NodeKind, TraceGraph};

use super::{SymInst, SymProgram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("path enumeration exceeded {0} sequences")]
pub struct ExplosionGuard(pub usize);

pub type Language = BTreeSet<Vec<NodeId>>;

fn unit() -> Language {
    BTreeSet::from([Vec::new()])
}

fn concat(a: &Language, b: &Language, cap: usize) -> Result<Language, ExplosionGuard> {
    let mut out = Language::new();
    for x in a {
        for y in b {
            let mut s = x.clone();
            s.extend_from_slice(y);
            out.insert(s);
            if out.len() > cap {
                return Err(ExplosionGuard(cap));
            }
        }
    }
    Ok(out)
}

fn union_into(acc: &mut Language, other: Language, cap: usize) -> Result<(), ExplosionGuard> {
    acc.extend(other);
    if acc.len() > cap {
        return Err(ExplosionGuard(cap));
    }
    Ok(())
}

fn repeat(body: &Language, times: u32, cap: usize) -> Result<Language, ExplosionGuard> {
    let mut acc = unit();
    for _ in 0..times {
        acc = concat(&acc, body, cap)?;
    }
    Ok(acc)
}

fn loop_language(body: &Language, constant: Option<u32>, trip_bound: u32, cap: usize) -> Result<Language, ExplosionGuard> {
    match constant {
        Some(k) => repeat(body, k, cap),
        None => {
            let mut out = Language::new();
            let mut acc = unit();
            for i in 0..=trip_bound {
                if i > 0 {
                    acc = concat(&acc, body, cap)?;
                }
                union_into(&mut out, acc.clone(), cap)?;
            }
            Ok(out)
        }
    }
}

/// Every `ExecOp` node sequence the structured program can execute, taking
/// each case of every `SwitchCase` and 0..=`trip_bound` iterations of every
/// `While`. Unrolled loops run exactly their copies.
pub fn path_language(sp: &SymProgram, trip_bound: u32, cap: usize) -> Result<Language, ExplosionGuard> {
    let mut acc = unit();
    for inst in &sp.body {
        let piece = match inst {
            SymInst::ExecOp { node, .. } => BTreeSet::from([vec![*node]]),
            SymInst::InputFeed { .. } | SymInst::OutputFetch { .. } => continue,
            SymInst::SwitchCase { cases, .. } => {
                let mut u = Language::new();
                for c in cases {
                    union_into(&mut u, path_language(c, trip_bound, cap)?, cap)?;
                }
                u
            }
            SymInst::While { body, .. } => loop_language(&path_language(body, trip_bound, cap)?, None, trip_bound, cap)?,
            SymInst::UnrolledLoop { bodies, .. } => {
                let mut acc2 = unit();
                for b in bodies {
                    acc2 = concat(&acc2, &path_language(b, trip_bound, cap)?, cap)?;
                }
                acc2
            }
        };
        acc = concat(&acc, &piece, cap)?;
    }
    Ok(acc)
}

/// Brute-force path language of a trace graph under the same loop policy as
/// [`path_language`]: a loop with a single observed trip count `k` runs
/// exactly `k` times, any other loop 0..=`trip_bound` times.
pub fn graph_path_language(tg: &TraceGraph, trip_bound: u32, cap: usize) -> Result<Language, ExplosionGuard> {
    level_language(tg, tg.root(), trip_bound, cap)
}

fn level_language(tg: &TraceGraph, level: LevelId, trip_bound: u32, cap: usize) -> Result<Language, ExplosionGuard> {
    let paths = tg.level_paths(level, cap + 1);
    if paths.len() > cap {
        return Err(ExplosionGuard(cap));
    }
    let mut out = Language::new();
    for path in paths {
        let mut acc = unit();
        for n in path {
            let piece = match &tg.node(n).kind {
                NodeKind::Op(_) => BTreeSet::from([vec![n]]),
                NodeKind::Loop(l) => {
                    loop_language(&level_language(tg, l.body, trip_bound, cap)?, l.constant_trip(), trip_bound, cap)?
                }
                NodeKind::Start | NodeKind::End => continue,
            };
            acc = concat(&acc, &piece, cap)?;
        }
        union_into(&mut out, acc, cap)?;
    }
    Ok(out)
}

/// Sequences of one structured level, with loops as single symbols.
fn atomic_language(sp: &SymProgram, cap: usize) -> Result<Language, ExplosionGuard> {
    let mut acc = unit();
    for inst in &sp.body {
        let piece = match inst {
            SymInst::ExecOp { node, .. }
            | SymInst::While { node, .. }
            | SymInst::UnrolledLoop { node, .. } => BTreeSet::from([vec![*node]]),
            SymInst::InputFeed { .. } | SymInst::OutputFetch { .. } => continue,
            SymInst::SwitchCase { cases, .. } => {
                let mut u = Language::new();
                for c in cases {
                    union_into(&mut u, atomic_language(c, cap)?, cap)?;
                }
                u
            }
        };
        acc = concat(&acc, &piece, cap)?;
    }
    Ok(acc)
}

/// Checks path-language equality level by level, treating nested loops as
/// atomic symbols. Every structured loop body (each unrolled copy
/// included) is compared against its graph body level.
pub fn level_paths_equal(tg: &TraceGraph, sp: &SymProgram, cap: usize) -> Result<bool, ExplosionGuard> {
    fn check(tg: &TraceGraph, level: LevelId, sp: &SymProgram, cap: usize) -> Result<bool, ExplosionGuard> {
        let paths = tg.level_paths(level, cap + 1);
        if paths.len() > cap {
            return Err(ExplosionGuard(cap));
        }
        let graph: Language = paths.into_iter().collect();
        if graph != atomic_language(sp, cap)? {
            return Ok(false);
        }
        let mut ok = true;
        let mut err = None;
        sp.visit(&mut |inst| {
            let (node, bodies): (NodeId, Vec<&SymProgram>) = match inst {
                SymInst::While { node, body, .. } => (*node, vec![body]),
                SymInst::UnrolledLoop { node, bodies, .. } => (*node, bodies.iter().collect()),
                _ => return,
            };
            // nested loops are visited too; only direct children of this level are checked here
            if tg.node(node).level != level {
                return;
            }
            let body_level = tg.node(node).as_loop().expect("loop instruction names a loop node").body;
            for b in bodies {
                match check(tg, body_level, b, cap) {
                    Ok(true) => {}
                    Ok(false) => ok = false,
                    Err(e) => err = Some(e),
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(ok),
        }
    }
    check(tg, tg.root(), sp, cap)
}
