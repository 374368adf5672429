//! Structured symbolic program generation from a [`TraceGraph`].
//!
//! Each level is structured independently: a branch node becomes a
//! `SwitchCase` whose cases run up to the branch's immediate
//! post-dominator, duplicating shared tails. Loop nodes become `While`, or
//! `UnrolledLoop` when every observed instance had the same trip count.

mod dot;
mod paths;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::LoopId;
use crate::interp::trace::FeedSlot;
use crate::tensor::{Attrs, OpKind};
use crate::trace_graph::{InputBinding, LevelId, NodeId, NodeKind, TraceGraph};

pub use paths::{graph_path_language, level_paths_equal, path_language, ExplosionGuard};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymProgram {
    pub body: Vec<SymInst>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SymInst {
    ExecOp { node: NodeId, kind: OpKind, attrs: Attrs, inputs: Vec<InputBinding> },
    InputFeed { slot: FeedSlot },
    OutputFetch { node: NodeId },
    SwitchCase { branch: NodeId, cases: Vec<SymProgram> },
    While { loop_id: LoopId, node: NodeId, body: SymProgram },
    UnrolledLoop { loop_id: LoopId, node: NodeId, bodies: Vec<SymProgram> },
}

/// Branch node to (successor to case index).
pub type CaseMap = BTreeMap<NodeId, BTreeMap<NodeId, usize>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_ops: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_ops: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenError {
    #[error("structured program exceeds {0} operations")]
    BudgetExceeded(usize),
}

impl SymProgram {
    /// Counts instructions matching `pred`, recursively.
    pub fn count(&self, pred: &dyn Fn(&SymInst) -> bool) -> usize {
        self.body
            .iter()
            .map(|i| {
                let inner = match i {
                    SymInst::SwitchCase { cases, .. } => cases.iter().map(|c| c.count(pred)).sum(),
                    SymInst::While { body, .. } => body.count(pred),
                    SymInst::UnrolledLoop { bodies, .. } => bodies.iter().map(|b| b.count(pred)).sum(),
                    _ => 0,
                };
                inner + usize::from(pred(i))
            })
            .sum()
    }

    pub fn exec_ops(&self) -> usize {
        self.count(&|i| matches!(i, SymInst::ExecOp { .. }))
    }

    pub fn whiles(&self) -> usize {
        self.count(&|i| matches!(i, SymInst::While { .. }))
    }

    pub fn switches(&self) -> usize {
        self.count(&|i| matches!(i, SymInst::SwitchCase { .. }))
    }

    /// Every feed slot any instruction may read from.
    pub fn feed_slots(&self) -> Vec<FeedSlot> {
        let mut out = std::collections::BTreeSet::new();
        self.visit(&mut |i| match i {
            SymInst::InputFeed { slot } => {
                out.insert(*slot);
            }
            SymInst::ExecOp { inputs, .. } => {
                for b in inputs {
                    if let InputBinding::Dynamic(s) = b {
                        out.insert(*s);
                    }
                }
            }
            _ => {}
        });
        out.into_iter().collect()
    }

    /// Every node with an `OutputFetch`.
    pub fn fetch_nodes(&self) -> Vec<NodeId> {
        let mut out = std::collections::BTreeSet::new();
        self.visit(&mut |i| {
            if let SymInst::OutputFetch { node } = i {
                out.insert(*node);
            }
        });
        out.into_iter().collect()
    }

    pub fn visit(&self, f: &mut dyn FnMut(&SymInst)) {
        for i in &self.body {
            f(i);
            match i {
                SymInst::SwitchCase { cases, .. } => cases.iter().for_each(|c| c.visit(f)),
                SymInst::While { body, .. } => body.visit(f),
                SymInst::UnrolledLoop { bodies, .. } => bodies.iter().for_each(|b| b.visit(f)),
                _ => {}
            }
        }
    }
}

/// Immediate post-dominators of every node except each level's End,
/// computed per level over its reverse topological order.
pub fn post_dominators(tg: &TraceGraph) -> HashMap<NodeId, NodeId> {
    let mut ipdom = HashMap::new();
    for (lid, _) in tg.levels() {
        level_post_dominators(tg, lid, &mut ipdom);
    }
    ipdom
}

fn level_post_dominators(tg: &TraceGraph, lid: LevelId, ipdom: &mut HashMap<NodeId, NodeId>) {
    let order = tg.topo_order(lid).expect("trace graph levels are acyclic");
    let end = tg.level(lid).end;
    // rank grows with distance from End
    let rank: HashMap<NodeId, usize> = order.iter().rev().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut local: HashMap<NodeId, NodeId> = HashMap::new();
    local.insert(end, end);
    for &n in order.iter().rev() {
        if n == end {
            continue;
        }
        let mut children = tg.node(n).children.iter().copied();
        let Some(first) = children.next() else { continue };
        let mut acc = first;
        for c in children {
            let (mut a, mut b) = (acc, c);
            while a != b {
                while rank[&a] > rank[&b] {
                    a = local[&a];
                }
                while rank[&b] > rank[&a] {
                    b = local[&b];
                }
            }
            acc = a;
        }
        local.insert(n, acc);
    }
    local.remove(&end);
    ipdom.extend(local);
}

struct Gen<'g> {
    tg: &'g TraceGraph,
    ipdom: HashMap<NodeId, NodeId>,
    config: GenConfig,
    ops: usize,
}

/// Generates the structured program and the case numbering it expects.
pub fn structure(tg: &TraceGraph, config: &GenConfig) -> Result<(SymProgram, CaseMap), GenError> {
    let mut gen = Gen { tg, ipdom: post_dominators(tg), config: *config, ops: 0 };
    let root = tg.level(tg.root());
    let mut body = Vec::new();
    gen.region(root.start, root.end, &mut body)?;
    let mut cases = CaseMap::new();
    for n in tg.nodes() {
        if n.children.len() > 1 {
            cases.insert(n.id, n.children.iter().enumerate().map(|(i, &c)| (c, i)).collect());
        }
    }
    Ok((SymProgram { body }, cases))
}

impl Gen<'_> {
    fn region(&mut self, mut n: NodeId, stop: NodeId, out: &mut Vec<SymInst>) -> Result<(), GenError> {
        while n != stop {
            self.emit_node(n, out)?;
            let tg = self.tg;
            let children = &tg.node(n).children;
            if children.is_empty() {
                break;
            }
            if children.len() == 1 {
                n = children[0];
                continue;
            }
            let join = self.ipdom[&n];
            let mut cases = Vec::with_capacity(children.len());
            for &c in children {
                let mut case = Vec::new();
                self.region(c, join, &mut case)?;
                cases.push(SymProgram { body: case });
            }
            out.push(SymInst::SwitchCase { branch: n, cases });
            n = join;
        }
        Ok(())
    }

    fn emit_node(&mut self, n: NodeId, out: &mut Vec<SymInst>) -> Result<(), GenError> {
        match &self.tg.node(n).kind {
            NodeKind::Start | NodeKind::End => {}
            NodeKind::Op(op) => {
                self.ops += 1;
                if self.ops > self.config.max_ops {
                    return Err(GenError::BudgetExceeded(self.config.max_ops));
                }
                for b in &op.inputs {
                    if let InputBinding::Feed(slot) = b {
                        out.push(SymInst::InputFeed { slot: *slot });
                    }
                }
                out.push(SymInst::ExecOp {
                    node: n,
                    kind: op.key.kind,
                    attrs: op.key.attrs.clone(),
                    inputs: op.inputs.clone(),
                });
                if op.fetch {
                    out.push(SymInst::OutputFetch { node: n });
                }
            }
            NodeKind::Loop(l) => {
                let body_level = self.tg.level(l.body);
                let (start, end) = (body_level.start, body_level.end);
                match l.constant_trip() {
                    Some(k) => {
                        let mut bodies = Vec::with_capacity(k as usize);
                        for _ in 0..k {
                            let mut b = Vec::new();
                            self.region(start, end, &mut b)?;
                            bodies.push(SymProgram { body: b });
                        }
                        out.push(SymInst::UnrolledLoop { loop_id: l.loop_id, node: n, bodies });
                    }
                    None => {
                        let mut b = Vec::new();
                        self.region(start, end, &mut b)?;
                        out.push(SymInst::While { loop_id: l.loop_id, node: n, body: SymProgram { body: b } });
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn symprog_to_dot(sp: &SymProgram) -> String {
    dot::render(sp)
}

#[cfg(test)]
mod tests;
