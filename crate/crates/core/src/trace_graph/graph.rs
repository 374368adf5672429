use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::frontend::LoopId;
use crate::interp::trace::{FeedSlot, HandleId, MalformedTrace, OpEvent, OpKey, Trace, TraceEvent, ValueRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LevelId(pub u32);

/// How an op node obtains one of its inputs at run time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputBinding {
    /// Always supplied by the interpreter through this feed slot.
    Feed(FeedSlot),
    /// The most recent output, within the current step, of any of these
    /// producer nodes (sorted, deduplicated).
    Latest(Vec<NodeId>),
    /// Chosen per execution by a bind decision from the interpreter: either
    /// a specific earlier output or a value fed through the slot.
    Dynamic(FeedSlot),
}

/// Picks the candidate whose last output is most recent.
pub fn pick_latest(cands: &[NodeId], last: impl Fn(NodeId) -> Option<HandleId>) -> Option<(NodeId, HandleId)> {
    cands.iter().filter_map(|&n| last(n).map(|h| (n, h))).max_by_key(|&(_, h)| h)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpNode {
    pub key: OpKey,
    pub inputs: Vec<InputBinding>,
    pub fetch: bool,
    /// Per input: nodes that had a newer output than the one this input
    /// read at some merged execution. Such a node can never join a `Latest`
    /// candidate set without changing that earlier resolution.
    #[serde(default, skip_serializing_if = "no_shadows")]
    pub shadowed: Vec<BTreeSet<NodeId>>,
}

pub(crate) fn no_shadows(s: &[BTreeSet<NodeId>]) -> bool {
    s.iter().all(BTreeSet::is_empty)
}

impl OpNode {
    pub fn new(key: OpKey) -> Self {
        OpNode { key, inputs: Vec::new(), fetch: false, shadowed: Vec::new() }
    }
}

/// Merge bookkeeping is left out: two nodes that bind and fetch alike
/// behave alike.
impl PartialEq for OpNode {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.inputs == other.inputs && self.fetch == other.fetch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopNode {
    pub loop_id: LoopId,
    pub body: LevelId,
    pub trip_counts: BTreeSet<u32>,
}

impl LoopNode {
    /// Trip count when every observed instance ran the same number of times.
    pub fn constant_trip(&self) -> Option<u32> {
        if self.trip_counts.len() == 1 {
            self.trip_counts.iter().next().copied()
        } else {
            None
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Start,
    End,
    Op(OpNode),
    Loop(LoopNode),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum MatchKey<'a> {
    Op(&'a OpKey),
    Loop(LoopId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub level: LevelId,
    pub kind: NodeKind,
    /// Successors in insertion order; the index is the case index.
    pub children: Vec<NodeId>,
    pub parents: Vec<NodeId>,
}

impl Node {
    pub fn match_key(&self) -> Option<MatchKey<'_>> {
        match &self.kind {
            NodeKind::Op(op) => Some(MatchKey::Op(&op.key)),
            NodeKind::Loop(l) => Some(MatchKey::Loop(l.loop_id)),
            _ => None,
        }
    }

    pub fn as_op(&self) -> Option<&OpNode> {
        match &self.kind {
            NodeKind::Op(op) => Some(op),
            _ => None,
        }
    }

    pub fn as_loop(&self) -> Option<&LoopNode> {
        match &self.kind {
            NodeKind::Loop(l) => Some(l),
            _ => None,
        }
    }
}

/// One nesting level: a single-entry single-exit DAG between `start` and
/// `end`. The root level is the step; every loop node owns a body level.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub start: NodeId,
    pub end: NodeId,
    pub owner: Option<NodeId>,
    /// Members in insertion order, including start and end.
    pub members: Vec<NodeId>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub covered: bool,
    pub nodes_added: usize,
    pub edges_added: usize,
    /// Feed/fetch flags, binding changes and new trip counts.
    pub annotations_added: usize,
}

/// DAG of operations merged from per-step traces.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceGraph {
    pub(crate) nodes: Vec<Node>,
    pub(crate) levels: Vec<Level>,
}

impl Default for TraceGraph {
    fn default() -> Self {
        Self::new()
    }
}

/// Trace events regrouped by loop instance. Op-free loop instances are
/// dropped.
#[derive(Debug)]
pub(crate) enum Item<'t> {
    Op(&'t OpEvent),
    Loop { loop_id: LoopId, iterations: Vec<Vec<Item<'t>>> },
}

pub(crate) fn group_events(trace: &Trace) -> Result<Vec<Item<'_>>, MalformedTrace> {
    trace.check_well_formed()?;
    fn level<'t>(events: &'t [TraceEvent], i: &mut usize) -> Vec<Item<'t>> {
        let mut out = Vec::new();
        while *i < events.len() {
            match &events[*i] {
                TraceEvent::Op(op) => {
                    out.push(Item::Op(op));
                    *i += 1;
                }
                TraceEvent::LoopEnter(l) => {
                    *i += 1;
                    let mut iterations = Vec::new();
                    while let Some(TraceEvent::LoopIterStart(_)) = events.get(*i) {
                        *i += 1;
                        iterations.push(level(events, i));
                    }
                    // well-formedness guarantees the matching LoopExit here
                    *i += 1;
                    if iterations.iter().any(|it| !it.is_empty()) {
                        out.push(Item::Loop { loop_id: *l, iterations });
                    }
                }
                TraceEvent::LoopIterStart(_) | TraceEvent::LoopExit(_) | TraceEvent::StepEnd => break,
            }
        }
        out
    }
    let mut i = 0;
    Ok(level(&trace.events, &mut i))
}

#[derive(Default)]
struct MergeHistory {
    producer: HashMap<HandleId, NodeId>,
    last: HashMap<NodeId, HandleId>,
}

impl TraceGraph {
    pub fn new() -> Self {
        let mut g = TraceGraph { nodes: Vec::new(), levels: Vec::new() };
        g.new_level(None);
        g
    }

    fn new_level(&mut self, owner: Option<NodeId>) -> LevelId {
        let level = LevelId(self.levels.len() as u32);
        let start = NodeId(self.nodes.len() as u32);
        let end = NodeId(start.0 + 1);
        for (id, kind) in [(start, NodeKind::Start), (end, NodeKind::End)] {
            self.nodes.push(Node { id, level, kind, children: Vec::new(), parents: Vec::new() });
        }
        self.levels.push(Level { start, end, owner, members: vec![start, end] });
        level
    }

    fn add_node(&mut self, level: LevelId, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, level, kind, children: Vec::new(), parents: Vec::new() });
        self.levels[level.0 as usize].members.push(id);
        id
    }

    fn add_edge(&mut self, from: NodeId, to: NodeId) {
        self.nodes[from.0 as usize].children.push(to);
        self.nodes[to.0 as usize].parents.push(from);
    }

    /// Direct construction, bypassing trace merging. The caller is
    /// responsible for the invariants; see [`TraceGraph::check_invariants`].
    pub fn add_op(&mut self, level: LevelId, op: OpNode) -> NodeId {
        self.add_node(level, NodeKind::Op(op))
    }

    /// Adds a loop node with an empty body level.
    pub fn add_loop(&mut self, level: LevelId, loop_id: LoopId, trip_counts: BTreeSet<u32>) -> (NodeId, LevelId) {
        let placeholder = LoopNode { loop_id, body: LevelId(0), trip_counts };
        let node = self.add_node(level, NodeKind::Loop(placeholder));
        let body = self.new_level(Some(node));
        if let NodeKind::Loop(l) = &mut self.nodes[node.0 as usize].kind {
            l.body = body;
        }
        (node, body)
    }

    pub fn connect(&mut self, from: NodeId, to: NodeId) {
        self.add_edge(from, to);
    }

    pub fn root(&self) -> LevelId {
        LevelId(0)
    }

    pub fn level(&self, id: LevelId) -> &Level {
        &self.levels[id.0 as usize]
    }

    pub fn levels(&self) -> impl Iterator<Item = (LevelId, &Level)> {
        self.levels.iter().enumerate().map(|(i, l)| (LevelId(i as u32), l))
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn start(&self) -> NodeId {
        self.level(self.root()).start
    }

    pub fn end(&self) -> NodeId {
        self.level(self.root()).end
    }

    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Op(_))).count()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 2 && self.nodes[0].children.is_empty()
    }

    pub(crate) fn child_matching(&self, pos: NodeId, key: &MatchKey<'_>) -> Option<(usize, NodeId)> {
        self.node(pos)
            .children
            .iter()
            .enumerate()
            .find(|(_, &c)| self.node(c).match_key().as_ref() == Some(key))
            .map(|(i, &c)| (i, c))
    }

    /// True when `to` is reachable from `from` (reflexive).
    pub fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.node(n).children.iter().copied());
            }
        }
        false
    }

    /// Merges one step's trace, extending the graph where the trace is not
    /// yet represented.
    pub fn merge_trace(&mut self, trace: &Trace) -> Result<MergeReport, MalformedTrace> {
        let items = group_events(trace)?;
        let mut report = MergeReport::default();
        let mut hist = MergeHistory::default();
        let root = self.root();
        self.merge_level(root, &items, &mut report, &mut hist)?;
        report.covered = report.nodes_added == 0 && report.edges_added == 0 && report.annotations_added == 0;
        debug_assert!(self.check_invariants().is_ok(), "{:?}", self.check_invariants());
        Ok(report)
    }

    /// Dry-run merge on a copy.
    pub fn covers(&self, trace: &Trace) -> Result<bool, MalformedTrace> {
        let mut copy = self.clone();
        Ok(copy.merge_trace(trace)?.covered)
    }

    /// Like [`TraceGraph::covers`], but a new trip count on a loop that
    /// already has several is allowed: the generated program runs such a
    /// loop as a While, so the trace stays executable without regeneration.
    pub fn runs_within(&self, trace: &Trace) -> Result<bool, MalformedTrace> {
        let mut copy = self.clone();
        let report = copy.merge_trace(trace)?;
        if report.covered {
            return Ok(true);
        }
        if report.nodes_added > 0 || report.edges_added > 0 {
            return Ok(false);
        }
        Ok(self.nodes.iter().zip(&copy.nodes).all(|(a, b)| match (&a.kind, &b.kind) {
            (NodeKind::Loop(x), NodeKind::Loop(y)) if x.constant_trip().is_none() => {
                x.loop_id == y.loop_id && x.body == y.body
            }
            _ => a == b,
        }))
    }

    fn merge_level(
        &mut self,
        level: LevelId,
        items: &[Item<'_>],
        report: &mut MergeReport,
        hist: &mut MergeHistory,
    ) -> Result<(), MalformedTrace> {
        let mut cur = self.level(level).start;
        for item in items {
            let key = match item {
                Item::Op(op) => MatchKey::Op(&op.key),
                Item::Loop { loop_id, .. } => MatchKey::Loop(*loop_id),
            };
            let next = if let Some((_, c)) = self.child_matching(cur, &key) {
                c
            } else {
                let merge_back = self.levels[level.0 as usize]
                    .members
                    .iter()
                    .copied()
                    .find(|&x| self.node(x).match_key().as_ref() == Some(&key) && !self.reaches(x, cur));
                let target = match merge_back {
                    Some(x) => x,
                    None => {
                        report.nodes_added += 1;
                        match item {
                            Item::Op(op) => self.add_node(
                                level,
                                NodeKind::Op(OpNode::new(op.key.clone())),
                            ),
                            Item::Loop { loop_id, .. } => {
                                let id = NodeId(self.nodes.len() as u32);
                                // body level is allocated right after the loop node
                                let placeholder = LoopNode { loop_id: *loop_id, body: LevelId(0), trip_counts: BTreeSet::new() };
                                let id2 = self.add_node(level, NodeKind::Loop(placeholder));
                                debug_assert_eq!(id, id2);
                                let body = self.new_level(Some(id));
                                if let NodeKind::Loop(l) = &mut self.nodes[id.0 as usize].kind {
                                    l.body = body;
                                }
                                id
                            }
                        }
                    }
                };
                self.add_edge(cur, target);
                report.edges_added += 1;
                target
            };
            match item {
                Item::Op(op) => self.annotate_op(next, op, report, hist)?,
                Item::Loop { iterations, .. } => {
                    let body = match &self.node(next).kind {
                        NodeKind::Loop(l) => l.body,
                        _ => unreachable!("loop key matched a non-loop node"),
                    };
                    for it in iterations {
                        self.merge_level(body, it, report, hist)?;
                    }
                    if let NodeKind::Loop(l) = &mut self.nodes[next.0 as usize].kind {
                        if l.trip_counts.insert(iterations.len() as u32) {
                            report.annotations_added += 1;
                        }
                    }
                }
            }
            cur = next;
        }
        let end = self.level(level).end;
        if !self.node(cur).children.contains(&end) {
            self.add_edge(cur, end);
            report.edges_added += 1;
        }
        Ok(())
    }

    fn annotate_op(
        &mut self,
        id: NodeId,
        ev: &OpEvent,
        report: &mut MergeReport,
        hist: &mut MergeHistory,
    ) -> Result<(), MalformedTrace> {
        let site = ev.key.loc.site;
        let NodeKind::Op(node) = &mut self.nodes[id.0 as usize].kind else {
            unreachable!("op key matched a non-op node")
        };
        let fresh = node.inputs.is_empty() && !ev.inputs.is_empty();
        if !fresh && node.inputs.len() != ev.inputs.len() {
            return Err(MalformedTrace(format!("{} has inconsistent input arity", ev.key)));
        }
        if fresh {
            node.shadowed = vec![BTreeSet::new(); ev.inputs.len()];
        }
        for (i, input) in ev.inputs.iter().enumerate() {
            let slot = FeedSlot { site, input: i as u8 };
            match input {
                ValueRef::External(s) => {
                    if *s != slot {
                        return Err(MalformedTrace(format!("feed slot {s} does not match {slot}")));
                    }
                    if fresh {
                        node.inputs.push(InputBinding::Feed(slot));
                    } else if matches!(node.inputs[i], InputBinding::Latest(_)) {
                        node.inputs[i] = InputBinding::Dynamic(slot);
                        report.annotations_added += 1;
                    }
                }
                ValueRef::Handle(h) => {
                    let producer = *hist
                        .producer
                        .get(h)
                        .ok_or_else(|| MalformedTrace(format!("handle {h} has no producer")))?;
                    let newer = hist.last.iter().filter(|&(_, h2)| h2 > h).map(|(&n, _)| n);
                    if fresh {
                        // an older output of a node that has run again since
                        // cannot be named statically
                        if hist.last.get(&producer) == Some(h) {
                            node.inputs.push(InputBinding::Latest(vec![producer]));
                            node.shadowed[i].extend(newer);
                        } else {
                            node.inputs.push(InputBinding::Dynamic(slot));
                        }
                        continue;
                    }
                    let replacement = match &node.inputs[i] {
                        InputBinding::Feed(_) => Some(InputBinding::Dynamic(slot)),
                        InputBinding::Dynamic(_) => None,
                        InputBinding::Latest(cands) => {
                            let mut grown = cands.clone();
                            if let Err(pos) = grown.binary_search(&producer) {
                                grown.insert(pos, producer);
                            }
                            let picked = pick_latest(&grown, |n| hist.last.get(&n).copied());
                            if picked.map(|(_, h2)| h2) != Some(*h) || node.shadowed[i].contains(&producer) {
                                Some(InputBinding::Dynamic(slot))
                            } else {
                                node.shadowed[i].extend(newer);
                                (grown.len() != cands.len()).then_some(InputBinding::Latest(grown))
                            }
                        }
                    };
                    if let Some(b) = replacement {
                        if matches!(b, InputBinding::Dynamic(_)) {
                            node.shadowed[i].clear();
                        }
                        node.inputs[i] = b;
                        report.annotations_added += 1;
                    }
                }
            }
        }
        if ev.fetch_after && !node.fetch {
            node.fetch = true;
            report.annotations_added += 1;
        }
        for h in &ev.outputs {
            hist.producer.insert(*h, id);
            hist.last.insert(id, *h);
        }
        Ok(())
    }

    /// Structural invariants: acyclic levels, unique start/end, every node
    /// on a start-to-end path, and pairwise-distinct children.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (lid, level) in self.levels() {
            for &m in &level.members {
                let n = self.node(m);
                if n.level != lid {
                    return Err(format!("{m} listed in the wrong level"));
                }
                if m == level.start && !n.parents.is_empty() {
                    return Err(format!("start {m} has parents"));
                }
                if m == level.end && !n.children.is_empty() {
                    return Err(format!("end {m} has children"));
                }
                if m != level.start && n.parents.is_empty() {
                    return Err(format!("{m} is unreachable"));
                }
                if m != level.end && n.children.is_empty() && !(m == level.start && level.members.len() == 2) {
                    return Err(format!("{m} cannot reach end"));
                }
                let keys: Vec<_> = n.children.iter().map(|&c| self.node(c).match_key()).collect();
                for (i, a) in keys.iter().enumerate() {
                    if keys[i + 1..].contains(a) {
                        return Err(format!("children of {m} are not distinct"));
                    }
                }
                for &c in &n.children {
                    if self.node(c).level != lid {
                        return Err(format!("edge {m}->{c} crosses levels"));
                    }
                }
            }
            self.topo_order(lid).ok_or_else(|| format!("level {} has a cycle", lid.0))?;
        }
        Ok(())
    }

    /// Topological order of a level's members, or `None` on a cycle.
    pub fn topo_order(&self, level: LevelId) -> Option<Vec<NodeId>> {
        let members = &self.level(level).members;
        let mut indeg: HashMap<NodeId, usize> = members.iter().map(|&m| (m, self.node(m).parents.len())).collect();
        let mut ready: Vec<NodeId> = members.iter().copied().filter(|m| indeg[m] == 0).collect();
        ready.reverse();
        let mut out = Vec::with_capacity(members.len());
        while let Some(n) = ready.pop() {
            out.push(n);
            for &c in self.node(n).children.iter().rev() {
                let d = indeg.get_mut(&c).expect("member");
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        (out.len() == members.len()).then_some(out)
    }

    /// All start-to-end paths of one level as op/loop node sequences.
    /// Stops early once `cap` paths have been collected.
    pub fn level_paths(&self, level: LevelId, cap: usize) -> Vec<Vec<NodeId>> {
        let l = self.level(level);
        let mut out = Vec::new();
        let mut path = Vec::new();
        fn dfs(g: &TraceGraph, n: NodeId, end: NodeId, path: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>, cap: usize) {
            if out.len() >= cap {
                return;
            }
            if n == end {
                out.push(path.clone());
                return;
            }
            let is_inner = g.node(n).match_key().is_some();
            if is_inner {
                path.push(n);
            }
            for &c in &g.node(n).children {
                dfs(g, c, end, path, out, cap);
            }
            if is_inner {
                path.pop();
            }
        }
        dfs(self, l.start, l.end, &mut path, &mut out, cap);
        out
    }
}
