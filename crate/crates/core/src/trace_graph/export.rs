use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::frontend::LoopId;
use crate::interp::trace::OpKey;

use super::graph::{InputBinding, Level, LevelId, LoopNode, Node, NodeId, NodeKind, OpNode, TraceGraph};

pub const JSON_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub version: u32,
    pub root: LevelJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelJson {
    pub start: NodeId,
    pub end: NodeId,
    pub nodes: Vec<NodeJson>,
    /// Parent to child, grouped by parent in level order; child order is
    /// case order.
    pub edges: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeJson {
    Start { id: NodeId },
    End { id: NodeId },
    Op {
        id: NodeId,
        key: OpKey,
        inputs: Vec<InputBinding>,
        fetch: bool,
        #[serde(default, skip_serializing_if = "super::graph::no_shadows")]
        shadowed: Vec<BTreeSet<NodeId>>,
    },
    Loop { id: NodeId, loop_id: LoopId, trip_counts: BTreeSet<u32>, body: LevelJson },
}

#[derive(Debug, thiserror::Error)]
pub enum GraphJsonError {
    #[error("unsupported graph version {0}")]
    Version(u32),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TraceGraph {
    pub fn to_json_value(&self) -> GraphJson {
        GraphJson { version: JSON_VERSION, root: self.level_json(self.root()) }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("graph serializes")
    }

    fn level_json(&self, id: LevelId) -> LevelJson {
        let level = self.level(id);
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for &m in &level.members {
            let n = self.node(m);
            nodes.push(match &n.kind {
                NodeKind::Start => NodeJson::Start { id: m },
                NodeKind::End => NodeJson::End { id: m },
                NodeKind::Op(op) => NodeJson::Op {
                    id: m,
                    key: op.key.clone(),
                    inputs: op.inputs.clone(),
                    fetch: op.fetch,
                    shadowed: op.shadowed.clone(),
                },
                NodeKind::Loop(l) => NodeJson::Loop {
                    id: m,
                    loop_id: l.loop_id,
                    trip_counts: l.trip_counts.clone(),
                    body: self.level_json(l.body),
                },
            });
            edges.extend(n.children.iter().map(|&c| (m, c)));
        }
        LevelJson { start: level.start, end: level.end, nodes, edges }
    }

    pub fn from_json(text: &str) -> Result<TraceGraph, GraphJsonError> {
        let doc: GraphJson = serde_json::from_str(text)?;
        if doc.version != JSON_VERSION {
            return Err(GraphJsonError::Version(doc.version));
        }
        let mut slots: Vec<Option<Node>> = Vec::new();
        let mut levels: Vec<Level> = Vec::new();
        fn load(
            lj: &LevelJson,
            owner: Option<NodeId>,
            slots: &mut Vec<Option<Node>>,
            levels: &mut Vec<Level>,
        ) -> Result<LevelId, GraphJsonError> {
            let lid = LevelId(levels.len() as u32);
            levels.push(Level { start: lj.start, end: lj.end, owner, members: Vec::new() });
            let mut members = Vec::new();
            for nj in &lj.nodes {
                let (id, kind) = match nj {
                    NodeJson::Start { id } => (*id, NodeKind::Start),
                    NodeJson::End { id } => (*id, NodeKind::End),
                    NodeJson::Op { id, key, inputs, fetch, shadowed } => {
                        let op = OpNode { key: key.clone(), inputs: inputs.clone(), fetch: *fetch, shadowed: shadowed.clone() };
                        (*id, NodeKind::Op(op))
                    }
                    NodeJson::Loop { id, loop_id, trip_counts, body } => {
                        let body = load(body, Some(*id), slots, levels)?;
                        (*id, NodeKind::Loop(LoopNode { loop_id: *loop_id, body, trip_counts: trip_counts.clone() }))
                    }
                };
                let i = id.0 as usize;
                if slots.len() <= i {
                    slots.resize(i + 1, None);
                }
                if slots[i].is_some() {
                    return Err(GraphJsonError::Invalid(format!("duplicate node {id}")));
                }
                slots[i] = Some(Node { id, level: lid, kind, children: Vec::new(), parents: Vec::new() });
                members.push(id);
            }
            for &(a, b) in &lj.edges {
                for n in [a, b] {
                    if !members.contains(&n) {
                        return Err(GraphJsonError::Invalid(format!("edge endpoint {n} outside its level")));
                    }
                }
                slots[a.0 as usize].as_mut().expect("member").children.push(b);
                slots[b.0 as usize].as_mut().expect("member").parents.push(a);
            }
            levels[lid.0 as usize].members = members;
            Ok(lid)
        }
        load(&doc.root, None, &mut slots, &mut levels)?;
        let nodes = slots
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or_else(|| GraphJsonError::Invalid(format!("missing node n{i}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let g = TraceGraph { nodes, levels };
        g.check_invariants().map_err(GraphJsonError::Invalid)?;
        Ok(g)
    }

    /// Graphviz rendering. Loop bodies are clusters attached to their loop
    /// node by a dashed edge.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph tracegraph {\n  node [shape=box, fontname=\"monospace\"];\n");
        self.dot_level(self.root(), 1, &mut s);
        s.push_str("}\n");
        s
    }

    fn dot_level(&self, id: LevelId, depth: usize, s: &mut String) {
        let pad = "  ".repeat(depth);
        let level = self.level(id);
        for &m in &level.members {
            let n = self.node(m);
            let (label, shape) = match &n.kind {
                NodeKind::Start => ("Start".to_string(), "oval"),
                NodeKind::End => ("End".to_string(), "oval"),
                NodeKind::Op(op) => (op_label(op), "box"),
                NodeKind::Loop(l) => {
                    let trips: Vec<String> = l.trip_counts.iter().map(|t| t.to_string()).collect();
                    (format!("Loop {}\\ntrips {{{}}}", l.loop_id, trips.join(",")), "box3d")
                }
            };
            let _ = writeln!(s, "{pad}{m} [label=\"{m}: {label}\", shape={shape}];");
        }
        for &m in &level.members {
            for &c in &self.node(m).children {
                let _ = writeln!(s, "{pad}{m} -> {c};");
            }
        }
        for &m in &level.members {
            if let NodeKind::Loop(l) = &self.node(m).kind {
                let _ = writeln!(s, "{pad}subgraph cluster_{m} {{");
                let _ = writeln!(s, "{pad}  label=\"body of {} ({m})\";", l.loop_id);
                self.dot_level(l.body, depth + 1, s);
                let _ = writeln!(s, "{pad}}}");
                let _ = writeln!(s, "{pad}{m} -> {} [style=dashed];", self.level(l.body).start);
            }
        }
    }
}

fn op_label(op: &OpNode) -> String {
    let mut label = format!("{}", op.key).replace('"', "\\\"");
    let feeds: Vec<String> = op
        .inputs
        .iter()
        .filter_map(|b| match b {
            InputBinding::Feed(s) => Some(format!("{s}")),
            InputBinding::Dynamic(s) => Some(format!("{s}?")),
            InputBinding::Latest(_) => None,
        })
        .collect();
    if !feeds.is_empty() {
        let _ = write!(label, "\\nfeed {}", feeds.join(","));
    }
    if op.fetch {
        label.push_str("\\nfetch");
    }
    label
}
