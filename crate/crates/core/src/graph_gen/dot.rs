use std::fmt::Write;

use super::{SymInst, SymProgram};

struct Renderer {
    out: String,
    next: usize,
    clusters: usize,
}

impl Renderer {
    fn id(&mut self) -> String {
        self.next += 1;
        format!("i{}", self.next)
    }

    fn node(&mut self, depth: usize, label: &str, shape: &str) -> String {
        let id = self.id();
        let _ = writeln!(self.out, "{}{id} [label=\"{label}\", shape={shape}];", "  ".repeat(depth));
        id
    }

    fn edge(&mut self, depth: usize, a: &str, b: &str) {
        let _ = writeln!(self.out, "{}{a} -> {b};", "  ".repeat(depth));
    }

    fn open(&mut self, depth: usize, label: &str) {
        self.clusters += 1;
        let pad = "  ".repeat(depth);
        let _ = writeln!(self.out, "{pad}subgraph cluster_{} {{\n{pad}  label=\"{label}\";", self.clusters);
    }

    fn close(&mut self, depth: usize) {
        let _ = writeln!(self.out, "{}}}", "  ".repeat(depth));
    }

    /// Renders a sequence, chaining from `prev`; returns the last node.
    fn seq(&mut self, sp: &SymProgram, depth: usize, mut prev: Option<String>) -> Option<String> {
        for inst in &sp.body {
            let last = match inst {
                SymInst::ExecOp { node, kind, attrs, .. } => {
                    let label = if attrs.is_empty() {
                        format!("{node}: {kind}")
                    } else {
                        format!("{node}: {kind}{{{attrs}}}").replace('"', "\\\"")
                    };
                    self.node(depth, &label, "box")
                }
                SymInst::InputFeed { slot } => self.node(depth, &format!("InputFeed {slot}"), "invhouse"),
                SymInst::OutputFetch { node } => self.node(depth, &format!("OutputFetch {node}"), "house"),
                SymInst::SwitchCase { branch, cases } => {
                    self.open(depth, &format!("SwitchCase {branch}"));
                    let head = self.node(depth + 1, &format!("CaseSelect {branch}"), "diamond");
                    let join = self.id();
                    for (i, c) in cases.iter().enumerate() {
                        self.open(depth + 1, &format!("case {i}"));
                        let tail = self.seq(c, depth + 2, Some(head.clone()));
                        self.close(depth + 1);
                        self.edge(depth + 1, tail.as_deref().unwrap_or(&head), &join);
                    }
                    let _ = writeln!(self.out, "{}{join} [label=\"merge\", shape=point];", "  ".repeat(depth + 1));
                    self.close(depth);
                    if let Some(p) = &prev {
                        self.edge(depth, p, &head);
                    }
                    prev = Some(join);
                    continue;
                }
                SymInst::While { loop_id, node, body } => {
                    self.open(depth, &format!("While {loop_id} ({node})"));
                    let cond = self.node(depth + 1, &format!("LoopCond {loop_id}"), "diamond");
                    let tail = self.seq(body, depth + 1, Some(cond.clone()));
                    if let Some(t) = tail {
                        let _ = writeln!(self.out, "{}{t} -> {cond} [style=dashed];", "  ".repeat(depth + 1));
                    }
                    self.close(depth);
                    if let Some(p) = &prev {
                        self.edge(depth, p, &cond);
                    }
                    prev = Some(cond);
                    continue;
                }
                SymInst::UnrolledLoop { loop_id, node, bodies } => {
                    let mut last = prev.clone();
                    for (i, b) in bodies.iter().enumerate() {
                        self.open(depth, &format!("{loop_id} ({node}) copy {i}"));
                        last = self.seq(b, depth + 1, last);
                        self.close(depth);
                    }
                    prev = last;
                    continue;
                }
            };
            if let Some(p) = &prev {
                self.edge(depth, p, &last);
            }
            prev = Some(last);
        }
        prev
    }
}

pub(super) fn render(sp: &SymProgram) -> String {
    let mut r = Renderer { out: String::new(), next: 0, clusters: 0 };
    r.out.push_str("digraph symprogram {\n  node [fontname=\"monospace\"];\n");
    r.seq(sp, 1, None);
    r.out.push_str("}\n");
    r.out
}
