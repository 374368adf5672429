//! Seeded generators for property sweeps: families of traces drawn from a
//! random program shape, random single-entry/single-exit DAGs, and random
//! source programs in a bounded grammar.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::frontend::{LoopId, SiteId, SourceLoc};
use crate::interp::{FeedSlot, HandleId, Trace, TraceEvent, TraceRecorder, ValueRef, XorShift64Star};
use crate::tensor::{AttrValue, Attrs, OpKind};
use crate::trace_graph::{NodeId, OpNode, TraceGraph};

struct Rng(XorShift64Star);

impl Rng {
    fn new(seed: u64) -> Self {
        Rng(XorShift64Star::new(seed ^ 0x5DEE_CE66_D1CE_4E5B))
    }

    fn below(&mut self, n: usize) -> usize {
        (self.0.next_f64() * n as f64) as usize
    }

    fn chance(&mut self, p: f64) -> bool {
        self.0.next_f64() < p
    }

    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}

enum Shape {
    Op { site: SiteId, kind: OpKind },
    Choice(Vec<Vec<Shape>>),
    Loop { id: LoopId, trips: Option<u32>, body: Vec<Shape> },
}

struct ShapeGen {
    rng: Rng,
    sites: u32,
    loops: u32,
}

const TRACE_KINDS: [OpKind; 5] = [OpKind::Add, OpKind::Relu, OpKind::Neg, OpKind::Sigmoid, OpKind::MatMul];

impl ShapeGen {
    fn block(&mut self, depth: u32) -> Vec<Shape> {
        let n = 1 + self.rng.below(4);
        (0..n).map(|_| self.item(depth)).collect()
    }

    fn item(&mut self, depth: u32) -> Shape {
        let roll = self.rng.below(10);
        if depth < 2 && roll < 2 {
            let alts = 2 + self.rng.below(2);
            let mut out = Vec::new();
            for _ in 0..alts {
                // an empty alternative skips the whole choice
                out.push(if self.rng.chance(0.2) { Vec::new() } else { self.block(depth + 1) });
            }
            return Shape::Choice(out);
        }
        if depth < 2 && roll < 4 {
            let id = LoopId(self.loops);
            self.loops += 1;
            let trips = self.rng.chance(0.5).then(|| 1 + self.rng.below(3) as u32);
            return Shape::Loop { id, trips, body: self.block(depth + 1) };
        }
        let site = SiteId(self.sites);
        self.sites += 1;
        Shape::Op { site, kind: *self.rng.pick(&TRACE_KINDS) }
    }
}

struct Walker<'r> {
    rng: &'r mut Rng,
    rec: TraceRecorder,
    produced: Vec<HandleId>,
    loop_path: Vec<LoopId>,
}

impl Walker<'_> {
    fn block(&mut self, items: &[Shape]) {
        for it in items {
            match it {
                Shape::Op { site, kind } => {
                    let inputs = (0..kind.arity())
                        .map(|i| {
                            if !self.produced.is_empty() && self.rng.chance(0.7) {
                                // mostly recent values, sometimes older ones
                                let back = self.rng.below(self.produced.len().min(3));
                                ValueRef::Handle(self.produced[self.produced.len() - 1 - back])
                            } else {
                                ValueRef::External(FeedSlot { site: *site, input: i as u8 })
                            }
                        })
                        .collect();
                    let h = HandleId(self.produced.len() as u32);
                    let loc = SourceLoc { site: *site, loop_path: self.loop_path.clone() };
                    self.rec.op(*kind, Attrs::new(), loc, inputs, vec![h]);
                    self.produced.push(h);
                    if self.rng.chance(0.15) {
                        self.rec.mark_fetched(h);
                    }
                }
                Shape::Choice(alts) => {
                    let alt = self.rng.below(alts.len());
                    self.block(&alts[alt]);
                }
                Shape::Loop { id, trips, body } => {
                    let n = trips.unwrap_or_else(|| self.rng.below(4) as u32);
                    self.rec.marker(TraceEvent::LoopEnter(*id));
                    self.loop_path.push(*id);
                    for _ in 0..n {
                        self.rec.marker(TraceEvent::LoopIterStart(*id));
                        self.block(body);
                    }
                    self.loop_path.pop();
                    self.rec.marker(TraceEvent::LoopExit(*id));
                }
            }
        }
    }
}

/// `count` well-formed traces of one random program shape: shared sites and
/// loops, per-trace branch choices, trip counts, bindings and fetches.
pub fn trace_family(seed: u64, count: usize) -> Vec<Trace> {
    let mut g = ShapeGen { rng: Rng::new(seed), sites: 0, loops: 0 };
    let shape = g.block(0);
    let mut rng = g.rng;
    (0..count)
        .map(|_| {
            let mut w = Walker { rng: &mut rng, rec: TraceRecorder::default(), produced: Vec::new(), loop_path: Vec::new() };
            w.block(&shape);
            w.rec.finish()
        })
        .collect()
}

/// A random single-entry/single-exit DAG of `1..=max_ops` key-distinct op
/// nodes with out-degree at most `max_out`.
pub fn random_dag(seed: u64, max_ops: usize, max_out: usize) -> TraceGraph {
    let mut rng = Rng::new(seed);
    let n = 1 + rng.below(max_ops);
    let mut g = TraceGraph::new();
    let root = g.root();
    let (start, end) = (g.start(), g.end());
    let nodes: Vec<NodeId> = (0..n)
        .map(|i| {
            let attrs = Attrs::new().with("shape", AttrValue::Shape(vec![])).with("value", AttrValue::Float(i as f64));
            let key = crate::interp::OpKey {
                kind: OpKind::Fill,
                attrs,
                loc: SourceLoc { site: SiteId(i as u32), loop_path: Vec::new() },
            };
            g.add_op(root, OpNode::new(key))
        })
        .collect();
    // nodes are in topological order; index n stands for End
    let mut children: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut start_children = BTreeSet::from([0usize]);
    for i in 1..n {
        let open: Vec<usize> = (0..i).filter(|&p| children[p].len() < max_out).collect();
        if open.is_empty() || rng.chance(0.15) {
            start_children.insert(i);
        } else {
            let p = *rng.pick(&open);
            children[p].insert(i);
        }
    }
    for (i, kids) in children.iter_mut().enumerate() {
        let extra = rng.below(max_out);
        for _ in 0..extra {
            if kids.len() >= max_out {
                break;
            }
            kids.insert(i + 1 + rng.below(n - i));
        }
        if kids.is_empty() {
            kids.insert(n);
        }
    }
    let target = |c: usize| if c == n { end } else { nodes[c] };
    for c in start_children {
        g.connect(start, target(c));
    }
    for (i, cs) in children.iter().enumerate() {
        for &c in cs {
            g.connect(nodes[i], target(c));
        }
    }
    g
}

/// A random program in a bounded grammar: tensor updates, coin and
/// data-dependent branches, fixed and variable loops, variable mutation,
/// host scalars fed back into the graph, and prints.
pub fn random_program(seed: u64) -> String {
    let mut p = ProgramGen { rng: Rng::new(seed), out: String::new(), indent: 1, draws: 0 };
    p.out.push_str("var v = fill([2, 2], 0.5)\n");
    let steps = 8 + p.rng.below(8);
    let _ = writeln!(p.out, "steps {steps} {{");
    p.line("let x = input(\"x\", [2, 2])");
    let n = 2 + p.rng.below(4);
    for _ in 0..n {
        p.stmt(0);
    }
    p.line("print(item(mean(x)))");
    p.out.push_str("}\n");
    p.out
}

struct ProgramGen {
    rng: Rng,
    out: String,
    indent: usize,
    draws: u32,
}

impl ProgramGen {
    fn line(&mut self, s: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn draw(&mut self) -> u32 {
        self.draws += 1;
        self.draws
    }

    fn block(&mut self, depth: u32) {
        self.indent += 1;
        for _ in 0..1 + self.rng.below(2) {
            self.stmt(depth + 1);
        }
        self.indent -= 1;
    }

    fn stmt(&mut self, depth: u32) {
        let roll = if depth >= 2 { self.rng.below(5) } else { self.rng.below(10) };
        match roll {
            0 => {
                let op = *self.rng.pick(&["relu", "neg", "sigmoid"]);
                self.line(&format!("x = {op}(x)"));
            }
            1 => {
                let op = *self.rng.pick(&["add", "sub", "mul"]);
                let c = *self.rng.pick(&["0.5", "-0.25", "1.5", "v"]);
                self.line(&format!("x = {op}(x, {c})"));
            }
            2 => self.line("x = sigmoid(matmul(x, v))"),
            3 => self.line("v = sigmoid(add(v, mul(x, 0.1)))"),
            4 => {
                let c = self.rng.below(3);
                match c {
                    0 => self.line("print(item(sum(x)))"),
                    1 => self.line("print(x)"),
                    _ => {
                        self.line("let s = item(mean(x))");
                        self.line("x = sigmoid(add(x, s))");
                    }
                }
            }
            5 | 6 => {
                let cond = match self.rng.below(3) {
                    0 => format!("native coin({})", self.draw()),
                    1 => "item(sum(x)) > 0".to_string(),
                    _ => format!("native choice(3, {}) == 0", self.draw()),
                };
                self.line(&format!("if {cond} {{"));
                self.block(depth);
                if self.rng.chance(0.6) {
                    self.line("} else {");
                    self.block(depth);
                }
                self.line("}");
            }
            7 => {
                let count = if self.rng.chance(0.5) {
                    format!("{}", 1 + self.rng.below(3))
                } else {
                    format!("native choice(3, {})", self.draw())
                };
                self.line(&format!("for i in range({count}) {{"));
                self.block(depth);
                self.line("}");
            }
            8 => {
                let k = format!("k{}", self.draw());
                let limit = format!("native choice(3, {})", self.draw());
                self.line(&format!("let {k} = 0"));
                self.line(&format!("while {k} < {limit} {{"));
                self.block(depth);
                self.indent += 1;
                self.line(&format!("{k} = {k} + 1"));
                self.indent -= 1;
                self.line("}");
            }
            _ => {
                self.line("if native step() > 2 {");
                self.block(depth);
                self.line("}");
            }
        }
    }
}
