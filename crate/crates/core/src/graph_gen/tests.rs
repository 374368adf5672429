use std::collections::{BTreeSet, VecDeque};

use proptest::prelude::*;

use super::*;
use crate::coexec::{collect_traces, RunConfig};
use crate::frontend::{SiteId, SourceLoc};
use crate::fuzz::{random_dag, trace_family};
use crate::graph_runner::Decision;
use crate::interp::{OpKey, Trace};
use crate::tensor::AttrValue;
use crate::testutil::{corpus, corpus_graph, corpus_traces, golden};
use crate::trace_graph::{Advance, Cursor, OpNode};

fn op(g: &mut TraceGraph, i: u32) -> NodeId {
    let key = OpKey {
        kind: OpKind::Fill,
        attrs: Attrs::new().with("shape", AttrValue::Shape(vec![])).with("value", AttrValue::Float(i as f64)),
        loc: SourceLoc { site: SiteId(i), loop_path: Vec::new() },
    };
    let root = g.root();
    g.add_op(root, OpNode::new(key))
}

fn chain(n: u32) -> (TraceGraph, Vec<NodeId>) {
    let mut g = TraceGraph::new();
    let ids: Vec<NodeId> = (0..n).map(|i| op(&mut g, i)).collect();
    let mut prev = g.start();
    for &id in &ids {
        g.connect(prev, id);
        prev = id;
    }
    g.connect(prev, g.end());
    (g, ids)
}

/// Start→{a,b}, a→x, b→x, x→End: the shared node is the join itself.
fn join_dag() -> (TraceGraph, [NodeId; 3]) {
    let mut g = TraceGraph::new();
    let (a, b, x) = (op(&mut g, 0), op(&mut g, 1), op(&mut g, 2));
    let (s, e) = (g.start(), g.end());
    for (p, c) in [(s, a), (s, b), (a, x), (b, x), (x, e)] {
        g.connect(p, c);
    }
    (g, [a, b, x])
}

/// As [`join_dag`], but b may also skip x, so x sits below the branch and
/// above its post-dominator (End).
fn duplication_dag() -> (TraceGraph, [NodeId; 3]) {
    let (mut g, [a, b, x]) = join_dag();
    let e = g.end();
    g.connect(b, e);
    (g, [a, b, x])
}

/// Every Start→End node sequence, by plain depth-first search over the
/// child lists. Loop-free graphs only.
fn brute_paths(g: &TraceGraph) -> BTreeSet<Vec<NodeId>> {
    fn dfs(g: &TraceGraph, n: NodeId, path: &mut Vec<NodeId>, out: &mut BTreeSet<Vec<NodeId>>) {
        if n == g.end() {
            out.insert(path.clone());
            return;
        }
        for &c in &g.node(n).children {
            let is_op = c != g.end();
            if is_op {
                path.push(c);
            }
            dfs(g, c, path, out);
            if is_op {
                path.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    dfs(g, g.start(), &mut Vec::new(), &mut out);
    out
}

fn gen(g: &TraceGraph) -> SymProgram {
    structure(g, &GenConfig::default()).unwrap().0
}

#[test]
fn chain_post_dominators() {
    let (g, ids) = chain(3);
    let ipdom = post_dominators(&g);
    assert_eq!(ipdom[&ids[0]], ids[1]);
    assert_eq!(ipdom[&ids[1]], ids[2]);
    assert_eq!(ipdom[&ids[2]], g.end());
    assert!(!ipdom.contains_key(&g.end()));
}

#[test]
fn diamond_post_dominator() {
    let mut g = TraceGraph::new();
    let (a, b, m) = (op(&mut g, 0), op(&mut g, 1), op(&mut g, 2));
    let (s, e) = (g.start(), g.end());
    for (p, c) in [(s, a), (s, b), (a, m), (b, m), (m, e)] {
        g.connect(p, c);
    }
    assert_eq!(post_dominators(&g)[&s], m);
}

#[test]
fn two_paths_post_dominator_is_the_merge_point() {
    let g = corpus_graph("two_paths");
    let start = g.node(g.start());
    let sig = g.node(start.children[1]).children[0];
    assert_eq!(g.node(sig).as_op().unwrap().key.kind, OpKind::Sigmoid);
    assert_eq!(post_dominators(&g)[&g.start()], sig);
}

#[test]
fn chain_has_no_control_flow() {
    let (g, ids) = chain(3);
    let sp = gen(&g);
    assert_eq!((sp.switches(), sp.whiles(), sp.exec_ops()), (0, 0, 3));
    let lang = path_language(&sp, 4, 1000).unwrap();
    assert_eq!(lang, BTreeSet::from([ids]));
}

#[test]
fn symbolic_program_shape() {
    let g = corpus_graph("two_paths");
    let (sp, cases) = structure(&g, &GenConfig::default()).unwrap();
    let kinds = |p: &SymProgram| -> Vec<String> {
        p.body
            .iter()
            .map(|i| match i {
                SymInst::ExecOp { kind, .. } => kind.name().to_string(),
                SymInst::InputFeed { .. } => "feed".into(),
                SymInst::OutputFetch { .. } => "fetch".into(),
                SymInst::SwitchCase { .. } => "switch".into(),
                SymInst::While { .. } => "while".into(),
                SymInst::UnrolledLoop { .. } => "unrolled".into(),
            })
            .collect()
    };
    assert_eq!(kinds(&sp), ["switch", "Sigmoid", "fetch", "while"]);
    let SymInst::SwitchCase { branch, cases: arms } = &sp.body[0] else { unreachable!() };
    assert_eq!(*branch, g.start());
    // the first arm reads the dataset tensor and the prologue scalar
    assert_eq!(kinds(&arms[0]), ["feed", "feed", "Add", "Relu"]);
    assert_eq!(kinds(&arms[1]), ["feed", "Relu"]);
    let SymInst::While { body, .. } = &sp.body[3] else { unreachable!() };
    assert_eq!(kinds(body), ["Neg"]);
    assert_eq!(cases[&g.start()].values().copied().collect::<Vec<_>>(), vec![0, 1]);
    golden("two_paths_symgraph.dot", &symprog_to_dot(&sp));
}

#[test]
fn empty_program_dot() {
    let dot = symprog_to_dot(&SymProgram::default());
    assert!(!dot.contains("->") && !dot.contains("label="), "{dot}");
}

#[test]
fn unrolled_loop_dot_has_sibling_clusters() {
    // the trip count is constant for the first ten steps
    let p = corpus("unroll_const");
    let g = collect_traces(&p, &RunConfig::default(), 10).unwrap();
    let sp = gen(&g);
    assert_eq!(sp.whiles(), 0);
    let k = sp.count(&|i| matches!(i, SymInst::UnrolledLoop { .. }));
    assert_eq!(k, 1);
    let SymInst::UnrolledLoop { bodies, .. } = sp.body.iter().find(|i| matches!(i, SymInst::UnrolledLoop { .. })).unwrap()
    else {
        unreachable!()
    };
    let dot = symprog_to_dot(&sp);
    assert_eq!(bodies.len(), 2);
    assert_eq!(dot.matches("subgraph cluster_").count(), bodies.len());
}

#[test]
fn variable_loop_is_a_while() {
    let sp = gen(&corpus_graph("unroll_var"));
    assert_eq!(sp.whiles(), 1);
}

#[test]
fn shared_join_is_not_duplicated() {
    let (g, [a, b, x]) = join_dag();
    let sp = gen(&g);
    assert_eq!(sp.switches(), 1);
    assert_eq!(sp.count(&|i| matches!(i, SymInst::ExecOp { node, .. } if *node == x)), 1);
    let lang = path_language(&sp, 0, 100).unwrap();
    assert_eq!(lang, BTreeSet::from([vec![a, x], vec![b, x]]));
    assert_eq!(lang, brute_paths(&g));
}

#[test]
fn tail_is_duplicated() {
    let (g, [a, b, x]) = duplication_dag();
    let sp = gen(&g);
    assert_eq!(post_dominators(&g)[&g.start()], g.end());
    assert_eq!(sp.count(&|i| matches!(i, SymInst::ExecOp { node, .. } if *node == x)), 2);
    let lang = path_language(&sp, 0, 100).unwrap();
    assert_eq!(lang, BTreeSet::from([vec![a, x], vec![b], vec![b, x]]));
    assert_eq!(lang, brute_paths(&g));
}

#[test]
fn two_way_switch_has_two_sequences() {
    let mut g = TraceGraph::new();
    let (a, b) = (op(&mut g, 0), op(&mut g, 1));
    let (s, e) = (g.start(), g.end());
    for (p, c) in [(s, a), (s, b), (a, e), (b, e)] {
        g.connect(p, c);
    }
    assert_eq!(path_language(&gen(&g), 0, 100).unwrap().len(), 2);
}

#[test]
fn budget_is_enforced() {
    let g = corpus_graph("straight_line_heavy");
    let n = g.op_count();
    assert!(structure(&g, &GenConfig { max_ops: n }).is_ok());
    assert_eq!(structure(&g, &GenConfig { max_ops: n - 1 }).unwrap_err(), GenError::BudgetExceeded(n - 1));
}

#[test]
fn random_dags_keep_their_path_language() {
    let mut mismatches = 0;
    for seed in 0..1000 {
        let g = random_dag(seed, 10, 3);
        let sp = gen(&g);
        if path_language(&sp, 0, 100_000).unwrap() != brute_paths(&g) {
            mismatches += 1;
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn corpus_graphs_keep_their_path_language() {
    for name in ["two_paths", "coin_branch", "nested_loops", "divergence_storm", "unroll_var", "stochastic_depth"] {
        let g = corpus_graph(name);
        let sp = gen(&g);
        assert!(level_paths_equal(&g, &sp, 100_000).unwrap(), "{name}");
        assert_eq!(path_language(&sp, 3, 100_000).unwrap(), graph_path_language(&g, 3, 100_000).unwrap(), "{name}");
    }
}

/// Runs `sp` sequentially, taking branches and loop exits from the decision
/// queue, and returns the op nodes visited.
fn simulate(sp: &SymProgram, ds: &mut VecDeque<Decision>, out: &mut Vec<NodeId>) {
    for inst in &sp.body {
        match inst {
            SymInst::ExecOp { node, .. } => out.push(*node),
            SymInst::InputFeed { .. } | SymInst::OutputFetch { .. } => {}
            SymInst::SwitchCase { branch, cases } => match ds.pop_front() {
                Some(Decision::Case { branch: b, case_index }) if b == *branch => {
                    simulate(&cases[case_index as usize], ds, out)
                }
                other => panic!("expected a case decision for {branch}, got {other:?}"),
            },
            SymInst::While { loop_id, body, .. } => loop {
                match ds.pop_front() {
                    Some(Decision::Loop { loop_id: l, cont: true }) if l == *loop_id => simulate(body, ds, out),
                    Some(Decision::Loop { loop_id: l, cont: false }) if l == *loop_id => break,
                    other => panic!("expected a loop decision for {loop_id}, got {other:?}"),
                }
            },
            SymInst::UnrolledLoop { bodies, .. } => bodies.iter().for_each(|b| simulate(b, ds, out)),
        }
    }
}

fn aligned(g: &TraceGraph, sp: &SymProgram, t: &Trace) {
    let mut c = Cursor::new(g);
    let mut ds = VecDeque::new();
    let mut visited = Vec::new();
    for ev in &t.events {
        match c.advance(ev) {
            Advance::Matched { node, decisions } => {
                visited.extend(node);
                ds.extend(decisions.into_iter().filter(|d| !matches!(d, Decision::Bind { .. })));
            }
            Advance::Diverged(msg) => panic!("covered trace diverged: {msg}"),
        }
    }
    let mut ran = Vec::new();
    simulate(sp, &mut ds, &mut ran);
    assert!(ds.is_empty(), "unused decisions {ds:?}");
    assert_eq!(ran, visited);
}

#[test]
fn corpus_decisions_align() {
    for name in ["two_paths", "coin_branch", "nested_loops", "variable_while", "divergence_storm"] {
        let ts = corpus_traces(name, 0);
        let mut g = TraceGraph::new();
        for t in &ts {
            g.merge_trace(t).unwrap();
        }
        let sp = gen(&g);
        for t in &ts {
            aligned(&g, &sp, t);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decisions_align_with_the_structured_program(seed in any::<u64>(), n in 1usize..5) {
        let family = trace_family(seed, n);
        let mut g = TraceGraph::new();
        for t in &family {
            g.merge_trace(t).unwrap();
        }
        let sp = gen(&g);
        prop_assert_eq!(&sp, &gen(&g.clone()));
        for t in &family {
            aligned(&g, &sp, t);
        }
    }

    #[test]
    fn feeds_and_fetches_once_per_instance(seed in any::<u64>()) {
        let family = trace_family(seed, 3);
        let mut g = TraceGraph::new();
        for t in &family {
            g.merge_trace(t).unwrap();
        }
        let sp = gen(&g);
        // per instruction list: each ExecOp is preceded by exactly its feeds
        // and followed by exactly one fetch when flagged
        fn check(g: &TraceGraph, sp: &SymProgram) -> Result<(), TestCaseError> {
            for (i, inst) in sp.body.iter().enumerate() {
                match inst {
                    SymInst::ExecOp { node, inputs, .. } => {
                        let feeds = inputs.iter().filter(|b| matches!(b, InputBinding::Feed(_))).count();
                        let before = sp.body[..i].iter().rev().take_while(|x| matches!(x, SymInst::InputFeed { .. })).count();
                        prop_assert_eq!(before.min(feeds), feeds);
                        let fetched = matches!(sp.body.get(i + 1), Some(SymInst::OutputFetch { node: n }) if n == node);
                        prop_assert_eq!(fetched, g.node(*node).as_op().unwrap().fetch);
                    }
                    SymInst::SwitchCase { cases, .. } => cases.iter().try_for_each(|c| check(g, c))?,
                    SymInst::While { body, .. } => check(g, body)?,
                    SymInst::UnrolledLoop { bodies, .. } => bodies.iter().try_for_each(|b| check(g, b))?,
                    _ => {}
                }
            }
            Ok(())
        }
        check(&g, &sp)?;
    }
}
