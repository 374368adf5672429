use proptest::prelude::*;

use super::*;
use crate::frontend::SiteId;
use crate::fuzz::trace_family;
use crate::graph_runner::Decision;
use crate::interp::{HandleId, Trace, TraceEvent};
use crate::tensor::OpKind;
use crate::testutil::{corpus_graph, corpus_traces, golden};

fn merged(traces: &[Trace]) -> TraceGraph {
    let mut g = TraceGraph::new();
    for t in traces {
        g.merge_trace(t).unwrap();
        g.check_invariants().unwrap();
    }
    g
}

/// Walks a cursor over the whole trace, returning its decisions.
fn walk(g: &TraceGraph, t: &Trace) -> Result<Vec<Decision>, String> {
    let mut c = Cursor::new(g);
    let mut out = Vec::new();
    for ev in &t.events {
        match c.advance(ev) {
            Advance::Matched { decisions, .. } => out.extend(decisions),
            Advance::Diverged(msg) => return Err(msg),
        }
    }
    assert!(c.is_finished());
    Ok(out)
}

fn control(ds: Vec<Decision>) -> Vec<Decision> {
    ds.into_iter().filter(|d| !matches!(d, Decision::Bind { .. })).collect()
}

fn op_kind(g: &TraceGraph, n: NodeId) -> Option<OpKind> {
    g.node(n).as_op().map(|op| op.key.kind)
}

fn site(g: &TraceGraph, n: NodeId) -> SiteId {
    g.node(n).as_op().unwrap().key.loc.site
}

#[test]
fn two_paths_merged_shape() {
    let g = merged(&corpus_traces("two_paths", 0));
    let root = g.level(g.root());
    let start = g.node(root.start);
    assert_eq!(start.children.len(), 2);
    let (a, b) = (start.children[0], start.children[1]);
    // true path: Add then Relu; false path: a Relu at another location
    assert_eq!(op_kind(&g, a), Some(OpKind::Add));
    let relu_then = g.node(a).children[0];
    assert_eq!(g.node(a).children.len(), 1);
    assert_eq!(op_kind(&g, relu_then), Some(OpKind::Relu));
    assert_eq!(op_kind(&g, b), Some(OpKind::Relu));
    assert_ne!(site(&g, relu_then), site(&g, b));
    // both branches merge back at the sigmoid
    let sig = g.node(b).children[0];
    assert_eq!(g.node(relu_then).children, vec![sig]);
    assert_eq!(g.node(b).children, vec![sig]);
    assert_eq!(op_kind(&g, sig), Some(OpKind::Sigmoid));
    assert!(g.node(sig).as_op().unwrap().fetch);
    // then one loop whose body is a single neg
    let lp = g.node(sig).children[0];
    let l = g.node(lp).as_loop().expect("loop node after sigmoid");
    assert_eq!(l.trip_counts.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
    assert_eq!(g.node(lp).children, vec![root.end]);
    let body = g.level(l.body);
    assert_eq!(body.members.len(), 3);
    let neg = g.node(body.start).children[0];
    assert_eq!(op_kind(&g, neg), Some(OpKind::Neg));
    assert_eq!(g.node(neg).children, vec![body.end]);
    assert_eq!(g.op_count(), 5);
}

#[test]
fn two_paths_golden_json_and_round_trip() {
    let g = merged(&corpus_traces("two_paths", 0));
    let json = g.to_json();
    golden("two_paths_tracegraph.json", &json);
    let back = TraceGraph::from_json(&json).unwrap();
    assert_eq!(back, g);
    assert_eq!(corpus_graph("two_paths"), g);
}

#[test]
fn two_paths_golden_dot() {
    let g = merged(&corpus_traces("two_paths", 0));
    let dot = g.to_dot();
    assert_eq!(dot.matches("subgraph cluster_").count(), 1);
    golden("two_paths_tracegraph.dot", &dot);
}

#[test]
fn empty_graph_dot() {
    let dot = TraceGraph::new().to_dot();
    assert!(dot.contains("Start") && dot.contains("End"));
    assert!(!dot.contains("shape=box]"));
    assert!(!dot.contains("subgraph"));
}

#[test]
fn nested_loops_nest_clusters() {
    let dot = corpus_graph("nested_loops").to_dot();
    let outer = dot.find("subgraph cluster_").unwrap();
    let inner = dot[outer + 1..].find("subgraph cluster_").unwrap();
    // the inner cluster opens before the outer one closes
    let close = dot[outer..].find("\n  }\n").unwrap();
    assert!(inner + 1 < close, "{dot}");
}

#[test]
fn first_merge_is_a_chain() {
    let t = &corpus_traces("straight_line_heavy", 0)[0];
    let mut g = TraceGraph::new();
    let r = g.merge_trace(t).unwrap();
    assert!(!r.covered);
    assert_eq!(r.nodes_added, t.op_events().count());
    assert!(g.nodes().iter().all(|n| n.children.len() <= 1));
    let again = g.merge_trace(t).unwrap();
    assert!(again.covered);
    assert_eq!((again.nodes_added, again.edges_added, again.annotations_added), (0, 0, 0));
}

#[test]
fn covers_examples() {
    let ts = corpus_traces("two_paths", 0);
    let g = merged(&ts);
    assert!(g.covers(&ts[0]).unwrap() && g.covers(&ts[1]).unwrap());

    // one extra op
    let mut extra = ts[1].clone();
    let end = extra.events.len() - 1;
    let mut dup = extra.op_events().last().unwrap().clone();
    dup.outputs = vec![HandleId(1000)];
    extra.events.insert(end, TraceEvent::Op(dup));
    assert!(!g.covers(&extra).unwrap());

    // trace 0 differs from trace 1 in a trip count the graph already knows,
    // and is not covered by a graph that has only seen trace 1
    let only_false = merged(&ts[1..]);
    assert!(!only_false.covers(&ts[0]).unwrap());
    let g2 = merged(&[ts[0].clone(), ts[1].clone(), ts[0].clone()]);
    assert_eq!(g2, g);
}

#[test]
fn cursor_follows_the_second_path() {
    let ts = corpus_traces("two_paths", 0);
    let g = merged(&ts);
    let start = g.level(g.root()).start;
    let ds = control(walk(&g, &ts[1]).unwrap());
    let lp = g.nodes().iter().find_map(|n| n.as_loop()).unwrap().loop_id;
    assert_eq!(
        ds,
        vec![
            Decision::Case { branch: start, case_index: 1 },
            Decision::Loop { loop_id: lp, cont: true },
            Decision::Loop { loop_id: lp, cont: false },
        ]
    );
    let ds = control(walk(&g, &ts[0]).unwrap());
    assert_eq!(ds[0], Decision::Case { branch: start, case_index: 0 });
    assert_eq!(ds.len(), 4);
}

#[test]
fn chain_needs_no_case_decisions() {
    let ts = corpus_traces("straight_line_heavy", 0);
    let g = merged(&ts[..3]);
    for t in &ts {
        assert!(control(walk(&g, t).unwrap()).is_empty());
    }
}

#[test]
fn other_location_diverges() {
    let ts = corpus_traces("two_paths", 0);
    let g = merged(&ts[..1]);
    // the false path's relu has the same kind and attrs but another site
    assert!(walk(&g, &ts[1]).is_err());
}

#[test]
fn trip_count_new_to_a_constant_loop_is_not_covered() {
    let ts = corpus_traces("two_paths", 0);
    let g = merged(&ts[..1]);
    let mut c = Cursor::new(&g);
    let diverged = ts[1].events.iter().any(|e| matches!(c.advance(e), Advance::Diverged(_)));
    assert!(diverged);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn merge_is_idempotent_and_sound(seed in any::<u64>(), n in 1usize..6) {
        let family = trace_family(seed, n);
        let mut g = TraceGraph::new();
        for t in &family {
            g.merge_trace(t).unwrap();
            prop_assert!(g.check_invariants().is_ok(), "{:?}", g.check_invariants());
            let mut again = g.clone();
            prop_assert!(again.merge_trace(t).unwrap().covered);
            prop_assert_eq!(&again, &g);
        }
        for t in &family {
            prop_assert!(g.covers(t).unwrap());
            prop_assert!(g.runs_within(t).unwrap());
            prop_assert!(walk(&g, t).is_ok(), "{:?}", walk(&g, t));
        }
    }

    #[test]
    fn covers_is_a_dry_run(seed in any::<u64>()) {
        let family = trace_family(seed, 3);
        let mut g = TraceGraph::new();
        g.merge_trace(&family[0]).unwrap();
        for t in &family[1..] {
            let before = g.clone();
            let predicted = g.covers(t).unwrap();
            prop_assert_eq!(&g, &before);
            prop_assert_eq!(g.merge_trace(t).unwrap().covered, predicted);
        }
    }
}

