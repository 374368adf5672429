use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use proptest::prelude::*;

use super::*;
use crate::coexec::RunConfig;
use crate::frontend::parse;
use crate::fuzz::trace_family;
use crate::graph_gen::{structure, GenConfig, SymInst, SymProgram};
use crate::interp::{run_imperative, synthetic_tensor, FeedSlot, Trace, TraceEvent, ValueRef};
use crate::tensor::{execute_kernel, AttrValue, Attrs, CostConfig, OpKind, Tensor};
use crate::testutil::{corpus_graph, corpus_traces};
use crate::trace_graph::{Advance, Cursor, TraceGraph};

fn gen(g: &TraceGraph) -> SymProgram {
    structure(g, &GenConfig::default()).unwrap().0
}

fn fill(node: u32, value: f64) -> SymInst {
    SymInst::ExecOp {
        node: NodeId(node),
        kind: OpKind::Fill,
        attrs: Attrs::new().with("shape", AttrValue::Shape(vec![2])).with("value", AttrValue::Float(value)),
        inputs: Vec::new(),
    }
}

fn decisions(g: &TraceGraph, t: &Trace) -> Vec<Decision> {
    let mut c = Cursor::new(g);
    let mut out = Vec::new();
    for ev in &t.events {
        match c.advance(ev) {
            Advance::Matched { decisions, .. } => out.extend(decisions),
            Advance::Diverged(msg) => panic!("{msg}"),
        }
    }
    out
}

#[test]
fn linear_program_runs_without_stalling() {
    let sp = SymProgram { body: vec![fill(2, 1.0), fill(3, 2.0), fill(4, 3.0)] };
    let ch = ChannelSet::new(&[], &[], 4);
    let mut store = VariableStore::default();
    let r = run_pass(&sp, ch.runner, &mut store, &CostConfig::default());
    assert_eq!(r.outcome, PassOutcome::Completed);
    assert_eq!(r.stats.ops_executed, 3);
    assert_eq!(r.stats.stall, Duration::ZERO);
    assert!(r.stats.exec + r.stats.stall <= r.stats.wall);
}

#[test]
fn symbolic_program_follows_the_second_path() {
    let g = corpus_graph("two_paths");
    let sp = gen(&g);
    let trace = &corpus_traces("two_paths", 0)[1];
    let mut ch = ChannelSet::new(&sp.feed_slots(), &sp.fetch_nodes(), 8);
    for d in decisions(&g, trace) {
        ch.skeleton.send_decision(d).unwrap();
    }
    // step 1 reads the second synthetic "x"
    let x = synthetic_tensor(0, "x", 1, &[2, 2]);
    let relu = trace.op_events().next().unwrap();
    let ValueRef::External(slot) = relu.inputs[0] else { panic!("relu reads the dataset tensor") };
    ch.skeleton.send_feed(slot, Arc::new(x.clone())).unwrap();
    let sig = g.node(g.start()).children[1];
    let sig = g.node(sig).children[0];
    ch.skeleton.expect_fetch(sig);

    let runner = ch.runner;
    let handle = thread::spawn(move || {
        let mut store = VariableStore::default();
        run_pass(&sp, runner, &mut store, &CostConfig::default())
    });
    // relu is output 0, sigmoid output 1
    let fetched = ch.skeleton.fetch(HandleId(1)).unwrap();
    let r = handle.join().unwrap();
    assert_eq!(r.outcome, PassOutcome::Completed);
    assert_eq!(r.stats.ops_executed, 3);
    assert_eq!(r.stats.fetches_served, 1);
    let want: Vec<f64> = x.data().iter().map(|&v| 1.0 / (1.0 + (-v.max(0.0)).exp())).collect();
    assert_eq!(fetched.data(), want.as_slice());
}

#[test]
fn cancel_while_waiting_for_a_case() {
    let g = corpus_graph("two_paths");
    let sp = gen(&g);
    let mut ch = ChannelSet::new(&sp.feed_slots(), &sp.fetch_nodes(), 8);
    let runner = ch.runner;
    let handle = thread::spawn(move || {
        let mut store = VariableStore::new(BTreeMap::from([("w".into(), Tensor::vector(vec![0.0]))]));
        let r = run_pass(&sp, runner, &mut store, &CostConfig::default());
        store.rollback();
        (r, store)
    });
    thread::sleep(Duration::from_millis(20));
    ch.skeleton.cancel();
    let (r, store) = handle.join().unwrap();
    assert_eq!(r.outcome, PassOutcome::Cancelled);
    assert_eq!(r.stats.ops_executed, 0);
    assert!(store.overlay().is_empty());
    assert_eq!(store.committed()["w"], Tensor::vector(vec![0.0]));
}

#[test]
fn wrong_decision_is_a_mismatch() {
    let g = corpus_graph("two_paths");
    let sp = gen(&g);
    let mut ch = ChannelSet::new(&sp.feed_slots(), &sp.fetch_nodes(), 8);
    ch.skeleton.send_decision(Decision::Loop { loop_id: crate::frontend::LoopId(0), cont: true }).unwrap();
    let mut store = VariableStore::default();
    let r = run_pass(&sp, ch.runner, &mut store, &CostConfig::default());
    assert!(matches!(r.outcome, PassOutcome::Faulted(RunnerFault::DecisionMismatch { .. })), "{:?}", r.outcome);
}

#[test]
fn hung_up_skeleton_is_a_closed_channel() {
    let g = corpus_graph("two_paths");
    let sp = gen(&g);
    let ch = ChannelSet::new(&sp.feed_slots(), &sp.fetch_nodes(), 8);
    let ChannelSet { skeleton, runner } = ch;
    drop(skeleton);
    let r = run_pass(&sp, runner, &mut VariableStore::default(), &CostConfig::default());
    // the dropped cancel sender reads as a cancellation first
    assert!(matches!(r.outcome, PassOutcome::Cancelled | PassOutcome::Faulted(RunnerFault::ChannelClosed)));
}

#[test]
fn committed_increment_matches_the_oracle() {
    let src = "var w = fill([2], 0)\nsteps 1 { w = add(w, fill([2], 1)) }";
    let p = parse(src).unwrap();
    let oracle = run_imperative(&p, &RunConfig::default()).unwrap();
    let g = crate::coexec::collect_traces(&p, &RunConfig::default(), 1).unwrap();
    let sp = gen(&g);
    let ch = ChannelSet::new(&sp.feed_slots(), &sp.fetch_nodes(), 8);
    let mut store = VariableStore::new(BTreeMap::from([("w".into(), Tensor::vector(vec![0.0, 0.0]))]));
    assert_eq!(store.snapshot_vars().unwrap()["w"], Tensor::vector(vec![0.0, 0.0]));
    let r = run_pass(&sp, ch.runner, &mut store, &CostConfig::default());
    assert_eq!(r.outcome, PassOutcome::Completed);
    assert_eq!(store.snapshot_vars(), Err(InFlightPass));
    store.commit();
    assert_eq!(store.snapshot_vars().unwrap(), oracle.vars);
}

#[test]
fn lazy_machine_pauses_on_demand() {
    let sp = SymProgram {
        body: vec![fill(2, 1.0), SymInst::OutputFetch { node: NodeId(2) }, fill(3, 2.0), fill(4, 3.0)],
    };
    let cost = CostConfig::default();
    let mut m = PassMachine::new(&sp, &cost);
    let mut io = LazyIo { want: Some(HandleId(0)), ..LazyIo::default() };
    let mut store = VariableStore::default();
    assert_eq!(m.run(&mut io, &mut store).unwrap(), MachineStop::Paused);
    assert_eq!(m.stats.ops_executed, 1);
    io.want = None;
    assert_eq!(m.run(&mut io, &mut store).unwrap(), MachineStop::Finished);
    assert_eq!(m.stats.ops_executed, 3);
}

#[test]
fn lazy_machine_starves_without_decisions() {
    let g = corpus_graph("two_paths");
    let sp = gen(&g);
    let cost = CostConfig::default();
    let mut m = PassMachine::new(&sp, &cost);
    let mut io = LazyIo::default();
    assert_eq!(m.run(&mut io, &mut VariableStore::default()).unwrap(), MachineStop::Io(IoStop::Starved));
}

fn feed_value(slot: FeedSlot, occurrence: usize) -> Tensor {
    let v = (slot.site.0 as f64 + 1.0) * 0.1 - occurrence as f64 * 0.05 + slot.input as f64 * 0.3;
    Tensor::new(vec![2, 2], vec![v, -v, 0.5 * v, 1.0 - v]).unwrap()
}

/// Evaluates a trace directly: each op on its recorded inputs.
fn eval_trace(t: &Trace) -> HashMap<HandleId, Tensor> {
    let mut values: HashMap<HandleId, Tensor> = HashMap::new();
    let mut seen: HashMap<FeedSlot, usize> = HashMap::new();
    let mut vars = BTreeMap::new();
    for ev in &t.events {
        let TraceEvent::Op(op) = ev else { continue };
        let inputs: Vec<Tensor> = op
            .inputs
            .iter()
            .map(|v| match v {
                ValueRef::Handle(h) => values[h].clone(),
                ValueRef::External(s) => {
                    let n = seen.entry(*s).or_default();
                    *n += 1;
                    feed_value(*s, *n - 1)
                }
            })
            .collect();
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let out = execute_kernel(op.key.kind, &op.key.attrs, &refs, &CostConfig::default(), &mut vars).unwrap();
        values.insert(op.outputs[0], out.into_iter().next().unwrap());
    }
    values
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// A pass driven by the decisions and feeds of any merged trace computes
    /// exactly that trace's values under the same output numbering.
    #[test]
    fn pass_reproduces_the_trace(seed in any::<u64>(), n in 1usize..5) {
        let family = trace_family(seed, n);
        let mut g = TraceGraph::new();
        for t in &family {
            g.merge_trace(t).unwrap();
        }
        let sp = gen(&g);
        let cost = CostConfig::default();
        for t in &family {
            let mut io = LazyIo::default();
            io.decisions.extend(decisions(&g, t));
            let mut seen: HashMap<FeedSlot, usize> = HashMap::new();
            for op in t.op_events() {
                for v in &op.inputs {
                    if let ValueRef::External(s) = v {
                        let k = seen.entry(*s).or_default();
                        io.feeds.entry(*s).or_default().push_back(Arc::new(feed_value(*s, *k)));
                        *k += 1;
                    }
                }
            }
            let mut m = PassMachine::new(&sp, &cost);
            let mut store = VariableStore::default();
            prop_assert_eq!(m.run(&mut io, &mut store).unwrap(), MachineStop::Finished);
            prop_assert!(io.decisions.is_empty());
            prop_assert!(io.feeds.values().all(|q| q.is_empty()));
            let want = eval_trace(t);
            prop_assert_eq!(m.stats.ops_executed, want.len());
            for (h, v) in &want {
                prop_assert_eq!(m.output(*h).map(|t| t.as_ref()), Some(v));
            }
        }
    }
}
