use std::collections::BTreeMap;

use super::*;
use crate::coexec::RunConfig;
use crate::frontend::parse;
use crate::tensor::{CostConfig, OpKind};

const TWO_PATHS: &str = include_str!("../../../../corpus/two_paths.tl");

fn traces(src: &str, seed: u64) -> Vec<Trace> {
    let program = parse(src).unwrap();
    let mut state = ExecState::new(&program, seed, &DatasetSource::default()).unwrap();
    let mut vars = BTreeMap::new();
    let cost = CostConfig::default();
    let mut out = Output::default();
    run_prologue(&mut state, &program, &mut vars, &cost, &mut out).unwrap();
    (0..program.step_count)
        .map(|step| {
            state.step = step;
            run_traced_step(&mut state, &program, &mut vars, &cost, &mut out).unwrap()
        })
        .collect()
}

fn kinds(t: &Trace) -> Vec<OpKind> {
    t.op_events().map(|e| e.key.kind).collect()
}

#[test]
fn two_increments() {
    let p = parse("var w = fill([2], 0)\nsteps 2 { w = add(w, fill([2], 1)) }").unwrap();
    let r = run_imperative(&p, &RunConfig::default()).unwrap();
    assert_eq!(r.vars["w"], Tensor::vector(vec![2.0, 2.0]));
}

#[test]
fn exhausted_dataset_carries_the_step() {
    let p = parse("steps 3 { let x = input(\"x\", [1])\n print(x) }").unwrap();
    let records = vec![DatasetRecord { name: "x".into(), shape: vec![1], data: vec![1.0] }];
    let config = RunConfig { dataset: DatasetSource::Records(records), ..RunConfig::default() };
    let err = run_imperative(&p, &config).unwrap_err();
    assert_eq!(err.kind, RunErrorKind::DatasetExhausted("x".into()));
    assert_eq!(err.step, Some(1));
    assert!(err.pos.is_some());
}

#[test]
fn non_bool_condition() {
    let p = parse("steps 1 { if 1 { print(1) } }").unwrap();
    let err = run_imperative(&p, &RunConfig::default()).unwrap_err();
    assert_eq!(err.kind, RunErrorKind::NonBoolCondition("number"));
}

#[test]
fn straight_line_trace() {
    let t = &traces("steps 1 { let x = fill([2], 1)\n let y = relu(x)\n let z = neg(y) }", 0)[0];
    t.check_well_formed().unwrap();
    assert_eq!(kinds(t), vec![OpKind::Fill, OpKind::Relu, OpKind::Neg]);
    assert_eq!(t.events.len(), 4);
    assert_eq!(t.events.last(), Some(&TraceEvent::StepEnd));
}

#[test]
fn loop_marker_protocol() {
    let t = &traces("steps 1 { let x = input(\"x\", [2])\n for i in range(2) { x = relu(x) } }", 0)[0];
    let shape: Vec<&str> = t
        .events
        .iter()
        .map(|e| match e {
            TraceEvent::Op(_) => "op",
            TraceEvent::LoopEnter(_) => "enter",
            TraceEvent::LoopIterStart(_) => "iter",
            TraceEvent::LoopExit(_) => "exit",
            TraceEvent::StepEnd => "end",
        })
        .collect();
    assert_eq!(shape, ["enter", "iter", "op", "iter", "op", "exit", "end"]);
}

#[test]
fn two_path_traces() {
    // seed 0: the coin is true at step 0 and false at step 1
    let ts = traces(TWO_PATHS, 0);
    assert_eq!(kinds(&ts[0]), vec![OpKind::Add, OpKind::Relu, OpKind::Sigmoid, OpKind::Neg, OpKind::Neg]);
    assert_eq!(kinds(&ts[1]), vec![OpKind::Relu, OpKind::Sigmoid, OpKind::Neg]);
    let relu = |t: &Trace| t.op_events().find(|e| e.key.kind == OpKind::Relu).unwrap().key.loc.clone();
    assert_ne!(relu(&ts[0]), relu(&ts[1]));
    let sig = |t: &Trace| t.op_events().find(|e| e.key.kind == OpKind::Sigmoid).unwrap().clone();
    assert_eq!(sig(&ts[0]).key, sig(&ts[1]).key);
    // item(x3) materializes the sigmoid output
    assert!(sig(&ts[0]).fetch_after);
    // the dataset tensor and the prologue scalar enter as externals
    let add = ts[0].op_events().next().unwrap();
    assert!(add.inputs.iter().all(|v| matches!(v, ValueRef::External(_))));
}

#[test]
fn traced_steps_match_the_oracle() {
    let program = parse(TWO_PATHS).unwrap();
    let oracle = run_imperative(&program, &RunConfig::default()).unwrap();
    let mut state = ExecState::new(&program, 0, &DatasetSource::default()).unwrap();
    let (mut vars, cost, mut out) = (BTreeMap::new(), CostConfig::default(), Output::default());
    run_prologue(&mut state, &program, &mut vars, &cost, &mut out).unwrap();
    for step in 0..program.step_count {
        state.step = step;
        run_traced_step(&mut state, &program, &mut vars, &cost, &mut out).unwrap();
    }
    assert_eq!(out.lines, oracle.lines);
}

#[test]
fn replay_is_oracle_equal() {
    let program = parse(TWO_PATHS).unwrap();
    let oracle = run_imperative(&program, &RunConfig::default()).unwrap();
    let mut state = ExecState::new(&program, 0, &DatasetSource::default()).unwrap();
    let (mut vars, cost, mut out) = (BTreeMap::new(), CostConfig::default(), Output::default());
    run_prologue(&mut state, &program, &mut vars, &cost, &mut out).unwrap();
    for step in 0..program.step_count {
        state.step = step;
        let snap = state.dataset.cursors();
        let saved = vars.clone();
        // an aborted attempt whose effects are thrown away
        run_traced_step(&mut state, &program, &mut vars, &cost, &mut Output::default()).unwrap();
        vars = saved;
        replay_step_imperative(&mut state, snap, &program, &mut vars, &cost, &mut out).unwrap();
    }
    assert_eq!(out.lines, oracle.lines);
    assert_eq!(vars, oracle.vars);
}

#[test]
fn golden_choice_sequence() {
    let mut s = NativeStream::new(7);
    let seq: Vec<Value> =
        (0..8).map(|step| eval_native("choice", &[Value::Num(4.0), Value::Num(0.0)], step, &mut s).unwrap()).collect();
    let golden = [1.0, 2.0, 2.0, 1.0, 0.0, 3.0, 1.0, 2.0];
    assert_eq!(seq, golden.map(Value::Num).to_vec());
}

#[test]
fn golden_coin_sequence() {
    let mut s = NativeStream::new(3);
    let seq: Vec<Value> = (0..8).map(|step| eval_native("coin", &[Value::Num(2.0)], step, &mut s).unwrap()).collect();
    let golden = [true, true, false, false, false, true, true, false];
    assert_eq!(seq, golden.map(Value::Bool).to_vec());
}

#[test]
fn golden_synthetic_tensors() {
    let golden: [(u64, &str, u64, [f64; 4]); 5] = [
        (0, "x", 0, [0.8994115971315155, 0.9420888258207298, 0.39289255059764927, -0.06919247047838972]),
        (0, "x", 1, [0.6067982146431341, -0.29879367448839456, -0.9490871470611157, -0.220162849849181]),
        (7, "x", 0, [0.5874895943643275, -0.5252289179061953, 0.861606627471976, 0.6990241676132682]),
        (42, "label", 3, [-0.1950137899347082, -0.13677640773118638, 0.9618978530740419, 0.2103770424990219]),
        (123456789, "img", 10, [0.14034852594412883, -0.18142138963018772, 0.8436737456484646, -0.7801631694300244]),
    ];
    for (seed, name, occ, want) in golden {
        let t = synthetic_tensor(seed, name, occ, &[2, 2]);
        assert_eq!(t.data(), &want, "{seed} {name} {occ}");
    }
}
