use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn coexec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coexec")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn modes_print_the_same_bytes() {
    for prog in ["two_paths.tl", "coin_branch.tl", "deopt_step50.tl", "variable_while.tl"] {
        let file = corpus(prog);
        let base = coexec(&["run", path(&file), "--mode", "imperative"]);
        assert_eq!(base.status.code(), Some(0), "{prog}");
        assert!(!base.stdout.is_empty());
        for mode in ["coexec", "lazy", "skeleton-check"] {
            let o = coexec(&["run", path(&file), "--mode", mode]);
            assert_eq!(o.status.code(), Some(0), "{prog} {mode}");
            assert_eq!(o.stdout, base.stdout, "{prog} {mode}");
        }
    }
}

#[test]
fn output_is_deterministic() {
    let file = corpus("divergence_storm.tl");
    let args = ["run", path(&file), "--mode", "coexec", "--seed", "5", "--synthetic"];
    let a = coexec(&args);
    let b = coexec(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    // another seed draws other tensors
    let c = coexec(&["run", path(&file), "--mode", "coexec", "--seed", "6"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tl");
    std::fs::write(&bad, "steps 2 { let x = }").unwrap();
    let two_paths = corpus("two_paths.tl");
    let cost = dir.path().join("cost.json");
    std::fs::write(&cost, "{not json").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "missing.tl"],
        vec!["run", path(&bad)],
        vec!["run", path(&two_paths), "--mode", "eager"],
        vec!["run", path(&two_paths), "--cost", path(&cost)],
        vec!["run", path(&two_paths), "--dataset", "no-such.jsonl"],
        vec!["dump", path(&two_paths), "--what", "bogus"],
        vec!["bench", path(dir.path())],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = coexec(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn runtime_error_exits_1_after_committed_output() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("p.tl");
    std::fs::write(&prog, "steps 4 {\n    let x = input(\"x\", [2])\n    print(item(sum(x)))\n}\n").unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(
        &data,
        "{\"name\": \"x\", \"shape\": [2], \"data\": [1, 2]}\n{\"name\": \"x\", \"shape\": [2], \"data\": [3, 4]}\n",
    )
    .unwrap();
    for mode in ["imperative", "coexec", "lazy"] {
        let o = coexec(&["run", path(&prog), "--mode", mode, "--dataset", path(&data)]);
        assert_eq!(o.status.code(), Some(1), "{mode}");
        assert_eq!(stdout(&o), "3\n7\n", "{mode}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("step 2"), "{err}");
    }
}

#[test]
fn stats_file_follows_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let s = dir.path().join("s.json");
    let o = coexec(&["run", path(&corpus("deopt_step50.tl")), "--mode", "coexec", "--stats", path(&s)]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&s).unwrap()).unwrap();
    for key in ["python_exec_ms", "python_stall_ms", "graph_exec_ms", "graph_stall_ms", "throughput"] {
        assert!(v[key].is_f64(), "{key}");
    }
    for key in ["phase_transitions", "traces_collected", "graph_regens", "steps_replayed"] {
        assert!(v[key].is_u64(), "{key}");
    }
    assert_eq!(v["phase_transitions"], 3);
    assert_eq!(v["steps_replayed"], 1);
    assert_eq!(v["per_step"]["graph_stall_ms"].as_array().unwrap().len(), 100);
}

#[test]
fn dump_two_steps_matches_the_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("g.dot");
    let o = coexec(&["dump", path(&corpus("two_paths.tl")), "--what", "tracegraph", "--steps", "2", "--dot", path(&dot)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&dot).unwrap(), golden("two_paths_tracegraph.dot"));
    assert_eq!(std::fs::read_to_string(dot.with_extension("json")).unwrap(), golden("two_paths_tracegraph.json"));

    let o = coexec(&["dump", path(&corpus("two_paths.tl")), "--what", "symgraph", "--steps", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), golden("two_paths_symgraph.dot"));
}

#[test]
fn dump_one_step_is_a_chain() {
    let o = coexec(&["dump", path(&corpus("two_paths.tl")), "--what", "tracegraph", "--steps", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let dot = stdout(&o);
    let mut out_degree = std::collections::HashMap::new();
    for line in dot.lines().filter(|l| l.contains("->") && !l.contains("dashed")) {
        let from = line.trim().split(" -> ").next().unwrap().to_string();
        *out_degree.entry(from).or_insert(0) += 1;
    }
    assert!(!out_degree.is_empty());
    assert!(out_degree.values().all(|&d| d == 1), "{dot}");
}

#[test]
fn bench_reports_every_repeat() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(corpus("two_paths.tl"), dir.path().join("two_paths.tl")).unwrap();
    let json = dir.path().join("b.json");
    let o = coexec(&[
        "bench",
        path(dir.path()),
        "--modes",
        "imperative,coexec,lazy",
        "--warmup",
        "1",
        "--measure",
        "3",
        "--repeat",
        "3",
        "--json",
        path(&json),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 4, "{table}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    let modes = v["results"][0]["modes"].as_array().unwrap();
    assert_eq!(modes.len(), 3);
    for m in modes {
        let samples = m["samples"].as_array().unwrap();
        assert_eq!(samples.len(), 3);
        let mean = samples.iter().map(|s| s.as_f64().unwrap()).sum::<f64>() / 3.0;
        assert!((mean - m["mean_steps_per_s"].as_f64().unwrap()).abs() < 1e-9 * mean.max(1.0));
    }
    assert_eq!(modes[0]["speedup_vs_imperative"], 1.0);
}
