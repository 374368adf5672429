use std::path::PathBuf;

use coexec_core::coexec::{run, Mode, RunConfig};
use coexec_core::frontend::parse;
use coexec_core::interp::run_imperative;

fn corpus() -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "tl"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn every_mode_matches_the_oracle() {
    let progs = corpus();
    assert!(progs.len() >= 8);
    for (name, src) in progs {
        let program = parse(&src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let base = RunConfig::default();
        let oracle = run_imperative(&program, &base).unwrap_or_else(|e| panic!("{name}: {e}"));
        for mode in Mode::ALL {
            let report = run(&program, &base.clone().with_mode(mode)).unwrap_or_else(|e| panic!("{name} {mode}: {e}"));
            assert_eq!(report.result, oracle, "{name} in {mode}");
            eprintln!(
                "{name:20} {mode:15} transitions={} replayed={} regens={} traces={}",
                report.stats.phase_transitions,
                report.stats.steps_replayed,
                report.stats.graph_regens,
                report.stats.traces_collected
            );
        }
    }
}
