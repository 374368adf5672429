//! `coexec`: run tensor-language programs imperatively or co-executed,
//! dump their trace and symbolic graphs, and benchmark the modes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use coexec_core::coexec::{collect_traces, run, Mode, RunConfig, RunReport};
use coexec_core::frontend::{parse, Program};
use coexec_core::graph_gen::{structure, symprog_to_dot, GenConfig};
use coexec_core::interp::DatasetSource;
use coexec_core::tensor::CostConfig;

#[derive(Parser)]
#[command(name = "coexec", version, about = "Imperative-symbolic co-execution runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a program and print its output.
    Run(RunArgs),
    /// Trace a few steps and emit the TraceGraph or the symbolic program.
    Dump(DumpArgs),
    /// Measure throughput of every program in a directory under several modes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// Seed for natives and the synthetic dataset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines dataset file.
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,
    /// Use synthetic input tensors (the default).
    #[arg(long)]
    synthetic: bool,
    /// JSON cost table, e.g. {"MatMul": {"base_us": 200}}.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Op budget for the generated program.
    #[arg(long, default_value_t = 10_000)]
    max_ops: usize,
    /// Channel capacity between interpreter and graph runner.
    #[arg(long, default_value_t = 64)]
    capacity: usize,
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    #[arg(long, value_parser = parse_mode, default_value = "imperative")]
    mode: Mode,
    /// Override the program's step count.
    #[arg(long)]
    steps: Option<u64>,
    /// Write run statistics as JSON here.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Tracegraph,
    Symgraph,
}

#[derive(Args)]
struct DumpArgs {
    file: PathBuf,
    #[arg(long, value_enum)]
    what: What,
    /// Number of traced steps.
    #[arg(long, default_value_t = 2)]
    steps: u64,
    /// Write the DOT here instead of standard output.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Write the TraceGraph JSON here (tracegraph only). Defaults to the
    /// DOT path with a .json extension when --dot is given.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of .tl programs. A cost.json inside it is used unless --cost is given.
    suite: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, default_value = "imperative,coexec,lazy")]
    modes: Vec<Mode>,
    #[arg(long, default_value_t = 20)]
    warmup: u64,
    #[arg(long, default_value_t = 100)]
    measure: u64,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
    /// Write the full results as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

/// Exit 1 for failures of the program itself, 2 for everything the caller got wrong.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Dump(a) => cmd_dump(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_program(path: &Path) -> anyhow::Result<Program> {
    let src = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&src).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn load_cost(path: &Path) -> anyhow::Result<CostConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("bad cost table {}", path.display()))
}

impl Common {
    fn config(&self, mode: Mode) -> anyhow::Result<RunConfig> {
        let dataset = match &self.dataset {
            Some(p) => {
                // surface a missing file as a usage error, before anything runs
                std::fs::metadata(p).with_context(|| format!("cannot read dataset {}", p.display()))?;
                DatasetSource::File(p.clone())
            }
            None => DatasetSource::Synthetic { seed: self.seed },
        };
        let cost = match &self.cost {
            Some(p) => load_cost(p)?,
            None => CostConfig::default(),
        };
        Ok(RunConfig {
            mode,
            seed: self.seed,
            dataset,
            cost,
            max_ops: self.max_ops,
            capacity: self.capacity,
            ..RunConfig::default()
        })
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let program = load_program(&a.file)?;
    let config = RunConfig { steps_override: a.steps, echo: true, ..a.common.config(a.mode)? };
    let report = run(&program, &config).map_err(runtime)?;
    if let Some(path) = &a.stats {
        std::fs::write(path, report.stats.to_json())
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(runtime)?;
    }
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())).map_err(runtime),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_dump(a: DumpArgs) -> Result<(), Failure> {
    let program = load_program(&a.file)?;
    let config = a.common.config(Mode::Coexec)?;
    let graph = collect_traces(&program, &config, a.steps).map_err(runtime)?;
    match a.what {
        What::Tracegraph => {
            write_or_print(a.dot.as_deref(), &graph.to_dot())?;
            let json_path = a.json.clone().or_else(|| a.dot.as_ref().map(|p| p.with_extension("json")));
            if let Some(p) = json_path {
                write_or_print(Some(&p), &graph.to_json())?;
            }
        }
        What::Symgraph => {
            if a.json.is_some() {
                return Err(Failure::Usage(anyhow::anyhow!("--json applies to --what tracegraph only")));
            }
            let (sp, _) = structure(&graph, &GenConfig { max_ops: config.max_ops }).map_err(runtime)?;
            write_or_print(a.dot.as_deref(), &symprog_to_dot(&sp))?;
        }
    }
    Ok(())
}

/// One program under one mode, over all repeats.
struct Cell {
    mode: Mode,
    samples: Vec<f64>,
    /// Per measured step means of the four time categories, from the last repeat.
    breakdown: [f64; 4],
    last: RunReport,
}

impl Cell {
    fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

fn measured_mean(series: &[f64], warmup: usize) -> f64 {
    let tail = series.get(warmup..).unwrap_or(&[]);
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

fn bench_programs(dir: &Path) -> anyhow::Result<Vec<(String, Program)>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read suite {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tl"))
        .collect();
    files.sort();
    if files.is_empty() {
        anyhow::bail!("no .tl programs in {}", dir.display());
    }
    files
        .iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), load_program(p)?)))
        .collect()
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.repeat == 0 || a.measure == 0 {
        return Err(Failure::Usage(anyhow::anyhow!("--repeat and --measure must be positive")));
    }
    let programs = bench_programs(&a.suite)?;
    let mut base = a.common.config(Mode::Imperative)?;
    if a.common.cost.is_none() {
        let suite_cost = a.suite.join("cost.json");
        if suite_cost.exists() {
            base.cost = load_cost(&suite_cost)?;
        }
    }
    base.steps_override = Some(a.warmup + a.measure);
    let warmup = a.warmup as usize;

    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<22} {:<15} {:>10} {:>8} {:>10} {:>10} {:>10} {:>10} {:>6} {:>6}",
        "program", "mode", "steps/s", "speedup", "py exec", "py stall", "gr exec", "gr stall", "trans", "replay"
    );
    let mut results = Vec::new();
    for (name, program) in &programs {
        let mut cells: Vec<Cell> = Vec::new();
        // modes take turns within each repeat so drift hits them alike
        for _ in 0..a.repeat {
            for &mode in &a.modes {
                let report = run(program, &base.clone().with_mode(mode))
                    .with_context(|| format!("{name} ({mode})"))
                    .map_err(runtime)?;
                let s = &report.stats.per_step;
                let breakdown = [
                    measured_mean(&s.python_exec_ms, warmup),
                    measured_mean(&s.python_stall_ms, warmup),
                    measured_mean(&s.graph_exec_ms, warmup),
                    measured_mean(&s.graph_stall_ms, warmup),
                ];
                let sample = report.stats.throughput_after(warmup);
                match cells.iter_mut().find(|c| c.mode == mode) {
                    Some(c) => {
                        c.samples.push(sample);
                        c.breakdown = breakdown;
                        c.last = report;
                    }
                    None => cells.push(Cell { mode, samples: vec![sample], breakdown, last: report }),
                }
            }
        }
        let imperative = cells.iter().find(|c| c.mode == Mode::Imperative).map(Cell::mean);
        let mut modes_json = Vec::new();
        for c in &cells {
            let mean = c.mean();
            let speedup = imperative.filter(|&i| i > 0.0).map(|i| mean / i);
            let [pe, ps, ge, gs] = c.breakdown;
            let st = &c.last.stats;
            let _ = writeln!(
                table,
                "{:<22} {:<15} {:>10.1} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>6} {:>6}",
                name,
                c.mode,
                mean,
                speedup.map(|s| format!("x{s:.2}")).unwrap_or_else(|| "-".into()),
                pe,
                ps,
                ge,
                gs,
                st.phase_transitions,
                st.steps_replayed
            );
            modes_json.push(json!({
                "mode": c.mode,
                "samples": c.samples,
                "mean_steps_per_s": mean,
                "speedup_vs_imperative": speedup,
                "per_step_ms": {
                    "python_exec": pe,
                    "python_stall": ps,
                    "graph_exec": ge,
                    "graph_stall": gs,
                },
                "stats": st,
            }));
        }
        results.push(json!({ "program": name, "modes": modes_json }));
    }
    print!("{table}");
    if let Some(path) = &a.json {
        let doc = json!({
            "warmup": a.warmup,
            "measure": a.measure,
            "repeat": a.repeat,
            "cost": base.cost,
            "results": results,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| runtime(anyhow::Error::from(e)))?;
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())).map_err(runtime)?;
    }
    Ok(())
}
