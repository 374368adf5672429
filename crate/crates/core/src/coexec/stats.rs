use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Mode;

/// Per-step series, one entry per executed step, in milliseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSeries {
    pub step_ms: Vec<f64>,
    pub python_exec_ms: Vec<f64>,
    pub python_stall_ms: Vec<f64>,
    pub graph_exec_ms: Vec<f64>,
    pub graph_stall_ms: Vec<f64>,
}

/// Run statistics. "python" is the interpreter thread, "graph" the pass.
/// Host stall is time blocked on fetched values and step-commit waits;
/// everything else the host thread does counts as its exec time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mode: Mode,
    pub steps: u64,
    pub python_exec_ms: f64,
    pub python_stall_ms: f64,
    pub graph_exec_ms: f64,
    pub graph_stall_ms: f64,
    pub per_step: StepSeries,
    pub phase_transitions: u64,
    pub traces_collected: u64,
    pub graph_regens: u64,
    pub steps_replayed: u64,
    /// Steps per second over the whole step loop.
    pub throughput: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Stats {
    pub fn new(mode: Mode) -> Self {
        Stats {
            mode,
            steps: 0,
            python_exec_ms: 0.0,
            python_stall_ms: 0.0,
            graph_exec_ms: 0.0,
            graph_stall_ms: 0.0,
            per_step: StepSeries::default(),
            phase_transitions: 0,
            traces_collected: 0,
            graph_regens: 0,
            steps_replayed: 0,
            throughput: 0.0,
        }
    }

    pub(super) fn record_step(&mut self, wall: Duration, host_stall: Duration, graph_exec: Duration, graph_stall: Duration) {
        let s = &mut self.per_step;
        s.step_ms.push(ms(wall));
        s.python_exec_ms.push(ms(wall.saturating_sub(host_stall)));
        s.python_stall_ms.push(ms(host_stall));
        s.graph_exec_ms.push(ms(graph_exec));
        s.graph_stall_ms.push(ms(graph_stall));
        self.steps += 1;
    }

    pub(super) fn finalize(&mut self) {
        let s = &self.per_step;
        self.python_exec_ms = s.python_exec_ms.iter().sum();
        self.python_stall_ms = s.python_stall_ms.iter().sum();
        self.graph_exec_ms = s.graph_exec_ms.iter().sum();
        self.graph_stall_ms = s.graph_stall_ms.iter().sum();
        self.throughput = self.throughput_after(0);
    }

    /// Steps per second over the steps after the first `warmup`.
    pub fn throughput_after(&self, warmup: usize) -> f64 {
        let measured = self.per_step.step_ms.get(warmup..).unwrap_or(&[]);
        let total: f64 = measured.iter().sum();
        if measured.is_empty() || total <= 0.0 {
            return 0.0;
        }
        measured.len() as f64 / (total / 1e3)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}
