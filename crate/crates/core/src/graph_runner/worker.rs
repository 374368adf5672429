use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::graph_gen::SymProgram;
use crate::tensor::CostConfig;

use super::channels::{run_pass, RunnerEnds};
use super::store::VariableStore;
use super::PassResult;

pub struct Job {
    pub program: Arc<SymProgram>,
    pub ends: RunnerEnds,
    pub store: VariableStore,
    pub cost: Arc<CostConfig>,
}

/// A persistent graph-runner thread executing one pass per job. The
/// variable store travels with the job and comes back with the result.
pub struct Worker {
    jobs: Option<Sender<Job>>,
    results: Receiver<(PassResult, VariableStore)>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    pub fn spawn() -> Self {
        let (jtx, jrx) = unbounded::<Job>();
        let (rtx, rrx) = unbounded();
        let handle = std::thread::Builder::new()
            .name("graph-runner".into())
            .spawn(move || {
                for mut job in jrx {
                    let result = run_pass(&job.program, job.ends, &mut job.store, &job.cost);
                    if rtx.send((result, job.store)).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn graph runner thread");
        Worker { jobs: Some(jtx), results: rrx, handle: Some(handle) }
    }

    pub fn submit(&self, job: Job) {
        self.jobs.as_ref().expect("worker running").send(job).expect("graph runner thread alive");
    }

    /// Blocks until the submitted pass returns.
    pub fn wait(&self) -> (PassResult, VariableStore) {
        self.results.recv().expect("graph runner thread alive")
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
