pub mod batch;
pub mod coexec;
pub mod frontend;
pub mod fuzz;
pub mod graph_gen;
pub mod graph_runner;
pub mod interp;
pub mod tensor;
pub mod trace_graph;

#[cfg(test)]
mod testutil;
