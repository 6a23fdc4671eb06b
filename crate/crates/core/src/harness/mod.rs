//! Microbenchmark driver: prefilled tables, timed multi-threaded trials over
//! a grid of load factors, update ratios and thread counts, and CSV or
//! JSON-lines output.

pub mod affinity;
pub mod emit;
pub mod trial;
pub mod workload;

pub use emit::{emit, parse_csv, parse_json_lines, write_json_lines, Format, Record, COLUMNS};
pub use trial::{average, prefill, run_grid, run_trial, table_for, GridSpec, RunResult};
pub use workload::{OpStream, WorkloadSpec};
