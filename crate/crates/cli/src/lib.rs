//! Command-line front end: reads a JSON run configuration, dispatches one
//! task to `nlmv-core`, and writes `report.json` plus any CSV tables into the
//! output directory.

pub mod config;
pub mod output;
pub mod run;

pub use config::{config_hash, Numerics, Output, Problem, RunConfig, Task, Tolerances};
pub use output::{emit_frontier_csv, emit_terminal_csv, format_significant, write_table};
pub use run::{
    configure_threads, run, Invocation, EXIT_INFEASIBLE, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_SCHEMA,
    EXIT_VALIDATION, REPORT_FILE,
};
