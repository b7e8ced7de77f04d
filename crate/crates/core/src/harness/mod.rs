//! Configuration, orchestration, persistence and reporting.

pub mod config;
pub mod report;
pub mod runner;
pub mod trace;

pub use config::{ExperimentConfig, CONFIG_SCHEMA_VERSION, OUT_DIR_ENV};
pub use runner::{render_csv, CellResult, Runner, TrainedProfile, CSV_HEADER};
pub use trace::{read_trace, replay_verify, trace_to_string, write_trace, TraceHeader};
