//! FLOPs cost model, throughput harness and sequence-length scaling report.

pub mod flops;
mod report;
pub mod throughput;

pub use flops::{breakdown, count_flops, decoder_len, log_log_slope, training_step_flops, FlopsBreakdown};
pub use report::{scaling_report, BenchmarkRecord, ScalingReport, Slopes, TimingOptions, DEFAULT_GRID, LONG_SEQUENCE};
pub use throughput::{measure_throughput, Throughput};
