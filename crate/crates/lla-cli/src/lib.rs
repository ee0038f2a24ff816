//! Experiment harness for the `lla-core` library: CLI subcommands,
//! CSV/JSON/binary output, the counting allocator for memory benchmarks,
//! and the experiment drivers the acceptance suite runs.

pub mod allocmeter;
pub mod config;
pub mod experiments;
pub mod formats;
