//! Workloads, benchmark harnesses and result reporting for nbkv.

pub mod consistency;
pub mod latency;
pub mod report;
pub mod tables;
pub mod workload;

pub use report::{Format, Row, RunReport};
pub use workload::{gen_workload, Distribution, Workload, WorkloadSpec};
