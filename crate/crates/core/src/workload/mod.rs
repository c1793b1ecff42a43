//! Datasets, workloads and the cost harness that scores an index.

pub mod keys;
pub mod ops;
pub mod run;

pub use keys::{distributions, gen_keys, read_keys, write_keys, KeyDistribution, LogNormal, Uniform64, Zipfian};
pub use ops::{read_workload, write_workload, Generator, KeySource, Mix, OpKind, WorkloadOp, WorkloadSpec};
pub use run::{measure_baseline, run_workload, BlockStat, CostMode, CostReport};
