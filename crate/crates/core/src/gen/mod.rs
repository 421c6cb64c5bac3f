//! Hand-authored traces and synthetic layered workloads.

mod builder;
mod workload;

pub use builder::{BuildError, NodeHandle, TraceBuilder};
pub use workload::{
    generate_workload, square_dims, DpSync, EmbeddingSpec, Parallelism, SpecError, WorkloadSpec,
};
