//! Deterministic discrete-event replay of per-NPU traces over a modeled
//! two-dimensional network.

mod breakdown;
mod engine;
mod topology;

pub use breakdown::{compute_breakdown, exposed_time, BreakdownRow};
pub use engine::{run_simulation, DeadlockReport, NodeSpan, NpuStats, SimError, SimResult, StuckNode};
pub use topology::{collective_time, seconds_to_cycles, Dim, Span, Topology, TopologyError, TopologyKind};

use serde::{Deserialize, Serialize};

/// Where a node's duration comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Timing {
    /// The node's `runtime` attribute, in cycles.
    FromTrace,
    /// The analytic model; compute uses `num_ops / compute_rate`.
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub topology: Topology,
    pub compute_timing: Timing,
    pub comm_timing: Timing,
    /// Operations per second for modeled compute.
    #[serde(default)]
    pub compute_rate: Option<f64>,
    /// Bytes per second for memory nodes without a `runtime`.
    pub mem_bandwidth: f64,
    /// Seconds per cycle.
    pub cycle_time: f64,
}

impl SimConfig {
    pub fn new(topology: Topology) -> Self {
        SimConfig {
            topology,
            compute_timing: Timing::FromTrace,
            comm_timing: Timing::Model,
            compute_rate: None,
            mem_bandwidth: 100e9,
            cycle_time: 1e-9,
        }
    }
}
