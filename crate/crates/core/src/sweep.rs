//! What-if sweeps: one simulation per cell, cells run independently.

use std::fmt::Write;

use crate::gen::{generate_workload, square_dims, SpecError, WorkloadSpec};
use crate::par::{self, Execution};
use crate::sim::{run_simulation, SimConfig, SimError, Topology, TopologyKind};

/// One point of a sweep: a workload on a system.
#[derive(Clone, Debug)]
pub struct Cell {
    pub label: String,
    pub spec: WorkloadSpec,
    pub config: SimConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub label: String,
    pub npus: u32,
    pub topology: Topology,
    pub makespan: u64,
    /// Mean over NPUs.
    pub compute: f64,
    /// Mean over NPUs.
    pub exposed_comm: f64,
    /// Makespan of the first cell divided by this cell's.
    pub normalized_perf: f64,
}

impl CellResult {
    pub fn exposed_share(&self) -> f64 {
        if self.makespan == 0 {
            0.0
        } else {
            self.exposed_comm / self.makespan as f64
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("cell {label}: {source}")]
    Spec {
        label: String,
        #[source]
        source: SpecError,
    },
    #[error("cell {label}: {source}")]
    Sim {
        label: String,
        #[source]
        source: SimError,
    },
    #[error("empty sweep")]
    Empty,
}

fn run_cell(cell: &Cell) -> Result<CellResult, SweepError> {
    let traces =
        generate_workload(&cell.spec).map_err(|source| SweepError::Spec { label: cell.label.clone(), source })?;
    let r = run_simulation(&traces, &cell.config).map_err(|source| SweepError::Sim { label: cell.label.clone(), source })?;
    let n = r.npus.len().max(1) as f64;
    Ok(CellResult {
        label: cell.label.clone(),
        npus: cell.spec.npus,
        topology: cell.config.topology,
        makespan: r.makespan,
        compute: r.npus.iter().map(|s| s.compute_busy as f64).sum::<f64>() / n,
        exposed_comm: r.npus.iter().map(|s| s.exposed_comm as f64).sum::<f64>() / n,
        normalized_perf: 1.0,
    })
}

/// Runs every cell and normalizes performance to the first.
pub fn run_cells(cells: &[Cell], exec: Execution) -> Result<Vec<CellResult>, SweepError> {
    if cells.is_empty() {
        return Err(SweepError::Empty);
    }
    let mut out = par::map(cells, exec, run_cell).into_iter().collect::<Result<Vec<_>, _>>()?;
    let base = out[0].makespan.max(1) as f64;
    for c in &mut out {
        c.normalized_perf = base / c.makespan.max(1) as f64;
    }
    Ok(out)
}

/// Cells scaling the NPU count, each on the most-square grid of `kind`.
pub fn npu_cells(
    make_spec: impl Fn(u32) -> WorkloadSpec,
    kind: TopologyKind,
    npus: &[u32],
    bandwidth: (f64, f64),
    template: &SimConfig,
) -> Vec<Cell> {
    npus.iter()
        .map(|&n| {
            let mut config = template.clone();
            config.topology = Topology { kind, dims: square_dims(n), bandwidth, latency: template.topology.latency };
            Cell { label: format!("npus={n}"), spec: make_spec(n), config }
        })
        .collect()
}

/// Cells varying the per-dimension bandwidth on a fixed system.
pub fn bandwidth_cells(spec: &WorkloadSpec, template: &SimConfig, bandwidths: &[(f64, f64)]) -> Vec<Cell> {
    bandwidths
        .iter()
        .map(|&bw| {
            let mut config = template.clone();
            config.topology.bandwidth = bw;
            Cell { label: format!("bw={}/{}", bw.0 / 1e9, bw.1 / 1e9), spec: spec.clone(), config }
        })
        .collect()
}

pub fn sweep_csv(rows: &[CellResult]) -> String {
    let mut out = String::from("label,npus,topology,bw1_gbps,bw2_gbps,makespan,compute,exposed_comm,normalized_perf\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.1},{:.1},{:.6}",
            r.label,
            r.npus,
            r.topology,
            r.topology.bandwidth.0 / 1e9,
            r.topology.bandwidth.1 / 1e9,
            r.makespan,
            r.compute,
            r.exposed_comm,
            r.normalized_perf
        )
        .unwrap();
    }
    out
}
