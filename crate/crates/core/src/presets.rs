//! Named workloads with fixed layer sizes. Compute cost is calibrated on
//! first use: each preset is simulated once on the reference system (four
//! NPUs, 2x2 torus, 62 GB/s per dimension) and per-layer compute is scaled so
//! that the mean per-NPU compute time is a fixed multiple of the mean
//! communication time.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::gen::{generate_workload, square_dims, DpSync, EmbeddingSpec, Parallelism, SpecError, WorkloadSpec};
use crate::sim::{run_simulation, SimConfig, SimError, Topology, TopologyKind};

const MIB: u64 = 1 << 20;
/// Per-layer compute before calibration; large so rounding stays negligible.
const PROBE_CYCLES: u64 = 1 << 30;
pub const REFERENCE_BANDWIDTH: f64 = 62e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    /// 12 layers, model parallel on dim 1 and sharded data parallel on dim 2;
    /// compute is 25x communication on the reference system.
    Transformer,
    /// Data-parallel dense layers behind an all-to-all embedding exchange;
    /// compute is 2x communication on the reference system.
    Dlrm,
    /// Six-layer MLP, model parallel; compute is 1/4 of communication on
    /// the reference system.
    MlpMp,
    /// Same MLP, data parallel on dim 1 and model parallel on dim 2.
    MlpDpMp,
    /// Same MLP, model parallel on dim 1 and data parallel on dim 2.
    MlpMpDp,
}

#[derive(Debug, thiserror::Error)]
pub enum PresetError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Transformer, Preset::Dlrm, Preset::MlpMp, Preset::MlpDpMp, Preset::MlpMpDp];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Transformer => "transformer",
            Preset::Dlrm => "dlrm",
            Preset::MlpMp => "mlp-mp",
            Preset::MlpDpMp => "mlp-dp-mp",
            Preset::MlpMpDp => "mlp-mp-dp",
        }
    }

    /// Target mean compute / mean communication on the reference system.
    fn compute_to_comm(self) -> f64 {
        match self {
            Preset::Transformer => 25.0,
            Preset::Dlrm => 2.0,
            Preset::MlpMp | Preset::MlpDpMp | Preset::MlpMpDp => 0.25,
        }
    }

    /// The preset this one takes its compute cost from.
    fn calibration_source(self) -> Preset {
        match self {
            Preset::MlpDpMp | Preset::MlpMpDp => Preset::MlpMp,
            p => p,
        }
    }

    fn shape(self, npus: u32, compute_cycles: u64) -> WorkloadSpec {
        let mut s = match self {
            Preset::Transformer => {
                let mut s = WorkloadSpec::new(Parallelism::MpDp, npus);
                s.layers = 12;
                s.weight_bytes = 28 * MIB;
                s.activation_bytes = 12 * MIB;
                s.dp_sync = DpSync::ShardedReduceScatterAllGather;
                s
            }
            Preset::Dlrm => {
                let mut s = WorkloadSpec::new(Parallelism::Dp, npus);
                s.weight_bytes = 8 * MIB;
                s.activation_bytes = 4 * MIB;
                s.embedding = Some(EmbeddingSpec { lookup_cycles: compute_cycles, exchange_bytes: 64 * MIB });
                s
            }
            Preset::MlpMp | Preset::MlpDpMp | Preset::MlpMpDp => {
                let p = match self {
                    Preset::MlpMp => Parallelism::Mp,
                    Preset::MlpDpMp => Parallelism::DpMp,
                    _ => Parallelism::MpDp,
                };
                let mut s = WorkloadSpec::new(p, npus);
                s.weight_bytes = 32 * MIB;
                s.activation_bytes = 8 * MIB;
                s
            }
        };
        s.compute_cycles = compute_cycles;
        if matches!(s.parallelism, Parallelism::DpMp | Parallelism::MpDp) {
            s.dims = Some(square_dims(npus));
        }
        s
    }

    /// Calibrated per-layer forward compute cycles.
    pub fn compute_cycles(self) -> Result<u64, PresetError> {
        static CACHE: [OnceLock<u64>; 5] = [const { OnceLock::new() }; 5];
        let src = self.calibration_source();
        let slot = &CACHE[Preset::ALL.iter().position(|&p| p == src).expect("preset listed")];
        if let Some(&c) = slot.get() {
            return Ok(c);
        }
        let c = calibrate(src)?;
        Ok(*slot.get_or_init(|| c))
    }

    pub fn spec(self, npus: u32) -> Result<WorkloadSpec, PresetError> {
        Ok(self.shape(npus, self.compute_cycles()?))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Preset::ALL.into_iter().find(|p| p.name() == norm).ok_or_else(|| {
            let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset {s:?} (expected one of {})", names.join(", "))
        })
    }
}

/// Torus sized for `npus` on the most-square grid, 62 GB/s per dimension.
pub fn reference_config(npus: u32) -> SimConfig {
    let (d1, d2) = square_dims(npus);
    SimConfig::new(Topology::new(TopologyKind::Torus2d, (d1, d2), (REFERENCE_BANDWIDTH, REFERENCE_BANDWIDTH)))
}

fn calibrate(p: Preset) -> Result<u64, PresetError> {
    let spec = p.shape(4, PROBE_CYCLES);
    let traces = generate_workload(&spec)?;
    let r = run_simulation(&traces, &reference_config(4))?;
    let n = r.npus.len() as f64;
    let compute = r.npus.iter().map(|s| s.compute_busy as f64).sum::<f64>() / n;
    let comm = r.npus.iter().map(|s| s.comm_busy as f64).sum::<f64>() / n;
    let scale = p.compute_to_comm() * comm / compute;
    Ok(((PROBE_CYCLES as f64) * scale).round().max(1.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_hits_ratio() {
        for p in [Preset::Transformer, Preset::MlpMp, Preset::Dlrm] {
            let traces = generate_workload(&p.spec(4).unwrap()).unwrap();
            let r = run_simulation(&traces, &reference_config(4)).unwrap();
            let compute: u64 = r.npus.iter().map(|s| s.compute_busy).sum();
            let comm: u64 = r.npus.iter().map(|s| s.comm_busy).sum();
            let ratio = compute as f64 / comm as f64;
            assert!((ratio / p.compute_to_comm() - 1.0).abs() < 1e-3, "{p}: {ratio}");
        }
    }

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("gpt".parse::<Preset>().is_err());
    }
}
