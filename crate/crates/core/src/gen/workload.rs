use serde::{Deserialize, Serialize};

use super::builder::{BuildError, NodeHandle, TraceBuilder};
use crate::schema::{CommType, Trace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Parallelism {
    Dp,
    Mp,
    /// Data parallel along dim 1, model parallel along dim 2.
    DpMp,
    /// Model parallel along dim 1, data parallel along dim 2.
    MpDp,
    Pipeline,
}

impl std::str::FromStr for Parallelism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dp" => Ok(Parallelism::Dp),
            "mp" => Ok(Parallelism::Mp),
            "dp_mp" => Ok(Parallelism::DpMp),
            "mp_dp" => Ok(Parallelism::MpDp),
            "pipeline" | "pp" => Ok(Parallelism::Pipeline),
            other => Err(format!("unknown parallelism {other:?} (expected dp, mp, dp_mp, mp_dp, pipeline)")),
        }
    }
}

/// How data-parallel gradients are synchronized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DpSync {
    #[default]
    AllReduce,
    /// REDUCE_SCATTER of gradients followed by ALL_GATHER of parameters.
    ShardedReduceScatterAllGather,
}

/// A model-parallel embedding stage in front of the dense layers, exchanged
/// with ALL_TO_ALL in both passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub lookup_cycles: u64,
    pub exchange_bytes: u64,
}

/// A synthetic layered workload. `compute_cycles` is the cost of one layer's
/// forward pass over the whole batch on one NPU; backward costs the same.
/// Work is divided evenly across NPUs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    #[serde(default = "default_layers")]
    pub layers: u32,
    pub npus: u32,
    pub parallelism: Parallelism,
    #[serde(default)]
    pub dims: Option<(u32, u32)>,
    pub compute_cycles: u64,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
    #[serde(default = "default_microbatches")]
    pub microbatches: u32,
    #[serde(default)]
    pub dp_sync: DpSync,
    #[serde(default)]
    pub embedding: Option<EmbeddingSpec>,
}

fn default_layers() -> u32 {
    6
}

fn default_microbatches() -> u32 {
    4
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpecError {
    #[error("layers must be at least 1")]
    NoLayers,
    #[error("npus must be at least 1")]
    NoNpus,
    #[error("dims {d1}x{d2} do not multiply to {npus} npus")]
    BadDims { d1: u32, d2: u32, npus: u32 },
    #[error("pipeline needs at least one layer per stage ({layers} layers, {npus} stages)")]
    TooFewLayers { layers: u32, npus: u32 },
    #[error("microbatches must be at least 1")]
    NoMicrobatches,
    #[error(transparent)]
    Build(#[from] BuildError),
}

/// Most-square factorization `(d1, d2)` with `d1 >= d2`.
pub fn square_dims(n: u32) -> (u32, u32) {
    let mut d2 = (n as f64).sqrt() as u32;
    while d2 > 1 && !n.is_multiple_of(d2) {
        d2 -= 1;
    }
    let d2 = d2.max(1);
    (n / d2, d2)
}

impl WorkloadSpec {
    pub fn new(parallelism: Parallelism, npus: u32) -> Self {
        WorkloadSpec {
            layers: default_layers(),
            npus,
            parallelism,
            dims: None,
            compute_cycles: 1_000_000,
            weight_bytes: 1 << 20,
            activation_bytes: 1 << 20,
            microbatches: default_microbatches(),
            dp_sync: DpSync::AllReduce,
            embedding: None,
        }
    }

    /// Grid used to place ranks: explicit `dims`, or the most-square split.
    pub fn resolved_dims(&self) -> (u32, u32) {
        self.dims.unwrap_or_else(|| square_dims(self.npus))
    }

    pub fn check(&self) -> Result<(), SpecError> {
        if self.layers == 0 {
            return Err(SpecError::NoLayers);
        }
        if self.npus == 0 {
            return Err(SpecError::NoNpus);
        }
        if let Some((d1, d2)) = self.dims {
            if d1 == 0 || d2 == 0 || d1.checked_mul(d2) != Some(self.npus) {
                return Err(SpecError::BadDims { d1, d2, npus: self.npus });
            }
        }
        if self.parallelism == Parallelism::Pipeline {
            if self.layers < self.npus {
                return Err(SpecError::TooFewLayers { layers: self.layers, npus: self.npus });
            }
            if self.microbatches == 0 {
                return Err(SpecError::NoMicrobatches);
            }
        }
        Ok(())
    }
}

/// One collective dimension of a rank: group name and member count.
#[derive(Clone, Debug)]
struct Group {
    name: String,
    size: u32,
}

/// Per-rank emission state. Communication nodes are chained in program order
/// so every rank offers collectives to the network in the same sequence.
struct Rank {
    b: TraceBuilder,
    last_comp: Option<NodeHandle>,
    last_comm: Option<NodeHandle>,
}

impl Rank {
    fn comp(&mut self, name: String, cycles: u64, extra: Option<NodeHandle>) -> Result<NodeHandle, BuildError> {
        let h = self.b.comp(name, cycles);
        self.b.assign_deps([self.last_comp, extra], h)?;
        self.last_comp = Some(h);
        Ok(h)
    }

    /// Emits a collective after `after`; single-rank groups are elided.
    fn coll(
        &mut self,
        name: String,
        ty: CommType,
        bytes: u64,
        group: &Group,
        after: Option<NodeHandle>,
    ) -> Result<Option<NodeHandle>, BuildError> {
        if group.size <= 1 {
            return Ok(None);
        }
        let h = self.b.coll(name, ty, bytes, &group.name);
        self.b.assign_deps([after, self.last_comm], h)?;
        self.last_comm = Some(h);
        Ok(Some(h))
    }
}

pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<Trace>, SpecError> {
    spec.check()?;
    if spec.parallelism == Parallelism::Pipeline {
        return pipeline(spec);
    }
    let n = spec.npus;
    let (d1, d2) = match spec.parallelism {
        Parallelism::DpMp | Parallelism::MpDp => spec.resolved_dims(),
        _ => (n, 1),
    };
    let world = Group { name: "world".into(), size: n };
    (0..n)
        .map(|r| {
            let (i, j) = (r % d1, r / d1);
            let dim1 = Group { name: format!("dim1.{j}"), size: d1 };
            let dim2 = Group { name: format!("dim2.{i}"), size: d2 };
            let (mp, dp) = match spec.parallelism {
                Parallelism::Dp => (None, Some(world.clone())),
                Parallelism::Mp => (Some(world.clone()), None),
                Parallelism::DpMp => (Some(dim2), Some(dim1)),
                Parallelism::MpDp => (Some(dim1), Some(dim2)),
                Parallelism::Pipeline => unreachable!(),
            };
            layered_rank(spec, r, &world, mp.as_ref(), dp.as_ref())
        })
        .collect()
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b.max(1))
}

fn layered_rank(
    spec: &WorkloadSpec,
    rank: u32,
    world: &Group,
    mp: Option<&Group>,
    dp: Option<&Group>,
) -> Result<Trace, SpecError> {
    let n = spec.npus as u64;
    let mp_size = mp.map_or(1, |g| g.size as u64);
    let dp_size = dp.map_or(1, |g| g.size as u64);
    let cycles = div_ceil(spec.compute_cycles, n);
    // activations are split by the data-parallel batch share, weights by the model shard
    let act = div_ceil(spec.activation_bytes, dp_size);
    let grad = div_ceil(spec.weight_bytes, mp_size);
    let mut r = Rank { b: TraceBuilder::new(rank), last_comp: None, last_comm: None };

    let mut gate = None;
    if let Some(e) = spec.embedding {
        let lookup = r.comp("emb_fwd".into(), div_ceil(e.lookup_cycles, n), None)?;
        gate = r.coll("emb_a2a_fwd".into(), CommType::AllToAll, div_ceil(e.exchange_bytes, n), world, Some(lookup))?;
    }
    for l in 0..spec.layers {
        let f = r.comp(format!("fwd_{l}"), cycles, gate.take())?;
        if let Some(g) = mp {
            gate = r.coll(format!("fwd_{l}_ar"), CommType::AllReduce, act, g, Some(f))?;
        }
    }
    for l in (0..spec.layers).rev() {
        let b = r.comp(format!("bwd_{l}"), cycles, gate.take())?;
        let mut done = b;
        if let Some(g) = mp {
            if let Some(h) = r.coll(format!("bwd_{l}_ar"), CommType::AllReduce, act, g, Some(b))? {
                gate = Some(h);
                done = h;
            }
        }
        if let Some(g) = dp {
            match spec.dp_sync {
                DpSync::AllReduce => {
                    r.coll(format!("grad_{l}_ar"), CommType::AllReduce, grad, g, Some(done))?;
                }
                DpSync::ShardedReduceScatterAllGather => {
                    r.coll(format!("grad_{l}_rs"), CommType::ReduceScatter, grad, g, Some(done))?;
                    r.coll(format!("param_{l}_ag"), CommType::AllGather, grad, g, None)?;
                }
            }
        }
    }
    if let Some(e) = spec.embedding {
        let x = r.coll("emb_a2a_bwd".into(), CommType::AllToAll, div_ceil(e.exchange_bytes, n), world, gate.take())?;
        r.comp("emb_bwd".into(), div_ceil(e.lookup_cycles, n), x)?;
    }
    Ok(r.b.finish()?)
}

/// GPipe-style schedule: every micro-batch forward, then every backward.
fn pipeline(spec: &WorkloadSpec) -> Result<Vec<Trace>, SpecError> {
    let stages = spec.npus;
    let m = spec.microbatches as u64;
    let cycles = div_ceil(spec.compute_cycles, m);
    let bytes = div_ceil(spec.activation_bytes, m);
    (0..stages)
        .map(|s| {
            let lo = s as u64 * spec.layers as u64 / stages as u64;
            let hi = (s as u64 + 1) * spec.layers as u64 / stages as u64;
            let mut r = Rank { b: TraceBuilder::new(s), last_comp: None, last_comm: None };
            let p2p = |r: &mut Rank, send: bool, peer: u32, tag: u64, name: String, after: Option<NodeHandle>| {
                let h = if send {
                    r.b.send(name, peer, bytes, tag as i64)
                } else {
                    r.b.recv(name, peer, bytes, tag as i64)
                };
                r.b.assign_deps([after, r.last_comm], h)?;
                r.last_comm = Some(h);
                Ok::<_, BuildError>(h)
            };
            for mb in 0..m {
                let mut gate = if s > 0 { Some(p2p(&mut r, false, s - 1, mb, format!("recv_fwd_{mb}"), None)?) } else { None };
                for l in lo..hi {
                    r.comp(format!("fwd_{l}_mb{mb}"), cycles, gate.take())?;
                }
                if s + 1 < stages {
                    let last = r.last_comp;
                    p2p(&mut r, true, s + 1, mb, format!("send_fwd_{mb}"), last)?;
                }
            }
            for mb in 0..m {
                let tag = m + mb;
                let mut gate =
                    if s + 1 < stages { Some(p2p(&mut r, false, s + 1, tag, format!("recv_bwd_{mb}"), None)?) } else { None };
                for l in (lo..hi).rev() {
                    r.comp(format!("bwd_{l}_mb{mb}"), cycles, gate.take())?;
                }
                if s > 0 {
                    let last = r.last_comp;
                    p2p(&mut r, true, s - 1, tag, format!("send_bwd_{mb}"), last)?;
                }
            }
            Ok(r.b.finish()?)
        })
        .collect()
}
