//! Fitting generative models of collective sequences and sampling new ones.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gmm::{kmeanspp, EmOptions, Gmm, GmmError};
use super::master::{reconstruct_rank_traces, MasterOp, MasterTrace};
use crate::par::{self, Execution};
use crate::schema::{CommType, Trace};

/// Collective kinds modeled, in the order used by composition vectors.
pub const MODELED_TYPES: [CommType; 4] =
    [CommType::AllReduce, CommType::AllGather, CommType::ReduceScatter, CommType::AllToAll];

pub const MODEL_FORMAT: &str = "chakra-synth-model";
pub const MODEL_VERSION: u32 = 1;

fn type_index(t: CommType) -> Option<usize> {
    MODELED_TYPES.iter().position(|&m| m == t)
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("corpus has no collectives to fit")]
    EmptyCorpus,
    #[error("fitting {comm_type} sizes: {source}")]
    Gmm {
        comm_type: CommType,
        #[source]
        source: GmmError,
    },
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("npus must be at least 1")]
    NoNpus,
}

/// A cluster of traces with similar collective-type composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub weight: f64,
    /// Probability of each modeled type, see [`SynthModels::comm_types`].
    pub composition: Vec<f64>,
    /// `transition[a][b]`: probability that type `b` follows type `a`.
    /// Absent means types are drawn independently from `composition`.
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Observed sequence lengths, sampled uniformly.
    pub lengths: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthModels {
    pub format: String,
    pub version: u32,
    pub comm_types: Vec<String>,
    pub clusters: Vec<ClusterModel>,
    /// Mixture over log2(bytes) per comm type name.
    pub sizes: BTreeMap<String, Gmm>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub k_components: usize,
    pub n_clusters: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub exec: Execution,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { k_components: 2, n_clusters: 2, seed: 0, max_iter: 200, tol: 1e-6, exec: Execution::Auto }
    }
}

/// How a sampled per-rank message size is spread over ranks: each rank gets
/// the size scaled by `1 + jitter * u`, `u` uniform in [-1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub npus: u32,
    pub seed: u64,
    /// Fixed sequence length instead of sampling one.
    pub length: Option<usize>,
    pub jitter: f64,
}

impl SynthConfig {
    pub fn new(npus: u32, seed: u64) -> Self {
        SynthConfig { npus, seed, length: None, jitter: 0.0 }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
        true
    } else {
        false
    }
}

fn composition_of(m: &MasterTrace) -> Vec<f64> {
    let mut c = vec![0.0; MODELED_TYPES.len()];
    for op in &m.ops {
        if let Some(i) = type_index(op.comm_type) {
            c[i] += 1.0;
        }
    }
    normalize(&mut c);
    c
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's algorithm from k-means++ seeds; returns a cluster per point.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut centers: Vec<Vec<f64>> = kmeanspp(points, k, |a: &Vec<f64>, b: &Vec<f64>| dist2(a, b), rng).into_iter().map(|i| points[i].clone()).collect();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k).min_by(|&a, &b| dist2(p, &centers[a]).total_cmp(&dist2(p, &centers[b]))).unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(p, _)| p).collect();
            if !members.is_empty() {
                for (d, v) in c.iter_mut().enumerate() {
                    *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
    assign
}

/// Fits composition clusters, transition matrices, length and size models to
/// a corpus of master traces. Returns the models and any warnings.
pub fn fit_models(corpus: &[MasterTrace], cfg: &FitConfig) -> Result<(SynthModels, Vec<String>), SynthError> {
    let traces: Vec<&MasterTrace> =
        corpus.iter().filter(|m| m.ops.iter().any(|o| type_index(o.comm_type).is_some())).collect();
    if traces.is_empty() {
        return Err(SynthError::EmptyCorpus);
    }
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<Vec<f64>> = traces.iter().map(|m| composition_of(m)).collect();
    let k = cfg.n_clusters.clamp(1, points.len());
    let assign = kmeans(&points, k, &mut rng);

    let nt = MODELED_TYPES.len();
    let mut clusters = Vec::new();
    for j in 0..k {
        let members: Vec<&MasterTrace> = traces.iter().zip(&assign).filter(|(_, &a)| a == j).map(|(m, _)| *m).collect();
        if members.is_empty() {
            continue;
        }
        let mut composition = vec![0.0; nt];
        let mut counts = vec![vec![0.0; nt]; nt];
        let mut lengths = Vec::with_capacity(members.len());
        for m in &members {
            let idx: Vec<usize> = m.ops.iter().filter_map(|o| type_index(o.comm_type)).collect();
            idx.iter().for_each(|&i| composition[i] += 1.0);
            idx.windows(2).for_each(|w| counts[w[0]][w[1]] += 1.0);
            lengths.push(idx.len() as u64);
        }
        normalize(&mut composition);
        for row in &mut counts {
            if !normalize(row) {
                row.clone_from(&composition);
            }
        }
        clusters.push(ClusterModel {
            weight: members.len() as f64 / traces.len() as f64,
            composition,
            transition: Some(counts),
            lengths,
        });
    }

    let mut samples: Vec<(CommType, Vec<f64>)> = MODELED_TYPES.iter().map(|&t| (t, Vec::new())).collect();
    for m in &traces {
        for op in &m.ops {
            if let Some(i) = type_index(op.comm_type) {
                samples[i].1.extend(op.sizes.values().map(|&s| (s.max(1) as f64).log2()));
            }
        }
    }
    samples.retain(|(_, xs)| !xs.is_empty());
    for (t, xs) in &samples {
        if xs.len() < cfg.k_components {
            warnings.push(format!(
                "{t}: {} sample(s) for {} components; fitting a single component",
                xs.len(),
                cfg.k_components
            ));
        }
    }
    let fits = par::map(&samples, cfg.exec, |(t, xs)| {
        let opts = EmOptions {
            max_iter: cfg.max_iter,
            tol: cfg.tol,
            seed: cfg.seed ^ (type_index(*t).unwrap() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        };
        Gmm::fit(xs, cfg.k_components, &opts).map(|(g, _)| (*t, g)).map_err(|source| SynthError::Gmm { comm_type: *t, source })
    });
    let mut sizes = BTreeMap::new();
    for f in fits {
        let (t, g) = f?;
        sizes.insert(t.as_str().to_string(), g);
    }
    let models = SynthModels {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        comm_types: MODELED_TYPES.iter().map(|t| t.as_str().to_string()).collect(),
        clusters,
        sizes,
    };
    Ok((models, warnings))
}

fn sample_index(p: &[f64], rng: &mut impl Rng) -> usize {
    let mut u = rng.random::<f64>();
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding slack: last index with mass
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Rounds up to a positive multiple of 4 bytes.
fn round_bytes(x: f64) -> u64 {
    let b = x.max(1.0).min(u64::MAX as f64 / 2.0).ceil() as u64;
    b.div_ceil(4).max(1) * 4
}

impl SynthModels {
    /// Structural checks for models read from disk.
    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadModel(m));
        if self.format != MODEL_FORMAT {
            return bad(format!("format {:?}, expected {MODEL_FORMAT:?}", self.format));
        }
        if self.version != MODEL_VERSION {
            return bad(format!("unsupported version {}", self.version));
        }
        let names: Vec<String> = MODELED_TYPES.iter().map(|t| t.as_str().to_string()).collect();
        if self.comm_types != names {
            return bad(format!("comm_types must be {names:?}"));
        }
        if self.clusters.is_empty() {
            return bad("no clusters".into());
        }
        let sums_to_one = |v: &[f64]| v.iter().all(|x| *x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        let weights: Vec<f64> = self.clusters.iter().map(|c| c.weight).collect();
        if !sums_to_one(&weights) {
            return bad("cluster weights do not sum to 1".into());
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.composition.len() != names.len() || !sums_to_one(&c.composition) {
                return bad(format!("cluster {i}: composition is not a distribution over {} types", names.len()));
            }
            if let Some(t) = &c.transition {
                if t.len() != names.len() || t.iter().any(|r| r.len() != names.len() || !sums_to_one(r)) {
                    return bad(format!("cluster {i}: transition rows must be distributions"));
                }
            }
        }
        for (t, g) in &self.sizes {
            if !names.contains(t) || !g.is_consistent() {
                return bad(format!("size model for {t:?} is inconsistent"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let m: SynthModels = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    /// Samples one master trace over `cfg.npus` ranks in a single group.
    pub fn synthesize_master(&self, cfg: &SynthConfig) -> Result<MasterTrace, SynthError> {
        if cfg.npus == 0 {
            return Err(SynthError::NoNpus);
        }
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let weights: Vec<f64> = self.clusters.iter().map(|c| c.weight).collect();
        let cluster = &self.clusters[sample_index(&weights, &mut rng)];
        let len = match cfg.length {
            Some(l) => l,
            None if cluster.lengths.is_empty() => 1,
            None => cluster.lengths[rng.random_range(0..cluster.lengths.len())] as usize,
        };
        let participants: BTreeSet<u32> = (0..cfg.npus).collect();
        let mut ops = Vec::with_capacity(len);
        let mut prev: Option<usize> = None;
        for seq in 0..len {
            let dist = match (prev, &cluster.transition) {
                (Some(p), Some(t)) => &t[p],
                _ => &cluster.composition,
            };
            let ti = sample_index(dist, &mut rng);
            prev = Some(ti);
            let ty = MODELED_TYPES[ti];
            let log2 = self.sizes.get(ty.as_str()).map_or(2.0, |g| g.sample(&mut rng)).clamp(0.0, 62.0);
            let base = log2.exp2();
            let sizes = participants
                .iter()
                .map(|&r| {
                    let scale = if cfg.jitter > 0.0 { 1.0 + cfg.jitter * rng.random_range(-1.0..=1.0) } else { 1.0 };
                    (r, round_bytes(base * scale))
                })
                .collect();
            ops.push(MasterOp {
                seq_no: seq as u64,
                comm_type: ty,
                comm_group: "world".into(),
                name: format!("coll_{seq}"),
                participants: participants.clone(),
                sizes,
            });
        }
        Ok(MasterTrace { ops })
    }

    /// Samples per-rank traces; fully determined by `cfg.seed`.
    pub fn synthesize(&self, cfg: &SynthConfig) -> Result<Vec<Trace>, SynthError> {
        Ok(reconstruct_rank_traces(&self.synthesize_master(cfg)?, cfg.npus))
    }
}
