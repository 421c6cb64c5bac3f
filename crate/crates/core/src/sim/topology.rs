use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::schema::CommType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TopologyKind {
    Torus2d,
    Switch2lvl,
}

impl TopologyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Torus2d => "torus2d",
            TopologyKind::Switch2lvl => "switch2lvl",
        }
    }
}

/// Two-dimensional network. Rank `r` sits at `(r % d1, r / d1)`; bandwidth is
/// bytes/s and latency seconds per transfer step, per dimension.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub dims: (u32, u32),
    pub bandwidth: (f64, f64),
    #[serde(default)]
    pub latency: (f64, f64),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TopologyError {
    #[error("topology dims must be at least 1x1, got {0}x{1}")]
    BadDims(u32, u32),
    #[error("bandwidths must be positive and finite, got {0}, {1}")]
    BadBandwidth(f64, f64),
    #[error("latencies must be non-negative and finite, got {0}, {1}")]
    BadLatency(f64, f64),
    #[error("cannot parse topology {0:?} (expected torus2d:D1xD2 or switch2lvl:D1xD2)")]
    Parse(String),
}

impl Topology {
    pub fn new(kind: TopologyKind, dims: (u32, u32), bandwidth: (f64, f64)) -> Self {
        Topology { kind, dims, bandwidth, latency: (0.0, 0.0) }
    }

    pub fn torus(d1: u32, d2: u32, bw: (f64, f64)) -> Self {
        Self::new(TopologyKind::Torus2d, (d1, d2), bw)
    }

    pub fn switch(d1: u32, d2: u32, bw: (f64, f64)) -> Self {
        Self::new(TopologyKind::Switch2lvl, (d1, d2), bw)
    }

    pub fn with_latency(mut self, l1: f64, l2: f64) -> Self {
        self.latency = (l1, l2);
        self
    }

    pub fn npus(&self) -> u32 {
        self.dims.0 * self.dims.1
    }

    pub fn coords(&self, rank: u32) -> (u32, u32) {
        (rank % self.dims.0, rank / self.dims.0)
    }

    pub fn check(&self) -> Result<(), TopologyError> {
        if self.dims.0 == 0 || self.dims.1 == 0 {
            return Err(TopologyError::BadDims(self.dims.0, self.dims.1));
        }
        let (b1, b2) = self.bandwidth;
        if !(b1 > 0.0 && b2 > 0.0 && b1.is_finite() && b2.is_finite()) {
            return Err(TopologyError::BadBandwidth(b1, b2));
        }
        let (l1, l2) = self.latency;
        if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
            return Err(TopologyError::BadLatency(l1, l2));
        }
        Ok(())
    }

    fn dim(&self, which: Dim) -> (f64, f64) {
        match which {
            Dim::One => (self.bandwidth.0, self.latency.0),
            Dim::Two => (self.bandwidth.1, self.latency.1),
        }
    }

    /// Span of a rank set: which dimensions its members differ along.
    pub fn span_of(&self, ranks: &[u32]) -> Span {
        let mut xs: Vec<u32> = ranks.iter().map(|&r| self.coords(r).0).collect();
        let mut ys: Vec<u32> = ranks.iter().map(|&r| self.coords(r).1).collect();
        xs.sort_unstable();
        xs.dedup();
        ys.sort_unstable();
        ys.dedup();
        let n = ranks.len() as u32;
        match (xs.len() > 1, ys.len() > 1) {
            (true, true) => Span::Both { n1: xs.len() as u32, n2: ys.len() as u32 },
            (false, true) => Span::Dim2(n),
            _ => Span::Dim1(n),
        }
    }

    /// Point-to-point transfer seconds between two ranks.
    pub fn p2p_time(&self, size: u64, src: u32, dst: u32) -> f64 {
        let (a, b) = (self.coords(src), self.coords(dst));
        let s = size as f64;
        if a.0 != b.0 && a.1 != b.1 {
            s / self.bandwidth.0.min(self.bandwidth.1) + self.latency.0 + self.latency.1
        } else if a.0 == b.0 && a.1 != b.1 {
            s / self.bandwidth.1 + self.latency.1
        } else {
            s / self.bandwidth.0 + self.latency.0
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}x{}", self.kind.as_str(), self.dims.0, self.dims.1)
    }
}

impl FromStr for Topology {
    type Err = TopologyError;

    /// `torus2d:8x8` or `switch2lvl:16x4`, bandwidth defaulting to 62 GB/s per dim.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TopologyError::Parse(s.to_string());
        let (kind, dims) = s.split_once(':').ok_or_else(err)?;
        let kind = match kind.to_ascii_lowercase().as_str() {
            "torus2d" | "torus" => TopologyKind::Torus2d,
            "switch2lvl" | "switch" => TopologyKind::Switch2lvl,
            _ => return Err(err()),
        };
        let (a, b) = dims.split_once(['x', 'X']).ok_or_else(err)?;
        let d1 = a.trim().parse().map_err(|_| err())?;
        let d2 = b.trim().parse().map_err(|_| err())?;
        let t = Topology::new(kind, (d1, d2), (62e9, 62e9));
        t.check()?;
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dim {
    One,
    Two,
}

/// Extent of a collective on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Span {
    Dim1(u32),
    Dim2(u32),
    /// `n1` members along dim 1 times `n2` along dim 2.
    Both { n1: u32, n2: u32 },
}

impl Span {
    pub fn members(self) -> u32 {
        match self {
            Span::Dim1(n) | Span::Dim2(n) => n,
            Span::Both { n1, n2 } => n1 * n2,
        }
    }
}

/// Ring cost along one dimension.
fn ring(ty: CommType, s: f64, n: u32, bw: f64, lat: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let k = (n - 1) as f64;
    let nf = n as f64;
    match ty {
        CommType::AllReduce => 2.0 * k * s / (nf * bw) + 2.0 * k * lat,
        CommType::AllGather | CommType::ReduceScatter => k * s / (nf * bw) + k * lat,
        CommType::AllToAll => k * s / (nf * bw) + lat,
        CommType::Send | CommType::Recv => s / bw + lat,
    }
}

/// Modeled seconds for a collective of `size` bytes over `span`.
///
/// Spans covering both dimensions run in phases: all-reduce as
/// reduce-scatter on dim 1, all-reduce of the `1/n1` shard on dim 2, then
/// all-gather on dim 1; all-gather gathers the shard on dim 2 before dim 1;
/// reduce-scatter mirrors it; all-to-all exchanges on each dimension in turn.
pub fn collective_time(ty: CommType, size: u64, span: Span, topo: &Topology) -> f64 {
    let s = size as f64;
    let (b1, l1) = topo.dim(Dim::One);
    let (b2, l2) = topo.dim(Dim::Two);
    match span {
        Span::Dim1(n) => ring(ty, s, n, b1, l1),
        Span::Dim2(n) => ring(ty, s, n, b2, l2),
        Span::Both { n1, n2 } => {
            let shard = s / n1 as f64;
            match ty {
                CommType::AllReduce => {
                    ring(CommType::ReduceScatter, s, n1, b1, l1)
                        + ring(CommType::AllReduce, shard, n2, b2, l2)
                        + ring(CommType::AllGather, s, n1, b1, l1)
                }
                CommType::AllGather => ring(CommType::AllGather, shard, n2, b2, l2) + ring(CommType::AllGather, s, n1, b1, l1),
                CommType::ReduceScatter => {
                    ring(CommType::ReduceScatter, s, n1, b1, l1) + ring(CommType::ReduceScatter, shard, n2, b2, l2)
                }
                CommType::AllToAll => ring(CommType::AllToAll, s, n1, b1, l1) + ring(CommType::AllToAll, s, n2, b2, l2),
                CommType::Send | CommType::Recv => s / b1.min(b2) + l1 + l2,
            }
        }
    }
}

/// Seconds to integer cycles, rounding up. Values within a relative 1e-9 of
/// an integer snap to it so float noise does not add a cycle.
pub fn seconds_to_cycles(seconds: f64, cycle_time: f64) -> u64 {
    if seconds <= 0.0 {
        return 0;
    }
    let x = seconds / cycle_time;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}
