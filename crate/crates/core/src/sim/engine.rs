use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use super::breakdown::exposed_time;
use super::topology::{collective_time, seconds_to_cycles, TopologyError};
use super::{SimConfig, Timing};
use crate::feeder::{Feeder, FeederError};
use crate::schema::{attr, CommType, EtNode, NodeType, Trace, ValidationReport};
use crate::viz::{RowKind, TimelineRow};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("npu {npu}: invalid trace: {report}")]
    InvalidTrace { npu: u32, report: ValidationReport },
    #[error("npu {npu}: {source}")]
    Feeder {
        npu: u32,
        #[source]
        source: FeederError,
    },
    #[error("duplicate trace for npu {0}")]
    DuplicateNpu(u32),
    #[error("npu {npu} outside topology with {npus} npus")]
    NpuOutOfRange { npu: u32, npus: u32 },
    #[error("npu {npu} node {node}: COMP node has no runtime attribute")]
    MissingRuntime { npu: u32, node: u64 },
    #[error("npu {npu} node {node}: COMP node has neither num_ops nor runtime")]
    MissingOps { npu: u32, node: u64 },
    #[error("modeled compute needs a compute_rate")]
    NoComputeRate,
    #[error("npu {npu} node {node}: peer {peer} has no trace")]
    UnknownPeer { npu: u32, node: u64, peer: i64 },
    #[error("collective {name:?} in group {group:?}: members disagree on comm_type")]
    CollectiveMismatch { group: String, name: String },
    #[error("{0}")]
    Deadlock(DeadlockReport),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StuckNode {
    pub npu: u32,
    pub id: u64,
    pub name: String,
    /// Holding the network while its peers have not arrived.
    pub waiting_for_peers: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeadlockReport {
    pub cycle: u64,
    pub stuck: Vec<StuckNode>,
}

impl DeadlockReport {
    pub fn names(&self) -> BTreeSet<&str> {
        self.stuck.iter().map(|s| s.name.as_str()).collect()
    }
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "deadlock at cycle {}: {} node(s) cannot proceed", self.cycle, self.stuck.len())?;
        for s in self.stuck.iter().take(20) {
            write!(f, "\n  npu {} node {} {:?}", s.npu, s.id, s.name)?;
            if s.waiting_for_peers {
                f.write_str(" (waiting for peers)")?;
            }
        }
        if self.stuck.len() > 20 {
            write!(f, "\n  ... and {} more", self.stuck.len() - 20)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeSpan {
    pub npu: u32,
    pub id: u64,
    pub node_type: NodeType,
    /// Cycle at which the node's dependencies were all met.
    pub ready: u64,
    pub start: u64,
    pub finish: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NpuStats {
    pub npu: u32,
    pub compute_busy: u64,
    pub comm_busy: u64,
    pub mem_busy: u64,
    pub exposed_comm: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimResult {
    pub makespan: u64,
    /// Ascending by npu.
    pub npus: Vec<NpuStats>,
    pub timeline: Vec<TimelineRow>,
    /// Ascending by (npu, id).
    pub spans: Vec<NodeSpan>,
}

impl SimResult {
    pub fn span(&self, npu: u32, id: u64) -> Option<&NodeSpan> {
        self.spans.binary_search_by_key(&(npu, id), |s| (s.npu, s.id)).ok().map(|i| &self.spans[i])
    }
}

const MEMORY: usize = 0;
const COMPUTE: usize = 1;
const NETWORK: usize = 2;

fn class_of(t: NodeType) -> usize {
    if t.is_mem() {
        MEMORY
    } else if t.is_comm() {
        NETWORK
    } else {
        COMPUTE
    }
}

/// Identifies one collective instance: group, node name, and the node's
/// position among same-named nodes of that group on its rank.
type CollKey = (String, String, u32);
/// (sender, receiver, tag, position among identical triples).
type P2pKey = (u32, u32, i64, u32);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Rendezvous {
    Coll(CollKey),
    P2p(P2pKey),
}

struct Npu {
    id: u32,
    feeder: Feeder,
    queues: [VecDeque<Arc<EtNode>>; 3],
    busy: [Option<u64>; 3],
    rendezvous: HashMap<u64, Rendezvous>,
    ready: HashMap<u64, u64>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    npus: Vec<Npu>,
    members: HashMap<String, Vec<u32>>,
    arrivals: HashMap<Rendezvous, Vec<(usize, Arc<EtNode>)>>,
    events: BinaryHeap<Reverse<(u64, usize, u64)>>,
    now: u64,
    timeline: Vec<TimelineRow>,
    spans: Vec<NodeSpan>,
}

/// Replays `traces` to completion.
pub fn run_simulation(traces: &[Trace], cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.topology.check()?;
    let mut engine = Engine::new(traces, cfg)?;
    engine.run()?;
    Ok(engine.finish())
}

impl<'a> Engine<'a> {
    fn new(traces: &[Trace], cfg: &'a SimConfig) -> Result<Self, SimError> {
        let npus_total = cfg.topology.npus();
        let mut sorted: Vec<&Trace> = traces.iter().collect();
        sorted.sort_by_key(|t| t.npu_id());
        let mut index = HashMap::new();
        for (i, t) in sorted.iter().enumerate() {
            if t.npu_id() >= npus_total {
                return Err(SimError::NpuOutOfRange { npu: t.npu_id(), npus: npus_total });
            }
            if index.insert(t.npu_id(), i).is_some() {
                return Err(SimError::DuplicateNpu(t.npu_id()));
            }
        }
        if cfg.compute_timing == Timing::Model && cfg.compute_rate.is_none() {
            return Err(SimError::NoComputeRate);
        }
        let mut members: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
        let mut npus = Vec::with_capacity(sorted.len());
        for t in &sorted {
            let npu = t.npu_id();
            let report = t.validate();
            if !report.is_valid() {
                return Err(SimError::InvalidTrace { npu, report });
            }
            let mut rendezvous = HashMap::new();
            let mut seen_coll: HashMap<(String, String), u32> = HashMap::new();
            let mut seen_p2p: HashMap<(u32, u32, i64), u32> = HashMap::new();
            for n in t.nodes() {
                match n.node_type {
                    NodeType::Comp => match cfg.compute_timing {
                        Timing::FromTrace if n.runtime().is_none() => {
                            return Err(SimError::MissingRuntime { npu, node: n.id })
                        }
                        Timing::Model if n.int_attr(attr::NUM_OPS).is_none() && n.runtime().is_none() => {
                            return Err(SimError::MissingOps { npu, node: n.id })
                        }
                        _ => {}
                    },
                    NodeType::CommColl => {
                        let group = n.comm_group().unwrap_or_default().to_string();
                        members.entry(group.clone()).or_default().insert(npu);
                        let k = seen_coll.entry((group.clone(), n.name.clone())).or_default();
                        rendezvous.insert(n.id, Rendezvous::Coll((group, n.name.clone(), *k)));
                        *k += 1;
                    }
                    NodeType::CommSend | NodeType::CommRecv => {
                        let peer = n.comm_peer().unwrap_or(-1);
                        let p = u32::try_from(peer).ok().filter(|p| index.contains_key(p));
                        let Some(p) = p else {
                            return Err(SimError::UnknownPeer { npu, node: n.id, peer });
                        };
                        let tag = n.comm_tag().unwrap_or(0);
                        let (src, dst) = if n.node_type == NodeType::CommSend { (npu, p) } else { (p, npu) };
                        let k = seen_p2p.entry((src, dst, tag)).or_default();
                        rendezvous.insert(n.id, Rendezvous::P2p((src, dst, tag, *k)));
                        *k += 1;
                    }
                    _ => {}
                }
            }
            let feeder = Feeder::load(t).map_err(|source| SimError::Feeder { npu, source })?;
            npus.push(Npu {
                id: npu,
                feeder,
                queues: Default::default(),
                busy: [None; 3],
                rendezvous,
                ready: HashMap::new(),
            });
        }
        Ok(Engine {
            cfg,
            npus,
            members: members.into_iter().map(|(g, m)| (g, m.into_iter().collect())).collect(),
            arrivals: HashMap::new(),
            events: BinaryHeap::new(),
            now: 0,
            timeline: Vec::new(),
            spans: Vec::new(),
        })
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.pump()?;
        while let Some(&Reverse((t, _, _))) = self.events.peek() {
            self.now = t;
            while let Some(&Reverse((t2, npu, id))) = self.events.peek() {
                if t2 != t {
                    break;
                }
                self.events.pop();
                self.complete(npu, id)?;
            }
            self.pump()?;
        }
        if self.npus.iter().all(|n| n.feeder.is_drained()) {
            Ok(())
        } else {
            Err(SimError::Deadlock(self.deadlock_report()))
        }
    }

    /// Moves newly issuable nodes into class queues and starts idle classes.
    fn pump(&mut self) -> Result<(), SimError> {
        for i in 0..self.npus.len() {
            let now = self.now;
            let npu = &mut self.npus[i];
            while let Some(node) = npu.feeder.get_next_issuable_node() {
                npu.ready.insert(node.id, now);
                npu.queues[class_of(node.node_type)].push_back(node);
            }
            for class in [MEMORY, COMPUTE, NETWORK] {
                let npu = &mut self.npus[i];
                if npu.busy[class].is_some() {
                    continue;
                }
                if let Some(node) = npu.queues[class].pop_front() {
                    npu.busy[class] = Some(node.id);
                    self.begin(i, node)?;
                }
            }
        }
        Ok(())
    }

    fn begin(&mut self, i: usize, node: Arc<EtNode>) -> Result<(), SimError> {
        let rv = self.npus[i].rendezvous.get(&node.id).cloned();
        let Some(rv) = rv else {
            let dur = self.local_duration(&node);
            self.start(i, &node, dur);
            return Ok(());
        };
        let expected = match &rv {
            Rendezvous::Coll((g, _, _)) => self.members[g].len(),
            Rendezvous::P2p(_) => 2,
        };
        let waiting = self.arrivals.entry(rv.clone()).or_default();
        waiting.push((i, node));
        if waiting.len() < expected {
            return Ok(());
        }
        let mut group = self.arrivals.remove(&rv).unwrap_or_default();
        group.sort_by_key(|(i, _)| *i);
        let dur = match &rv {
            Rendezvous::Coll((g, name, _)) => {
                let ty = group[0].1.comm_type();
                if group.iter().any(|(_, n)| n.comm_type() != ty) {
                    return Err(SimError::CollectiveMismatch { group: g.clone(), name: name.clone() });
                }
                let from_trace = self.traced_comm_runtime(&group);
                from_trace.unwrap_or_else(|| {
                    let size = group.iter().filter_map(|(_, n)| n.comm_size()).max().unwrap_or(0).max(0) as u64;
                    let span = self.cfg.topology.span_of(&self.members[g]);
                    let secs = collective_time(ty.unwrap_or(CommType::AllReduce), size, span, &self.cfg.topology);
                    seconds_to_cycles(secs, self.cfg.cycle_time)
                })
            }
            Rendezvous::P2p((src, dst, _, _)) => self.traced_comm_runtime(&group).unwrap_or_else(|| {
                let size = group.iter().filter_map(|(_, n)| n.comm_size()).max().unwrap_or(0).max(0) as u64;
                seconds_to_cycles(self.cfg.topology.p2p_time(size, *src, *dst), self.cfg.cycle_time)
            }),
        };
        for (j, n) in &group {
            self.start(*j, n, dur);
        }
        Ok(())
    }

    fn traced_comm_runtime(&self, group: &[(usize, Arc<EtNode>)]) -> Option<u64> {
        if self.cfg.comm_timing != Timing::FromTrace {
            return None;
        }
        group.iter().filter_map(|(_, n)| n.runtime()).max().map(|r| r.max(0) as u64)
    }

    fn local_duration(&self, node: &EtNode) -> u64 {
        let runtime = node.runtime().map(|r| r.max(0) as u64);
        match node.node_type {
            NodeType::Comp => match self.cfg.compute_timing {
                Timing::FromTrace => runtime.unwrap_or(0),
                Timing::Model => match node.int_attr(attr::NUM_OPS) {
                    Some(ops) => seconds_to_cycles(
                        ops.max(0) as f64 / self.cfg.compute_rate.unwrap_or(1.0),
                        self.cfg.cycle_time,
                    ),
                    None => runtime.unwrap_or(0),
                },
            },
            t if t.is_mem() => runtime.unwrap_or_else(|| {
                let bytes = node.int_attr(attr::TENSOR_SIZE).unwrap_or(0).max(0) as f64;
                seconds_to_cycles(bytes / self.cfg.mem_bandwidth, self.cfg.cycle_time)
            }),
            _ => runtime.unwrap_or(0),
        }
    }

    fn start(&mut self, i: usize, node: &EtNode, dur: u64) {
        let npu = &self.npus[i];
        let finish = self.now + dur;
        self.timeline.push(TimelineRow {
            kind: RowKind::Issue,
            gpu_id: npu.id,
            curr_cycle: self.now,
            node_id: node.id,
            node_name: node.name.clone(),
        });
        self.spans.push(NodeSpan {
            npu: npu.id,
            id: node.id,
            node_type: node.node_type,
            ready: npu.ready[&node.id],
            start: self.now,
            finish,
        });
        self.events.push(Reverse((finish, i, node.id)));
    }

    fn complete(&mut self, i: usize, id: u64) -> Result<(), SimError> {
        let npu = &mut self.npus[i];
        let node = npu.feeder.lookup_node(id).expect("completed node is known");
        npu.busy[class_of(node.node_type)] = None;
        self.timeline.push(TimelineRow {
            kind: RowKind::Callback,
            gpu_id: npu.id,
            curr_cycle: self.now,
            node_id: id,
            node_name: node.name.clone(),
        });
        npu.feeder.free_children_nodes(id).map_err(|source| SimError::Feeder { npu: npu.id, source })?;
        Ok(())
    }

    fn deadlock_report(&self) -> DeadlockReport {
        let waiting: BTreeSet<(u32, u64)> = self
            .arrivals
            .values()
            .flatten()
            .map(|(i, n)| (self.npus[*i].id, n.id))
            .collect();
        let mut stuck = Vec::new();
        for npu in &self.npus {
            for id in npu.feeder.pending() {
                let node = npu.feeder.lookup_node(id).expect("pending node is known");
                stuck.push(StuckNode {
                    npu: npu.id,
                    id,
                    name: node.name.clone(),
                    waiting_for_peers: waiting.contains(&(npu.id, id)),
                });
            }
        }
        DeadlockReport { cycle: self.now, stuck }
    }

    fn finish(mut self) -> SimResult {
        self.spans.sort_by_key(|s| (s.npu, s.id));
        let makespan = self.spans.iter().map(|s| s.finish).max().unwrap_or(0);
        let mut npus = Vec::with_capacity(self.npus.len());
        for npu in &self.npus {
            let mine = self.spans.iter().filter(|s| s.npu == npu.id);
            let mut stats = NpuStats { npu: npu.id, ..Default::default() };
            let (mut comm, mut comp) = (Vec::new(), Vec::new());
            for s in mine {
                let d = s.finish - s.start;
                match class_of(s.node_type) {
                    COMPUTE => {
                        if s.node_type == NodeType::Comp {
                            stats.compute_busy += d;
                        }
                        comp.push((s.start, s.finish));
                    }
                    NETWORK => {
                        stats.comm_busy += d;
                        comm.push((s.start, s.finish));
                    }
                    _ => stats.mem_busy += d,
                }
            }
            stats.exposed_comm = exposed_time(&comm, &comp);
            npus.push(stats);
        }
        SimResult { makespan, npus, timeline: self.timeline, spans: self.spans }
    }
}
