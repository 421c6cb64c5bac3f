//! Converters from framework traces into per-NPU traces.

mod dot;
mod flexflow;
mod pytorch;

pub use dot::{parse_dot, DotEdge, DotError, DotGraph, DotNode};
pub use flexflow::{convert_flexflow, convert_flexflow_str};
pub use pytorch::{convert_pytorch, convert_pytorch_str, PyTorchOptions};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};

use crate::schema::{attr, Attribute, CommType, EtNode, NodeType, Trace, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum ConvertError {
    #[error("malformed input JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dot(#[from] DotError),
    #[error("duplicate node id {0}")]
    DuplicateId(String),
    #[error("node {node} depends on unknown node {dep}")]
    UnknownDependency { node: String, dep: String },
    #[error("node {0} has no NPU assignment")]
    MissingNpu(u64),
    #[error("line {line}: attribute {key}={value:?} is not a non-negative integer")]
    BadNumber { line: usize, key: String, value: String },
    #[error("npu {npu}: converted trace is invalid: {report}")]
    Invalid { npu: u32, report: ValidationReport },
}

/// Output of a converter: traces ascending by npu, plus non-fatal notes
/// about nodes that could not be interpreted.
#[derive(Clone, Debug, PartialEq)]
pub struct Conversion {
    pub traces: Vec<Trace>,
    pub warnings: Vec<String>,
}

/// A node of a global graph with its NPU placement.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedNode {
    pub npu: Option<u32>,
    pub node: EtNode,
}

fn p2p_node(id: u64, ty: NodeType, name: String, peer: u32, bytes: u64, tag: i64) -> EtNode {
    let ct = if ty == NodeType::CommSend { CommType::Send } else { CommType::Recv };
    EtNode::new(id, name, ty)
        .with_attr(Attribute::string(attr::COMM_TYPE, ct.as_str()))
        .with_attr(Attribute::int(attr::COMM_SIZE, bytes as i64))
        .with_attr(Attribute::int(attr::COMM_PEER, peer as i64))
        .with_attr(Attribute::int(attr::COMM_TAG, tag))
}

/// (producer position, 0 for source nodes or 1 for bridges, consumer npu)
type ChainKey = (usize, u8, u32);

/// Global order used to serialize network nodes: Kahn's order over the
/// dependencies plus an edge from each SEND to its matching RECV, smallest
/// id first. Nodes on a cycle are left out.
fn global_positions(nodes: &[AnnotatedNode], npu_of: &HashMap<u64, u32>) -> HashMap<u64, usize> {
    let mut succ: HashMap<u64, Vec<u64>> = HashMap::new();
    let mut indeg: BTreeMap<u64, usize> = nodes.iter().map(|n| (n.node.id, 0)).collect();
    let mut add = |a: u64, b: u64, indeg: &mut BTreeMap<u64, usize>| {
        succ.entry(a).or_default().push(b);
        *indeg.get_mut(&b).expect("known node") += 1;
    };
    for n in nodes {
        for &p in &n.node.parents {
            add(p, n.node.id, &mut indeg);
        }
    }
    let mut by_id: Vec<&AnnotatedNode> = nodes.iter().collect();
    by_id.sort_by_key(|n| n.node.id);
    let mut sends: HashMap<(u32, i64, i64), VecDeque<u64>> = HashMap::new();
    let mut recvs: HashMap<(u32, i64, i64), VecDeque<u64>> = HashMap::new();
    for n in &by_id {
        let (Some(peer), tag) = (n.node.comm_peer(), n.node.comm_tag().unwrap_or(0)) else { continue };
        let here = npu_of[&n.node.id];
        match n.node.node_type {
            NodeType::CommSend => sends.entry((here, peer, tag)).or_default().push_back(n.node.id),
            NodeType::CommRecv if peer >= 0 => {
                recvs.entry((peer as u32, here as i64, tag)).or_default().push_back(n.node.id)
            }
            _ => {}
        }
    }
    for (k, ss) in sends {
        if let Some(rs) = recvs.get(&k) {
            for (&s, &r) in ss.iter().zip(rs) {
                add(s, r, &mut indeg);
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<u64>> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&id, _)| Reverse(id)).collect();
    let mut pos = HashMap::with_capacity(nodes.len());
    while let Some(Reverse(id)) = heap.pop() {
        pos.insert(id, pos.len());
        for &c in succ.get(&id).into_iter().flatten() {
            let d = indeg.get_mut(&c).expect("known node");
            *d -= 1;
            if *d == 0 {
                heap.push(Reverse(c));
            }
        }
    }
    pos
}

/// Splits a global graph into per-NPU traces. Each dependency from a node
/// on NPU `a` to nodes on NPU `b` becomes one zero-byte COMM_SEND on `a`
/// (after the producer) and COMM_RECV on `b` (before the consumers), sharing
/// a fresh tag. Inserted nodes get ids above every input id.
///
/// Network nodes on each NPU are then chained in one global order so that
/// blocking point-to-point transfers cannot wait on each other in a circle.
pub fn split_per_npu(nodes: Vec<AnnotatedNode>) -> Result<Vec<Trace>, ConvertError> {
    let mut npu_of = HashMap::with_capacity(nodes.len());
    for n in &nodes {
        let npu = n.npu.ok_or(ConvertError::MissingNpu(n.node.id))?;
        if npu_of.insert(n.node.id, npu).is_some() {
            return Err(ConvertError::DuplicateId(n.node.id.to_string()));
        }
    }
    for n in &nodes {
        for p in &n.node.parents {
            if !npu_of.contains_key(p) {
                return Err(ConvertError::UnknownDependency { node: n.node.id.to_string(), dep: p.to_string() });
            }
        }
    }
    let pos = global_positions(&nodes, &npu_of);
    let rank = |id: u64| pos.get(&id).copied().unwrap_or(usize::MAX);
    let mut next_id = nodes.iter().map(|n| n.node.id).max().unwrap_or(0) + 1;
    let mut next_tag = nodes.iter().filter_map(|n| n.node.comm_tag()).max().map_or(0, |t| t + 1);
    let mut per_npu: BTreeMap<u32, Vec<EtNode>> = BTreeMap::new();
    // network nodes per npu with their place in the global order
    let mut net: BTreeMap<u32, Vec<(ChainKey, u64)>> = BTreeMap::new();
    // (producer, consumer npu) -> recv id
    let mut bridges: HashMap<(u64, u32), u64> = HashMap::new();
    let mut sorted = nodes;
    sorted.sort_by_key(|n| n.node.id);
    for n in sorted {
        let npu = npu_of[&n.node.id];
        let mut node = n.node;
        if node.node_type.is_comm() {
            net.entry(npu).or_default().push(((rank(node.id), 0, 0), node.id));
        }
        let mut seen = HashSet::new();
        let mut parents = Vec::with_capacity(node.parents.len());
        for p in std::mem::take(&mut node.parents) {
            let src = npu_of[&p];
            let q = if src == npu {
                p
            } else {
                *bridges.entry((p, npu)).or_insert_with(|| {
                    let (send, recv, tag) = (next_id, next_id + 1, next_tag);
                    next_id += 2;
                    next_tag += 1;
                    let key = (rank(p), 1, npu);
                    per_npu.entry(src).or_default().push(
                        p2p_node(send, NodeType::CommSend, format!("send_{p}_to_{npu}"), npu, 0, tag).with_parents([p]),
                    );
                    net.entry(src).or_default().push((key, send));
                    per_npu.entry(npu).or_default().push(p2p_node(
                        recv,
                        NodeType::CommRecv,
                        format!("recv_{p}_from_{src}"),
                        src,
                        0,
                        tag,
                    ));
                    net.entry(npu).or_default().push((key, recv));
                    recv
                })
            };
            if seen.insert(q) {
                parents.push(q);
            }
        }
        node.parents = parents;
        per_npu.entry(npu).or_default().push(node);
    }
    for (npu, mut chain) in net {
        chain.sort();
        let nodes = per_npu.get_mut(&npu).expect("npu has nodes");
        let index: HashMap<u64, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        for w in chain.windows(2) {
            let (prev, next) = (w[0].1, w[1].1);
            let child = &mut nodes[index[&next]];
            if !child.parents.contains(&prev) {
                child.parents.push(prev);
            }
        }
    }
    per_npu
        .into_iter()
        .map(|(npu, nodes)| {
            let t = Trace::new(npu, nodes);
            let report = t.validate();
            if report.is_valid() {
                Ok(t)
            } else {
                Err(ConvertError::Invalid { npu, report })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(npu: u32, node: EtNode) -> AnnotatedNode {
        AnnotatedNode { npu: Some(npu), node }
    }

    fn comp(id: u64) -> EtNode {
        EtNode::new(id, format!("c{id}"), NodeType::Comp).with_attr(Attribute::int(attr::RUNTIME, 1))
    }

    #[test]
    fn single_npu_unchanged() {
        let nodes = vec![at(0, comp(1)), at(0, comp(2).with_parents([1]))];
        let traces = split_per_npu(nodes).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].nodes(), &[comp(1), comp(2).with_parents([1])]);
    }

    #[test]
    fn cross_npu_edge_becomes_send_recv() {
        let traces = split_per_npu(vec![at(0, comp(1)), at(1, comp(2).with_parents([1]))]).unwrap();
        assert_eq!(traces.len(), 2);
        let send = traces[0].nodes().iter().find(|n| n.node_type == NodeType::CommSend).unwrap();
        let recv = traces[1].nodes().iter().find(|n| n.node_type == NodeType::CommRecv).unwrap();
        assert_eq!(send.parents, [1]);
        assert_eq!(send.comm_peer(), Some(1));
        assert_eq!(recv.comm_peer(), Some(0));
        assert_eq!(send.comm_tag(), recv.comm_tag());
        assert_eq!(traces[1].node(2).unwrap().parents, [recv.id]);
    }

    #[test]
    fn independent_nodes_one_trace_each() {
        let traces = split_per_npu((0..4).map(|i| at(i, comp(i as u64 + 1))).collect()).unwrap();
        assert_eq!(traces.len(), 4);
        assert!(traces.iter().all(|t| t.len() == 1));
    }

    #[test]
    fn crossed_transfers_replay_without_deadlock() {
        // each npu consumes the other's output; recvs must not block the sends
        let nodes = vec![
            at(0, comp(1)),
            at(1, comp(2)),
            at(0, comp(3).with_parents([2])),
            at(1, comp(4).with_parents([1])),
        ];
        let traces = split_per_npu(nodes).unwrap();
        let topo = crate::sim::Topology::torus(2, 1, (1e9, 1e9));
        let r = crate::sim::run_simulation(&traces, &crate::sim::SimConfig::new(topo)).unwrap();
        assert!(r.makespan >= 2);
    }

    #[test]
    fn missing_npu_is_an_error() {
        let err = split_per_npu(vec![AnnotatedNode { npu: None, node: comp(7) }]).unwrap_err();
        assert!(matches!(err, ConvertError::MissingNpu(7)));
    }
}
