//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chakra_core::feeder::Feeder;
use chakra_core::schema::{attr, Attribute, CommType, EtNode, NodeType, Trace};
use chakra_core::sim::{Span, Topology};
use chakra_core::synth::{MasterTrace, MODELED_TYPES};
use chakra_core::viz::{RowKind, TimelineRow};
use rand::seq::SliceRandom;
use rand::Rng;

const COLLECTIVES: [CommType; 4] = [CommType::AllReduce, CommType::AllGather, CommType::ReduceScatter, CommType::AllToAll];

fn random_name(rng: &mut impl Rng) -> String {
    let len = rng.random_range(0..12);
    let mut s: String = (0..len).map(|_| rng.random_range(0x20u8..0x7f) as char).collect();
    if rng.random_bool(0.1) {
        s.push('é');
    }
    s
}

fn random_float(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => -rng.random::<f64>() * 1e300,
        2 => rng.random::<f64>() * 1e-300,
        _ => rng.random_range(-1e6..1e6),
    }
}

fn extra_attr(rng: &mut impl Rng, idx: usize) -> Attribute {
    let name = format!("x{idx}_{}", rng.random_range(0..1000));
    let a = match rng.random_range(0..6) {
        0 => Attribute::float(name, random_float(rng)),
        1 => Attribute::int(name, rng.random()),
        2 => Attribute::string(name, random_name(rng)),
        3 => Attribute::floats(name, (0..rng.random_range(0..5)).map(|_| random_float(rng)).collect()),
        4 => Attribute::ints(name, (0..rng.random_range(0..5)).map(|_| rng.random()).collect()),
        _ => Attribute::strings(name, (0..rng.random_range(0..4)).map(|_| random_name(rng)).collect()),
    };
    if rng.random_bool(0.2) {
        a.with_doc(random_name(rng))
    } else {
        a
    }
}

/// A valid trace of up to `max_nodes` nodes covering every node type and
/// attribute kind, with non-sequential ids and a random DAG.
pub fn random_valid_trace(rng: &mut impl Rng, max_nodes: usize) -> Trace {
    let n = rng.random_range(0..=max_nodes);
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * rng.random_range(1..4) + 1 + i).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut nodes = Vec::with_capacity(ids.len());
    for (pos, &id) in ids.iter().enumerate() {
        let ty = NodeType::ALL[rng.random_range(0..NodeType::ALL.len())];
        let mut node = EtNode::new(id, random_name(rng), ty);
        match ty {
            NodeType::Comp => node = node.with_attr(Attribute::int(attr::RUNTIME, rng.random_range(0..1 << 40))),
            NodeType::MemLoad | NodeType::MemStore => {
                node = node.with_attr(Attribute::int(attr::TENSOR_SIZE, rng.random_range(0..1 << 30)))
            }
            NodeType::CommColl => {
                node = node
                    .with_attr(Attribute::string(attr::COMM_TYPE, COLLECTIVES[rng.random_range(0..4)].as_str()))
                    .with_attr(Attribute::int(attr::COMM_SIZE, rng.random_range(0..1 << 32)))
                    .with_attr(Attribute::string(attr::COMM_GROUP, format!("g{}", rng.random_range(0..4))))
            }
            NodeType::CommSend | NodeType::CommRecv => {
                let ct = if ty == NodeType::CommSend { CommType::Send } else { CommType::Recv };
                node = node
                    .with_attr(Attribute::string(attr::COMM_TYPE, ct.as_str()))
                    .with_attr(Attribute::int(attr::COMM_SIZE, rng.random_range(0..1 << 32)))
                    .with_attr(Attribute::int(attr::COMM_PEER, rng.random_range(0..64)))
                    .with_attr(Attribute::int(attr::COMM_TAG, rng.random_range(-5..100)))
            }
            _ => {}
        }
        for k in 0..rng.random_range(0..3) {
            node = node.with_attr(extra_attr(rng, k));
        }
        if pos > 0 {
            let k = rng.random_range(0..=pos.min(3));
            let parents: BTreeSet<u64> = (0..k).map(|_| ids[rng.random_range(0..pos)]).collect();
            node = node.with_parents(parents);
        }
        nodes.push(node);
    }
    nodes.shuffle(rng);
    Trace::new(rng.random_range(0..1024), nodes)
}

/// COMP nodes on `n` vertices, edges drawn from `edge_bits` over pairs
/// `(i, j)`, `i < j`, with ids permuted so id order is not a topological
/// order.
pub fn dag_from_bits(n: usize, edge_bits: u64, rng: &mut impl Rng) -> Trace {
    let mut ids: Vec<u64> = (1..=n as u64).collect();
    ids.shuffle(rng);
    let mut nodes: Vec<EtNode> =
        ids.iter().map(|&id| EtNode::new(id, format!("n{id}"), NodeType::Comp).with_attr(Attribute::int(attr::RUNTIME, 1))).collect();
    let mut bit = 0;
    for j in 0..n {
        for i in 0..j {
            if edge_bits >> bit & 1 == 1 {
                nodes[j].parents.push(ids[i]);
            }
            bit += 1;
        }
    }
    Trace::new(0, nodes)
}

pub fn random_dag(n: usize, rng: &mut impl Rng) -> Trace {
    let pairs = n * n.saturating_sub(1) / 2;
    let density = rng.random_range(0.0..1.0);
    let bits = (0..pairs).fold(0u64, |acc, b| acc | (rng.random_bool(density) as u64) << b);
    dag_from_bits(n, bits, rng)
}

/// Every topological order, by permuting ids and checking each edge.
pub fn brute_force_orders(trace: &Trace) -> BTreeSet<Vec<u64>> {
    fn permute(rest: &mut Vec<u64>, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            prefix.push(x);
            permute(rest, prefix, out);
            prefix.pop();
            rest.insert(i, x);
        }
    }
    let mut all = Vec::new();
    permute(&mut trace.nodes().iter().map(|n| n.id).collect(), &mut Vec::new(), &mut all);
    all.into_iter().filter(|order| is_topological(trace, order)).collect()
}

pub fn is_topological(trace: &Trace, order: &[u64]) -> bool {
    let pos: BTreeMap<u64, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    pos.len() == trace.len()
        && trace.nodes().iter().all(|n| pos.contains_key(&n.id) && n.parents.iter().all(|p| pos[p] < pos[&n.id]))
}

/// Feeder after completing `prefix`, plus the issued-but-not-completed ids.
fn replay(trace: &Trace, prefix: &[u64]) -> (Feeder, BTreeSet<u64>) {
    let mut f = Feeder::load(trace).unwrap();
    let mut issued = BTreeSet::new();
    for &id in prefix {
        while let Some(n) = f.get_next_issuable_node() {
            issued.insert(n.id);
        }
        assert!(issued.remove(&id), "{id} was not issuable");
        f.free_children_nodes(id).unwrap();
    }
    while let Some(n) = f.get_next_issuable_node() {
        issued.insert(n.id);
    }
    (f, issued)
}

/// Every completion order the feeder admits, exploring each choice.
pub fn feeder_orders(trace: &Trace) -> BTreeSet<Vec<u64>> {
    fn walk(trace: &Trace, prefix: &mut Vec<u64>, out: &mut BTreeSet<Vec<u64>>) {
        let (f, ready) = replay(trace, prefix);
        if ready.is_empty() {
            assert!(f.is_drained(), "feeder stalled with {:?}", f.pending());
            out.insert(prefix.clone());
            return;
        }
        for id in ready {
            prefix.push(id);
            walk(trace, prefix, out);
            prefix.pop();
        }
    }
    let mut out = BTreeSet::new();
    walk(trace, &mut Vec::new(), &mut out);
    out
}

/// Drains the feeder completing a uniformly chosen issued node each step.
pub fn random_drain(trace: &Trace, rng: &mut impl Rng) -> Vec<u64> {
    let mut f = Feeder::load(trace).unwrap();
    let mut issued = Vec::new();
    let mut order = Vec::new();
    loop {
        while let Some(n) = f.get_next_issuable_node() {
            issued.push(n.id);
        }
        if issued.is_empty() {
            break;
        }
        let id = issued.swap_remove(rng.random_range(0..issued.len()));
        f.free_children_nodes(id).unwrap();
        order.push(id);
    }
    assert!(f.is_drained());
    order
}

/// Collective cost by walking the ring algorithm step by step: every step
/// moves one `S/N` chunk across one link and pays one latency.
pub fn ring_steps(ty: CommType, size: f64, n: u32, bw: f64, lat: f64) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let chunk = size / n as f64;
    let steps = match ty {
        CommType::AllReduce => 2 * (n - 1),
        CommType::AllGather | CommType::ReduceScatter => n - 1,
        CommType::AllToAll => {
            // pipelined personalized exchange: n-1 chunks back to back, one latency
            let mut t = lat;
            for _ in 1..n {
                t += chunk / bw;
            }
            return t;
        }
        CommType::Send | CommType::Recv => return size / bw + lat,
    };
    let mut t = 0.0;
    for _ in 0..steps {
        t += chunk / bw + lat;
    }
    t
}

/// Hierarchical collectives as a sequence of single-dimension phases.
pub fn collective_oracle(ty: CommType, size: u64, span: Span, topo: &Topology) -> f64 {
    let s = size as f64;
    let (b1, b2) = topo.bandwidth;
    let (l1, l2) = topo.latency;
    match span {
        Span::Dim1(n) => ring_steps(ty, s, n, b1, l1),
        Span::Dim2(n) => ring_steps(ty, s, n, b2, l2),
        Span::Both { n1, n2 } => {
            let phases: Vec<(CommType, f64, u32, f64, f64)> = match ty {
                CommType::AllReduce => vec![
                    (CommType::ReduceScatter, s, n1, b1, l1),
                    (CommType::AllReduce, s / n1 as f64, n2, b2, l2),
                    (CommType::AllGather, s, n1, b1, l1),
                ],
                CommType::AllGather => {
                    vec![(CommType::AllGather, s / n1 as f64, n2, b2, l2), (CommType::AllGather, s, n1, b1, l1)]
                }
                CommType::ReduceScatter => {
                    vec![(CommType::ReduceScatter, s, n1, b1, l1), (CommType::ReduceScatter, s / n1 as f64, n2, b2, l2)]
                }
                _ => vec![(ty, s, n1, b1, l1), (ty, s, n2, b2, l2)],
            };
            phases.into_iter().map(|(t, s, n, b, l)| ring_steps(t, s, n, b, l)).sum()
        }
    }
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Chrome-trace consistency: one X event per issue/callback pair, durations
/// summing to the timeline's, tid by node class.
pub fn check_chrome(rows: &[TimelineRow], json: &str, type_of: impl Fn(u32, u64) -> Option<NodeType>) -> Result<(), String> {
    let events: Vec<serde_json::Value> = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let xs: Vec<&serde_json::Value> = events.iter().filter(|e| e["ph"] == "X").collect();
    let issues: BTreeMap<(u32, u64), u64> =
        rows.iter().filter(|r| r.kind == RowKind::Issue).map(|r| ((r.gpu_id, r.node_id), r.curr_cycle)).collect();
    let pairs: Vec<(u32, u64, u64)> = rows
        .iter()
        .filter(|r| r.kind == RowKind::Callback)
        .map(|r| (r.gpu_id, r.node_id, r.curr_cycle - issues[&(r.gpu_id, r.node_id)]))
        .collect();
    if xs.len() != pairs.len() {
        return Err(format!("{} X events for {} pairs", xs.len(), pairs.len()));
    }
    let dur_sum: u64 = xs.iter().map(|e| e["dur"].as_u64().unwrap()).sum();
    let pair_sum: u64 = pairs.iter().map(|p| p.2).sum();
    if dur_sum != pair_sum {
        return Err(format!("sum of dur {dur_sum} != sum of callback-issue {pair_sum}"));
    }
    for e in &xs {
        let npu = e["pid"].as_u64().unwrap() as u32;
        let id = e["args"]["node_id"].as_u64().unwrap();
        let want = match type_of(npu, id) {
            Some(t) if t.is_mem() => 1,
            Some(NodeType::Comp) => 2,
            Some(t) if t.is_comm() => 3,
            _ => 0,
        };
        if e["tid"].as_u64() != Some(want) {
            return Err(format!("npu {npu} node {id}: tid {} want {want}", e["tid"]));
        }
    }
    Ok(())
}

/// A corpus that is mergeable by construction: a global sequence of
/// collectives over random groups, each rank keeping the ops it is in.
pub fn random_mergeable(rng: &mut impl Rng, ranks: u32, max_ops: usize) -> (Vec<Trace>, MasterTrace) {
    let n_groups = rng.random_range(1..=4);
    let groups: Vec<(String, BTreeSet<u32>)> = (0..n_groups)
        .map(|g| {
            let mut members: BTreeSet<u32> = (0..ranks).filter(|_| rng.random_bool(0.6)).collect();
            members.insert(rng.random_range(0..ranks));
            (format!("grp{g}"), members)
        })
        .collect();
    let n_ops = rng.random_range(1..=max_ops);
    let mut ops = Vec::new();
    for i in 0..n_ops {
        let (name, members) = &groups[rng.random_range(0..groups.len())];
        ops.push(chakra_core::synth::MasterOp {
            seq_no: i as u64,
            comm_type: MODELED_TYPES[rng.random_range(0..4)],
            comm_group: name.clone(),
            name: format!("op{i}"),
            participants: members.clone(),
            sizes: members.iter().map(|&r| (r, rng.random_range(1..1u64 << 30))).collect(),
        });
    }
    let master = MasterTrace { ops };
    (rank_traces(&master, ranks, rng), master)
}

/// Per-rank traces for a master, built directly: each collective may be
/// preceded by a compute node, everything chained, ids with random gaps.
pub fn rank_traces(master: &MasterTrace, ranks: u32, rng: &mut impl Rng) -> Vec<Trace> {
    (0..ranks)
        .map(|r| {
            let mut nodes: Vec<EtNode> = Vec::new();
            let mut next = rng.random_range(1..10u64);
            let mut push = |mut node: EtNode, nodes: &mut Vec<EtNode>, rng: &mut dyn rand::RngCore| {
                node.id = next;
                if let Some(prev) = nodes.last() {
                    node.parents.push(prev.id);
                }
                next += rng.random_range(1..4);
                nodes.push(node);
            };
            for op in master.ops.iter().filter(|o| o.participants.contains(&r)) {
                if rng.random_bool(0.3) {
                    let c = EtNode::new(0, "work", NodeType::Comp).with_attr(Attribute::int(attr::RUNTIME, 10));
                    push(c, &mut nodes, rng);
                }
                let c = EtNode::new(0, op.name.clone(), NodeType::CommColl)
                    .with_attr(Attribute::string(attr::COMM_TYPE, op.comm_type.as_str()))
                    .with_attr(Attribute::int(attr::COMM_SIZE, op.sizes[&r] as i64))
                    .with_attr(Attribute::string(attr::COMM_GROUP, op.comm_group.clone()));
                push(c, &mut nodes, rng);
            }
            nodes.shuffle(rng);
            Trace::new(r, nodes)
        })
        .collect()
}
