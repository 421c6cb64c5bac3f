//! Merging per-rank collective sequences into one ordered master trace, and
//! splitting it back.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::schema::{attr, Attribute, CommType, EtNode, NodeType, Trace};

/// One collective as seen by one rank.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CommOp {
    pub comm_type: CommType,
    pub comm_group: String,
    pub size: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterOp {
    pub seq_no: u64,
    #[serde(with = "comm_type_str")]
    pub comm_type: CommType,
    pub comm_group: String,
    pub name: String,
    pub participants: BTreeSet<u32>,
    /// Bytes contributed by each participant.
    pub sizes: BTreeMap<u32, u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterTrace {
    pub ops: Vec<MasterOp>,
}

pub(crate) mod comm_type_str {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::schema::CommType;

    pub fn serialize<S: Serializer>(t: &CommType, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(t.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CommType, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MasterError {
    #[error(
        "group {group:?}: rank {rank_a} has {op_a} but rank {rank_b} has {op_b} at position {position}"
    )]
    OrderConflict { group: String, position: usize, rank_a: u32, op_a: String, rank_b: u32, op_b: String },
    #[error("groups {0:?} are ordered inconsistently across ranks")]
    CrossGroupCycle(Vec<String>),
    #[error("duplicate trace for rank {0}")]
    DuplicateRank(u32),
    #[error("rank {0}: collective dependencies form a cycle")]
    CyclicTrace(u32),
}

/// The rank's COMM_COLL nodes in program order: a topological order that
/// breaks ties by ascending id.
pub fn collective_order(trace: &Trace) -> Result<Vec<&EtNode>, MasterError> {
    let nodes = trace.nodes();
    let pos: HashMap<u64, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut indeg = vec![0usize; nodes.len()];
    let mut children = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for p in &n.parents {
            if let Some(&j) = pos.get(p) {
                indeg[i] += 1;
                children[j].push(i);
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..nodes.len()).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut out = Vec::new();
    let mut seen = 0;
    while let Some(Reverse(i)) = heap.pop() {
        seen += 1;
        if nodes[i].node_type == NodeType::CommColl {
            out.push(&nodes[i]);
        }
        for &c in &children[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                heap.push(Reverse(c));
            }
        }
    }
    if seen != nodes.len() {
        return Err(MasterError::CyclicTrace(trace.npu_id()));
    }
    Ok(out)
}

/// Per-rank collective sequences, keyed by npu id.
pub fn comm_sequences(traces: &[Trace]) -> Result<BTreeMap<u32, Vec<CommOp>>, MasterError> {
    let mut out = BTreeMap::new();
    for t in traces {
        let seq = collective_order(t)?
            .into_iter()
            .map(|n| CommOp {
                comm_type: n.comm_type().unwrap_or(CommType::AllReduce),
                comm_group: n.comm_group().unwrap_or_default().to_string(),
                size: n.comm_size().unwrap_or(0).max(0) as u64,
            })
            .collect();
        if out.insert(t.npu_id(), seq).is_some() {
            return Err(MasterError::DuplicateRank(t.npu_id()));
        }
    }
    Ok(out)
}

fn describe(n: &EtNode) -> String {
    format!("{:?} ({})", n.name, n.comm_type().map_or("?", |t| t.as_str()))
}

/// Merges rank traces. Within a group, every member must issue the same
/// collectives (same name and type) in the same order. The merged order is
/// topological over all per-rank orders; ties go to the earliest position in
/// any rank, then to the group seen first.
pub fn build_master_trace(traces: &[Trace]) -> Result<MasterTrace, MasterError> {
    let mut ranks: Vec<(u32, Vec<&EtNode>)> = Vec::with_capacity(traces.len());
    for t in traces {
        ranks.push((t.npu_id(), collective_order(t)?));
    }
    ranks.sort_by_key(|(r, _)| *r);
    for w in ranks.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(MasterError::DuplicateRank(w[0].0));
        }
    }

    // group -> member -> its ops in that group
    let mut groups: BTreeMap<&str, BTreeMap<u32, Vec<&EtNode>>> = BTreeMap::new();
    let mut group_rank: HashMap<&str, usize> = HashMap::new();
    for (r, seq) in &ranks {
        for n in seq {
            let g = n.comm_group().unwrap_or_default();
            let next = group_rank.len();
            group_rank.entry(g).or_insert(next);
            groups.entry(g).or_default().entry(*r).or_default().push(n);
        }
    }
    let mut op_index: HashMap<(&str, usize), usize> = HashMap::new();
    let mut ops: Vec<MasterOp> = Vec::new();
    for (g, members) in &groups {
        let (&r0, seq0) = members.iter().next().expect("group has a member");
        for (&r, seq) in members {
            let len = seq.len().max(seq0.len());
            for k in 0..len {
                let (a, b) = (seq0.get(k), seq.get(k));
                let same = matches!((a, b), (Some(a), Some(b)) if a.name == b.name && a.comm_type() == b.comm_type());
                if !same {
                    let show = |n: Option<&&EtNode>| n.map_or("nothing".to_string(), |n| describe(n));
                    return Err(MasterError::OrderConflict {
                        group: g.to_string(),
                        position: k,
                        rank_a: r0,
                        op_a: show(a),
                        rank_b: r,
                        op_b: show(b),
                    });
                }
            }
        }
        for (k, n) in seq0.iter().enumerate() {
            op_index.insert((g, k), ops.len());
            ops.push(MasterOp {
                seq_no: 0,
                comm_type: n.comm_type().unwrap_or(CommType::AllReduce),
                comm_group: g.to_string(),
                name: n.name.clone(),
                participants: members.keys().copied().collect(),
                sizes: members.iter().map(|(&r, s)| (r, s[k].comm_size().unwrap_or(0).max(0) as u64)).collect(),
            });
        }
    }

    // precedence edges from each rank's order
    let mut indeg = vec![0usize; ops.len()];
    let mut succ = vec![Vec::new(); ops.len()];
    let mut first_pos = vec![usize::MAX; ops.len()];
    for (_, seq) in &ranks {
        let mut counters: HashMap<&str, usize> = HashMap::new();
        let mut prev: Option<usize> = None;
        for (p, n) in seq.iter().enumerate() {
            let g = n.comm_group().unwrap_or_default();
            let k = counters.entry(g).or_default();
            let idx = op_index[&(g, *k)];
            *k += 1;
            first_pos[idx] = first_pos[idx].min(p);
            if let Some(q) = prev {
                succ[q].push(idx);
                indeg[idx] += 1;
            }
            prev = Some(idx);
        }
    }
    let key = |i: usize, ops: &[MasterOp]| (first_pos[i], group_rank[ops[i].comm_group.as_str()], i);
    let mut heap: BinaryHeap<Reverse<(usize, usize, usize)>> =
        (0..ops.len()).filter(|&i| indeg[i] == 0).map(|i| Reverse(key(i, &ops))).collect();
    let mut order = Vec::with_capacity(ops.len());
    while let Some(Reverse((_, _, i))) = heap.pop() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse(key(s, &ops)));
            }
        }
    }
    if order.len() != ops.len() {
        let stuck: BTreeSet<String> =
            (0..ops.len()).filter(|&i| indeg[i] > 0).map(|i| ops[i].comm_group.clone()).collect();
        return Err(MasterError::CrossGroupCycle(stuck.into_iter().collect()));
    }
    let mut slots: Vec<Option<MasterOp>> = ops.into_iter().map(Some).collect();
    let ops = order
        .into_iter()
        .enumerate()
        .map(|(seq, i)| {
            let mut op = slots[i].take().expect("each op placed once");
            op.seq_no = seq as u64;
            op
        })
        .collect();
    Ok(MasterTrace { ops })
}

/// Rank `r`'s trace: the master ops it participates in, chained in order.
pub fn reconstruct_rank_traces(master: &MasterTrace, npus: u32) -> Vec<Trace> {
    (0..npus)
        .map(|r| {
            let mut nodes: Vec<EtNode> = Vec::new();
            for op in master.ops.iter().filter(|op| op.participants.contains(&r)) {
                let id = nodes.len() as u64 + 1;
                let mut n = EtNode::new(id, &op.name, NodeType::CommColl)
                    .with_attr(Attribute::string(attr::COMM_TYPE, op.comm_type.as_str()))
                    .with_attr(Attribute::int(attr::COMM_SIZE, op.sizes.get(&r).copied().unwrap_or(0) as i64))
                    .with_attr(Attribute::string(attr::COMM_GROUP, &op.comm_group));
                if id > 1 {
                    n.parents.push(id - 1);
                }
                nodes.push(n);
            }
            Trace::new(r, nodes)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::TraceBuilder;

    fn rank(r: u32, ops: &[(&str, CommType, u64, &str)]) -> Trace {
        let mut b = TraceBuilder::new(r);
        let mut prev = None;
        for &(name, ty, size, g) in ops {
            let h = b.coll(name, ty, size, g);
            b.assign_deps([prev], h).unwrap();
            prev = Some(h);
        }
        b.finish().unwrap()
    }

    #[test]
    fn identical_sequences_merge() {
        let ops = [("a", CommType::AllReduce, 1024, "g0"), ("b", CommType::AllGather, 2048, "g0")];
        let traces = [rank(0, &ops), rank(1, &ops)];
        let m = build_master_trace(&traces).unwrap();
        assert_eq!(m.ops.len(), 2);
        assert!(m.ops.iter().all(|o| o.participants == BTreeSet::from([0, 1])));
        assert_eq!(comm_sequences(&reconstruct_rank_traces(&m, 2)).unwrap(), comm_sequences(&traces).unwrap());
    }

    #[test]
    fn swapped_order_names_group() {
        let a = ("A", CommType::AllReduce, 1024, "g0");
        let b = ("B", CommType::AllGather, 2048, "g0");
        let err = build_master_trace(&[rank(0, &[a, b]), rank(1, &[b, a])]).unwrap_err();
        assert!(matches!(&err, MasterError::OrderConflict { group, .. } if group == "g0"));
        assert!(err.to_string().contains("\"g0\""));
    }

    #[test]
    fn disjoint_groups_round_trip() {
        let traces = [
            rank(0, &[("x", CommType::AllReduce, 8, "g0"), ("y", CommType::AllReduce, 16, "g0")]),
            rank(1, &[("x", CommType::AllReduce, 12, "g0"), ("y", CommType::AllReduce, 16, "g0")]),
            rank(2, &[("z", CommType::AllToAll, 4, "g1")]),
            rank(3, &[("z", CommType::AllToAll, 4, "g1")]),
        ];
        let m = build_master_trace(&traces).unwrap();
        assert!(m.ops.iter().all(|o| o.participants.len() == 2));
        assert_eq!(comm_sequences(&reconstruct_rank_traces(&m, 4)).unwrap(), comm_sequences(&traces).unwrap());
        // a rank outside every group gets an empty trace
        assert!(reconstruct_rank_traces(&m, 5)[4].is_empty());
    }

    #[test]
    fn cross_group_cycle_rejected() {
        let traces = [
            rank(0, &[("a", CommType::AllReduce, 8, "g0"), ("b", CommType::AllReduce, 8, "g1")]),
            rank(1, &[("b", CommType::AllReduce, 8, "g1"), ("a", CommType::AllReduce, 8, "g0")]),
        ];
        assert!(matches!(build_master_trace(&traces), Err(MasterError::CrossGroupCycle(_))));
    }
}
