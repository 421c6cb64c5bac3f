//! PyTorch-style execution graph JSON, the subset read here:
//!
//! ```json
//! {"npu": 0,
//!  "nodes": [
//!    {"id": 1, "name": "aten::mm", "ctrl_deps": [], "dur": 50.0},
//!    {"id": 2, "name": "record_param_comms", "ctrl_deps": [1], "group": "world"},
//!    {"id": 3, "name": "nccl:all_reduce", "parent": 2, "size": 4194304}
//!  ]}
//! ```
//!
//! `ctrl_deps` are dependencies; `dur` is microseconds; `npu` may be given
//! per node or for the whole document. A `nccl:` node belongs to the
//! `record_param_comms` node named by its `parent` field, or failing that,
//! the one listed in its `ctrl_deps`; it is folded into that node.

use std::collections::{HashMap, HashSet};

use serde::Deserialize;

use super::{split_per_npu, AnnotatedNode, Conversion, ConvertError};
use crate::schema::{attr, Attribute, CommType, EtNode, NodeType};

const COMM_MARKER: &str = "record_param_comms";
const NCCL_PREFIX: &str = "nccl:";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyTorchOptions {
    pub cycles_per_us: f64,
    /// Placement for nodes with no `npu` field at any level.
    pub default_npu: Option<u32>,
}

impl Default for PyTorchOptions {
    fn default() -> Self {
        PyTorchOptions { cycles_per_us: 1.0, default_npu: Some(0) }
    }
}

#[derive(Deserialize)]
struct Doc {
    nodes: Vec<PtNode>,
    #[serde(default)]
    npu: Option<u32>,
}

#[derive(Deserialize)]
struct PtNode {
    id: u64,
    name: String,
    #[serde(default)]
    ctrl_deps: Vec<u64>,
    #[serde(default)]
    dur: Option<f64>,
    #[serde(default)]
    npu: Option<u32>,
    #[serde(default)]
    parent: Option<u64>,
    #[serde(default, alias = "comm_size")]
    size: Option<u64>,
    #[serde(default)]
    group: Option<String>,
}

fn nccl_type(name: &str) -> Option<CommType> {
    match name.strip_prefix(NCCL_PREFIX)?.trim().to_ascii_lowercase().as_str() {
        "all_reduce" | "allreduce" => Some(CommType::AllReduce),
        "all_gather" | "allgather" => Some(CommType::AllGather),
        "reduce_scatter" | "reducescatter" => Some(CommType::ReduceScatter),
        "all_to_all" | "alltoall" => Some(CommType::AllToAll),
        _ => None,
    }
}

pub fn convert_pytorch_str(text: &str, opts: &PyTorchOptions) -> Result<Conversion, ConvertError> {
    convert_pytorch(text.as_bytes(), opts)
}

pub fn convert_pytorch(json: &[u8], opts: &PyTorchOptions) -> Result<Conversion, ConvertError> {
    let doc: Doc = serde_json::from_slice(json)?;
    let mut by_id: HashMap<u64, &PtNode> = HashMap::with_capacity(doc.nodes.len());
    for n in &doc.nodes {
        if by_id.insert(n.id, n).is_some() {
            return Err(ConvertError::DuplicateId(n.id.to_string()));
        }
    }
    for n in &doc.nodes {
        for d in n.ctrl_deps.iter().chain(n.parent.as_ref()) {
            if !by_id.contains_key(d) {
                return Err(ConvertError::UnknownDependency { node: n.id.to_string(), dep: d.to_string() });
            }
        }
    }

    // comm node -> its first nccl child
    let mut child_of: HashMap<u64, u64> = HashMap::new();
    for n in doc.nodes.iter().filter(|n| n.name.starts_with(NCCL_PREFIX)) {
        let owner = n
            .parent
            .filter(|p| by_id[p].name == COMM_MARKER)
            .or_else(|| n.ctrl_deps.iter().copied().find(|d| by_id[d].name == COMM_MARKER));
        if let Some(o) = owner {
            child_of.entry(o).or_insert(n.id);
        }
    }
    let absorbed: HashMap<u64, u64> = child_of.iter().map(|(&o, &c)| (c, o)).collect();

    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(doc.nodes.len());
    let reroute = |d: u64| absorbed.get(&d).copied().unwrap_or(d);
    for n in &doc.nodes {
        if absorbed.contains_key(&n.id) {
            continue;
        }
        let mut deps: Vec<u64> = n.ctrl_deps.iter().map(|&d| reroute(d)).collect();
        let mut node = if n.name == COMM_MARKER {
            let child = child_of.get(&n.id).map(|c| by_id[c]);
            if let Some(c) = child {
                deps.extend(c.ctrl_deps.iter().map(|&d| reroute(d)));
            }
            match child.and_then(|c| Some((c, nccl_type(&c.name)?, c.size?))) {
                Some((c, ty, size)) => EtNode::new(n.id, &n.name, NodeType::CommColl)
                    .with_attr(Attribute::string(attr::COMM_TYPE, ty.as_str()))
                    .with_attr(Attribute::int(attr::COMM_SIZE, size as i64))
                    .with_attr(Attribute::string(
                        attr::COMM_GROUP,
                        n.group.as_deref().or(c.group.as_deref()).unwrap_or("world"),
                    )),
                None => {
                    let why = match child {
                        None => "no nccl: child".to_string(),
                        Some(c) if nccl_type(&c.name).is_none() => format!("unrecognized collective {:?}", c.name),
                        Some(c) => format!("child {:?} carries no size", c.name),
                    };
                    warnings.push(format!("node {}: {COMM_MARKER} with {why}; kept as INVALID", n.id));
                    EtNode::new(n.id, &n.name, NodeType::Invalid)
                }
            }
        } else if let Some(dur) = n.dur {
            let cycles = (dur * opts.cycles_per_us).round().max(0.0) as i64;
            EtNode::new(n.id, &n.name, NodeType::Comp).with_attr(Attribute::int(attr::RUNTIME, cycles))
        } else {
            EtNode::new(n.id, &n.name, NodeType::Invalid)
        };
        let mut seen = HashSet::new();
        deps.retain(|&d| d != n.id && seen.insert(d));
        node.parents = deps;
        out.push(AnnotatedNode { npu: n.npu.or(doc.npu).or(opts.default_npu), node });
    }
    Ok(Conversion { traces: split_per_npu(out)?, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comp_and_comm_nodes() {
        let doc = r#"{"nodes": [
            {"id": 1, "name": "aten::mm", "ctrl_deps": [], "dur": 50},
            {"id": 2, "name": "record_param_comms", "ctrl_deps": [1]},
            {"id": 3, "name": "nccl:all_reduce", "parent": 2, "size": 4194304},
            {"id": 4, "name": "aten::add", "ctrl_deps": [3], "dur": 2.6}
        ]}"#;
        let c = convert_pytorch_str(doc, &PyTorchOptions::default()).unwrap();
        assert!(c.warnings.is_empty());
        let t = &c.traces[0];
        assert_eq!(t.len(), 3);
        let mm = t.node(1).unwrap();
        assert_eq!((mm.node_type, mm.runtime()), (NodeType::Comp, Some(50)));
        let comm = t.node(2).unwrap();
        assert_eq!(comm.node_type, NodeType::CommColl);
        assert_eq!(comm.comm_type(), Some(CommType::AllReduce));
        assert_eq!(comm.comm_size(), Some(4194304));
        assert_eq!(comm.parents, [1]);
        // dependents of the folded child hang off the comm node
        assert_eq!(t.node(4).unwrap().parents, [2]);
        assert_eq!(t.node(4).unwrap().runtime(), Some(3));
    }

    #[test]
    fn uninterpretable_comm_becomes_invalid_with_warning() {
        let doc = r#"{"nodes": [
            {"id": 1, "name": "record_param_comms"},
            {"id": 2, "name": "custom:reduce", "parent": 1, "size": 8}
        ]}"#;
        let c = convert_pytorch_str(doc, &PyTorchOptions::default()).unwrap();
        assert_eq!(c.traces[0].node(1).unwrap().node_type, NodeType::Invalid);
        assert_eq!(c.traces[0].node(2).unwrap().node_type, NodeType::Invalid);
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("node 1"));
    }

    #[test]
    fn cycles_per_us_scales_and_npus_split() {
        let doc = r#"{"nodes": [
            {"id": 1, "name": "k", "dur": 1.5, "npu": 0},
            {"id": 2, "name": "k", "dur": 1.5, "npu": 1, "ctrl_deps": [1]}
        ]}"#;
        let opts = PyTorchOptions { cycles_per_us: 1000.0, default_npu: None };
        let c = convert_pytorch_str(doc, &opts).unwrap();
        assert_eq!(c.traces.len(), 2);
        assert_eq!(c.traces[0].node(1).unwrap().runtime(), Some(1500));
        assert!(c.traces[1].nodes().iter().any(|n| n.node_type == NodeType::CommRecv));
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(convert_pytorch_str("{", &PyTorchOptions::default()), Err(ConvertError::Json(_))));
        let dup = r#"{"nodes": [{"id": 1, "name": "a"}, {"id": 1, "name": "b"}]}"#;
        assert!(matches!(convert_pytorch_str(dup, &PyTorchOptions::default()), Err(ConvertError::DuplicateId(_))));
        let dangling = r#"{"nodes": [{"id": 1, "name": "a", "ctrl_deps": [9]}]}"#;
        assert!(matches!(
            convert_pytorch_str(dangling, &PyTorchOptions::default()),
            Err(ConvertError::UnknownDependency { .. })
        ));
        let unplaced = r#"{"nodes": [{"id": 1, "name": "a"}]}"#;
        let opts = PyTorchOptions { default_npu: None, ..Default::default() };
        assert!(matches!(convert_pytorch_str(unplaced, &opts), Err(ConvertError::MissingNpu(1))));
    }
}
