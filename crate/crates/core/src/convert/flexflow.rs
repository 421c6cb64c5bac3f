//! FlexFlow-style task graphs in DOT. The operator is read from the `name`
//! attribute, falling back to `label`. Recognized operators:
//!
//! - compute operators (`Dense`, `Conv2D`, `Relu`, ...): COMP on `npu`,
//!   runtime from `cycles`
//! - `Load` / `Input`, `Store` / `Output`: memory nodes on `npu` moving `bytes`
//! - `XferP2P`: a transfer of `bytes` from `src` to `dst`, emitted as a
//!   COMM_SEND on `src` and a COMM_RECV on `dst` sharing a tag
//!
//! Anything else becomes INVALID. Node ids follow declaration order from 1.

use std::collections::HashMap;

use super::dot::{parse_dot, DotGraph, DotNode};
use super::{p2p_node, split_per_npu, AnnotatedNode, Conversion, ConvertError};
use crate::schema::{attr, Attribute, EtNode, NodeType};

const COMPUTE_OPS: &[&str] = &[
    "dense",
    "linear",
    "conv2d",
    "matmul",
    "batchmatmul",
    "embedding",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "pool2d",
    "layernorm",
    "batchnorm",
    "dropout",
    "add",
    "concat",
    "split",
    "flat",
    "reshape",
    "transpose",
    "elementunary",
    "elementbinary",
    "multiheadattention",
    "attention",
];

pub fn convert_flexflow_str(src: &str) -> Result<Conversion, ConvertError> {
    convert_flexflow(&parse_dot(src)?)
}

fn num(n: &DotNode, key: &str) -> Result<Option<u64>, ConvertError> {
    match n.attr(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| ConvertError::BadNumber { line: n.line, key: key.into(), value: v.into() }),
    }
}

fn npu(n: &DotNode) -> Result<Option<u32>, ConvertError> {
    match num(n, "npu")? {
        None => Ok(None),
        Some(v) => u32::try_from(v)
            .map(Some)
            .map_err(|_| ConvertError::BadNumber { line: n.line, key: "npu".into(), value: v.to_string() }),
    }
}

pub fn convert_flexflow(g: &DotGraph) -> Result<Conversion, ConvertError> {
    let ids: HashMap<&str, u64> = g.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i as u64 + 1)).collect();
    for e in &g.edges {
        for end in [&e.from, &e.to] {
            if !ids.contains_key(end.as_str()) {
                return Err(ConvertError::Dot(super::DotError {
                    line: e.line,
                    msg: format!("edge references undeclared node {end:?}"),
                }));
            }
        }
    }
    let mut parents: HashMap<u64, Vec<u64>> = HashMap::new();
    for e in &g.edges {
        let p = parents.entry(ids[e.to.as_str()]).or_default();
        let from = ids[e.from.as_str()];
        if !p.contains(&from) {
            p.push(from);
        }
    }

    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(g.nodes.len());
    // transfer node id -> id of its receive half
    let mut recv_of: HashMap<u64, u64> = HashMap::new();
    let mut next_id = g.nodes.len() as u64 + 1;
    let mut next_tag = 0i64;
    for n in &g.nodes {
        let id = ids[n.id.as_str()];
        let op = n.attr("name").or(n.attr("label")).unwrap_or(&n.id);
        let key = op.to_ascii_lowercase();
        let mut node = if COMPUTE_OPS.contains(&key.as_str()) {
            let mut e = EtNode::new(id, op, NodeType::Comp);
            if let Some(c) = num(n, "cycles")? {
                e = e.with_attr(Attribute::int(attr::RUNTIME, c as i64));
            }
            AnnotatedNode { npu: npu(n)?, node: e }
        } else if matches!(key.as_str(), "load" | "input" | "store" | "output") {
            let t = if matches!(key.as_str(), "load" | "input") { NodeType::MemLoad } else { NodeType::MemStore };
            let mut e = EtNode::new(id, op, t);
            if let Some(b) = num(n, "bytes")? {
                e = e.with_attr(Attribute::int(attr::TENSOR_SIZE, b as i64));
            }
            AnnotatedNode { npu: npu(n)?, node: e }
        } else if key == "xferp2p" {
            match (num(n, "src")?, num(n, "dst")?, num(n, "bytes")?) {
                (Some(src), Some(dst), Some(bytes)) if src <= u32::MAX as u64 && dst <= u32::MAX as u64 => {
                    let (src, dst) = (src as u32, dst as u32);
                    let tag = next_tag;
                    next_tag += 1;
                    let recv = next_id;
                    next_id += 1;
                    recv_of.insert(id, recv);
                    out.push(AnnotatedNode {
                        npu: Some(dst),
                        node: p2p_node(recv, NodeType::CommRecv, format!("{op}_recv"), src, bytes, tag),
                    });
                    AnnotatedNode {
                        npu: Some(src),
                        node: p2p_node(id, NodeType::CommSend, format!("{op}_send"), dst, bytes, tag),
                    }
                }
                _ => {
                    warnings.push(format!("line {}: {op} node {:?} lacks src, dst or bytes; kept as INVALID", n.line, n.id));
                    AnnotatedNode { npu: npu(n)?, node: EtNode::new(id, op, NodeType::Invalid) }
                }
            }
        } else {
            warnings.push(format!("line {}: unknown operator {op:?}; kept as INVALID", n.line));
            AnnotatedNode { npu: npu(n)?, node: EtNode::new(id, op, NodeType::Invalid) }
        };
        node.node.parents = parents.remove(&id).unwrap_or_default();
        out.push(node);
    }
    // consumers of a transfer wait on its receive half
    for a in &mut out {
        for p in &mut a.node.parents {
            if let Some(&r) = recv_of.get(p) {
                *p = r;
            }
        }
    }
    // an INVALID node with no placement inherits its first parent's
    let placed: HashMap<u64, Option<u32>> = out.iter().map(|a| (a.node.id, a.npu)).collect();
    for a in &mut out {
        if a.npu.is_none() && a.node.node_type == NodeType::Invalid {
            a.npu = a.node.parents.iter().find_map(|p| placed[p]).or(Some(0));
        }
    }
    Ok(Conversion { traces: split_per_npu(out)?, warnings })
}
