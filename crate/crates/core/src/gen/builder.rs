use std::sync::atomic::{AtomicU64, Ordering};

use crate::schema::{attr, validate_trace, Attribute, CommType, EtNode, NodeType, Trace, ValidationReport};

static NEXT_OWNER: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BuildError {
    #[error("node handle {0:?} belongs to a different builder")]
    ForeignHandle(NodeHandle),
    #[error("node {0} cannot depend on itself")]
    SelfDependency(u64),
    #[error("dependency {parent} -> {child} would create a cycle")]
    WouldCycle { parent: u64, child: u64 },
    #[error("built trace is invalid: {0}")]
    Invalid(ValidationReport),
}

/// Opaque reference to a node owned by one [`TraceBuilder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeHandle {
    owner: u64,
    id: u64,
}

impl NodeHandle {
    pub fn id(&self) -> u64 {
        self.id
    }
}

/// Incremental trace construction for one NPU. Ids are issued 1, 2, 3, ...
#[derive(Debug)]
pub struct TraceBuilder {
    owner: u64,
    npu_id: u32,
    nodes: Vec<EtNode>,
}

impl TraceBuilder {
    pub fn new(npu_id: u32) -> Self {
        TraceBuilder { owner: NEXT_OWNER.fetch_add(1, Ordering::Relaxed), npu_id, nodes: Vec::new() }
    }

    pub fn npu_id(&self) -> u32 {
        self.npu_id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_node(&mut self, node_type: NodeType, name: impl Into<String>, attrs: Vec<Attribute>) -> NodeHandle {
        let id = self.nodes.len() as u64 + 1;
        let mut node = EtNode::new(id, name, node_type);
        node.attributes = attrs;
        self.nodes.push(node);
        NodeHandle { owner: self.owner, id }
    }

    fn check(&self, h: NodeHandle) -> Result<(), BuildError> {
        if h.owner != self.owner {
            return Err(BuildError::ForeignHandle(h));
        }
        Ok(())
    }

    fn node_mut(&mut self, h: NodeHandle) -> &mut EtNode {
        &mut self.nodes[(h.id - 1) as usize]
    }

    /// Makes `child` depend on `parent`. Repeating an edge is a no-op; an
    /// edge that would close a cycle is rejected.
    pub fn assign_dep(&mut self, parent: NodeHandle, child: NodeHandle) -> Result<(), BuildError> {
        self.check(parent)?;
        self.check(child)?;
        if parent.id == child.id {
            return Err(BuildError::SelfDependency(parent.id));
        }
        if self.nodes[(child.id - 1) as usize].parents.contains(&parent.id) {
            return Ok(());
        }
        if self.is_ancestor(child.id, parent.id) {
            return Err(BuildError::WouldCycle { parent: parent.id, child: child.id });
        }
        self.node_mut(child).parents.push(parent.id);
        Ok(())
    }

    /// Adds each present handle as a parent of `child`.
    pub fn assign_deps(
        &mut self,
        parents: impl IntoIterator<Item = Option<NodeHandle>>,
        child: NodeHandle,
    ) -> Result<(), BuildError> {
        for p in parents.into_iter().flatten() {
            self.assign_dep(p, child)?;
        }
        Ok(())
    }

    /// Is `needle` reachable from `from` by following parent links?
    fn is_ancestor(&self, needle: u64, from: u64) -> bool {
        let mut seen = vec![false; self.nodes.len() + 1];
        let mut stack = vec![from];
        while let Some(id) = stack.pop() {
            if id == needle {
                return true;
            }
            if std::mem::replace(&mut seen[id as usize], true) {
                continue;
            }
            stack.extend(self.nodes[(id - 1) as usize].parents.iter().copied());
        }
        false
    }

    pub fn comp(&mut self, name: impl Into<String>, runtime: u64) -> NodeHandle {
        self.add_node(NodeType::Comp, name, vec![Attribute::int(attr::RUNTIME, runtime as i64)])
    }

    pub fn mem_load(&mut self, name: impl Into<String>, bytes: u64) -> NodeHandle {
        self.add_node(NodeType::MemLoad, name, vec![Attribute::int(attr::TENSOR_SIZE, bytes as i64)])
    }

    pub fn mem_store(&mut self, name: impl Into<String>, bytes: u64) -> NodeHandle {
        self.add_node(NodeType::MemStore, name, vec![Attribute::int(attr::TENSOR_SIZE, bytes as i64)])
    }

    pub fn coll(&mut self, name: impl Into<String>, comm_type: CommType, bytes: u64, group: &str) -> NodeHandle {
        self.add_node(
            NodeType::CommColl,
            name,
            vec![
                Attribute::string(attr::COMM_TYPE, comm_type.as_str()),
                Attribute::int(attr::COMM_SIZE, bytes as i64),
                Attribute::string(attr::COMM_GROUP, group),
            ],
        )
    }

    pub fn send(&mut self, name: impl Into<String>, peer: u32, bytes: u64, tag: i64) -> NodeHandle {
        self.p2p(NodeType::CommSend, CommType::Send, name, peer, bytes, tag)
    }

    pub fn recv(&mut self, name: impl Into<String>, peer: u32, bytes: u64, tag: i64) -> NodeHandle {
        self.p2p(NodeType::CommRecv, CommType::Recv, name, peer, bytes, tag)
    }

    fn p2p(&mut self, t: NodeType, ct: CommType, name: impl Into<String>, peer: u32, bytes: u64, tag: i64) -> NodeHandle {
        self.add_node(
            t,
            name,
            vec![
                Attribute::string(attr::COMM_TYPE, ct.as_str()),
                Attribute::int(attr::COMM_SIZE, bytes as i64),
                Attribute::int(attr::COMM_PEER, peer as i64),
                Attribute::int(attr::COMM_TAG, tag),
            ],
        )
    }

    /// Appends an attribute to an existing node.
    pub fn set_attr(&mut self, h: NodeHandle, a: Attribute) -> Result<(), BuildError> {
        self.check(h)?;
        let node = self.node_mut(h);
        node.attributes.retain(|x| x.name != a.name);
        node.attributes.push(a);
        Ok(())
    }

    /// Validates and returns the trace.
    pub fn finish(self) -> Result<Trace, BuildError> {
        let trace = self.finish_unchecked();
        let report = validate_trace(&trace);
        if report.is_valid() {
            Ok(trace)
        } else {
            Err(BuildError::Invalid(report))
        }
    }

    pub fn finish_unchecked(self) -> Trace {
        Trace::new(self.npu_id, self.nodes)
    }
}
