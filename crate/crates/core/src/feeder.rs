//! Dependency-resolving iterator over one trace.
//!
//! The feeder hands out nodes whose parents have all completed, FIFO in the
//! order they became free (ascending id at load). INVALID nodes are never
//! issued; they are contracted away, so a child of an INVALID node waits on
//! that node's own non-INVALID ancestors instead.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::schema::{validate_trace, EtNode, NodeType, Trace, ValidationReport};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeederError {
    #[error("cannot feed invalid trace: {0}")]
    InvalidTrace(ValidationReport),
    #[error("node {0} is not in the feeder")]
    UnknownNode(u64),
    #[error("node {0} was not issued")]
    NotIssued(u64),
    #[error("node {0} already completed")]
    AlreadyCompleted(u64),
    #[error("node {0} already exists")]
    DuplicateId(u64),
    #[error("node {node} references unknown parent {parent}")]
    UnknownParent { node: u64, parent: u64 },
    #[error("node {node} still has live children {children:?}")]
    LiveChildren { node: u64, children: Vec<u64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeState {
    /// Waiting on parents.
    Blocked,
    Issuable,
    Issued,
    Completed,
    /// INVALID node, never issued.
    Skipped,
}

#[derive(Debug)]
struct Entry {
    node: Arc<EtNode>,
    /// Non-INVALID ancestors this node effectively depends on.
    deps: Vec<u64>,
    unmet: usize,
    children: Vec<u64>,
    state: NodeState,
}

#[derive(Debug, Default)]
pub struct Feeder {
    entries: BTreeMap<u64, Entry>,
    queue: VecDeque<u64>,
}

impl Feeder {
    /// Builds a feeder for a valid trace. The initial queue holds every
    /// dependency-free non-INVALID node in ascending id.
    pub fn load(trace: &Trace) -> Result<Self, FeederError> {
        let report = validate_trace(trace);
        if !report.is_valid() {
            return Err(FeederError::InvalidTrace(report));
        }
        let by_id: BTreeMap<u64, &EtNode> = trace.nodes().iter().map(|n| (n.id, n)).collect();
        let mut deps: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for node in trace.nodes() {
            effective_deps(node.id, &by_id, &mut deps);
        }
        let mut feeder = Feeder::default();
        for node in trace.nodes() {
            let d = deps.remove(&node.id).unwrap_or_default();
            feeder.entries.insert(
                node.id,
                Entry { node: Arc::new(node.clone()), unmet: d.len(), deps: d, children: Vec::new(), state: NodeState::Blocked },
            );
        }
        let edges: Vec<(u64, u64)> =
            feeder
                .entries
                .iter()
                .filter(|(_, e)| e.node.node_type != NodeType::Invalid)
                .flat_map(|(&id, e)| e.deps.iter().map(move |&p| (p, id)))
                .collect();
        for (p, c) in edges {
            feeder.entries.get_mut(&p).expect("dep resolved").children.push(c);
        }
        for (&id, e) in feeder.entries.iter_mut() {
            e.children.sort_unstable();
            if e.node.node_type == NodeType::Invalid {
                e.state = NodeState::Skipped;
            } else if e.unmet == 0 {
                e.state = NodeState::Issuable;
                feeder.queue.push_back(id);
            }
        }
        Ok(feeder)
    }

    /// Adds a node whose parents are already known to the feeder.
    pub fn add_node(&mut self, node: EtNode) -> Result<(), FeederError> {
        if self.entries.contains_key(&node.id) {
            return Err(FeederError::DuplicateId(node.id));
        }
        let mut deps = Vec::new();
        for &p in &node.parents {
            let parent = self.entries.get(&p).ok_or(FeederError::UnknownParent { node: node.id, parent: p })?;
            if parent.state == NodeState::Skipped {
                deps.extend_from_slice(&parent.deps);
            } else {
                deps.push(p);
            }
        }
        deps.sort_unstable();
        deps.dedup();
        let id = node.id;
        let invalid = node.node_type == NodeType::Invalid;
        let mut unmet = 0;
        for &p in &deps {
            let parent = self.entries.get_mut(&p).expect("checked above");
            if !invalid {
                parent.children.push(id);
                parent.children.sort_unstable();
            }
            if parent.state != NodeState::Completed {
                unmet += 1;
            }
        }
        let state = if invalid {
            NodeState::Skipped
        } else if unmet == 0 {
            self.queue.push_back(id);
            NodeState::Issuable
        } else {
            NodeState::Blocked
        };
        self.entries.insert(id, Entry { node: Arc::new(node), deps, unmet, children: Vec::new(), state });
        Ok(())
    }

    /// Drops a node from the table. Fails while any child has not completed.
    pub fn remove_node(&mut self, id: u64) -> Result<Arc<EtNode>, FeederError> {
        let entry = self.entries.get(&id).ok_or(FeederError::UnknownNode(id))?;
        let live: Vec<u64> = entry
            .children
            .iter()
            .copied()
            .filter(|c| self.entries.get(c).is_some_and(|e| e.state != NodeState::Completed))
            .collect();
        if !live.is_empty() {
            return Err(FeederError::LiveChildren { node: id, children: live });
        }
        let entry = self.entries.remove(&id).expect("present");
        self.queue.retain(|&q| q != id);
        for p in &entry.deps {
            if let Some(pe) = self.entries.get_mut(p) {
                pe.children.retain(|&c| c != id);
            }
        }
        Ok(entry.node)
    }

    pub fn has_nodes_to_issue(&self) -> bool {
        !self.queue.is_empty()
    }

    /// Pops the head of the issuable queue and marks it issued.
    pub fn get_next_issuable_node(&mut self) -> Option<Arc<EtNode>> {
        let id = self.queue.pop_front()?;
        let e = self.entries.get_mut(&id).expect("queued node exists");
        e.state = NodeState::Issued;
        Some(Arc::clone(&e.node))
    }

    /// Returns an issued node to the tail of the issuable queue.
    pub fn push_back_issuable_node(&mut self, id: u64) -> Result<(), FeederError> {
        let e = self.entries.get_mut(&id).ok_or(FeederError::UnknownNode(id))?;
        match e.state {
            NodeState::Issued => {
                e.state = NodeState::Issuable;
                self.queue.push_back(id);
                Ok(())
            }
            NodeState::Completed => Err(FeederError::AlreadyCompleted(id)),
            _ => Err(FeederError::NotIssued(id)),
        }
    }

    pub fn lookup_node(&self, id: u64) -> Option<Arc<EtNode>> {
        self.entries.get(&id).map(|e| Arc::clone(&e.node))
    }

    pub fn state(&self, id: u64) -> Option<NodeState> {
        self.entries.get(&id).map(|e| e.state)
    }

    /// Marks an issued node completed and returns the children that just
    /// became issuable, in ascending id.
    pub fn free_children_nodes(&mut self, id: u64) -> Result<Vec<u64>, FeederError> {
        let e = self.entries.get_mut(&id).ok_or(FeederError::UnknownNode(id))?;
        match e.state {
            NodeState::Issued => {}
            NodeState::Completed => return Err(FeederError::AlreadyCompleted(id)),
            _ => return Err(FeederError::NotIssued(id)),
        }
        e.state = NodeState::Completed;
        let children = e.children.clone();
        let mut freed = Vec::new();
        for c in children {
            let ce = self.entries.get_mut(&c).expect("child exists");
            ce.unmet -= 1;
            if ce.unmet == 0 && ce.state == NodeState::Blocked {
                ce.state = NodeState::Issuable;
                self.queue.push_back(c);
                freed.push(c);
            }
        }
        Ok(freed)
    }

    /// Ids currently in the issuable queue, head first.
    pub fn issuable(&self) -> impl Iterator<Item = u64> + '_ {
        self.queue.iter().copied()
    }

    /// True once every non-INVALID node has completed.
    pub fn is_drained(&self) -> bool {
        self.entries.values().all(|e| matches!(e.state, NodeState::Completed | NodeState::Skipped))
    }

    /// Non-INVALID nodes that have not completed.
    pub fn pending(&self) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|(_, e)| !matches!(e.state, NodeState::Completed | NodeState::Skipped))
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn effective_deps(id: u64, by_id: &BTreeMap<u64, &EtNode>, memo: &mut BTreeMap<u64, Vec<u64>>) {
    // iterative post-order so deep chains cannot overflow the stack
    let mut stack = vec![(id, false)];
    while let Some((cur, expanded)) = stack.pop() {
        if memo.contains_key(&cur) {
            continue;
        }
        let node = by_id[&cur];
        if !expanded {
            stack.push((cur, true));
            for p in &node.parents {
                if !memo.contains_key(p) {
                    stack.push((*p, false));
                }
            }
            continue;
        }
        let mut deps = Vec::new();
        for p in &node.parents {
            if by_id[p].node_type == NodeType::Invalid {
                deps.extend_from_slice(&memo[p]);
            } else {
                deps.push(*p);
            }
        }
        deps.sort_unstable();
        deps.dedup();
        memo.insert(cur, deps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(id: u64, parents: &[u64]) -> EtNode {
        EtNode::new(id, format!("n{id}"), NodeType::Comp).with_parents(parents.iter().copied())
    }

    fn drain_ids(f: &mut Feeder) -> Vec<u64> {
        let mut order = Vec::new();
        while let Some(n) = f.get_next_issuable_node() {
            order.push(n.id);
            f.free_children_nodes(n.id).unwrap();
        }
        order
    }

    #[test]
    fn chain_and_independent_load() {
        let f = Feeder::load(&Trace::new(0, vec![comp(1, &[]), comp(2, &[1]), comp(3, &[2])])).unwrap();
        assert_eq!(f.issuable().collect::<Vec<_>>(), [1]);
        assert!(f.has_nodes_to_issue());
        let f = Feeder::load(&Trace::new(0, vec![comp(3, &[]), comp(1, &[]), comp(2, &[])])).unwrap();
        assert_eq!(f.issuable().collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn invalid_source_is_skipped() {
        let t = Trace::new(0, vec![EtNode::new(1, "junk", NodeType::Invalid), comp(2, &[1]), comp(3, &[2])]);
        let mut f = Feeder::load(&t).unwrap();
        assert_eq!(f.issuable().collect::<Vec<_>>(), [2]);
        assert_eq!(f.state(1), Some(NodeState::Skipped));
        assert_eq!(drain_ids(&mut f), [2, 3]);
        assert!(f.is_drained());
    }

    #[test]
    fn invalid_interior_node_is_contracted() {
        // 1 -> X -> 3: node 3 still waits for 1
        let t = Trace::new(0, vec![comp(1, &[]), EtNode::new(2, "x", NodeType::Invalid).with_parents([1]), comp(3, &[2])]);
        let mut f = Feeder::load(&t).unwrap();
        assert_eq!(f.issuable().collect::<Vec<_>>(), [1]);
        f.get_next_issuable_node().unwrap();
        assert_eq!(f.free_children_nodes(1).unwrap(), [3]);
    }

    #[test]
    fn get_and_push_back() {
        let mut f = Feeder::load(&Trace::new(0, vec![comp(1, &[]), comp(2, &[1])])).unwrap();
        assert_eq!(f.get_next_issuable_node().unwrap().id, 1);
        assert!(f.get_next_issuable_node().is_none());
        f.push_back_issuable_node(1).unwrap();
        assert_eq!(f.get_next_issuable_node().unwrap().id, 1);
        assert_eq!(f.push_back_issuable_node(2), Err(FeederError::NotIssued(2)));
    }

    #[test]
    fn push_back_goes_to_tail() {
        let mut f = Feeder::load(&Trace::new(0, vec![comp(1, &[]), comp(2, &[])])).unwrap();
        let first = f.get_next_issuable_node().unwrap();
        f.push_back_issuable_node(first.id).unwrap();
        assert_eq!(f.issuable().collect::<Vec<_>>(), [2, 1]);
    }

    #[test]
    fn diamond() {
        let t = Trace::new(0, vec![comp(1, &[]), comp(2, &[1]), comp(3, &[1]), comp(4, &[2, 3])]);
        let mut f = Feeder::load(&t).unwrap();
        assert!(f.has_nodes_to_issue());
        f.get_next_issuable_node().unwrap();
        // mid-diamond: 1 issued but not freed
        assert!(!f.has_nodes_to_issue());
        assert_eq!(f.free_children_nodes(1).unwrap(), [2, 3]);
        assert_eq!(f.free_children_nodes(1), Err(FeederError::AlreadyCompleted(1)));
        f.get_next_issuable_node().unwrap();
        f.get_next_issuable_node().unwrap();
        assert_eq!(f.free_children_nodes(2).unwrap(), Vec::<u64>::new());
        assert_eq!(f.free_children_nodes(3).unwrap(), [4]);
        f.get_next_issuable_node().unwrap();
        f.free_children_nodes(4).unwrap();
        assert!(!f.has_nodes_to_issue());
        assert!(f.is_drained());
    }

    #[test]
    fn free_requires_issue() {
        let mut f = Feeder::load(&Trace::new(0, vec![comp(1, &[])])).unwrap();
        assert_eq!(f.free_children_nodes(1), Err(FeederError::NotIssued(1)));
        assert_eq!(f.free_children_nodes(9), Err(FeederError::UnknownNode(9)));
    }

    #[test]
    fn rejects_invalid_trace() {
        let t = Trace::new(0, vec![comp(1, &[2]), comp(2, &[1])]);
        assert!(matches!(Feeder::load(&t), Err(FeederError::InvalidTrace(_))));
    }

    #[test]
    fn add_lookup_remove() {
        let mut f = Feeder::load(&Trace::new(0, vec![comp(1, &[])])).unwrap();
        f.add_node(comp(2, &[1])).unwrap();
        assert_eq!(f.add_node(comp(2, &[])), Err(FeederError::DuplicateId(2)));
        assert_eq!(f.add_node(comp(5, &[7])), Err(FeederError::UnknownParent { node: 5, parent: 7 }));
        assert_eq!(f.lookup_node(2).unwrap().name, "n2");
        assert_eq!(f.remove_node(1), Err(FeederError::LiveChildren { node: 1, children: vec![2] }));
        assert_eq!(drain_ids(&mut f), [1, 2]);
        f.remove_node(1).unwrap();
        assert!(f.lookup_node(1).is_none());
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn add_node_after_parent_completed_is_issuable() {
        let mut f = Feeder::load(&Trace::new(0, vec![comp(1, &[])])).unwrap();
        drain_ids(&mut f);
        f.add_node(comp(2, &[1])).unwrap();
        assert_eq!(f.issuable().collect::<Vec<_>>(), [2]);
    }
}
