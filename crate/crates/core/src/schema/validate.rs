use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{attr, check_schema_version, AttributeKind, AttributeValue, CommType, EtNode, NodeType, Trace};

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    UnsupportedSchemaVersion(String),
    DuplicateId,
    DanglingParent(u64),
    SelfParent,
    /// Nodes on (or wedged between) dependency cycles.
    Cycle(Vec<u64>),
    EmptyAttributeName,
    DuplicateAttribute(String),
    KindMismatch(String),
    NonFiniteFloat(String),
    MissingWellKnown(&'static str),
    WellKnownWrongKind { name: &'static str, expected: AttributeKind },
    NegativeValue(&'static str),
    BadCommType(String),
}

impl ViolationKind {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ViolationKind::UnsupportedSchemaVersion(_) => "unsupported-schema-version",
            ViolationKind::DuplicateId => "duplicate-id",
            ViolationKind::DanglingParent(_) => "dangling-parent",
            ViolationKind::SelfParent => "self-parent",
            ViolationKind::Cycle(_) => "cycle",
            ViolationKind::EmptyAttributeName => "empty-attribute-name",
            ViolationKind::DuplicateAttribute(_) => "duplicate-attribute",
            ViolationKind::KindMismatch(_) => "kind-mismatch",
            ViolationKind::NonFiniteFloat(_) => "non-finite-float",
            ViolationKind::MissingWellKnown(_) => "missing-well-known",
            ViolationKind::WellKnownWrongKind { .. } => "well-known-wrong-kind",
            ViolationKind::NegativeValue(_) => "negative-value",
            ViolationKind::BadCommType(_) => "bad-comm-type",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// Offending node, if the problem is node-local.
    pub node: Option<u64>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = self.node {
            write!(f, "node {id}: ")?;
        }
        match &self.kind {
            ViolationKind::UnsupportedSchemaVersion(v) => write!(f, "unsupported schema_version {v:?}"),
            ViolationKind::DuplicateId => write!(f, "duplicate id"),
            ViolationKind::DanglingParent(p) => write!(f, "dangling parent {p}"),
            ViolationKind::SelfParent => write!(f, "node lists itself as parent"),
            ViolationKind::Cycle(ids) => write!(f, "cycle through nodes {ids:?}"),
            ViolationKind::EmptyAttributeName => write!(f, "attribute with empty name"),
            ViolationKind::DuplicateAttribute(n) => write!(f, "duplicate attribute {n}"),
            ViolationKind::KindMismatch(n) => write!(f, "attribute {n} kind does not match its value"),
            ViolationKind::NonFiniteFloat(n) => write!(f, "attribute {n} holds a non-finite float"),
            ViolationKind::MissingWellKnown(n) => write!(f, "missing well-known attribute {n}"),
            ViolationKind::WellKnownWrongKind { name, expected } => {
                write!(f, "well-known attribute {name} must be {expected}")
            }
            ViolationKind::NegativeValue(n) => write!(f, "attribute {n} must be non-negative"),
            ViolationKind::BadCommType(v) => write!(f, "comm_type {v:?} not allowed here"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(|v| v.kind.code()).collect()
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.kind.code() == code)
    }

    fn push(&mut self, node: Option<u64>, kind: ViolationKind) {
        self.violations.push(Violation { node, kind });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural and well-known-attribute invariant. Problems are
/// collected, never raised.
pub fn validate_trace(trace: &Trace) -> ValidationReport {
    let mut report = ValidationReport::default();
    if check_schema_version(trace.schema_version()).is_err() {
        report.push(None, ViolationKind::UnsupportedSchemaVersion(trace.schema_version().to_string()));
    }

    let mut seen = HashSet::with_capacity(trace.len());
    for node in trace.nodes() {
        if !seen.insert(node.id) {
            report.push(Some(node.id), ViolationKind::DuplicateId);
        }
    }

    for node in trace.nodes() {
        for &p in &node.parents {
            if p == node.id {
                report.push(Some(node.id), ViolationKind::SelfParent);
            } else if !seen.contains(&p) {
                report.push(Some(node.id), ViolationKind::DanglingParent(p));
            }
        }
        check_attributes(node, &mut report);
        check_well_known(node, &mut report);
    }

    let cyclic = cyclic_nodes(trace);
    if !cyclic.is_empty() {
        report.push(None, ViolationKind::Cycle(cyclic));
    }
    report
}

fn check_attributes(node: &EtNode, report: &mut ValidationReport) {
    let mut names = HashSet::new();
    for a in &node.attributes {
        if a.name.is_empty() {
            report.push(Some(node.id), ViolationKind::EmptyAttributeName);
        } else if !names.insert(a.name.as_str()) {
            report.push(Some(node.id), ViolationKind::DuplicateAttribute(a.name.clone()));
        }
        if !a.is_consistent() {
            report.push(Some(node.id), ViolationKind::KindMismatch(a.name.clone()));
        }
        let finite = match &a.value {
            AttributeValue::Float(v) => v.is_finite(),
            AttributeValue::Floats(vs) => vs.iter().all(|v| v.is_finite()),
            _ => true,
        };
        if !finite {
            report.push(Some(node.id), ViolationKind::NonFiniteFloat(a.name.clone()));
        }
    }
}

fn check_well_known(node: &EtNode, report: &mut ValidationReport) {
    let id = Some(node.id);
    let int_field = |name: &'static str, required: bool, report: &mut ValidationReport| match node.get_attr(name) {
        None if required => report.push(id, ViolationKind::MissingWellKnown(name)),
        None => {}
        Some(a) => match a.as_int() {
            None => report.push(id, ViolationKind::WellKnownWrongKind { name, expected: AttributeKind::Int }),
            Some(v) if v < 0 && name != attr::COMM_TAG => report.push(id, ViolationKind::NegativeValue(name)),
            Some(_) => {}
        },
    };

    let is_coll = node.node_type == NodeType::CommColl;
    let is_p2p = matches!(node.node_type, NodeType::CommSend | NodeType::CommRecv);
    int_field(attr::RUNTIME, false, report);
    int_field(attr::COMM_SIZE, is_coll || is_p2p, report);
    int_field(attr::COMM_PEER, is_p2p, report);
    int_field(attr::COMM_TAG, false, report);
    int_field(attr::TENSOR_SIZE, false, report);
    int_field(attr::NUM_OPS, false, report);

    match node.get_attr(attr::COMM_GROUP) {
        None if is_coll => report.push(id, ViolationKind::MissingWellKnown(attr::COMM_GROUP)),
        Some(a) if a.as_str().is_none() => report.push(
            id,
            ViolationKind::WellKnownWrongKind { name: attr::COMM_GROUP, expected: AttributeKind::String },
        ),
        _ => {}
    }

    match node.get_attr(attr::COMM_TYPE) {
        None if is_coll => report.push(id, ViolationKind::MissingWellKnown(attr::COMM_TYPE)),
        None => {}
        Some(a) => match a.as_str() {
            None => report.push(
                id,
                ViolationKind::WellKnownWrongKind { name: attr::COMM_TYPE, expected: AttributeKind::String },
            ),
            Some(s) => {
                let ok = match s.parse::<CommType>() {
                    Err(_) => false,
                    Ok(ct) => match node.node_type {
                        NodeType::CommColl => ct.is_collective(),
                        NodeType::CommSend => ct == CommType::Send,
                        NodeType::CommRecv => ct == CommType::Recv,
                        _ => true,
                    },
                };
                if !ok {
                    report.push(id, ViolationKind::BadCommType(s.to_string()));
                }
            }
        },
    }
}

/// Kahn's algorithm over resolvable edges, then a reverse prune, leaving the
/// nodes that sit on a cycle or between two cycles.
fn cyclic_nodes(trace: &Trace) -> Vec<u64> {
    let n = trace.len();
    let index: HashMap<u64, usize> = trace.nodes().iter().enumerate().map(|(i, node)| (node.id, i)).collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    let mut outdeg = vec![0usize; n];
    for (i, node) in trace.nodes().iter().enumerate() {
        for p in &node.parents {
            if let Some(&pi) = index.get(p) {
                if index[&node.id] != i {
                    // duplicate id; only one occurrence carries edges
                    continue;
                }
                children[pi].push(i);
                indeg[i] += 1;
                outdeg[pi] += 1;
            }
        }
    }
    let mut removed = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    while let Some(i) = stack.pop() {
        removed[i] = true;
        for &c in &children[i] {
            indeg[c] -= 1;
            outdeg[i] -= 1;
            if indeg[c] == 0 {
                stack.push(c);
            }
        }
    }
    if removed.iter().all(|&r| r) {
        return Vec::new();
    }
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, cs) in children.iter().enumerate() {
        for &c in cs {
            if !removed[p] && !removed[c] {
                parents[c].push(p);
            }
        }
    }
    let mut live_out = vec![0usize; n];
    for &p in parents.iter().flatten() {
        live_out[p] += 1;
    }
    let mut stack: Vec<usize> = (0..n).filter(|&i| !removed[i] && live_out[i] == 0).collect();
    while let Some(i) = stack.pop() {
        removed[i] = true;
        for &p in &parents[i] {
            live_out[p] -= 1;
            if live_out[p] == 0 && !removed[p] {
                stack.push(p);
            }
        }
    }
    let mut ids: Vec<u64> = (0..n).filter(|&i| !removed[i]).map(|i| trace.nodes()[i].id).collect();
    ids.sort_unstable();
    ids
}
