//! The execution-trace data model.
//!
//! A [`Trace`] is the per-NPU unit of exchange: an ordered set of [`EtNode`]s
//! whose `parents` lists form a DAG. Everything a simulator needs beyond the
//! five core node fields lives in extensible [`Attribute`]s; the attribute
//! names this crate relies on are listed in [`attr`].

mod binary;
mod files;
mod json;
mod validate;

use std::fmt;
use std::str::FromStr;

pub use binary::{decode_binary, encode_binary, BINARY_MAGIC, BINARY_VERSION};
pub use files::{read_trace_dir, read_trace_file, trace_file_name, write_trace_dir, write_trace_file};
pub use json::{decode_json, encode_json};
pub use validate::{validate_trace, ValidationReport, Violation, ViolationKind};

/// Schema version written by this crate.
pub const SCHEMA_VERSION: &str = "0.1";

/// Well-known attribute names.
pub mod attr {
    /// INT: simulated execution cycles.
    pub const RUNTIME: &str = "runtime";
    /// STRING: collective kind, see [`super::CommType`].
    pub const COMM_TYPE: &str = "comm_type";
    /// INT: payload bytes.
    pub const COMM_SIZE: &str = "comm_size";
    /// STRING: process-group identifier.
    pub const COMM_GROUP: &str = "comm_group";
    /// INT: peer NPU for point-to-point nodes.
    pub const COMM_PEER: &str = "comm_peer";
    /// INT: matching tag shared by a SEND and its RECV.
    pub const COMM_TAG: &str = "comm_tag";
    /// INT: bytes moved by a memory node.
    pub const TENSOR_SIZE: &str = "tensor_size";
    /// INT: abstract operation count used by modeled compute timing.
    pub const NUM_OPS: &str = "num_ops";
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("at {path}: {msg}")]
    Structure { path: String, msg: String },
    #[error("at {path}: unknown NodeType {tag:?}")]
    UnknownNodeType { path: String, tag: String },
    #[error("at {path}: unknown AttributeKind {tag:?}")]
    UnknownAttributeKind { path: String, tag: String },
    #[error("at {path}: attribute kind {kind} does not match value")]
    KindMismatch { path: String, kind: AttributeKind },
    #[error("unsupported schema_version {0:?}")]
    UnsupportedVersion(String),
    #[error("bad magic bytes, not a binary trace")]
    BadMagic,
    #[error("unsupported binary format version {0}")]
    BadFormatVersion(u8),
    #[error("truncated input at byte offset {offset}: needed {needed} more byte(s)")]
    Truncated { offset: usize, needed: usize },
    #[error("at byte offset {offset}: {msg}")]
    Corrupt { offset: usize, msg: String },
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("refusing to encode invalid trace: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: DecodeError,
    },
    #[error("{path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: EncodeError,
    },
    #[error("{0}: no .et files found")]
    Empty(String),
    #[error("duplicate npu_id {npu} in {path}")]
    DuplicateNpu { path: String, npu: u32 },
}

/// On-disk encodings of a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Binary,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "binary" | "bin" => Ok(Format::Binary),
            other => Err(format!("unknown trace format {other:?} (expected json or binary)")),
        }
    }
}

macro_rules! tagged_enum {
    ($(#[$meta:meta])* $name:ident, $what:literal { $($variant:ident = $tag:literal => $code:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $tag),+
                }
            }

            #[allow(dead_code)]
            pub(crate) fn code(self) -> u8 {
                match self {
                    $($name::$variant => $code),+
                }
            }

            #[allow(dead_code)]
            pub(crate) fn from_code(code: u8) -> Option<Self> {
                match code {
                    $($code => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($tag => Ok($name::$variant),)+
                    other => Err(format!(concat!("unknown ", $what, " {:?}"), other)),
                }
            }
        }
    };
}

tagged_enum!(
    /// Node types. The set is closed.
    NodeType, "NodeType" {
        Invalid = "INVALID" => 0,
        MemLoad = "MEM_LOAD" => 1,
        MemStore = "MEM_STORE" => 2,
        Comp = "COMP" => 3,
        CommSend = "COMM_SEND" => 4,
        CommRecv = "COMM_RECV" => 5,
        CommColl = "COMM_COLL" => 6,
    }
);

tagged_enum!(
    AttributeKind, "AttributeKind" {
        Float = "FLOAT" => 0,
        Int = "INT" => 1,
        String = "STRING" => 2,
        Floats = "FLOATS" => 3,
        Ints = "INTS" => 4,
        Strings = "STRINGS" => 5,
    }
);

tagged_enum!(
    /// Values of the `comm_type` attribute.
    CommType, "comm_type" {
        AllReduce = "ALL_REDUCE" => 0,
        AllGather = "ALL_GATHER" => 1,
        ReduceScatter = "REDUCE_SCATTER" => 2,
        AllToAll = "ALL_TO_ALL" => 3,
        Send = "SEND" => 4,
        Recv = "RECV" => 5,
    }
);

impl NodeType {
    pub fn is_comm(self) -> bool {
        matches!(self, NodeType::CommSend | NodeType::CommRecv | NodeType::CommColl)
    }

    pub fn is_mem(self) -> bool {
        matches!(self, NodeType::MemLoad | NodeType::MemStore)
    }
}

impl CommType {
    pub fn is_collective(self) -> bool {
        !matches!(self, CommType::Send | CommType::Recv)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttributeValue {
    Float(f64),
    Int(i64),
    String(String),
    Floats(Vec<f64>),
    Ints(Vec<i64>),
    Strings(Vec<String>),
}

impl AttributeValue {
    pub fn kind(&self) -> AttributeKind {
        match self {
            AttributeValue::Float(_) => AttributeKind::Float,
            AttributeValue::Int(_) => AttributeKind::Int,
            AttributeValue::String(_) => AttributeKind::String,
            AttributeValue::Floats(_) => AttributeKind::Floats,
            AttributeValue::Ints(_) => AttributeKind::Ints,
            AttributeValue::Strings(_) => AttributeKind::Strings,
        }
    }
}

/// Extensible key/value metadata.
///
/// `kind` is stored separately from the value, mirroring the wire schema, so
/// a mismatched attribute can be represented and reported by the validator.
/// The typed constructors always produce a consistent pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    pub doc_string: String,
    pub value: AttributeValue,
}

impl Attribute {
    pub fn new(name: impl Into<String>, value: AttributeValue) -> Self {
        Attribute { name: name.into(), kind: value.kind(), doc_string: String::new(), value }
    }

    pub fn float(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, AttributeValue::Float(v))
    }

    pub fn int(name: impl Into<String>, v: i64) -> Self {
        Self::new(name, AttributeValue::Int(v))
    }

    pub fn string(name: impl Into<String>, v: impl Into<String>) -> Self {
        Self::new(name, AttributeValue::String(v.into()))
    }

    pub fn floats(name: impl Into<String>, v: Vec<f64>) -> Self {
        Self::new(name, AttributeValue::Floats(v))
    }

    pub fn ints(name: impl Into<String>, v: Vec<i64>) -> Self {
        Self::new(name, AttributeValue::Ints(v))
    }

    pub fn strings(name: impl Into<String>, v: Vec<String>) -> Self {
        Self::new(name, AttributeValue::Strings(v))
    }

    pub fn with_doc(mut self, doc: impl Into<String>) -> Self {
        self.doc_string = doc.into();
        self
    }

    pub fn is_consistent(&self) -> bool {
        self.kind == self.value.kind()
    }

    pub fn as_int(&self) -> Option<i64> {
        match (&self.value, self.kind) {
            (AttributeValue::Int(v), AttributeKind::Int) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match (&self.value, self.kind) {
            (AttributeValue::Float(v), AttributeKind::Float) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match (&self.value, self.kind) {
            (AttributeValue::String(v), AttributeKind::String) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EtNode {
    pub id: u64,
    pub name: String,
    pub node_type: NodeType,
    pub parents: Vec<u64>,
    pub attributes: Vec<Attribute>,
}

impl EtNode {
    pub fn new(id: u64, name: impl Into<String>, node_type: NodeType) -> Self {
        EtNode { id, name: name.into(), node_type, parents: Vec::new(), attributes: Vec::new() }
    }

    pub fn with_parents(mut self, parents: impl IntoIterator<Item = u64>) -> Self {
        self.parents.extend(parents);
        self
    }

    pub fn with_attr(mut self, attr: Attribute) -> Self {
        self.attributes.push(attr);
        self
    }

    /// Returns the attribute with the given name. Names are unique in a valid
    /// node; on an invalid node the first match wins.
    pub fn get_attr(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn int_attr(&self, name: &str) -> Option<i64> {
        self.get_attr(name).and_then(Attribute::as_int)
    }

    pub fn str_attr(&self, name: &str) -> Option<&str> {
        self.get_attr(name).and_then(Attribute::as_str)
    }

    pub fn runtime(&self) -> Option<i64> {
        self.int_attr(attr::RUNTIME)
    }

    pub fn comm_type(&self) -> Option<CommType> {
        self.str_attr(attr::COMM_TYPE).and_then(|s| s.parse().ok())
    }

    pub fn comm_size(&self) -> Option<i64> {
        self.int_attr(attr::COMM_SIZE)
    }

    pub fn comm_group(&self) -> Option<&str> {
        self.str_attr(attr::COMM_GROUP)
    }

    pub fn comm_peer(&self) -> Option<i64> {
        self.int_attr(attr::COMM_PEER)
    }

    pub fn comm_tag(&self) -> Option<i64> {
        self.int_attr(attr::COMM_TAG)
    }
}

/// Free-function form of [`EtNode::get_attr`].
pub fn get_attr<'a>(node: &'a EtNode, name: &str) -> Option<&'a Attribute> {
    node.get_attr(name)
}

/// One NPU's execution trace. Nodes are kept sorted by id (stable for
/// duplicates, which only the validator cares about).
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    schema_version: String,
    npu_id: u32,
    nodes: Vec<EtNode>,
}

impl Trace {
    pub fn new(npu_id: u32, nodes: Vec<EtNode>) -> Self {
        Self::with_version(SCHEMA_VERSION, npu_id, nodes)
    }

    pub fn with_version(schema_version: impl Into<String>, npu_id: u32, mut nodes: Vec<EtNode>) -> Self {
        nodes.sort_by_key(|n| n.id);
        Trace { schema_version: schema_version.into(), npu_id, nodes }
    }

    pub fn empty(npu_id: u32) -> Self {
        Self::new(npu_id, Vec::new())
    }

    pub fn schema_version(&self) -> &str {
        &self.schema_version
    }

    pub fn npu_id(&self) -> u32 {
        self.npu_id
    }

    pub fn nodes(&self) -> &[EtNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: u64) -> Option<&EtNode> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok().map(|i| &self.nodes[i])
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.parents.len()).sum()
    }

    pub fn into_nodes(self) -> Vec<EtNode> {
        self.nodes
    }

    pub fn validate(&self) -> ValidationReport {
        validate_trace(self)
    }

    pub fn encode(&self, format: Format) -> Result<Vec<u8>, EncodeError> {
        encode_trace(self, format)
    }
}

/// Serializes a valid trace. Output is a pure function of the trace value.
pub fn encode_trace(trace: &Trace, format: Format) -> Result<Vec<u8>, EncodeError> {
    let report = validate_trace(trace);
    if !report.is_valid() {
        return Err(EncodeError::Invalid(report));
    }
    Ok(match format {
        Format::Json => json::encode_unchecked(trace),
        Format::Binary => binary::encode_unchecked(trace),
    })
}

pub fn decode_trace(bytes: &[u8], format: Format) -> Result<Trace, DecodeError> {
    match format {
        Format::Json => decode_json(bytes),
        Format::Binary => decode_binary(bytes),
    }
}

/// Picks the format from the leading bytes.
pub fn detect_format(bytes: &[u8]) -> Format {
    if bytes.starts_with(BINARY_MAGIC) {
        Format::Binary
    } else {
        Format::Json
    }
}

/// Accepts "MAJOR.MINOR" strings whose major does not exceed ours.
pub(crate) fn check_schema_version(version: &str) -> Result<(), DecodeError> {
    let supported_major: u32 = SCHEMA_VERSION.split('.').next().and_then(|m| m.parse().ok()).unwrap_or(0);
    let mut parts = version.split('.');
    let major = parts.next().and_then(|m| m.parse::<u32>().ok());
    let minor_ok = parts.next().is_some_and(|m| m.parse::<u32>().is_ok());
    match major {
        Some(major) if minor_ok && parts.next().is_none() && major <= supported_major => Ok(()),
        _ => Err(DecodeError::UnsupportedVersion(version.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enum_tags_round_trip() {
        for t in NodeType::ALL {
            assert_eq!(t.as_str().parse::<NodeType>().unwrap(), *t);
            assert_eq!(NodeType::from_code(t.code()), Some(*t));
        }
        for k in AttributeKind::ALL {
            assert_eq!(k.as_str().parse::<AttributeKind>().unwrap(), *k);
        }
        assert_eq!(NodeType::ALL.len(), 7);
        assert_eq!(AttributeKind::ALL.len(), 6);
        assert!("COMM_BROADCAST".parse::<NodeType>().is_err());
    }

    #[test]
    fn get_attr_runtime() {
        let node = EtNode::new(1, "COMP_NODE", NodeType::Comp).with_attr(Attribute::int(attr::RUNTIME, 5));
        let a = get_attr(&node, "runtime").unwrap();
        assert_eq!(a.kind, AttributeKind::Int);
        assert_eq!(a.value, AttributeValue::Int(5));
        assert!(get_attr(&node, "missing").is_none());
    }

    #[test]
    fn get_attr_comm_type_is_string() {
        let node = EtNode::new(1, "ar", NodeType::CommColl).with_attr(Attribute::string(attr::COMM_TYPE, "ALL_REDUCE"));
        let a = node.get_attr(attr::COMM_TYPE).unwrap();
        assert_eq!(a.kind, AttributeKind::String);
        assert_eq!(node.comm_type(), Some(CommType::AllReduce));
    }

    #[test]
    fn trace_sorts_nodes() {
        let t = Trace::new(0, vec![EtNode::new(3, "c", NodeType::Comp), EtNode::new(1, "a", NodeType::Comp)]);
        let ids: Vec<_> = t.nodes().iter().map(|n| n.id).collect();
        assert_eq!(ids, [1, 3]);
        assert_eq!(t.node(3).unwrap().name, "c");
        assert!(t.node(2).is_none());
    }

    #[test]
    fn schema_versions() {
        assert!(check_schema_version("0.1").is_ok());
        assert!(check_schema_version("0.7").is_ok());
        assert!(check_schema_version("1.0").is_err());
        assert!(check_schema_version("zero").is_err());
        assert!(check_schema_version("0").is_err());
    }
}
