//! Canonical JSON form:
//! `{schema_version, npu_id, nodes: [{id, name, type, parents, attributes: [{name, kind, doc_string, value}]}]}`.

use serde::Serialize;
use serde_json::Value;

use super::{
    check_schema_version, Attribute, AttributeKind, AttributeValue, DecodeError, EncodeError, EtNode, NodeType, Trace,
};

#[derive(Serialize)]
struct JsonTrace<'a> {
    schema_version: &'a str,
    npu_id: u32,
    nodes: Vec<JsonNode<'a>>,
}

#[derive(Serialize)]
struct JsonNode<'a> {
    id: u64,
    name: &'a str,
    #[serde(rename = "type")]
    node_type: &'static str,
    parents: &'a [u64],
    attributes: Vec<JsonAttribute<'a>>,
}

#[derive(Serialize)]
struct JsonAttribute<'a> {
    name: &'a str,
    kind: &'static str,
    doc_string: &'a str,
    value: JsonValue<'a>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum JsonValue<'a> {
    Float(f64),
    Int(i64),
    String(&'a str),
    Floats(&'a [f64]),
    Ints(&'a [i64]),
    Strings(&'a [String]),
}

pub fn encode_json(trace: &Trace) -> Result<Vec<u8>, EncodeError> {
    super::encode_trace(trace, super::Format::Json)
}

pub(super) fn encode_unchecked(trace: &Trace) -> Vec<u8> {
    let doc = JsonTrace {
        schema_version: trace.schema_version(),
        npu_id: trace.npu_id(),
        nodes: trace
            .nodes()
            .iter()
            .map(|n| JsonNode {
                id: n.id,
                name: &n.name,
                node_type: n.node_type.as_str(),
                parents: &n.parents,
                attributes: n
                    .attributes
                    .iter()
                    .map(|a| JsonAttribute {
                        name: &a.name,
                        kind: a.kind.as_str(),
                        doc_string: &a.doc_string,
                        value: match &a.value {
                            AttributeValue::Float(v) => JsonValue::Float(*v),
                            AttributeValue::Int(v) => JsonValue::Int(*v),
                            AttributeValue::String(v) => JsonValue::String(v),
                            AttributeValue::Floats(v) => JsonValue::Floats(v),
                            AttributeValue::Ints(v) => JsonValue::Ints(v),
                            AttributeValue::Strings(v) => JsonValue::Strings(v),
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("trace JSON serialization is infallible");
    out.push(b'\n');
    out
}

fn structure(path: &str, msg: impl Into<String>) -> DecodeError {
    DecodeError::Structure { path: path.to_string(), msg: msg.into() }
}

fn field<'v>(obj: &'v serde_json::Map<String, Value>, path: &str, key: &str) -> Result<&'v Value, DecodeError> {
    obj.get(key).ok_or_else(|| structure(path, format!("missing field {key:?}")))
}

fn as_object<'v>(v: &'v Value, path: &str) -> Result<&'v serde_json::Map<String, Value>, DecodeError> {
    v.as_object().ok_or_else(|| structure(path, "expected an object"))
}

fn as_str<'v>(v: &'v Value, path: &str) -> Result<&'v str, DecodeError> {
    v.as_str().ok_or_else(|| structure(path, "expected a string"))
}

fn as_u64(v: &Value, path: &str) -> Result<u64, DecodeError> {
    v.as_u64().ok_or_else(|| structure(path, "expected an unsigned integer"))
}

fn as_array<'v>(v: &'v Value, path: &str) -> Result<&'v [Value], DecodeError> {
    v.as_array().map(Vec::as_slice).ok_or_else(|| structure(path, "expected an array"))
}

pub fn decode_json(bytes: &[u8]) -> Result<Trace, DecodeError> {
    let root: Value = serde_json::from_slice(bytes)?;
    let obj = as_object(&root, "$")?;
    let version = as_str(field(obj, "$", "schema_version")?, "$.schema_version")?;
    check_schema_version(version)?;
    let npu = as_u64(field(obj, "$", "npu_id")?, "$.npu_id")?;
    let npu_id = u32::try_from(npu).map_err(|_| structure("$.npu_id", "npu_id exceeds u32"))?;
    let nodes_v = as_array(field(obj, "$", "nodes")?, "$.nodes")?;
    let mut nodes = Vec::with_capacity(nodes_v.len());
    for (i, nv) in nodes_v.iter().enumerate() {
        nodes.push(decode_node(nv, &format!("$.nodes[{i}]"))?);
    }
    Ok(Trace::with_version(version, npu_id, nodes))
}

fn decode_node(v: &Value, path: &str) -> Result<EtNode, DecodeError> {
    let obj = as_object(v, path)?;
    let id = as_u64(field(obj, path, "id")?, &format!("{path}.id"))?;
    let name = as_str(field(obj, path, "name")?, &format!("{path}.name"))?.to_string();
    let type_path = format!("{path}.type");
    let tag = as_str(field(obj, path, "type")?, &type_path)?;
    let node_type: NodeType =
        tag.parse().map_err(|_| DecodeError::UnknownNodeType { path: type_path, tag: tag.to_string() })?;
    let parents = match obj.get("parents") {
        None => Vec::new(),
        Some(p) => {
            let ppath = format!("{path}.parents");
            as_array(p, &ppath)?
                .iter()
                .enumerate()
                .map(|(j, x)| as_u64(x, &format!("{ppath}[{j}]")))
                .collect::<Result<_, _>>()?
        }
    };
    let attributes = match obj.get("attributes") {
        None => Vec::new(),
        Some(a) => {
            let apath = format!("{path}.attributes");
            as_array(a, &apath)?
                .iter()
                .enumerate()
                .map(|(j, x)| decode_attribute(x, &format!("{apath}[{j}]")))
                .collect::<Result<_, _>>()?
        }
    };
    Ok(EtNode { id, name, node_type, parents, attributes })
}

fn decode_attribute(v: &Value, path: &str) -> Result<Attribute, DecodeError> {
    let obj = as_object(v, path)?;
    let name = as_str(field(obj, path, "name")?, &format!("{path}.name"))?.to_string();
    let kind_path = format!("{path}.kind");
    let tag = as_str(field(obj, path, "kind")?, &kind_path)?;
    let kind: AttributeKind =
        tag.parse().map_err(|_| DecodeError::UnknownAttributeKind { path: kind_path, tag: tag.to_string() })?;
    let doc_string = match obj.get("doc_string") {
        None => String::new(),
        Some(d) => as_str(d, &format!("{path}.doc_string"))?.to_string(),
    };
    let value_path = format!("{path}.value");
    let raw = field(obj, path, "value")?;
    let mismatch = || DecodeError::KindMismatch { path: value_path.clone(), kind };
    let float = |x: &Value| x.as_f64().filter(|_| x.is_number());
    let int = |x: &Value| x.as_i64();
    let value = match kind {
        AttributeKind::Float => AttributeValue::Float(float(raw).ok_or_else(mismatch)?),
        AttributeKind::Int => AttributeValue::Int(int(raw).ok_or_else(mismatch)?),
        AttributeKind::String => AttributeValue::String(raw.as_str().ok_or_else(mismatch)?.to_string()),
        AttributeKind::Floats => AttributeValue::Floats(
            raw.as_array().ok_or_else(mismatch)?.iter().map(|x| float(x).ok_or_else(mismatch)).collect::<Result<_, _>>()?,
        ),
        AttributeKind::Ints => AttributeValue::Ints(
            raw.as_array().ok_or_else(mismatch)?.iter().map(|x| int(x).ok_or_else(mismatch)).collect::<Result<_, _>>()?,
        ),
        AttributeKind::Strings => AttributeValue::Strings(
            raw.as_array()
                .ok_or_else(mismatch)?
                .iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(mismatch))
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(Attribute { name, kind, doc_string, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::attr;

    fn sample() -> Trace {
        Trace::new(
            3,
            vec![
                EtNode::new(2, "b", NodeType::Comp)
                    .with_parents([1])
                    .with_attr(Attribute::int(attr::RUNTIME, 5).with_doc("cycles"))
                    .with_attr(Attribute::floats("fs", vec![0.5, -1.25e10]))
                    .with_attr(Attribute::strings("ss", vec!["x".into(), "\"quoted\"".into()])),
                EtNode::new(1, "a", NodeType::Invalid).with_attr(Attribute::float("f", 3.0)),
            ],
        )
    }

    #[test]
    fn round_trip_and_layout() {
        let t = sample();
        let bytes = encode_json(&t).unwrap();
        assert_eq!(decode_json(&bytes).unwrap(), t);
        let text = String::from_utf8(bytes).unwrap();
        // ascending ids, enum names as tags
        assert!(text.find("\"id\": 1").unwrap() < text.find("\"id\": 2").unwrap());
        assert!(text.contains("\"type\": \"INVALID\""));
        assert!(text.contains("\"kind\": \"INT\""));
    }

    #[test]
    fn unknown_node_type() {
        let doc = br#"{"schema_version":"0.1","npu_id":0,"nodes":[{"id":1,"name":"x","type":"COMM_BROADCAST","parents":[],"attributes":[]}]}"#;
        match decode_json(doc) {
            Err(e @ DecodeError::UnknownNodeType { .. }) => {
                assert!(e.to_string().contains("unknown NodeType"));
                assert!(e.to_string().contains("$.nodes[0].type"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kind_value_mismatch() {
        let doc = br#"{"schema_version":"0.1","npu_id":0,"nodes":[{"id":1,"name":"x","type":"COMP","parents":[],
            "attributes":[{"name":"runtime","kind":"INT","doc_string":"","value":"five"}]}]}"#;
        assert!(matches!(decode_json(doc), Err(DecodeError::KindMismatch { .. })));
        let doc = br#"{"schema_version":"0.1","npu_id":0,"nodes":[{"id":1,"name":"x","type":"COMP","parents":[],
            "attributes":[{"name":"r","kind":"INT","doc_string":"","value":2.5}]}]}"#;
        assert!(matches!(decode_json(doc), Err(DecodeError::KindMismatch { .. })));
    }

    #[test]
    fn version_and_framing_errors() {
        let doc = br#"{"schema_version":"1.0","npu_id":0,"nodes":[]}"#;
        assert!(matches!(decode_json(doc), Err(DecodeError::UnsupportedVersion(_))));
        assert!(matches!(decode_json(b"{\"npu_id\": 0"), Err(DecodeError::Json(_))));
        let doc = br#"{"schema_version":"0.1","nodes":[]}"#;
        assert!(decode_json(doc).unwrap_err().to_string().contains("npu_id"));
    }
}
