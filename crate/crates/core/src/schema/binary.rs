//! Binary framing, little-endian throughout:
//!
//! ```text
//! "CHKET\0" | format version u8 | schema_version str | npu_id u32 | node count u32
//! then per node, ascending id: record length u32 | record
//! record: id u64 | name str | type u8 | n_parents u32 | parents u64* | n_attrs u32 | attr*
//! attr:   name str | kind u8 | doc_string str | value (shape given by kind)
//! str:    byte length u32 | utf-8 bytes
//! ```

use super::{
    check_schema_version, Attribute, AttributeKind, AttributeValue, DecodeError, EncodeError, EtNode, NodeType, Trace,
};

pub const BINARY_MAGIC: &[u8; 6] = b"CHKET\0";
pub const BINARY_VERSION: u8 = 1;

pub fn encode_binary(trace: &Trace) -> Result<Vec<u8>, EncodeError> {
    super::encode_trace(trace, super::Format::Binary)
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length exceeds u32 framing"));
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub(super) fn encode_unchecked(trace: &Trace) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(BINARY_MAGIC);
    w.u8(BINARY_VERSION);
    w.str(trace.schema_version());
    w.u32(trace.npu_id());
    w.len(trace.len());
    let mut rec = Writer(Vec::new());
    for node in trace.nodes() {
        rec.0.clear();
        encode_node(&mut rec, node);
        w.len(rec.0.len());
        w.0.extend_from_slice(&rec.0);
    }
    w.0
}

fn encode_node(w: &mut Writer, node: &EtNode) {
    w.u64(node.id);
    w.str(&node.name);
    w.u8(node.node_type.code());
    w.len(node.parents.len());
    for &p in &node.parents {
        w.u64(p);
    }
    w.len(node.attributes.len());
    for a in &node.attributes {
        w.str(&a.name);
        w.u8(a.kind.code());
        w.str(&a.doc_string);
        match &a.value {
            AttributeValue::Float(v) => w.f64(*v),
            AttributeValue::Int(v) => w.i64(*v),
            AttributeValue::String(v) => w.str(v),
            AttributeValue::Floats(vs) => {
                w.len(vs.len());
                vs.iter().for_each(|v| w.f64(*v));
            }
            AttributeValue::Ints(vs) => {
                w.len(vs.len());
                vs.iter().for_each(|v| w.i64(*v));
            }
            AttributeValue::Strings(vs) => {
                w.len(vs.len());
                vs.iter().for_each(|v| w.str(v));
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// End of the region currently being read (a record or the whole buffer).
    end: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let avail = self.end - self.pos;
        if n > avail {
            if self.end == self.buf.len() {
                return Err(DecodeError::Truncated { offset: self.buf.len(), needed: n - avail });
            }
            return Err(DecodeError::Corrupt { offset: self.pos, msg: "field overruns its record".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String, DecodeError> {
        let len = self.u32()? as usize;
        let at = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| DecodeError::Corrupt { offset: at, msg: "invalid utf-8".into() })
    }
    /// Element count for a repeated field whose items are at least `min_item` bytes.
    fn count(&mut self, min_item: usize) -> Result<usize, DecodeError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.end - self.pos {
            // let truncation inside the region surface as such
            if self.end == self.buf.len() {
                return Err(DecodeError::Truncated { offset: self.buf.len(), needed: n.saturating_mul(min_item) - (self.end - self.pos) });
            }
            return Err(DecodeError::Corrupt { offset: at, msg: format!("count {n} overruns its record") });
        }
        Ok(n)
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<Trace, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0, end: bytes.len() };
    let magic = r.take(BINARY_MAGIC.len()).map_err(|_| DecodeError::BadMagic)?;
    if magic != BINARY_MAGIC {
        return Err(DecodeError::BadMagic);
    }
    let version = r.u8()?;
    if version != BINARY_VERSION {
        return Err(DecodeError::BadFormatVersion(version));
    }
    let schema_version = r.str()?;
    check_schema_version(&schema_version)?;
    let npu_id = r.u32()?;
    let count = r.u32()? as usize;
    let mut nodes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let start = r.pos;
        if len > bytes.len() - start {
            return Err(DecodeError::Truncated { offset: bytes.len(), needed: len - (bytes.len() - start) });
        }
        let mut rec = Reader { buf: bytes, pos: start, end: start + len };
        nodes.push(decode_node(&mut rec)?);
        if rec.pos != rec.end {
            return Err(DecodeError::Corrupt { offset: rec.pos, msg: "trailing bytes in node record".into() });
        }
        r.pos = rec.end;
    }
    if r.pos != bytes.len() {
        return Err(DecodeError::Corrupt { offset: r.pos, msg: "trailing bytes after last node".into() });
    }
    Ok(Trace::with_version(schema_version, npu_id, nodes))
}

fn decode_node(r: &mut Reader<'_>) -> Result<EtNode, DecodeError> {
    let id = r.u64()?;
    let name = r.str()?;
    let at = r.pos;
    let tag = r.u8()?;
    let node_type = NodeType::from_code(tag)
        .ok_or_else(|| DecodeError::UnknownNodeType { path: format!("byte {at}"), tag: tag.to_string() })?;
    let n_parents = r.count(8)?;
    let parents = (0..n_parents).map(|_| r.u64()).collect::<Result<_, _>>()?;
    let n_attrs = r.count(13)?;
    let mut attributes = Vec::with_capacity(n_attrs);
    for _ in 0..n_attrs {
        let name = r.str()?;
        let at = r.pos;
        let code = r.u8()?;
        let kind = AttributeKind::from_code(code)
            .ok_or_else(|| DecodeError::UnknownAttributeKind { path: format!("byte {at}"), tag: code.to_string() })?;
        let doc_string = r.str()?;
        let value = match kind {
            AttributeKind::Float => AttributeValue::Float(r.f64()?),
            AttributeKind::Int => AttributeValue::Int(r.i64()?),
            AttributeKind::String => AttributeValue::String(r.str()?),
            AttributeKind::Floats => {
                let n = r.count(8)?;
                AttributeValue::Floats((0..n).map(|_| r.f64()).collect::<Result<_, _>>()?)
            }
            AttributeKind::Ints => {
                let n = r.count(8)?;
                AttributeValue::Ints((0..n).map(|_| r.i64()).collect::<Result<_, _>>()?)
            }
            AttributeKind::Strings => {
                let n = r.count(4)?;
                AttributeValue::Strings((0..n).map(|_| r.str()).collect::<Result<_, _>>()?)
            }
        };
        attributes.push(Attribute { name, kind, doc_string, value });
    }
    Ok(EtNode { id, name, node_type, parents, attributes })
}
