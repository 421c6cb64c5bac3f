use std::fmt::Write;

use crate::schema::Trace;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Graphviz rendering of a trace: one statement per node labeled with its
/// name, one edge per parent link, both ordered by node id.
pub fn emit_dot(trace: &Trace) -> String {
    if trace.is_empty() {
        return "digraph et { }\n".to_string();
    }
    let mut out = String::from("digraph et {\n");
    for n in trace.nodes() {
        writeln!(out, "  {} [label={}];", quote(&n.id.to_string()), quote(&n.name)).unwrap();
    }
    for n in trace.nodes() {
        let mut parents = n.parents.clone();
        parents.sort_unstable();
        for p in parents {
            writeln!(out, "  {} -> {};", quote(&p.to_string()), quote(&n.id.to_string())).unwrap();
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{EtNode, NodeType};

    #[test]
    fn empty_trace() {
        assert_eq!(emit_dot(&Trace::empty(0)), "digraph et { }\n");
    }

    #[test]
    fn two_nodes_one_edge() {
        let t = Trace::new(
            0,
            vec![EtNode::new(1, "a", NodeType::Invalid), EtNode::new(2, "say \"b\"", NodeType::Invalid).with_parents([1])],
        );
        let dot = emit_dot(&t);
        assert!(dot.contains("\"1\" [label=\"a\"];"));
        assert!(dot.contains("\"2\" [label=\"say \\\"b\\\"\"];"));
        assert!(dot.contains("\"1\" -> \"2\";"));
        assert_eq!(dot.matches("->").count(), 1);
    }
}
