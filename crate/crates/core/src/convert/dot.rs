//! Parser for the directed-graph subset of the DOT language: node, edge and
//! attribute statements, edge chains, quoted strings and comments.
//! Subgraphs and HTML labels are rejected.

use std::collections::HashMap;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("DOT line {line}: {msg}")]
pub struct DotError {
    pub line: usize,
    pub msg: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DotNode {
    pub id: String,
    pub attrs: Vec<(String, String)>,
    /// Line of the first statement mentioning the node.
    pub line: usize,
}

impl DotNode {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DotEdge {
    pub from: String,
    pub to: String,
    pub attrs: Vec<(String, String)>,
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DotGraph {
    pub name: Option<String>,
    pub directed: bool,
    /// In order of first node statement; edge endpoints without one are not listed.
    pub nodes: Vec<DotNode>,
    pub edges: Vec<DotEdge>,
    pub graph_attrs: Vec<(String, String)>,
}

impl DotGraph {
    pub fn node(&self, id: &str) -> Option<&DotNode> {
        self.nodes.iter().find(|n| n.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Id(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Semi,
    Comma,
    Arrow,
    Line,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, DotError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let err = |line, msg: String| DotError { line, msg };
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                line += 1;
                i += 1;
            }
            c if c.is_whitespace() => i += 1,
            '#' if out.last().is_none_or(|(_, l)| *l < line) => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                let start = line;
                i += 2;
                loop {
                    match chars.get(i) {
                        None => return Err(err(start, "unterminated comment".into())),
                        Some('*') if chars.get(i + 1) == Some(&'/') => {
                            i += 2;
                            break;
                        }
                        Some('\n') => line += 1,
                        _ => {}
                    }
                    i += 1;
                }
            }
            '{' | '}' | '[' | ']' | '=' | ';' | ',' => {
                let t = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '=' => Tok::Eq,
                    ';' => Tok::Semi,
                    _ => Tok::Comma,
                };
                out.push((t, line));
                i += 1;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push((Tok::Arrow, line));
                i += 2;
            }
            '-' if chars.get(i + 1) == Some(&'-') => {
                out.push((Tok::Line, line));
                i += 2;
            }
            '"' => {
                let start = line;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(start, "unterminated string".into())),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some('\\') if chars.get(i + 1) == Some(&'\n') => {
                            line += 1;
                            i += 2;
                        }
                        Some(&ch) => {
                            if ch == '\n' {
                                line += 1;
                            }
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push((Tok::Id(s), start));
            }
            '<' => return Err(err(line, "HTML strings are not supported".into())),
            c if c.is_alphanumeric() || c == '_' || c == '.' || c == '-' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                if c == '-' {
                    i += 1;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                }
                out.push((Tok::Id(chars[start..i].iter().collect()), line));
            }
            other => return Err(err(line, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    last_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).map_or(self.last_line, |(_, l)| *l)
    }

    fn err(&self, msg: impl Into<String>) -> DotError {
        DotError { line: self.line(), msg: msg.into() }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), DotError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn id(&mut self, what: &str) -> Result<String, DotError> {
        match self.peek() {
            Some(Tok::Id(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn attr_lists(&mut self) -> Result<Vec<(String, String)>, DotError> {
        let mut attrs = Vec::new();
        while self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            loop {
                match self.peek() {
                    Some(Tok::RBracket) => {
                        self.pos += 1;
                        break;
                    }
                    Some(Tok::Comma | Tok::Semi) => self.pos += 1,
                    Some(Tok::Id(_)) => {
                        let k = self.id("attribute name")?;
                        self.expect(Tok::Eq, "'=' after attribute name")?;
                        let v = self.id("attribute value")?;
                        attrs.push((k, v));
                    }
                    None => return Err(self.err("unterminated attribute list")),
                    _ => return Err(self.err("expected attribute or ']'")),
                }
            }
        }
        Ok(attrs)
    }
}

pub fn parse_dot(src: &str) -> Result<DotGraph, DotError> {
    let toks = lex(src)?;
    let last_line = toks.last().map_or(1, |(_, l)| *l);
    let mut p = Parser { toks, pos: 0, last_line };
    let mut g = DotGraph::default();

    if matches!(p.peek(), Some(Tok::Id(s)) if s.eq_ignore_ascii_case("strict")) {
        p.pos += 1;
    }
    match p.next() {
        Some(Tok::Id(s)) if s.eq_ignore_ascii_case("digraph") => g.directed = true,
        Some(Tok::Id(s)) if s.eq_ignore_ascii_case("graph") => g.directed = false,
        _ => {
            p.pos -= 1;
            return Err(p.err("expected 'digraph' or 'graph'"));
        }
    }
    if let Some(Tok::Id(_)) = p.peek() {
        g.name = Some(p.id("graph name")?);
    }
    p.expect(Tok::LBrace, "'{'")?;

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut node_defaults: Vec<(String, String)> = Vec::new();
    let mut edge_defaults: Vec<(String, String)> = Vec::new();

    loop {
        let line = p.line();
        match p.peek() {
            None => return Err(p.err("missing closing '}'")),
            Some(Tok::RBrace) => {
                p.pos += 1;
                break;
            }
            Some(Tok::Semi) => {
                p.pos += 1;
                continue;
            }
            Some(Tok::LBrace) => return Err(p.err("subgraphs are not supported")),
            Some(Tok::Id(_)) => {}
            Some(_) => return Err(p.err("expected a statement")),
        }
        let first = p.id("statement")?;
        let lower = first.to_ascii_lowercase();
        if lower == "subgraph" {
            return Err(DotError { line, msg: "subgraphs are not supported".into() });
        }
        if matches!(lower.as_str(), "graph" | "node" | "edge") && p.peek() == Some(&Tok::LBracket) {
            let attrs = p.attr_lists()?;
            match lower.as_str() {
                "graph" => g.graph_attrs.extend(attrs),
                "node" => node_defaults.extend(attrs),
                _ => edge_defaults.extend(attrs),
            }
            continue;
        }
        if p.peek() == Some(&Tok::Eq) {
            p.pos += 1;
            let v = p.id("value")?;
            g.graph_attrs.push((first, v));
            continue;
        }
        let mut chain = vec![first];
        while let Some(op @ (Tok::Arrow | Tok::Line)) = p.peek().cloned() {
            if (op == Tok::Arrow) != g.directed {
                return Err(p.err(if g.directed { "'--' in a digraph" } else { "'->' in an undirected graph" }));
            }
            p.pos += 1;
            chain.push(p.id("edge target")?);
        }
        let attrs = p.attr_lists()?;
        if chain.len() == 1 {
            let id = chain.pop().unwrap();
            let at = *index.entry(id.clone()).or_insert_with(|| {
                g.nodes.push(DotNode { id, attrs: node_defaults.clone(), line });
                g.nodes.len() - 1
            });
            g.nodes[at].attrs.extend(attrs);
        } else {
            for w in chain.windows(2) {
                let mut a = edge_defaults.clone();
                a.extend(attrs.iter().cloned());
                g.edges.push(DotEdge { from: w[0].clone(), to: w[1].clone(), attrs: a, line });
            }
        }
    }
    if p.peek().is_some() {
        return Err(p.err("trailing content after graph"));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_edges_chains_comments() {
        let src = r#"
            // leading comment
            digraph ff {
              node [shape=box];
              n1 [label="Dense", npu=0, cycles=120];
              n2 [label="Relu" npu=0];  /* block
                 comment */
              n3 [label="say \"hi\""];
              n1 -> n2 -> n3 [weight=2];
            }
        "#;
        let g = parse_dot(src).unwrap();
        assert!(g.directed);
        assert_eq!(g.name.as_deref(), Some("ff"));
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.node("n1").unwrap().attr("cycles"), Some("120"));
        assert_eq!(g.node("n1").unwrap().attr("shape"), Some("box"));
        assert_eq!(g.node("n3").unwrap().attr("label"), Some("say \"hi\""));
        assert_eq!(g.edges.len(), 2);
        assert_eq!((g.edges[1].from.as_str(), g.edges[1].to.as_str()), ("n2", "n3"));
        assert_eq!(g.edges[0].line, 9);
    }

    #[test]
    fn errors_have_lines() {
        let e = parse_dot("digraph {\n a [label=\"x\"\n b -> c;\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = parse_dot("digraph {\n a -> ;\n}").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.to_string().starts_with("DOT line 2"));
        assert!(parse_dot("digraph { a -- b }").is_err());
        assert!(parse_dot("digraph { subgraph x { a } }").is_err());
        assert_eq!(parse_dot("digraph {\n\n").unwrap_err().line, 1);
        assert!(parse_dot("digraph { \"open }").is_err());
    }

    #[test]
    fn numerals_and_negative_values() {
        let g = parse_dot("digraph { 1 [x=-2.5]; 1 -> 2 }").unwrap();
        assert_eq!(g.node("1").unwrap().attr("x"), Some("-2.5"));
        assert!(g.node("2").is_none());
        assert_eq!(g.edges.len(), 1);
    }
}
