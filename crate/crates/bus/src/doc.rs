//! Hierarchical interchange documents and their canonical wire form.
//!
//! Components on the bus exchange trees of named nodes. A node carries
//! string attributes (`uID` marks repeated children, `unit` annotates
//! numeric payloads), an optional payload (text, a number, or a bracketed
//! number list), and child nodes. The wire form is XML-shaped UTF-8 text.
//!
//! The encoding is canonical: children are ordered by (element name, uID),
//! attributes are ordered by name, and numbers are rendered with the
//! shortest decimal form that round-trips. Equal documents therefore
//! produce identical octet sequences, which is what makes dual-transport
//! differential checks bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::BusError;

pub const ATTR_UID: &str = "uID";
pub const ATTR_UNIT: &str = "unit";

/// Node payload. Text that parses as a finite number (or a bracketed list
/// of finite numbers) is normalized to the numeric variants at
/// construction, so the model has one representation per wire form.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Text(String),
    Number(f64),
    Numbers(Vec<f64>),
}

impl Payload {
    fn classify(text: &str) -> Payload {
        let trimmed = text.trim();
        if let Some(inner) = trimmed
            .strip_prefix('[')
            .and_then(|rest| rest.strip_suffix(']'))
        {
            let inner = inner.trim();
            if inner.is_empty() {
                return Payload::Numbers(Vec::new());
            }
            let mut values = Vec::new();
            for part in inner.split(',') {
                match part.trim().parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => return Payload::Text(trimmed.to_string()),
                }
            }
            return Payload::Numbers(values);
        }
        match trimmed.parse::<f64>() {
            Ok(v) if v.is_finite() => Payload::Number(v),
            _ => Payload::Text(trimmed.to_string()),
        }
    }

    fn render(&self, out: &mut String) {
        match self {
            Payload::Text(s) => escape_into(s, out),
            Payload::Number(v) => {
                let _ = write!(out, "{v}");
            }
            Payload::Numbers(vs) => {
                out.push('[');
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    let _ = write!(out, "{v}");
                }
                out.push(']');
            }
        }
    }
}

/// One element of an interchange document.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    name: String,
    attrs: BTreeMap<String, String>,
    payload: Option<Payload>,
    children: Vec<Node>,
}

impl Node {
    pub fn new(name: impl Into<String>) -> Node {
        Node {
            name: name.into(),
            attrs: BTreeMap::new(),
            payload: None,
            children: Vec::new(),
        }
    }

    pub fn attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Node {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn uid(self, uid: impl ToString) -> Node {
        self.attr(ATTR_UID, uid.to_string())
    }

    pub fn unit(self, unit: impl Into<String>) -> Node {
        self.attr(ATTR_UNIT, unit)
    }

    /// Sets a text payload; numeric-looking text is normalized to a number
    /// and whitespace-only text to no payload.
    pub fn text(mut self, text: impl AsRef<str>) -> Node {
        let trimmed = text.as_ref().trim();
        self.payload = if trimmed.is_empty() {
            None
        } else {
            Some(Payload::classify(trimmed))
        };
        self
    }

    pub fn number(mut self, value: f64) -> Node {
        self.payload = Some(Payload::Number(value));
        self
    }

    pub fn numbers(mut self, values: impl Into<Vec<f64>>) -> Node {
        self.payload = Some(Payload::Numbers(values.into()));
        self
    }

    pub fn child(mut self, child: Node) -> Node {
        self.children.push(child);
        self
    }

    pub fn children_from(mut self, children: impl IntoIterator<Item = Node>) -> Node {
        self.children.extend(children);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get_attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }

    pub fn get_uid(&self) -> Option<&str> {
        self.get_attr(ATTR_UID)
    }

    pub fn payload(&self) -> Option<&Payload> {
        self.payload.as_ref()
    }

    pub fn children(&self) -> &[Node] {
        &self.children
    }

    /// First child with the given element name.
    pub fn find(&self, name: &str) -> Option<&Node> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn find_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Node> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }

    pub fn as_text(&self) -> Option<String> {
        match self.payload.as_ref()? {
            Payload::Text(s) => Some(s.clone()),
            Payload::Number(v) => Some(format!("{v}")),
            Payload::Numbers(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self.payload.as_ref()? {
            Payload::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_numbers(&self) -> Option<&[f64]> {
        match self.payload.as_ref()? {
            Payload::Numbers(vs) => Some(vs),
            _ => None,
        }
    }

    fn canonicalize(&mut self) {
        for child in &mut self.children {
            child.canonicalize();
        }
        self.children.sort_by(|a, b| {
            (a.name.as_str(), UidKey::of(a)).cmp(&(b.name.as_str(), UidKey::of(b)))
        });
    }

    fn validate(&self, path: &str) -> Result<(), BusError> {
        if self.name.is_empty() || !self.name.chars().all(is_name_char) {
            return Err(BusError::schema(format!(
                "invalid element name {:?} at {path}",
                self.name
            )));
        }
        if self.payload.is_some() && !self.children.is_empty() {
            return Err(BusError::schema(format!(
                "mixed payload and children at {path}/{}",
                self.name
            )));
        }
        if self.attrs.contains_key(ATTR_UNIT) {
            match self.payload {
                Some(Payload::Number(_)) | Some(Payload::Numbers(_)) => {}
                _ => {
                    return Err(BusError::schema(format!(
                        "unit-annotated element {path}/{} has no numeric payload",
                        self.name
                    )))
                }
            }
        }
        match &self.payload {
            Some(Payload::Number(v)) if !v.is_finite() => {
                return Err(BusError::schema(format!(
                    "non-finite number at {path}/{}",
                    self.name
                )))
            }
            Some(Payload::Numbers(vs)) if vs.iter().any(|v| !v.is_finite()) => {
                return Err(BusError::schema(format!(
                    "non-finite number in list at {path}/{}",
                    self.name
                )))
            }
            _ => {}
        }
        let mut seen = Vec::new();
        for child in &self.children {
            if let Some(uid) = child.get_uid() {
                if seen.iter().any(|u| *u == uid) {
                    return Err(BusError::schema(format!(
                        "duplicate uID \"{uid}\" among children of {path}/{}",
                        self.name
                    )));
                }
                seen.push(uid);
            }
            child.validate(&format!("{path}/{}", self.name))?;
        }
        Ok(())
    }

    fn encode_into(&self, depth: usize, out: &mut String) {
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push('<');
        out.push_str(&self.name);
        for (k, v) in &self.attrs {
            out.push(' ');
            out.push_str(k);
            out.push_str("=\"");
            escape_into(v, out);
            out.push('"');
        }
        if self.children.is_empty() && self.payload.is_none() {
            out.push_str("/>\n");
            return;
        }
        out.push('>');
        if let Some(payload) = &self.payload {
            payload.render(out);
            out.push_str("</");
            out.push_str(&self.name);
            out.push_str(">\n");
            return;
        }
        out.push('\n');
        for child in &self.children {
            child.encode_into(depth + 1, out);
        }
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push_str("</");
        out.push_str(&self.name);
        out.push_str(">\n");
    }
}

/// Sort key for sibling ordering: numeric uIDs compare numerically so that
/// "10" sorts after "9".
#[derive(PartialEq, Eq, PartialOrd, Ord)]
enum UidKey<'a> {
    None,
    Num(u64),
    Str(&'a str),
}

impl<'a> UidKey<'a> {
    fn of(node: &'a Node) -> UidKey<'a> {
        match node.get_uid() {
            None => UidKey::None,
            Some(s) => match s.parse::<u64>() {
                Ok(n) => UidKey::Num(n),
                Err(_) => UidKey::Str(s),
            },
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.'
}

fn escape_into(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
}

/// A validated, canonically ordered interchange document.
#[derive(Debug, Clone, PartialEq)]
pub struct Doc {
    root: Node,
}

impl Doc {
    /// Canonicalizes (recursive child sort) and validates the tree.
    pub fn new(mut root: Node) -> Result<Doc, BusError> {
        root.canonicalize();
        root.validate("")?;
        Ok(Doc { root })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Canonical octet sequence of the document.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        self.root.encode_into(0, &mut out);
        out.into_bytes()
    }

    /// Parses an octet sequence produced by [`Doc::encode`] or any
    /// whitespace-insensitive variant of it.
    pub fn decode(octets: &[u8]) -> Result<Doc, BusError> {
        let text = std::str::from_utf8(octets)
            .map_err(|e| BusError::decode(e.valid_up_to(), "invalid UTF-8"))?;
        let mut parser = Parser {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        };
        parser.skip_ws();
        let root = parser.parse_element()?;
        parser.skip_ws();
        if parser.pos != parser.bytes.len() {
            return Err(BusError::decode(
                parser.pos,
                "trailing content after root element",
            ));
        }
        Doc::new(root)
    }
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), BusError> {
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b {
            self.pos += 1;
            Ok(())
        } else {
            Err(BusError::decode(
                self.pos,
                format!("expected '{}'", b as char),
            ))
        }
    }

    fn parse_name(&mut self) -> Result<&'a str, BusError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && is_name_char(self.bytes[self.pos] as char) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(BusError::decode(self.pos, "expected element name"));
        }
        Ok(&self.text[start..self.pos])
    }

    fn parse_element(&mut self) -> Result<Node, BusError> {
        self.expect(b'<')?;
        let name = self.parse_name()?;
        let mut node = Node::new(name);

        loop {
            self.skip_ws();
            match self.bytes.get(self.pos) {
                Some(b'/') => {
                    self.pos += 1;
                    self.expect(b'>')?;
                    return Ok(node);
                }
                Some(b'>') => {
                    self.pos += 1;
                    break;
                }
                Some(_) => {
                    let key = self.parse_name()?;
                    self.skip_ws();
                    self.expect(b'=')?;
                    self.skip_ws();
                    self.expect(b'"')?;
                    let value = self.parse_until_quote()?;
                    node.attrs.insert(key.to_string(), value);
                }
                None => return Err(BusError::decode(self.pos, "unterminated element")),
            }
        }

        // Content: children, text, or nothing.
        let mut text = String::new();
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(BusError::decode(self.pos, "unterminated element content")),
                Some(b'<') => {
                    if self.bytes.get(self.pos + 1) == Some(&b'/') {
                        self.pos += 2;
                        let close = self.parse_name()?;
                        if close != node.name {
                            return Err(BusError::decode(
                                self.pos,
                                format!("mismatched close tag </{close}> for <{}>", node.name),
                            ));
                        }
                        self.skip_ws();
                        self.expect(b'>')?;
                        break;
                    }
                    node.children.push(self.parse_element()?);
                }
                Some(_) => {
                    let start = self.pos;
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'<' {
                        self.pos += 1;
                    }
                    text.push_str(&unescape(&self.text[start..self.pos], start)?);
                }
            }
        }

        let trimmed = text.trim();
        if !trimmed.is_empty() {
            if !node.children.is_empty() {
                return Err(BusError::decode(
                    self.pos,
                    format!("mixed text and children in <{}>", node.name),
                ));
            }
            node.payload = Some(Payload::classify(trimmed));
        }
        Ok(node)
    }

    fn parse_until_quote(&mut self) -> Result<String, BusError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'"' {
            self.pos += 1;
        }
        if self.pos == self.bytes.len() {
            return Err(BusError::decode(start, "unterminated attribute value"));
        }
        let raw = &self.text[start..self.pos];
        self.pos += 1; // closing quote
        unescape(raw, start)
    }
}

fn unescape(s: &str, offset: usize) -> Result<String, BusError> {
    if !s.contains('&') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(idx) = rest.find('&') {
        out.push_str(&rest[..idx]);
        rest = &rest[idx..];
        let end = rest
            .find(';')
            .ok_or_else(|| BusError::decode(offset, "unterminated entity"))?;
        match &rest[..=end] {
            "&amp;" => out.push('&'),
            "&lt;" => out.push('<'),
            "&gt;" => out.push('>'),
            "&quot;" => out.push('"'),
            "&apos;" => out.push('\''),
            other => {
                return Err(BusError::decode(
                    offset,
                    format!("unknown entity {other:?}"),
                ))
            }
        }
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
