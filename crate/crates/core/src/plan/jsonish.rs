//! A forgiving parser for the JSON-like text language models emit.
//!
//! Accepts strict JSON plus: single-quoted strings, unquoted keys and
//! values, trailing commas, missing commas between members, and `//`,
//! `/* */` and `#` comments. Every tolerated deviation is reported as a
//! [`Repair`] so callers can surface it.

use std::fmt;

const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Object(Vec<Entry>),
    Array(Vec<Node>),
    Str(String),
    Num(String),
    Bool(bool),
    Null,
    /// An unquoted scalar such as `top grasp`.
    Bare(String),
}

impl Node {
    pub fn kind(&self) -> &'static str {
        match self {
            Node::Object(_) => "object",
            Node::Array(_) => "array",
            Node::Str(_) => "string",
            Node::Num(_) => "number",
            Node::Bool(_) => "boolean",
            Node::Null => "null",
            Node::Bare(_) => "bare word",
        }
    }

    /// Scalar rendered as text, if the node is a scalar.
    pub fn as_text(&self) -> Option<String> {
        match self {
            Node::Str(s) | Node::Bare(s) | Node::Num(s) => Some(s.clone()),
            Node::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    }
}

/// A key/value member with the byte span it occupied in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Node,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Repair {
    SingleQuotes,
    UnquotedKey,
    UnquotedValue,
    TrailingComma,
    MissingComma,
    Comment,
    TrailingContent,
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Repair::SingleQuotes => "single-quoted strings",
            Repair::UnquotedKey => "unquoted keys",
            Repair::UnquotedValue => "unquoted values",
            Repair::TrailingComma => "trailing commas",
            Repair::MissingComma => "missing commas",
            Repair::Comment => "comments",
            Repair::TrailingContent => "trailing content after the document",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at offset {}", self.message, self.offset)
    }
}

impl std::error::Error for SyntaxError {}

/// Parse one JSON-like document. Repairs are returned sorted and deduplicated.
pub fn parse_jsonish(text: &str) -> Result<(Node, Vec<Repair>), SyntaxError> {
    let mut p = Parser { src: text, pos: 0, repairs: Vec::new(), depth: 0 };
    p.skip_ws();
    let node = p.value()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        p.repairs.push(Repair::TrailingContent);
    }
    let mut repairs = p.repairs;
    repairs.sort();
    repairs.dedup();
    Ok((node, repairs))
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    repairs: Vec<Repair>,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, SyntaxError> {
        Err(SyntaxError { offset: self.pos, message: message.into() })
    }

    /// Skip whitespace and comments; returns true if a newline was crossed.
    fn skip_ws(&mut self) -> bool {
        let mut newline = false;
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    newline |= c == '\n';
                    self.bump();
                }
                Some('/') if self.rest().starts_with("//") => {
                    self.repairs.push(Repair::Comment);
                    self.skip_line();
                    newline = true;
                }
                Some('#') => {
                    self.repairs.push(Repair::Comment);
                    self.skip_line();
                    newline = true;
                }
                Some('/') if self.rest().starts_with("/*") => {
                    self.repairs.push(Repair::Comment);
                    match self.rest()[2..].find("*/") {
                        Some(end) => self.pos += 2 + end + 2,
                        None => self.pos = self.src.len(),
                    }
                }
                _ => return newline,
            }
        }
    }

    fn skip_line(&mut self) {
        match self.rest().find('\n') {
            Some(i) => self.pos += i,
            None => self.pos = self.src.len(),
        }
    }

    fn value(&mut self) -> Result<Node, SyntaxError> {
        match self.peek() {
            None => self.err("unexpected end of input, expected a value"),
            Some('{') => self.nested(Self::object),
            Some('[') => self.nested(Self::array),
            Some(q @ ('"' | '\'')) => self.string(q).map(Node::Str),
            Some(c) if c == '}' || c == ']' || c == ',' || c == ':' => {
                self.err(format!("unexpected '{c}', expected a value"))
            }
            Some(_) => Ok(self.bare_value()),
        }
    }

    fn nested(&mut self, f: fn(&mut Self) -> Result<Node, SyntaxError>) -> Result<Node, SyntaxError> {
        if self.depth >= MAX_DEPTH {
            return self.err("nesting too deep");
        }
        self.depth += 1;
        let out = f(self);
        self.depth -= 1;
        out
    }

    fn object(&mut self) -> Result<Node, SyntaxError> {
        self.bump(); // '{'
        let mut entries = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.err("unterminated object"),
                Some('}') => {
                    self.bump();
                    return Ok(Node::Object(entries));
                }
                _ => {}
            }
            let start = self.pos;
            let key = self.key()?;
            self.skip_ws();
            if self.peek() != Some(':') {
                return self.err(format!("expected ':' after key '{key}'"));
            }
            self.bump();
            self.skip_ws();
            let value = self.value()?;
            let end = self.pos;
            entries.push(Entry { key, value, start, end });
            let crossed_newline = self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                    self.skip_ws();
                    if self.peek() == Some('}') {
                        self.repairs.push(Repair::TrailingComma);
                    }
                }
                Some('}') => {}
                None => return self.err("unterminated object"),
                Some(c) if crossed_newline || c == '"' || c == '\'' => {
                    self.repairs.push(Repair::MissingComma);
                }
                Some(c) => return self.err(format!("unexpected '{c}' in object")),
            }
        }
    }

    fn array(&mut self) -> Result<Node, SyntaxError> {
        self.bump(); // '['
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return self.err("unterminated array"),
                Some(']') => {
                    self.bump();
                    return Ok(Node::Array(items));
                }
                _ => {}
            }
            items.push(self.value()?);
            let crossed_newline = self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                    self.skip_ws();
                    if self.peek() == Some(']') {
                        self.repairs.push(Repair::TrailingComma);
                    }
                }
                Some(']') => {}
                None => return self.err("unterminated array"),
                Some('{' | '[' | '"' | '\'') => self.repairs.push(Repair::MissingComma),
                Some(_) if crossed_newline => self.repairs.push(Repair::MissingComma),
                Some(c) => return self.err(format!("unexpected '{c}' in array")),
            }
        }
    }

    fn key(&mut self) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(q @ ('"' | '\'')) => self.string(q),
            Some(c) if matches!(c, '{' | '[' | ']' | ',' | ':') => {
                self.err(format!("unexpected '{c}', expected a key"))
            }
            _ => {
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if matches!(c, ':' | '{' | '}' | '[' | ']' | ',' | '"' | '\n') {
                        break;
                    }
                    self.bump();
                }
                let key = self.src[start..self.pos].trim();
                if key.is_empty() {
                    return self.err("empty key");
                }
                self.repairs.push(Repair::UnquotedKey);
                Ok(key.to_string())
            }
        }
    }

    fn string(&mut self, quote: char) -> Result<String, SyntaxError> {
        let open = self.pos;
        self.bump();
        if quote == '\'' {
            self.repairs.push(Repair::SingleQuotes);
        }
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(SyntaxError { offset: open, message: "unterminated string".into() })
                }
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.bump() {
                    None => {
                        return Err(SyntaxError { offset: open, message: "unterminated string".into() })
                    }
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('b') => out.push('\u{8}'),
                    Some('f') => out.push('\u{c}'),
                    Some('u') => out.push(self.unicode_escape()?),
                    Some(other) => out.push(other),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn unicode_escape(&mut self) -> Result<char, SyntaxError> {
        let hex = |p: &mut Self| -> Result<u32, SyntaxError> {
            let digits = p.rest().get(..4).filter(|d| d.chars().all(|c| c.is_ascii_hexdigit()));
            match digits {
                Some(d) => {
                    let v = u32::from_str_radix(d, 16).expect("hex digits");
                    p.pos += 4;
                    Ok(v)
                }
                None => p.err("invalid \\u escape"),
            }
        };
        let first = hex(self)?;
        if (0xD800..0xDC00).contains(&first) && self.rest().starts_with("\\u") {
            self.pos += 2;
            let second = hex(self)?;
            if (0xDC00..0xE000).contains(&second) {
                let c = 0x10000 + ((first - 0xD800) << 10) + (second - 0xDC00);
                return Ok(char::from_u32(c).unwrap_or('\u{FFFD}'));
            }
            return Ok('\u{FFFD}');
        }
        Ok(char::from_u32(first).unwrap_or('\u{FFFD}'))
    }

    fn bare_value(&mut self) -> Node {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if matches!(c, ',' | '}' | ']' | '\n') {
                break;
            }
            self.bump();
        }
        let text = self.src[start..self.pos].trim();
        match text {
            "true" => Node::Bool(true),
            "false" => Node::Bool(false),
            "null" => Node::Null,
            t if is_number(t) => Node::Num(t.to_string()),
            t => {
                self.repairs.push(Repair::UnquotedValue);
                Node::Bare(t.to_string())
            }
        }
    }
}

fn is_number(t: &str) -> bool {
    !t.is_empty() && t.parse::<f64>().is_ok() && t.chars().all(|c| c.is_ascii_digit() || "+-.eE".contains(c))
}
