//! Table ingestion: locate the first `<table>`, drop presentational markup,
//! minify, and inventory cell texts in document order.
//!
//! The output HTML is canonical: only `table`, `thead`, `tbody`, `tfoot`,
//! `tr`, `td`, `th` and `caption` survive, and only `rowspan`/`colspan`
//! attributes are kept. Cell content is flattened to text, NFC-normalized and
//! whitespace-collapsed. Sanitizing already-sanitized HTML is the identity.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("no <table> element found")]
    NoTableFound,
    #[error("malformed HTML at byte {offset}: {reason}")]
    MalformedHtml { offset: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTable {
    pub id: String,
    pub html: String,
}

impl RawTable {
    pub fn new(id: impl Into<String>, html: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            html: html.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub text: String,
}

/// Sanitized, minified table plus its ordered cell inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanTable {
    pub id: String,
    pub html: String,
    pub cells: Vec<Cell>,
    /// Byte range of each cell's escaped text inside `html`, parallel to `cells`.
    spans: Vec<Range<usize>>,
}

impl CleanTable {
    /// Byte range in `html` holding the (HTML-escaped) text of cell `index`.
    pub fn cell_span(&self, index: usize) -> Range<usize> {
        self.spans[index].clone()
    }

    /// Rebuild the table HTML with each cell's text replaced by `replace(cell)`.
    ///
    /// Only cell text nodes are touched; tags, attributes and caption text are
    /// copied verbatim.
    pub fn render_with<'a, F>(&'a self, mut replace: F) -> String
    where
        F: FnMut(&'a Cell) -> &'a str,
    {
        let mut out = String::with_capacity(self.html.len());
        let mut last = 0;
        for (cell, span) in self.cells.iter().zip(&self.spans) {
            out.push_str(&self.html[last..span.start]);
            out.push_str(&html_escape::encode_text(replace(cell)));
            last = span.end;
        }
        out.push_str(&self.html[last..]);
        out
    }
}

const FORMATTING_BLOCKS: &[&str] = &[
    "p", "div", "li", "ul", "ol", "h1", "h2", "h3", "h4", "h5", "h6", "dt", "dd", "hr",
];
const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title"];
const KEPT_ATTRS: &[&str] = &["rowspan", "colspan"];

pub fn sanitize(raw: &RawTable) -> Result<CleanTable, IngestError> {
    let tokens = lex(&raw.html)?;
    let start = tokens
        .iter()
        .position(|t| matches!(t, Token::Start { name, .. } if name == "table"))
        .ok_or(IngestError::NoTableFound)?;

    let mut b = Builder::default();
    b.out.push_str("<table>");
    for tok in &tokens[start + 1..] {
        if b.feed(tok) {
            break;
        }
    }
    b.finish();

    Ok(CleanTable {
        id: raw.id.clone(),
        html: b.out,
        cells: b.cells,
        spans: b.spans,
    })
}

/// The ordered cell inventory; duplicates are kept.
pub fn extract_cells(clean: &CleanTable) -> Vec<Cell> {
    clean.cells.clone()
}

#[derive(Default)]
struct Builder {
    out: String,
    cells: Vec<Cell>,
    spans: Vec<Range<usize>>,
    section: Option<String>,
    row_open: bool,
    cell: Option<OpenCell>,
    caption: Option<String>,
    /// Tables nested below the one being sanitized.
    nested: usize,
}

struct OpenCell {
    tag: String,
    attrs: String,
    text: String,
}

impl Builder {
    /// Returns true once the outer table has been closed.
    fn feed(&mut self, tok: &Token) -> bool {
        match tok {
            Token::Text(t) => {
                if let Some(cap) = self.caption.as_mut() {
                    cap.push_str(t);
                } else if let Some(cell) = self.cell.as_mut() {
                    cell.text.push_str(t);
                }
            }
            Token::Start { name, attrs } => self.start_tag(name, attrs),
            Token::End { name } => return self.end_tag(name),
        }
        false
    }

    fn push_separator(&mut self) {
        if let Some(cap) = self.caption.as_mut() {
            cap.push(' ');
        } else if let Some(cell) = self.cell.as_mut() {
            cell.text.push(' ');
        }
    }

    fn start_tag(&mut self, name: &str, attrs: &[(String, String)]) {
        if self.nested > 0 {
            if name == "table" {
                self.nested += 1;
            } else if matches!(name, "td" | "th" | "tr" | "br" | "caption") {
                self.push_separator();
            }
            return;
        }
        match name {
            "table" => {
                self.nested = 1;
                self.push_separator();
            }
            "caption" => {
                self.close_row();
                self.close_caption();
                self.caption = Some(String::new());
            }
            "thead" | "tbody" | "tfoot" => {
                self.close_row();
                self.close_section();
                self.out.push('<');
                self.out.push_str(name);
                self.out.push('>');
                self.section = Some(name.to_string());
            }
            "tr" => {
                self.close_caption();
                self.close_row();
                self.out.push_str("<tr>");
                self.row_open = true;
            }
            "td" | "th" => {
                self.close_caption();
                self.close_cell();
                if !self.row_open {
                    self.out.push_str("<tr>");
                    self.row_open = true;
                }
                let mut kept = String::new();
                for (k, v) in attrs {
                    if KEPT_ATTRS.contains(&k.as_str()) {
                        kept.push(' ');
                        kept.push_str(k);
                        kept.push_str("=\"");
                        kept.push_str(&html_escape::encode_double_quoted_attribute(v));
                        kept.push('"');
                    }
                }
                self.cell = Some(OpenCell {
                    tag: name.to_string(),
                    attrs: kept,
                    text: String::new(),
                });
            }
            "br" => self.push_separator(),
            _ if FORMATTING_BLOCKS.contains(&name) => self.push_separator(),
            _ => {}
        }
    }

    fn end_tag(&mut self, name: &str) -> bool {
        if self.nested > 0 {
            if name == "table" {
                self.nested -= 1;
                self.push_separator();
            }
            return false;
        }
        match name {
            "table" => return true,
            "caption" => self.close_caption(),
            "thead" | "tbody" | "tfoot" => {
                self.close_row();
                if self.section.as_deref() == Some(name) {
                    self.close_section();
                }
            }
            "tr" => self.close_row(),
            "td" | "th" => self.close_cell(),
            _ if FORMATTING_BLOCKS.contains(&name) => self.push_separator(),
            _ => {}
        }
        false
    }

    fn close_caption(&mut self) {
        if let Some(cap) = self.caption.take() {
            self.out.push_str("<caption>");
            self.out
                .push_str(&html_escape::encode_text(&normalize(&cap)));
            self.out.push_str("</caption>");
        }
    }

    fn close_cell(&mut self) {
        if let Some(cell) = self.cell.take() {
            let text = normalize(&cell.text);
            self.out.push('<');
            self.out.push_str(&cell.tag);
            self.out.push_str(&cell.attrs);
            self.out.push('>');
            let begin = self.out.len();
            self.out.push_str(&html_escape::encode_text(&text));
            self.spans.push(begin..self.out.len());
            self.out.push_str("</");
            self.out.push_str(&cell.tag);
            self.out.push('>');
            self.cells.push(Cell {
                index: self.cells.len(),
                text,
            });
        }
    }

    fn close_row(&mut self) {
        self.close_cell();
        if self.row_open {
            self.out.push_str("</tr>");
            self.row_open = false;
        }
    }

    fn close_section(&mut self) {
        if let Some(sec) = self.section.take() {
            self.out.push_str("</");
            self.out.push_str(&sec);
            self.out.push('>');
        }
    }

    fn finish(&mut self) {
        self.close_caption();
        self.close_row();
        self.close_section();
        self.out.push_str("</table>");
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    /// Text with character references already decoded.
    Text(String),
    Start {
        name: String,
        attrs: Vec<(String, String)>,
    },
    End {
        name: String,
    },
}

fn malformed(offset: usize, reason: &str) -> IngestError {
    IngestError::MalformedHtml {
        offset,
        reason: reason.to_string(),
    }
}

/// Tag-soup lexer. Comments, doctypes and processing instructions are
/// skipped; the bodies of raw-text elements such as `<script>` are dropped.
fn lex(src: &str) -> Result<Vec<Token>, IngestError> {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    let mut text_start = 0;

    let flush = |tokens: &mut Vec<Token>, from: usize, to: usize| {
        if from < to {
            tokens.push(Token::Text(
                html_escape::decode_html_entities(&src[from..to]).into_owned(),
            ));
        }
    };

    while pos < bytes.len() {
        if bytes[pos] != b'<' {
            pos += 1;
            continue;
        }
        let next = bytes.get(pos + 1).copied();
        match next {
            Some(b'!') => {
                flush(&mut tokens, text_start, pos);
                if src[pos..].starts_with("<!--") {
                    let end = src[pos + 4..]
                        .find("-->")
                        .ok_or_else(|| malformed(pos, "unterminated comment"))?;
                    pos += 4 + end + 3;
                } else {
                    let end = src[pos..]
                        .find('>')
                        .ok_or_else(|| malformed(pos, "unterminated declaration"))?;
                    pos += end + 1;
                }
                text_start = pos;
            }
            Some(b'?') => {
                flush(&mut tokens, text_start, pos);
                let end = src[pos..]
                    .find('>')
                    .ok_or_else(|| malformed(pos, "unterminated processing instruction"))?;
                pos += end + 1;
                text_start = pos;
            }
            Some(b'/') if bytes.get(pos + 2).is_some_and(|b| b.is_ascii_alphabetic()) => {
                flush(&mut tokens, text_start, pos);
                let end = src[pos..]
                    .find('>')
                    .ok_or_else(|| malformed(pos, "unterminated end tag"))?;
                let inner = &src[pos + 2..pos + end];
                let name_len = inner
                    .find(|c: char| c.is_whitespace() || c == '/')
                    .unwrap_or(inner.len());
                tokens.push(Token::End {
                    name: inner[..name_len].to_ascii_lowercase(),
                });
                pos += end + 1;
                text_start = pos;
            }
            Some(b) if b.is_ascii_alphabetic() => {
                flush(&mut tokens, text_start, pos);
                let (name, attrs, consumed) = lex_start_tag(src, pos)?;
                pos += consumed;
                if RAW_TEXT.contains(&name.as_str()) {
                    let closing = format!("</{name}");
                    let rest = src[pos..].to_ascii_lowercase();
                    match rest.find(&closing) {
                        Some(i) => {
                            let after = pos + i;
                            let gt = src[after..]
                                .find('>')
                                .ok_or_else(|| malformed(after, "unterminated end tag"))?;
                            pos = after + gt + 1;
                        }
                        None => pos = src.len(),
                    }
                } else {
                    tokens.push(Token::Start { name, attrs });
                }
                text_start = pos;
            }
            // a bare '<' is text
            _ => pos += 1,
        }
    }
    flush(&mut tokens, text_start, bytes.len());
    Ok(tokens)
}

type StartTag = (String, Vec<(String, String)>, usize);

/// Lex `<name attr=... >` starting at `start`; returns the tag name, its
/// attributes and the number of bytes consumed.
fn lex_start_tag(src: &str, start: usize) -> Result<StartTag, IngestError> {
    let bytes = src.as_bytes();
    let mut i = start + 1;
    while i < bytes.len() && !is_tag_delim(bytes[i]) {
        i += 1;
    }
    let name = src[start + 1..i].to_ascii_lowercase();
    let mut attrs = Vec::new();
    loop {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'/') {
            i += 1;
        }
        if i >= bytes.len() {
            return Err(malformed(start, "unterminated start tag"));
        }
        if bytes[i] == b'>' {
            return Ok((name, attrs, i + 1 - start));
        }
        let key_start = i;
        while i < bytes.len() && !is_tag_delim(bytes[i]) && bytes[i] != b'=' {
            i += 1;
        }
        let key = src[key_start..i].to_ascii_lowercase();
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < bytes.len() && bytes[i] == b'=' {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            match bytes.get(i) {
                Some(&q) if q == b'"' || q == b'\'' => {
                    let close = src[i + 1..]
                        .find(q as char)
                        .ok_or_else(|| malformed(i, "unterminated attribute value"))?;
                    value =
                        html_escape::decode_html_entities(&src[i + 1..i + 1 + close]).into_owned();
                    i += close + 2;
                }
                Some(_) => {
                    let v_start = i;
                    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                        i += 1;
                    }
                    value = html_escape::decode_html_entities(&src[v_start..i]).into_owned();
                }
                None => return Err(malformed(start, "unterminated start tag")),
            }
        }
        if !key.is_empty() {
            attrs.push((key, value));
        }
    }
}

fn is_tag_delim(b: u8) -> bool {
    b.is_ascii_whitespace() || b == b'>' || b == b'/'
}
