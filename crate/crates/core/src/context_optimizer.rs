//! Token-based cell encoding and its inverse.
//!
//! Every unique cell text is rewritten to the shortest token prefix that is
//! still unique within the document, so the model sees fewer tokens. The
//! per-document [`Codebook`] records the mapping; nothing persists between
//! calls to [`encode_table`].
//!
//! Encoding order: unique texts sorted ascending by token count (stable, so
//! ties keep first-appearance order). For each text:
//!
//! 1. two tokens or fewer: kept as is;
//! 2. otherwise start from the first two tokens;
//! 3. extend while the prefix leaves a `(`, `[` or `{` unclosed, ends inside
//!    a multi-byte character, equals an encoding already handed out, or equals
//!    the original text of another cell.
//!
//! Running out of tokens yields the full text, which is always unique.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::table_ingest::CleanTable;
use crate::tokenizer::TokenizerHandle;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("JSON parse error: {0}")]
    JsonParse(#[from] serde_json::Error),
    #[error("invalid codebook: {0}")]
    InvalidCodebook(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookEntry {
    pub original: String,
    pub encoded: String,
}

/// Per-document original <-> encoded mapping.
///
/// Serialized as `{"tokenizer": name, "entries": [{"original", "encoded"}, ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    #[serde(rename = "tokenizer")]
    pub tokenizer_name: String,
    pub entries: Vec<CodebookEntry>,
}

impl Codebook {
    pub fn encoded_of(&self, original: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.original == original)
            .map(|e| e.encoded.as_str())
    }

    pub fn original_of(&self, encoded: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.encoded == encoded)
            .map(|e| e.original.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("codebook serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, OptimizerError> {
        let cb: Codebook = serde_json::from_str(s)?;
        cb.validate()?;
        Ok(cb)
    }

    /// Check injectivity in both directions and the decode-ambiguity guard.
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidCodebook(m));
        let mut originals = HashSet::new();
        let mut encodeds = HashSet::new();
        for e in &self.entries {
            if !originals.insert(e.original.as_str()) {
                return bad(format!("duplicate original {:?}", e.original));
            }
            if !encodeds.insert(e.encoded.as_str()) {
                return bad(format!("duplicate encoded form {:?}", e.encoded));
            }
            if e.encoded.is_empty() {
                return bad(format!("empty encoded form for {:?}", e.original));
            }
        }
        for e in &self.entries {
            if e.encoded != e.original && originals.contains(e.encoded.as_str()) {
                return bad(format!(
                    "encoded form {:?} is the original text of another entry",
                    e.encoded
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTable {
    pub id: String,
    pub html: String,
    pub codebook: Codebook,
    pub tokens_before: usize,
    pub tokens_after: usize,
    spans: Vec<Range<usize>>,
}

impl EncodedTable {
    /// Byte ranges of the encoded cell texts inside `html`, in document order.
    pub fn cell_spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    /// Put every cell's original text back; yields the sanitized HTML.
    pub fn restore_html(&self) -> String {
        let index: HashMap<&str, &str> = self
            .codebook
            .entries
            .iter()
            .map(|e| (e.encoded.as_str(), e.original.as_str()))
            .collect();
        let mut out = String::with_capacity(self.html.len());
        let mut last = 0;
        for span in &self.spans {
            out.push_str(&self.html[last..span.start]);
            let text = html_escape::decode_html_entities(&self.html[span.clone()]);
            let original = index.get(text.as_ref()).copied().unwrap_or(text.as_ref());
            out.push_str(&html_escape::encode_text(original));
            last = span.end;
        }
        out.push_str(&self.html[last..]);
        out
    }
}

/// Net count of unclosed `(`, `[`, `{` in `s`, per bracket type.
fn has_unclosed_bracket(s: &str) -> bool {
    let mut depth = [0i64; 3];
    for ch in s.chars() {
        match ch {
            '(' => depth[0] += 1,
            ')' => depth[0] -= 1,
            '[' => depth[1] += 1,
            ']' => depth[1] -= 1,
            '{' => depth[2] += 1,
            '}' => depth[2] -= 1,
            _ => {}
        }
    }
    depth.iter().any(|&d| d > 0)
}

pub fn encode_table(clean: &CleanTable, h: &TokenizerHandle) -> EncodedTable {
    // unique non-empty texts, first-appearance order
    let mut seen = HashSet::new();
    let unique: Vec<&str> = clean
        .cells
        .iter()
        .map(|c| c.text.as_str())
        .filter(|t| !t.is_empty() && seen.insert(*t))
        .collect();

    let mut order: Vec<(usize, &str, _)> = unique
        .iter()
        .map(|&t| {
            let seq = h.tokenize(t);
            (seq.len(), t, seq)
        })
        .collect();
    order.sort_by_key(|(n, _, _)| *n);

    let originals: HashSet<&str> = unique.iter().copied().collect();
    let mut assigned: HashSet<String> = HashSet::new();
    let mut entries = Vec::with_capacity(order.len());

    for (n, text, seq) in &order {
        let encoded = if *n <= 2 {
            text.to_string()
        } else {
            let acceptable = |cand: &str| {
                !has_unclosed_bracket(cand)
                    && !assigned.contains(cand)
                    && !(cand != *text && originals.contains(cand))
            };
            (2..=*n)
                .filter_map(|k| seq.prefix(k))
                .find(|cand| acceptable(cand))
                .unwrap_or(text)
                .to_string()
        };
        assigned.insert(encoded.clone());
        entries.push(CodebookEntry {
            original: text.to_string(),
            encoded,
        });
    }

    let codebook = Codebook {
        tokenizer_name: h.name().to_string(),
        entries,
    };
    let lookup: HashMap<&str, &str> = codebook
        .entries
        .iter()
        .map(|e| (e.original.as_str(), e.encoded.as_str()))
        .collect();

    let mut spans = Vec::with_capacity(clean.cells.len());
    let mut html = String::with_capacity(clean.html.len());
    let mut last = 0;
    for cell in &clean.cells {
        let span = clean.cell_span(cell.index);
        html.push_str(&clean.html[last..span.start]);
        let begin = html.len();
        let encoded = lookup
            .get(cell.text.as_str())
            .copied()
            .unwrap_or(&cell.text);
        html.push_str(&html_escape::encode_text(encoded));
        spans.push(begin..html.len());
        last = span.end;
    }
    html.push_str(&clean.html[last..]);

    EncodedTable {
        id: clean.id.clone(),
        tokens_before: h.count_tokens(&clean.html),
        tokens_after: h.count_tokens(&html),
        html,
        codebook,
        spans,
    }
}

/// Reusable decoder over one codebook.
#[derive(Debug)]
pub struct Decoder<'a> {
    exact: HashMap<&'a str, &'a str>,
    /// Entry indices bucketed by first byte of the encoded form, longest first.
    by_first_byte: HashMap<u8, Vec<&'a CodebookEntry>>,
}

impl<'a> Decoder<'a> {
    pub fn new(cb: &'a Codebook) -> Self {
        let mut exact = HashMap::new();
        let mut by_first_byte: HashMap<u8, Vec<&CodebookEntry>> = HashMap::new();
        for e in &cb.entries {
            if e.encoded.is_empty() {
                continue;
            }
            exact.insert(e.encoded.as_str(), e.original.as_str());
            by_first_byte
                .entry(e.encoded.as_bytes()[0])
                .or_default()
                .push(e);
        }
        for bucket in by_first_byte.values_mut() {
            bucket.sort_by_key(|e| std::cmp::Reverse(e.encoded.len()));
        }
        Self {
            exact,
            by_first_byte,
        }
    }

    pub fn decode(&self, text: &str) -> String {
        if let Some(original) = self.exact.get(text) {
            return (*original).to_string();
        }
        let bytes = text.as_bytes();
        let mut out = String::with_capacity(text.len());
        let mut pos = 0;
        let mut copied = 0;
        while pos < bytes.len() {
            let hit = self.by_first_byte.get(&bytes[pos]).and_then(|bucket| {
                bucket
                    .iter()
                    .find(|e| bytes[pos..].starts_with(e.encoded.as_bytes()))
            });
            match hit {
                Some(e) if text.is_char_boundary(pos) => {
                    out.push_str(&text[copied..pos]);
                    out.push_str(&e.original);
                    pos += e.encoded.len();
                    copied = pos;
                }
                _ => pos += 1,
            }
        }
        out.push_str(&text[copied..]);
        out
    }

    /// Decode every object key and string scalar in place.
    pub fn decode_value(&self, v: &mut Value) {
        match v {
            Value::String(s) => *s = self.decode(s),
            Value::Array(items) => items.iter_mut().for_each(|i| self.decode_value(i)),
            Value::Object(map) => {
                let old = std::mem::take(map);
                for (k, mut val) in old {
                    self.decode_value(&mut val);
                    map.insert(self.decode(&k), val);
                }
            }
            _ => {}
        }
    }
}

/// Restore original cell texts inside arbitrary text.
///
/// A string equal to an encoded form decodes to its original. Otherwise
/// encoded forms are replaced as substrings, leftmost first and longest
/// first at each position, without overlap. Unmatched text is unchanged.
pub fn decode_text(text: &str, cb: &Codebook) -> String {
    Decoder::new(cb).decode(text)
}

/// Decode keys and string values of a JSON document; structure, numbers,
/// booleans and nulls are untouched.
pub fn decode_json(json_text: &str, cb: &Codebook) -> Result<String, OptimizerError> {
    let mut v: Value = serde_json::from_str(json_text)?;
    Decoder::new(cb).decode_value(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

/// `(1 - after/before) * 100`, rounded to two decimals.
pub fn token_efficiency(tokens_before: u64, tokens_after: u64) -> Result<f64, OptimizerError> {
    if tokens_before == 0 {
        return Err(OptimizerError::InvalidInput(
            "tokens_before must be positive".into(),
        ));
    }
    let raw = (1.0 - tokens_after as f64 / tokens_before as f64) * 100.0;
    Ok((raw * 100.0).round() / 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table_ingest::{sanitize, RawTable};

    fn table(cells: &[&str]) -> CleanTable {
        let row: String = cells.iter().map(|c| format!("<td>{c}</td>")).collect();
        sanitize(&RawTable::new(
            "t",
            format!("<table><tr>{row}</tr></table>"),
        ))
        .unwrap()
    }

    fn encode(cells: &[&str]) -> EncodedTable {
        encode_table(&table(cells), &TokenizerHandle::whitespace())
    }

    fn entry<'a>(enc: &'a EncodedTable, original: &str) -> &'a str {
        enc.codebook.encoded_of(original).unwrap()
    }

    #[test]
    fn three_tokens_become_two() {
        let enc = encode(&["alpha beta gamma"]);
        assert_eq!(enc.codebook.entries.len(), 1);
        assert_eq!(entry(&enc, "alpha beta gamma"), "alpha beta");
        assert_eq!(enc.html, "<table><tr><td>alpha beta</td></tr></table>");
        assert_eq!(enc.tokens_before, 3);
        assert_eq!(enc.tokens_after, 2);
    }

    #[test]
    fn collision_extends_second_cell() {
        let enc = encode(&["alpha beta gamma", "alpha beta delta"]);
        assert_eq!(entry(&enc, "alpha beta gamma"), "alpha beta");
        assert_eq!(entry(&enc, "alpha beta delta"), "alpha beta delta");
    }

    #[test]
    fn short_cells_unchanged() {
        let enc = encode(&["x", "one two"]);
        assert_eq!(entry(&enc, "x"), "x");
        assert_eq!(entry(&enc, "one two"), "one two");
        assert_eq!(enc.tokens_before, enc.tokens_after);
    }

    #[test]
    fn prefix_may_not_equal_another_original() {
        // "alpha beta" is itself a cell, so the 3-token cell cannot use it
        let enc = encode(&["alpha beta gamma", "alpha beta"]);
        assert_eq!(entry(&enc, "alpha beta"), "alpha beta");
        assert_eq!(entry(&enc, "alpha beta gamma"), "alpha beta gamma");
    }

    #[test]
    fn bracket_forces_closure() {
        let enc = encode(&["[0.5 to 1.2] mg daily"]);
        assert_eq!(entry(&enc, "[0.5 to 1.2] mg daily"), "[0.5 to 1.2]");
        let enc = encode(&["x (a b c) d e"]);
        assert_eq!(entry(&enc, "x (a b c) d e"), "x (a b c)");
        // unbalanced original: runs to the end
        let enc = encode(&["{ a b c"]);
        assert_eq!(entry(&enc, "{ a b c"), "{ a b c");
    }

    #[test]
    fn duplicates_share_one_entry() {
        let enc = encode(&["a b c", "q", "a b c"]);
        assert_eq!(enc.codebook.entries.len(), 2);
        assert_eq!(
            enc.html,
            "<table><tr><td>a b</td><td>q</td><td>a b</td></tr></table>"
        );
    }

    #[test]
    fn html_restores_exactly() {
        let clean = table(&["p &lt; 0.05 (two sided)", "5.32 ± 0.43", "a b c", "a b d"]);
        let enc = encode_table(&clean, &TokenizerHandle::whitespace());
        assert_eq!(enc.restore_html(), clean.html);
        enc.codebook.validate().unwrap();
    }

    #[test]
    fn no_state_between_documents() {
        let h = TokenizerHandle::whitespace();
        let a = encode_table(&table(&["alpha beta gamma"]), &h);
        let b = encode_table(&table(&["alpha beta gamma", "alpha beta"]), &h);
        assert_ne!(
            a.codebook.encoded_of("alpha beta gamma"),
            b.codebook.encoded_of("alpha beta gamma")
        );
        let again = encode_table(&table(&["alpha beta gamma"]), &h);
        assert_eq!(a, again);
    }

    fn cb(pairs: &[(&str, &str)]) -> Codebook {
        Codebook {
            tokenizer_name: "whitespace".into(),
            entries: pairs
                .iter()
                .map(|(o, e)| CodebookEntry {
                    original: o.to_string(),
                    encoded: e.to_string(),
                })
                .collect(),
        }
    }

    #[test]
    fn decode_exact_and_substring() {
        let book = cb(&[("alpha beta gamma", "alpha beta")]);
        assert_eq!(decode_text("alpha beta", &book), "alpha beta gamma");
        assert_eq!(
            decode_text("alpha beta\n69.0", &book),
            "alpha beta gamma\n69.0"
        );
        assert_eq!(decode_text("nothing here", &book), "nothing here");
    }

    #[test]
    fn decode_prefers_longest_match() {
        let book = cb(&[("a b c", "a b"), ("a b x y", "a b x"), ("Za b", "Za b")]);
        assert_eq!(decode_text("[a b x] and a b", &book), "[a b x y] and a b c");
        // identity entry shields the shorter encoded form inside it
        assert_eq!(decode_text("Za b", &book), "Za b");
        assert_eq!(decode_text("-Za b-", &book), "-Za b-");
    }

    #[test]
    fn decode_json_keys_and_values() {
        let book = cb(&[("alpha beta gamma", "alpha beta")]);
        let out = decode_json(r#"{"alpha beta": 1}"#, &book).unwrap();
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v, serde_json::json!({"alpha beta gamma": 1}));
        let out = decode_json("[]", &book).unwrap();
        assert_eq!(
            serde_json::from_str::<Value>(&out).unwrap(),
            serde_json::json!([])
        );
        // number literals pass through verbatim
        let out = decode_json(r#"[true, null, 1.50, "alpha beta"]"#, &book).unwrap();
        let compact: String = out.split_whitespace().collect();
        assert_eq!(compact, r#"[true,null,1.50,"alphabetagamma"]"#);
        assert!(matches!(
            decode_json("{oops", &book),
            Err(OptimizerError::JsonParse(_))
        ));
    }

    #[test]
    fn efficiency_values() {
        assert!((token_efficiency(366_608, 224_082).unwrap() - 38.87).abs() <= 0.02);
        assert_eq!(token_efficiency(100, 100).unwrap(), 0.0);
        assert_eq!(token_efficiency(100, 50).unwrap(), 50.0);
        assert!(matches!(
            token_efficiency(0, 0),
            Err(OptimizerError::InvalidInput(_))
        ));
    }

    #[test]
    fn codebook_json_roundtrip_and_validation() {
        let enc = encode(&["alpha beta gamma", "q"]);
        let text = enc.codebook.to_json();
        assert!(text.contains("\"tokenizer\": \"whitespace\""));
        assert_eq!(Codebook::from_json(&text).unwrap(), enc.codebook);
        let dup = cb(&[("a b c", "a b"), ("a b d", "a b")]);
        assert!(dup.validate().is_err());
        let ambiguous = cb(&[("a b c", "a b"), ("a b", "a b")]);
        assert!(ambiguous.validate().is_err());
    }
}
