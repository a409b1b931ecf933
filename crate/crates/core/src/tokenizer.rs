//! Subword tokenizers used for token counting and prefix extraction.
//!
//! Two implementations ship:
//!
//! - [`WhitespaceTokenizer`]: splits before every whitespace character, so the
//!   separator attaches to the following token (`"alpha beta"` is
//!   `["alpha", " beta"]`). Needs no vocabulary files; the test suite runs on it.
//! - [`BpeTokenizer`]: byte-level BPE loaded from a `tokenizer.json` style file
//!   or a `vocab.json` + `merges.txt` pair.
//!
//! Both satisfy the prefix property: token surfaces are contiguous byte slices
//! of the input and concatenate back to it exactly.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{path}{}: {message}", location(*line, *column))]
pub struct VocabParseError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(":{l}:{c}"),
        (Some(l), None) => format!(":{l}"),
        _ => String::new(),
    }
}

impl VocabParseError {
    fn new(path: &Path, message: impl Into<String>) -> Self {
        Self {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

/// Tokenization of one string: vocabulary ids plus the byte extent of each token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    text: String,
    ids: Vec<u32>,
    /// Exclusive byte end of each token; strictly increasing, last == text.len().
    ends: Vec<usize>,
}

impl TokenSeq {
    fn new(text: &str, ids: Vec<u32>, ends: Vec<usize>) -> Self {
        debug_assert_eq!(ids.len(), ends.len());
        debug_assert!(ends.last().is_none_or(|&e| e == text.len()));
        Self {
            text: text.to_string(),
            ids,
            ends,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Raw bytes of token `i`. Byte-level tokens may split a multi-byte
    /// character, so surfaces are bytes rather than `str`.
    pub fn surface(&self, i: usize) -> &[u8] {
        let start = if i == 0 { 0 } else { self.ends[i - 1] };
        &self.text.as_bytes()[start..self.ends[i]]
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &[u8]> + '_ {
        (0..self.len()).map(|i| self.surface(i))
    }

    /// Byte length of the first `k` tokens.
    pub fn prefix_len(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.ends[k.min(self.len()) - 1]
        }
    }

    /// Concatenated surfaces of the first `k` tokens, or `None` when that
    /// prefix ends inside a multi-byte character.
    pub fn prefix(&self, k: usize) -> Option<&str> {
        let end = self.prefix_len(k);
        self.text.get(..end)
    }
}

pub trait Tokenizer: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn vocab_size(&self) -> usize;
    fn tokenize(&self, text: &str) -> TokenSeq;
}

/// Cheaply clonable, immutable handle to a loaded tokenizer.
#[derive(Clone, Debug)]
pub struct TokenizerHandle(Arc<dyn Tokenizer>);

impl TokenizerHandle {
    pub fn new(tokenizer: impl Tokenizer + 'static) -> Self {
        Self(Arc::new(tokenizer))
    }

    pub fn whitespace() -> Self {
        Self::new(WhitespaceTokenizer)
    }

    pub fn name(&self) -> &str {
        self.0.name()
    }

    pub fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        self.0.tokenize(text)
    }

    pub fn count_tokens(&self, text: &str) -> usize {
        self.0.tokenize(text).len()
    }
}

pub fn tokenize(h: &TokenizerHandle, text: &str) -> TokenSeq {
    h.tokenize(text)
}

pub fn count_tokens(h: &TokenizerHandle, text: &str) -> usize {
    h.count_tokens(text)
}

/// Splits before every whitespace character.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl WhitespaceTokenizer {
    pub const NAME: &'static str = "whitespace";
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn vocab_size(&self) -> usize {
        1 << 32
    }

    fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ends = Vec::new();
        for (i, ch) in text.char_indices() {
            if i > 0 && ch.is_whitespace() {
                ends.push(i);
            }
        }
        if !text.is_empty() {
            ends.push(text.len());
        }
        let mut start = 0;
        let ids = ends
            .iter()
            .map(|&end| {
                let id = fnv1a(&text.as_bytes()[start..end]);
                start = end;
                id
            })
            .collect();
        TokenSeq::new(text, ids, ends)
    }
}

fn fnv1a(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811c_9dc5u32, |h, &b| {
        (h ^ u32::from(b)).wrapping_mul(0x0100_0193)
    })
}

/// Byte-level BPE with GPT-2 style pre-tokenization.
#[derive(Debug)]
pub struct BpeTokenizer {
    name: String,
    vocab_size: usize,
    byte_ids: [u32; 256],
    /// (left id, right id) -> (rank, merged id)
    merges: HashMap<(u32, u32), (usize, u32)>,
}

impl BpeTokenizer {
    /// Build from an in-memory vocabulary (byte-level symbol strings) and
    /// ranked merge pairs.
    pub fn from_parts(
        name: impl Into<String>,
        vocab: &HashMap<String, u32>,
        merges: &[(String, String)],
    ) -> Result<Self, String> {
        let table = bytes_to_unicode();
        let mut byte_ids = [0u32; 256];
        for (b, ch) in table.iter().enumerate() {
            byte_ids[b] = *vocab
                .get(&ch.to_string())
                .ok_or_else(|| format!("vocabulary lacks byte symbol {ch:?} (byte {b:#04x})"))?;
        }
        let mut merge_map = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                vocab
                    .get(s)
                    .copied()
                    .ok_or_else(|| format!("merge {rank}: token {s:?} not in vocabulary"))
            };
            let left = lookup(a)?;
            let right = lookup(b)?;
            let merged = lookup(&format!("{a}{b}"))?;
            merge_map.entry((left, right)).or_insert((rank, merged));
        }
        Ok(Self {
            name: name.into(),
            vocab_size: vocab.len(),
            byte_ids,
            merges: merge_map,
        })
    }

    fn encode_piece(&self, piece: &[u8], ids: &mut Vec<u32>, lens: &mut Vec<usize>) {
        let mut syms: Vec<(u32, usize)> = piece
            .iter()
            .map(|&b| (self.byte_ids[b as usize], 1))
            .collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0].0, w[1].0)).copied())
                .min_by_key(|&(rank, _)| rank);
            let Some((rank, merged)) = best else { break };
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len()
                    && self
                        .merges
                        .get(&(syms[i].0, syms[i + 1].0))
                        .is_some_and(|&(r, _)| r == rank)
                {
                    out.push((merged, syms[i].1 + syms[i + 1].1));
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            syms = out;
        }
        for (id, len) in syms {
            ids.push(id);
            lens.push(len);
        }
    }
}

impl Tokenizer for BpeTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn tokenize(&self, text: &str) -> TokenSeq {
        let mut ids = Vec::new();
        let mut lens = Vec::new();
        for piece in pretokenize(text) {
            self.encode_piece(piece.as_bytes(), &mut ids, &mut lens);
        }
        let mut acc = 0;
        let ends = lens
            .into_iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect();
        TokenSeq::new(text, ids, ends)
    }
}

/// Load a byte-level BPE tokenizer.
///
/// With `merges_path = None`, `vocab_path` is a combined file holding either
/// `{"model": {"vocab": {...}, "merges": [...]}}` or top-level `vocab` and
/// `merges` keys. Otherwise `vocab_path` is a `token -> id` JSON map and
/// `merges_path` a text file with one space-separated pair per line.
pub fn load_bpe(
    vocab_path: &Path,
    merges_path: Option<&Path>,
) -> Result<TokenizerHandle, VocabParseError> {
    let read =
        |p: &Path| std::fs::read_to_string(p).map_err(|e| VocabParseError::new(p, e.to_string()));
    let json_err = |p: &Path, e: serde_json::Error| VocabParseError {
        path: p.to_path_buf(),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    };

    let doc: Value =
        serde_json::from_str(&read(vocab_path)?).map_err(|e| json_err(vocab_path, e))?;

    let (vocab_value, merges) = match merges_path {
        None => {
            let model = doc.get("model").unwrap_or(&doc);
            let vocab = model
                .get("vocab")
                .ok_or_else(|| VocabParseError::new(vocab_path, "missing \"vocab\" map"))?;
            let merges = model
                .get("merges")
                .ok_or_else(|| VocabParseError::new(vocab_path, "missing \"merges\" list"))?;
            (vocab, parse_json_merges(vocab_path, merges)?)
        }
        Some(mp) => (&doc, parse_text_merges(mp, &read(mp)?)?),
    };

    let vocab_map = vocab_value
        .as_object()
        .ok_or_else(|| VocabParseError::new(vocab_path, "vocab is not a JSON object"))?;
    let mut vocab = HashMap::with_capacity(vocab_map.len());
    for (tok, id) in vocab_map {
        let id = id
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| {
                VocabParseError::new(vocab_path, format!("token {tok:?} has non-integer id {id}"))
            })?;
        vocab.insert(tok.clone(), id);
    }

    let name = format!(
        "bpe:{}",
        vocab_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    );
    BpeTokenizer::from_parts(name, &vocab, &merges)
        .map(TokenizerHandle::new)
        .map_err(|m| VocabParseError::new(merges_path.unwrap_or(vocab_path), m))
}

fn parse_json_merges(path: &Path, v: &Value) -> Result<Vec<(String, String)>, VocabParseError> {
    let list = v
        .as_array()
        .ok_or_else(|| VocabParseError::new(path, "merges is not a list"))?;
    list.iter()
        .enumerate()
        .map(|(i, m)| {
            let bad = || VocabParseError::new(path, format!("merge entry {i} is malformed: {m}"));
            match m {
                Value::String(s) => split_merge(s).ok_or_else(bad),
                Value::Array(pair) if pair.len() == 2 => match (&pair[0], &pair[1]) {
                    (Value::String(a), Value::String(b)) => Ok((a.clone(), b.clone())),
                    _ => Err(bad()),
                },
                _ => Err(bad()),
            }
        })
        .collect()
}

fn parse_text_merges(path: &Path, text: &str) -> Result<Vec<(String, String)>, VocabParseError> {
    let mut merges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || (lineno == 0 && line.starts_with("#version")) {
            continue;
        }
        let pair = split_merge(line).ok_or_else(|| {
            VocabParseError::new(
                path,
                format!("expected two space-separated tokens, got {line:?}"),
            )
            .at_line(lineno + 1)
        })?;
        merges.push(pair);
    }
    Ok(merges)
}

fn split_merge(s: &str) -> Option<(String, String)> {
    let (a, b) = s.split_once(' ')?;
    (!a.is_empty() && !b.is_empty() && !b.contains(' ')).then(|| (a.to_string(), b.to_string()))
}

/// The reversible byte -> printable-char table used by byte-level BPE vocabularies.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| {
        (u32::from(b'!')..=u32::from(b'~')).contains(&b)
            || (0xA1..=0xAC).contains(&b)
            || (0xAE..=0xFF).contains(&b)
    };
    let mut extra = 0;
    for b in 0..256u32 {
        let cp = if printable(b) {
            b
        } else {
            extra += 1;
            255 + extra
        };
        table[b as usize] = char::from_u32(cp).expect("valid code point");
    }
    table
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Letter,
    Number,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Number
    } else {
        Class::Other
    }
}

/// GPT-2 style pre-tokenization: contractions, ` ?letters`, ` ?digits`,
/// ` ?punctuation`, and whitespace runs that leave their last character to
/// the following word.
fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |&(b, _)| b);
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        let c = chars[i].1;
        if c == '\'' {
            let rest = &text[chars[i].0 + 1..];
            if let Some(n) = ["re", "ve", "ll", "s", "t", "m", "d"]
                .iter()
                .find(|s| rest.starts_with(**s))
                .map(|s| s.len())
            {
                i += 1 + n;
                pieces.push(&text[byte_at(start)..byte_at(i)]);
                continue;
            }
        }
        let mut j = i;
        if c == ' '
            && chars
                .get(i + 1)
                .is_some_and(|&(_, n)| class(n) != Class::Space)
        {
            j += 1;
        }
        let cls = class(chars[j].1);
        if cls != Class::Space {
            while j < chars.len() && class(chars[j].1) == cls {
                j += 1;
            }
            i = j;
        } else {
            while j < chars.len() && class(chars[j].1) == Class::Space {
                j += 1;
            }
            let run = j - i;
            i = if j < chars.len() && run > 1 { j - 1 } else { j };
        }
        pieces.push(&text[byte_at(start)..byte_at(i)]);
    }
    pieces
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surfaces(seq: &TokenSeq) -> Vec<String> {
        seq.surfaces()
            .map(|s| String::from_utf8_lossy(s).into_owned())
            .collect()
    }

    pub(crate) fn byte_vocab() -> HashMap<String, u32> {
        bytes_to_unicode()
            .iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i as u32))
            .collect()
    }

    /// Extend `vocab` with the merged tokens of `merges`, in order.
    fn with_merges(merges: &[(&str, &str)]) -> (HashMap<String, u32>, Vec<(String, String)>) {
        let mut vocab = byte_vocab();
        let mut out = Vec::new();
        for (a, b) in merges {
            let next = vocab.len() as u32;
            vocab.entry(format!("{a}{b}")).or_insert(next);
            out.push((a.to_string(), b.to_string()));
        }
        (vocab, out)
    }

    #[test]
    fn whitespace_examples() {
        let h = TokenizerHandle::whitespace();
        assert!(h.tokenize("").is_empty());
        let seq = h.tokenize("alpha beta gamma");
        assert_eq!(surfaces(&seq), ["alpha", " beta", " gamma"]);
        assert_eq!(h.count_tokens("a b"), 2);
        assert_eq!(count_tokens(&h, ""), 0);
        assert_eq!(surfaces(&h.tokenize("a  b")), ["a", " ", " b"]);
        assert_eq!(surfaces(&h.tokenize(" a")), [" a"]);
    }

    #[test]
    fn prefix_accessors() {
        let seq = TokenizerHandle::whitespace().tokenize("alpha beta gamma");
        assert_eq!(seq.prefix(0), Some(""));
        assert_eq!(seq.prefix(2), Some("alpha beta"));
        assert_eq!(seq.prefix(9), Some("alpha beta gamma"));
        assert_eq!(seq.prefix_len(1), 5);
    }

    #[test]
    fn byte_only_vocab_is_one_token_per_byte() {
        let tok = BpeTokenizer::from_parts("bytes", &byte_vocab(), &[]).unwrap();
        for b in 0u8..128 {
            let s = (b as char).to_string();
            assert_eq!(tok.tokenize(&s).len(), 1, "byte {b}");
        }
        // multi-byte char is one token per byte, and prefixes inside it are not str
        let seq = tok.tokenize("é");
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.prefix(1), None);
        assert_eq!(seq.prefix(2), Some("é"));
    }

    #[test]
    fn merge_for_theme_reduces_count() {
        let plain = BpeTokenizer::from_parts("plain", &byte_vocab(), &[]).unwrap();
        let (vocab, merges) = with_merges(&[("T", "h"), ("e", "m"), ("em", "e"), ("Th", "eme")]);
        let merged = BpeTokenizer::from_parts("merged", &vocab, &merges).unwrap();
        let before = plain.tokenize("Theme").len();
        let after = merged.tokenize("Theme").len();
        assert_eq!(before, 5);
        assert_eq!(after, 1);
    }

    #[test]
    fn leading_space_attaches_to_word() {
        let (vocab, merges) = with_merges(&[("Ġ", "b"), ("Ġb", "e")]);
        let tok = BpeTokenizer::from_parts("t", &vocab, &merges).unwrap();
        let seq = tok.tokenize("a be");
        assert_eq!(surfaces(&seq), ["a", " be"]);
    }

    #[test]
    fn pharma_term_splits_under_poor_vocab() {
        let (vocab, merges) = with_merges(&[("t", "h"), ("th", "e"), ("i", "n")]);
        let tok = BpeTokenizer::from_parts("poor", &vocab, &merges).unwrap();
        assert!(tok.tokenize("Amoxycillin").len() > 1);
    }

    #[test]
    fn pretokenize_shapes() {
        assert_eq!(pretokenize("Hello world"), ["Hello", " world"]);
        assert_eq!(pretokenize("it's 2024!"), ["it", "'s", " 2024", "!"]);
        assert_eq!(pretokenize("a   b"), ["a", "  ", " b"]);
        assert_eq!(pretokenize("x\n"), ["x", "\n"]);
        assert_eq!(
            pretokenize("<td>5.3</td>"),
            ["<", "td", ">", "5", ".", "3", "</", "td", ">"]
        );
    }

    #[test]
    fn load_missing_file() {
        let err = load_bpe(Path::new("/nonexistent/tokenizer.json"), None).unwrap_err();
        assert!(err.message.contains("No such file"), "{err}");
    }

    #[test]
    fn missing_byte_symbol_rejected() {
        let mut vocab = byte_vocab();
        vocab.remove("A");
        assert!(BpeTokenizer::from_parts("x", &vocab, &[]).is_err());
    }
}
