//! Intrinsic and extrinsic scoring of generated JSON.
//!
//! Intrinsic score (ISC): share of unique table cell texts that occur among
//! the JSON's keys and scalar values.
//!
//! Extrinsic score (ESC): every root-to-leaf path of the ground truth becomes
//! a question whose expected answer is the leaf; the generated JSON must
//! answer it. In structural mode the "answer" is a direct lookup of the same
//! path in the prediction. In model mode a question writer and an answer
//! grader are prompted through the gateway.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm_gateway::{complete, BackendConfig, ChatMessage, ChatRequest};
use crate::synthesizer::split_sections;
use crate::table_ingest::CleanTable;
use crate::text::normalize;

const QUESTION_PROMPT: &str = include_str!("../assets/prompts/question_generation.v1.txt");
const EVAL_PROMPT: &str = include_str!("../assets/prompts/answer_evaluation.v1.txt");
pub const ROOT_LABEL: &str = "<root>";
pub const PATH_SEPARATOR: &str = " > ";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("table has no non-empty cells")]
    EmptyTable,
    #[error("no question items to score")]
    NoItems,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
}

/// Parsed JSON under evaluation (ground truth or prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticJson {
    pub root: Value,
}

impl SemanticJson {
    pub fn new(root: Value) -> Self {
        Self { root }
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text)
            .map(Self::new)
            .map_err(|e| EvalError::InvalidJson(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSegment {
    Key(String),
    Index(usize),
}

impl fmt::Display for PathSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathSegment::Key(k) => f.write_str(k),
            PathSegment::Index(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeafPath {
    pub segments: Vec<PathSegment>,
}

impl LeafPath {
    pub fn rendered(&self) -> String {
        self.to_string()
    }

    /// Follow the path from `root`; `None` if a step is missing or the
    /// destination is not a scalar.
    pub fn lookup<'a>(&self, root: &'a Value) -> Option<&'a Value> {
        let mut node = root;
        for seg in &self.segments {
            node = match (seg, node) {
                (PathSegment::Key(k), Value::Object(map)) => map.get(k)?,
                (PathSegment::Index(i), Value::Array(items)) => items.get(*i)?,
                _ => return None,
            };
        }
        (!node.is_object() && !node.is_array()).then_some(node)
    }
}

impl fmt::Display for LeafPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segments.is_empty() {
            return f.write_str(ROOT_LABEL);
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(PATH_SEPARATOR)?;
            }
            write!(f, "{seg}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub path: LeafPath,
    pub question: String,
    pub expected: String,
    pub predicted: Option<String>,
    /// 1 or 0; `None` while unscored or when scoring could not run.
    pub score: Option<u8>,
    /// Why an item is unscored or was forced to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub isc: Option<f64>,
    pub esc: Option<f64>,
    pub per_cell_hits: Vec<(String, bool)>,
    pub qa_items: Vec<QAItem>,
}

/// How questions are written and answers judged.
#[derive(Debug, Clone)]
pub enum EvalBackend {
    /// Template questions and direct tree lookup. No network.
    Structural,
    Model(BackendConfig),
}

/// Canonical string form of a number: integers as written without sign of
/// zero, everything else as the shortest decimal that round-trips.
fn canonical_number(n: &serde_json::Number) -> String {
    if let Some(i) = n.as_i64() {
        return i.to_string();
    }
    if let Some(u) = n.as_u64() {
        return u.to_string();
    }
    match n.to_string().parse::<f64>() {
        Ok(f) if f == f.trunc() && f.abs() < 1e15 => format!("{}", f as i64),
        Ok(f) => format!("{f}"),
        Err(_) => n.to_string(),
    }
}

/// Normalized string form of a scalar; `None` for containers and null.
pub fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(normalize(s)),
        Value::Number(n) => Some(canonical_number(n)),
        Value::Bool(b) => Some(b.to_string()),
        Value::Null | Value::Array(_) | Value::Object(_) => None,
    }
}

/// Expected-answer form of a leaf; null leaves read as `"null"`.
fn leaf_string(v: &Value) -> String {
    scalar_string(v).unwrap_or_else(|| "null".to_string())
}

/// Every object key and non-null scalar value, normalized.
pub fn json_elements(j: &SemanticJson) -> BTreeSet<String> {
    fn walk(v: &Value, out: &mut BTreeSet<String>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    out.insert(normalize(k));
                    walk(child, out);
                }
            }
            Value::Array(items) => items.iter().for_each(|i| walk(i, out)),
            scalar => {
                if let Some(s) = scalar_string(scalar) {
                    out.insert(s);
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(&j.root, &mut out);
    out
}

/// Unique non-empty normalized cell texts in first-appearance order.
pub fn unique_cells(clean: &CleanTable) -> Vec<String> {
    let mut seen = HashSet::new();
    clean
        .cells
        .iter()
        .map(|c| normalize(&c.text))
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .collect()
}

pub fn intrinsic_score(
    clean: &CleanTable,
    j: &SemanticJson,
) -> Result<(f64, Vec<(String, bool)>), EvalError> {
    let cells = unique_cells(clean);
    if cells.is_empty() {
        return Err(EvalError::EmptyTable);
    }
    let elements = json_elements(j);
    let hits: Vec<(String, bool)> = cells
        .into_iter()
        .map(|c| {
            let hit = elements.contains(&c);
            (c, hit)
        })
        .collect();
    let found = hits.iter().filter(|(_, h)| *h).count();
    Ok((100.0 * found as f64 / hits.len() as f64, hits))
}

/// Depth-first root-to-leaf paths in serialized key order.
pub fn leaf_paths(gt: &SemanticJson) -> Vec<LeafPath> {
    fn walk(v: &Value, prefix: &mut Vec<PathSegment>, out: &mut Vec<LeafPath>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    prefix.push(PathSegment::Key(k.clone()));
                    walk(child, prefix, out);
                    prefix.pop();
                }
            }
            Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    prefix.push(PathSegment::Index(i));
                    walk(child, prefix, out);
                    prefix.pop();
                }
            }
            _ => out.push(LeafPath {
                segments: prefix.clone(),
            }),
        }
    }
    let mut out = Vec::new();
    walk(&gt.root, &mut Vec::new(), &mut out);
    out
}

pub fn structural_question(path: &LeafPath) -> String {
    format!("What is the value at path: {path}?")
}

fn render_prompt(template: &str, vars: &[(&str, &str)]) -> Vec<ChatMessage> {
    let (system, user) = split_sections(template);
    let mut user = user.to_string();
    for (k, v) in vars {
        user = user.replace(&format!("{{{k}}}"), v);
    }
    let mut msgs = Vec::new();
    if !system.trim().is_empty() {
        msgs.push(ChatMessage::system(system.trim()));
    }
    msgs.push(ChatMessage::user(user));
    msgs
}

pub fn generate_questions(
    gt: &SemanticJson,
    paths: &[LeafPath],
    backend: &EvalBackend,
) -> Vec<QAItem> {
    let gt_text = serde_json::to_string_pretty(&gt.root).expect("value serializes");
    paths
        .iter()
        .map(|path| {
            let expected = path.lookup(&gt.root).map(leaf_string).unwrap_or_default();
            let mut item = QAItem {
                path: path.clone(),
                question: String::new(),
                expected,
                predicted: None,
                score: None,
                note: None,
            };
            match backend {
                EvalBackend::Structural => item.question = structural_question(path),
                EvalBackend::Model(cfg) => {
                    let rendered = path.rendered();
                    let msgs =
                        render_prompt(QUESTION_PROMPT, &[("json", &gt_text), ("path", &rendered)]);
                    match complete(cfg, &ChatRequest::new(cfg.model.clone(), msgs)) {
                        Ok(resp) if !resp.content.trim().is_empty() => {
                            item.question = resp.content.trim().to_string()
                        }
                        Ok(_) => item.note = Some("question generation returned nothing".into()),
                        Err(e) => item.note = Some(format!("question generation failed: {e}")),
                    }
                }
            }
            item
        })
        .collect()
}

#[derive(Debug, PartialEq, Eq)]
enum Verdict {
    Match,
    NoMatch,
}

/// Parse `ANSWER: ...` and a final `MATCH` / `NO_MATCH` line.
fn parse_verdict(reply: &str) -> (Option<String>, Option<Verdict>) {
    let answer = reply.lines().find_map(|l| {
        let l = l.trim();
        l.strip_prefix("ANSWER:")
            .or_else(|| l.strip_prefix("Answer:"))
            .map(|a| a.trim().to_string())
    });
    let verdict = reply
        .lines()
        .map(str::trim)
        .rfind(|l| !l.is_empty())
        .and_then(|l| {
            let l = l.trim_matches(|c: char| c == '*' || c == '.' || c == '`');
            match l.to_ascii_uppercase().as_str() {
                "MATCH" => Some(Verdict::Match),
                "NO_MATCH" | "NO MATCH" => Some(Verdict::NoMatch),
                _ => None,
            }
        });
    (answer, verdict)
}

pub fn extrinsic_score(
    pred: &SemanticJson,
    items: &[QAItem],
    backend: &EvalBackend,
) -> Result<(f64, Vec<QAItem>), EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    let pred_text = serde_json::to_string_pretty(&pred.root).expect("value serializes");
    let scored: Vec<QAItem> = items
        .iter()
        .map(|item| {
            let mut item = item.clone();
            match backend {
                EvalBackend::Structural => {
                    item.predicted = item.path.lookup(&pred.root).map(leaf_string);
                    let hit = item
                        .predicted
                        .as_deref()
                        .is_some_and(|p| p == normalize(&item.expected));
                    item.score = Some(u8::from(hit));
                }
                EvalBackend::Model(cfg) => {
                    if item.question.is_empty() {
                        item.score = None;
                        return item;
                    }
                    let msgs = render_prompt(
                        EVAL_PROMPT,
                        &[
                            ("json", &pred_text),
                            ("question", &item.question),
                            ("expected", &item.expected),
                        ],
                    );
                    match complete(cfg, &ChatRequest::new(cfg.model.clone(), msgs)) {
                        Ok(resp) => {
                            let (answer, verdict) = parse_verdict(&resp.content);
                            item.predicted = answer;
                            item.score = Some(u8::from(verdict == Some(Verdict::Match)));
                            if verdict.is_none() {
                                item.note = Some("unparseable verdict".into());
                            }
                        }
                        Err(e) => {
                            item.score = None;
                            item.note = Some(format!("evaluation failed: {e}"));
                        }
                    }
                }
            }
            item
        })
        .collect();
    let total: u32 = scored.iter().map(|i| u32::from(i.score.unwrap_or(0))).sum();
    Ok((100.0 * f64::from(total) / scored.len() as f64, scored))
}

/// Run whichever scores the available inputs allow.
pub fn evaluate(
    clean: Option<&CleanTable>,
    pred: &SemanticJson,
    gt: Option<&SemanticJson>,
    backend: &EvalBackend,
) -> Result<EvalScores, EvalError> {
    let (isc, per_cell_hits) = match clean {
        Some(c) => {
            let (isc, hits) = intrinsic_score(c, pred)?;
            (Some(isc), hits)
        }
        None => (None, Vec::new()),
    };
    let (esc, qa_items) = match gt {
        Some(gt) => {
            let paths = leaf_paths(gt);
            let items = generate_questions(gt, &paths, backend);
            if items.is_empty() {
                (None, items)
            } else {
                let (esc, items) = extrinsic_score(pred, &items, backend)?;
                (Some(esc), items)
            }
        }
        None => (None, Vec::new()),
    };
    Ok(EvalScores {
        isc,
        esc,
        per_cell_hits,
        qa_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::mock_script;
    use crate::table_ingest::{sanitize, RawTable};
    use serde_json::json;

    fn sj(v: Value) -> SemanticJson {
        SemanticJson::new(v)
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn elements_keys_and_scalars() {
        assert_eq!(json_elements(&sj(json!({"a": 1}))), set(&["a", "1"]));
        assert_eq!(
            json_elements(&sj(json!({"x": {"y": ["p", "q"]}}))),
            set(&["x", "y", "p", "q"])
        );
        assert_eq!(
            json_elements(&sj(json!([true, null, " t  u "]))),
            set(&["true", "t u"])
        );
    }

    #[test]
    fn numbers_are_canonical() {
        let j = SemanticJson::parse(r#"[1.50, 2.0, -0, 1e2, 0.03]"#).unwrap();
        assert_eq!(json_elements(&j), set(&["1.5", "2", "0", "100", "0.03"]));
    }

    fn clean(cells: &[&str]) -> CleanTable {
        let row: String = cells.iter().map(|c| format!("<td>{c}</td>")).collect();
        sanitize(&RawTable::new(
            "t",
            format!("<table><tr>{row}</tr></table>"),
        ))
        .unwrap()
    }

    #[test]
    fn isc_full_and_empty() {
        let c = clean(&["A", "B", "A", "1"]);
        let (isc, hits) = intrinsic_score(&c, &sj(json!({"A": {"B": 1}}))).unwrap();
        assert_eq!(isc, 100.0);
        assert_eq!(hits.len(), 3);
        let (isc, _) = intrinsic_score(&c, &sj(json!({}))).unwrap();
        assert_eq!(isc, 0.0);
        assert_eq!(
            intrinsic_score(&clean(&[]), &sj(json!({}))),
            Err(EvalError::EmptyTable)
        );
    }

    #[test]
    fn paths_in_order() {
        let paths = leaf_paths(&sj(json!({"a": {"b": 1, "c": 2}})));
        let rendered: Vec<String> = paths.iter().map(LeafPath::rendered).collect();
        assert_eq!(rendered, ["a > b", "a > c"]);
        let paths = leaf_paths(&sj(json!("x")));
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].rendered(), "<root>");
        let paths = leaf_paths(&sj(json!({"k": [10, {"z": null}], "e": {}})));
        let rendered: Vec<String> = paths.iter().map(LeafPath::rendered).collect();
        assert_eq!(rendered, ["k > 0", "k > 1 > z"]);
    }

    #[test]
    fn structural_questions() {
        let gt = sj(json!({"a": {"b": 1}}));
        let items = generate_questions(&gt, &leaf_paths(&gt), &EvalBackend::Structural);
        assert_eq!(items[0].question, "What is the value at path: a > b?");
        assert_eq!(items[0].expected, "1");
    }

    #[test]
    fn structural_scoring() {
        let gt = sj(json!({"a": {"b": 1, "c": "x"}}));
        let items = generate_questions(&gt, &leaf_paths(&gt), &EvalBackend::Structural);
        let (esc, _) = extrinsic_score(&gt, &items, &EvalBackend::Structural).unwrap();
        assert_eq!(esc, 100.0);
        let (esc, scored) =
            extrinsic_score(&sj(json!({})), &items, &EvalBackend::Structural).unwrap();
        assert_eq!(esc, 0.0);
        assert!(scored.iter().all(|i| i.predicted.is_none()));
        let (esc, _) = extrinsic_score(
            &sj(json!({"a": {"b": "1", "c": "y"}})),
            &items,
            &EvalBackend::Structural,
        )
        .unwrap();
        assert_eq!(esc, 50.0);
        assert_eq!(
            extrinsic_score(&gt, &[], &EvalBackend::Structural),
            Err(EvalError::NoItems)
        );
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(
            parse_verdict("ANSWER: 90\nMATCH"),
            (Some("90".into()), Some(Verdict::Match))
        );
        assert_eq!(
            parse_verdict("ANSWER: 0.04\nNO_MATCH\n"),
            (Some("0.04".into()), Some(Verdict::NoMatch))
        );
        assert_eq!(parse_verdict("I think so"), (None, None));
    }

    #[test]
    fn model_mode_uses_script() {
        let gt = sj(json!({"a": 1, "b": 2, "c": 3}));
        let q = mock_script(vec!["Q1?".into(), "Q2?".into(), "Q3?".into()]).unwrap();
        let items = generate_questions(&gt, &leaf_paths(&gt), &EvalBackend::Model(q));
        assert_eq!(items[1].question, "Q2?");
        let judge = mock_script(vec![
            "ANSWER: 1\nMATCH".into(),
            "ANSWER: 5\nNO_MATCH".into(),
            "shrug".into(),
        ])
        .unwrap();
        let (esc, scored) = extrinsic_score(&gt, &items, &EvalBackend::Model(judge)).unwrap();
        assert!((esc - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(scored[1].predicted.as_deref(), Some("5"));
        assert_eq!(scored[2].score, Some(0));
        assert_eq!(scored[2].note.as_deref(), Some("unparseable verdict"));
    }

    #[test]
    fn failed_generation_leaves_item_unscored() {
        let gt = sj(json!({"a": 1, "b": 2}));
        let q = mock_script(vec!["Q1?".into()]).unwrap();
        let items = generate_questions(&gt, &leaf_paths(&gt), &EvalBackend::Model(q));
        assert!(items[1].question.is_empty());
        assert!(items[1].note.as_deref().unwrap().contains("exhausted"));
        let judge = mock_script(vec!["ANSWER: 1\nMATCH".into()]).unwrap();
        let (esc, scored) = extrinsic_score(&gt, &items, &EvalBackend::Model(judge)).unwrap();
        assert_eq!(esc, 50.0);
        assert_eq!(scored[1].score, None);
    }
}
