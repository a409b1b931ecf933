//! JSON syntax diagnosis and reflective repair through the model.
//!
//! [`validate_json`] only diagnoses; nothing is repaired deterministically.
//! [`correct`] feeds invalid JSON back to the model with a fixed correction
//! prompt until it parses or the iteration budget runs out.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm_gateway::{complete, BackendConfig, ChatMessage, ChatRequest, GatewayError};
use crate::text::strip_code_fence;

/// Correction prompt; `{json_input}` is replaced by the current text.
pub const CORRECTION_PROMPT: &str = include_str!("../assets/prompts/syntax_correction.v1.txt");
pub const DEFAULT_MAX_ITERATIONS: u32 = 3;

#[derive(Debug, Error)]
pub enum CorrectError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("max_iterations must be at least 1")]
    InvalidIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureMode {
    MissingListEnclosure,
    UnmatchedCurlyBraces,
    MissingCommas,
    MisplacedQuotes,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxDiagnosis {
    pub valid: bool,
    pub error_offset: Option<usize>,
    pub failure_modes: BTreeSet<FailureMode>,
}

impl SyntaxDiagnosis {
    fn valid() -> Self {
        Self {
            valid: true,
            error_offset: None,
            failure_modes: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionStep {
    pub input_text: String,
    pub output_text: String,
    pub diagnosis: SyntaxDiagnosis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionTrace {
    pub iterations: Vec<CorrectionStep>,
    pub final_valid: bool,
    pub iterations_used: u32,
}

pub fn validate_json(text: &str) -> SyntaxDiagnosis {
    let err = match serde_json::from_str::<Value>(text) {
        Ok(_) => return SyntaxDiagnosis::valid(),
        Err(e) => e,
    };
    let offset = byte_offset(text, err.line(), err.column());
    let mut modes = BTreeSet::new();

    if is_unenclosed_object_sequence(text) {
        modes.insert(FailureMode::MissingListEnclosure);
    }
    if curly_imbalance(text) {
        modes.insert(FailureMode::UnmatchedCurlyBraces);
    }
    let msg = err.to_string();
    if (msg.contains("expected `,` or `}`") || msg.contains("expected `,` or `]`"))
        && starts_value(text, offset)
    {
        modes.insert(FailureMode::MissingCommas);
    }
    if has_quote_inside_number_run(text) {
        modes.insert(FailureMode::MisplacedQuotes);
    }
    if modes.is_empty() {
        modes.insert(FailureMode::Other);
    }
    SyntaxDiagnosis {
        valid: false,
        error_offset: Some(offset),
        failure_modes: modes,
    }
}

/// serde_json reports 1-based line and byte column; 0 column means "before
/// the first byte" (e.g. at EOF after a newline).
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Two or more top-level objects not wrapped in `[...]`, whether or not they
/// are comma separated.
fn is_unenclosed_object_sequence(text: &str) -> bool {
    let trimmed = text.trim();
    if !trimmed.starts_with('{') {
        return false;
    }
    let mut count = 0;
    for item in serde_json::Deserializer::from_str(trimmed).into_iter::<Value>() {
        match item {
            Ok(Value::Object(_)) => count += 1,
            _ => break,
        }
    }
    if count >= 2 {
        return true;
    }
    matches!(
        serde_json::from_str::<Value>(&format!("[{trimmed}]")),
        Ok(Value::Array(items)) if items.len() >= 2 && items.iter().all(Value::is_object)
    )
}

/// Unequal numbers of `{` and `}` outside string literals.
fn curly_imbalance(text: &str) -> bool {
    let mut depth = 0i64;
    let mut in_string = false;
    let mut escaped = false;
    for ch in text.chars() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => depth -= 1,
            _ => {}
        }
    }
    depth != 0
}

fn starts_value(text: &str, offset: usize) -> bool {
    text[offset.min(text.len())..]
        .trim_start()
        .chars()
        .next()
        .is_some_and(|c| matches!(c, '"' | '{' | '[' | '-' | 't' | 'f' | 'n' | '0'..='9'))
}

/// `123,"456,789"`: a quote opening in the middle of a digit-and-comma run.
fn has_quote_inside_number_run(text: &str) -> bool {
    text.as_bytes()
        .windows(4)
        .any(|w| w[0].is_ascii_digit() && w[1] == b',' && w[2] == b'"' && w[3].is_ascii_digit())
}

fn correction_request(cfg: &BackendConfig, current: &str) -> ChatRequest {
    let prompt = CORRECTION_PROMPT.replace("{json_input}", current);
    ChatRequest::new(cfg.model.clone(), vec![ChatMessage::user(prompt)])
}

/// Reflective repair loop. A valid input returns immediately without calling
/// the model. An input still invalid after `max_iterations` rounds is returned
/// as is with `final_valid = false`.
pub fn correct(
    text: &str,
    cfg: &BackendConfig,
    max_iterations: u32,
) -> Result<(String, CorrectionTrace), CorrectError> {
    if max_iterations == 0 {
        return Err(CorrectError::InvalidIterations);
    }
    let mut current = text.to_string();
    let mut valid = validate_json(&current).valid;
    let mut steps = Vec::new();

    while !valid && (steps.len() as u32) < max_iterations {
        let resp = complete(cfg, &correction_request(cfg, &current))?;
        let output = strip_code_fence(&resp.content).to_string();
        let diagnosis = validate_json(&output);
        valid = diagnosis.valid;
        steps.push(CorrectionStep {
            input_text: std::mem::replace(&mut current, output.clone()),
            output_text: output,
            diagnosis,
        });
    }

    let trace = CorrectionTrace {
        iterations_used: steps.len() as u32,
        iterations: steps,
        final_valid: valid,
    };
    Ok((current, trace))
}
