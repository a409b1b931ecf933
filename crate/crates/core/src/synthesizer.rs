//! Semantic synthesis: send the encoded table to the model and return its
//! JSON reply, still in the encoded space. No decoding or validation here.

use std::path::Path;

use thiserror::Error;

use crate::context_optimizer::EncodedTable;
use crate::llm_gateway::{complete, BackendConfig, ChatMessage, ChatRequest, GatewayError};
use crate::text::strip_code_fence;

pub const TABLE_PLACEHOLDER: &str = "{table}";
const DEFAULT_TEMPLATE: &str = include_str!("../assets/prompts/synthesize.v1.txt");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("cannot read template {path}: {source}")]
    TemplateIo {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub system: String,
    /// Text placed before the table HTML in the user message.
    pub user_prefix: String,
    /// Text placed after the table HTML.
    pub user_suffix: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse("synthesize.v1", DEFAULT_TEMPLATE)
    }
}

impl PromptTemplate {
    /// Parse a plain-text template. A line holding only `---` separates the
    /// system prompt from the user prompt; without it the whole text is the
    /// user prompt. `{table}` marks where the HTML goes, defaulting to the end.
    pub fn parse(name: impl Into<String>, text: &str) -> Self {
        let (system, user) = split_sections(text);
        let (user_prefix, user_suffix) = match user.split_once(TABLE_PLACEHOLDER) {
            Some((pre, post)) => (pre.to_string(), post.to_string()),
            None => (user.to_string(), String::new()),
        };
        Self {
            name: name.into(),
            system: system.to_string(),
            user_prefix,
            user_suffix,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::TemplateIo {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Ok(Self::parse(name, &text))
    }

    pub fn render(&self, html: &str) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(2);
        if !self.system.trim().is_empty() {
            messages.push(ChatMessage::system(self.system.trim()));
        }
        messages.push(ChatMessage::user(format!(
            "{}{}{}",
            self.user_prefix, html, self.user_suffix
        )));
        messages
    }
}

/// Split at the first line consisting only of `---`.
pub(crate) fn split_sections(text: &str) -> (&str, &str) {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_end_matches(['\r', '\n']) == "---" {
            return (&text[..offset], &text[offset + line.len()..]);
        }
        offset += line.len();
    }
    ("", text)
}

pub fn synthesize(
    enc: &EncodedTable,
    tmpl: &PromptTemplate,
    cfg: &BackendConfig,
) -> Result<String, SynthError> {
    synthesize_html(&enc.html, tmpl, cfg)
}

/// Same as [`synthesize`] for html already on disk, e.g. an `.enc.html` file.
pub fn synthesize_html(
    html: &str,
    tmpl: &PromptTemplate,
    cfg: &BackendConfig,
) -> Result<String, SynthError> {
    let req = ChatRequest::new(cfg.model.clone(), tmpl.render(html));
    let resp = complete(cfg, &req)?;
    let body = strip_code_fence(&resp.content);
    if body.is_empty() {
        return Err(SynthError::EmptyCompletion);
    }
    Ok(body.to_string())
}
