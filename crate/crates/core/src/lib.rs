//! HTML tables to semantic JSON through a pluggable chat model.
//!
//! Pipeline: [`table_ingest`] sanitizes the table, [`context_optimizer`]
//! rewrites cell texts to short unique token prefixes, [`synthesizer`] asks
//! the model for JSON, [`syntax_corrector`] repairs invalid JSON through the
//! model, the codebook decodes the result, and [`evaluator`] scores it.
//! [`harness`] runs the whole thing over a corpus directory.

pub mod context_optimizer;
pub mod evaluator;
pub mod harness;
pub mod llm_gateway;
pub mod syntax_corrector;
pub mod synthesizer;
pub mod table_ingest;
pub mod text;
pub mod tokenizer;

pub use context_optimizer::{
    decode_json, decode_text, encode_table, token_efficiency, Codebook, CodebookEntry, EncodedTable,
};
pub use llm_gateway::{complete, mock_script, BackendConfig, ChatRequest, ChatResponse};
pub use table_ingest::{extract_cells, sanitize, Cell, CleanTable, RawTable};
pub use tokenizer::{count_tokens, load_bpe, tokenize, TokenSeq, TokenizerHandle};
