//! Corpus runner behind the `tabsem` binary.
//!
//! A corpus is a directory of `{id}.html` tables with optional
//! `{id}.gt.json` ground truths. Each stage writes its artifacts next to the
//! others in an output directory; the full pipeline also appends one JSON
//! line per table to a run log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context_optimizer::{
    decode_json, decode_text, encode_table, token_efficiency, EncodedTable,
};
use crate::evaluator::{evaluate, EvalBackend, QAItem, SemanticJson};
use crate::llm_gateway::{mock_script, BackendConfig, GatewayError};
use crate::syntax_corrector::{correct, CorrectError, FailureMode};
use crate::synthesizer::{synthesize, PromptTemplate, SynthError};
use crate::table_ingest::{sanitize, CleanTable, RawTable};
use crate::tokenizer::{load_bpe, TokenizerHandle};

pub const HTML_EXT: &str = ".html";
pub const GT_EXT: &str = ".gt.json";
pub const RUN_LOG: &str = "runs.jsonl";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("backend: {0}")]
    Backend(String),
}

impl HarnessError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            HarnessError::Input(_) => ErrorKind::Input,
            HarnessError::Io { .. } => ErrorKind::Io,
            HarnessError::Backend(_) => ErrorKind::Backend,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<GatewayError> for HarnessError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::InvalidRequest(_) => {
                HarnessError::Input(e.to_string())
            }
            other => HarnessError::Backend(other.to_string()),
        }
    }
}

impl From<SynthError> for HarnessError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Gateway(g) => g.into(),
            SynthError::EmptyCompletion => HarnessError::Backend(e.to_string()),
            SynthError::TemplateIo { path, source } => HarnessError::Io {
                path: path.into(),
                source,
            },
        }
    }
}

impl From<CorrectError> for HarnessError {
    fn from(e: CorrectError) -> Self {
        match e {
            CorrectError::Gateway(g) => g.into(),
            CorrectError::InvalidIterations => HarnessError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Input,
    Io,
    Backend,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => 2,
            ErrorKind::Io => 3,
            ErrorKind::Backend => 4,
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// `whitespace`, a combined tokenizer JSON file, or `VOCAB,MERGES`.
pub fn tokenizer_from_spec(spec: &str) -> Result<TokenizerHandle, HarnessError> {
    if spec == "whitespace" {
        return Ok(TokenizerHandle::whitespace());
    }
    let (vocab, merges) = match spec.split_once(',') {
        Some((v, m)) => (PathBuf::from(v), Some(PathBuf::from(m))),
        None => (PathBuf::from(spec), None),
    };
    load_bpe(&vocab, merges.as_deref()).map_err(|e| match e.line {
        None if !vocab.exists() || merges.as_ref().is_some_and(|m| !m.exists()) => {
            HarnessError::Io {
                path: e.path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.message),
            }
        }
        _ => HarnessError::Input(e.to_string()),
    })
}

/// A mock script file holds a JSON array of reply strings.
pub fn load_mock_script(path: &Path) -> Result<BackendConfig, HarnessError> {
    let text = read_file(path)?;
    let replies: Vec<String> = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?;
    Ok(mock_script(replies)?)
}

pub fn save_mock_script(path: &Path, replies: &[String]) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(replies).expect("strings serialize");
    write_file(path, &(text + "\n"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub id: String,
    pub html_path: PathBuf,
    pub gt_path: Option<PathBuf>,
}

/// Tables under `root` sorted by id. `root` may also be a single html file.
pub fn load_corpus(root: &Path) -> Result<Vec<CorpusEntry>, HarnessError> {
    let meta = fs::metadata(root).map_err(|e| HarnessError::io(root, e))?;
    let files: Vec<PathBuf> = if meta.is_file() {
        vec![root.to_path_buf()]
    } else {
        let mut files = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| HarnessError::io(root, e))? {
            files.push(entry.map_err(|e| HarnessError::io(root, e))?.path());
        }
        files
    };
    let mut entries: Vec<CorpusEntry> = files
        .into_iter()
        .filter_map(|path| {
            let name = path.file_name()?.to_str()?;
            let id = name.strip_suffix(HTML_EXT)?;
            // Our own encoded outputs are not inputs.
            if id.is_empty() || id.ends_with(".enc") {
                return None;
            }
            let gt = path.with_file_name(format!("{id}{GT_EXT}"));
            Some(CorpusEntry {
                id: id.to_string(),
                gt_path: gt.is_file().then_some(gt),
                html_path: path,
            })
        })
        .collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    if entries.is_empty() {
        return Err(HarnessError::Input(format!(
            "no *{HTML_EXT} tables under {}",
            root.display()
        )));
    }
    Ok(entries)
}

pub fn load_table(entry: &CorpusEntry) -> Result<CleanTable, HarnessError> {
    let html = read_file(&entry.html_path)?;
    sanitize(&RawTable::new(entry.id.clone(), html))
        .map_err(|e| HarnessError::Input(format!("{}: {e}", entry.html_path.display())))
}

fn artifact(out_dir: &Path, id: &str, suffix: &str) -> PathBuf {
    out_dir.join(format!("{id}{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRecord {
    pub table_id: String,
    pub tokens_before: u64,
    pub tokens_after: u64,
    pub efficiency: Option<f64>,
}

fn efficiency_of(a: u64, b: u64) -> Option<f64> {
    token_efficiency(a, b).ok()
}

fn write_encoded(enc: &EncodedTable, out_dir: &Path) -> Result<(), HarnessError> {
    write_file(&artifact(out_dir, &enc.id, ".enc.html"), &enc.html)?;
    write_file(
        &artifact(out_dir, &enc.id, ".codebook.json"),
        &(enc.codebook.to_json() + "\n"),
    )
}

/// Encode every table and write `{id}.enc.html` and `{id}.codebook.json`.
/// Stops at the first failing table.
pub fn run_optimize(
    entries: &[CorpusEntry],
    tokenizer: &TokenizerHandle,
    out_dir: &Path,
) -> Result<Vec<OptimizeRecord>, HarnessError> {
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    entries
        .iter()
        .map(|entry| {
            let clean = load_table(entry)?;
            let enc = encode_table(&clean, tokenizer);
            write_encoded(&enc, out_dir)?;
            let (a, b) = (enc.tokens_before as u64, enc.tokens_after as u64);
            Ok(OptimizeRecord {
                table_id: entry.id.clone(),
                tokens_before: a,
                tokens_after: b,
                efficiency: efficiency_of(a, b),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub iterations_used: u32,
    pub final_valid: bool,
    /// Failure modes of the synthesizer's raw reply; empty when it parsed.
    #[serde(default)]
    pub initial_failure_modes: Vec<FailureMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub table_id: String,
    #[serde(default)]
    pub tokens_before: u64,
    #[serde(default)]
    pub tokens_after: u64,
    #[serde(default)]
    pub efficiency: Option<f64>,
    #[serde(default)]
    pub correction: Option<CorrectionSummary>,
    #[serde(default)]
    pub isc: Option<f64>,
    #[serde(default)]
    pub esc: Option<f64>,
    #[serde(default)]
    pub timings_ms: BTreeMap<String, u64>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<ErrorKind>,
}

impl RunReport {
    fn new(table_id: &str, backend: &BackendConfig) -> Self {
        Self {
            table_id: table_id.to_string(),
            tokens_before: 0,
            tokens_after: 0,
            efficiency: None,
            correction: None,
            isc: None,
            esc: None,
            timings_ms: BTreeMap::new(),
            backend: Some(backend.name()),
            notes: Vec::new(),
            error: None,
            error_kind: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    /// The record with timing fields cleared, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings_ms: BTreeMap::new(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Structural,
    /// Questions and verdicts come from the pipeline's backend.
    Llm,
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub tokenizer: TokenizerHandle,
    pub backend: BackendConfig,
    pub template: PromptTemplate,
    pub max_iterations: u32,
    pub eval_mode: EvalMode,
    pub jobs: usize,
    pub out_dir: PathBuf,
    /// Run log path; defaults to `runs.jsonl` in `out_dir`.
    pub run_log: Option<PathBuf>,
}

impl PipelineOptions {
    pub fn new(
        tokenizer: TokenizerHandle,
        backend: BackendConfig,
        out_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            tokenizer,
            backend,
            template: PromptTemplate::default(),
            max_iterations: crate::syntax_corrector::DEFAULT_MAX_ITERATIONS,
            eval_mode: EvalMode::Structural,
            jobs: 1,
            out_dir: out_dir.into(),
            run_log: None,
        }
    }

    pub fn run_log_path(&self) -> PathBuf {
        self.run_log
            .clone()
            .unwrap_or_else(|| self.out_dir.join(RUN_LOG))
    }

    fn effective_jobs(&self) -> usize {
        // Scripted replies are consumed in call order, so a mock backend
        // must see the tables one at a time.
        if self.backend.mock().is_some() {
            1
        } else {
            self.jobs.max(1)
        }
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn stop(self, report: &mut RunReport, stage: &str) {
        let ms = self.0.elapsed().as_millis() as u64;
        report.timings_ms.insert(stage.to_string(), ms);
    }
}

fn process_table(
    entry: &CorpusEntry,
    opts: &PipelineOptions,
    report: &mut RunReport,
) -> Result<(), HarnessError> {
    let out = &opts.out_dir;
    let id = &entry.id;

    let t = Timer::start();
    let clean = load_table(entry)?;
    t.stop(report, "sanitize");

    let t = Timer::start();
    let enc = encode_table(&clean, &opts.tokenizer);
    write_encoded(&enc, out)?;
    report.tokens_before = enc.tokens_before as u64;
    report.tokens_after = enc.tokens_after as u64;
    report.efficiency = efficiency_of(report.tokens_before, report.tokens_after);
    t.stop(report, "encode");

    let t = Timer::start();
    let raw = synthesize(&enc, &opts.template, &opts.backend)?;
    write_file(&artifact(out, id, ".raw.json"), &raw)?;
    t.stop(report, "synthesize");

    let t = Timer::start();
    let initial = crate::syntax_corrector::validate_json(&raw);
    let (fixed, trace) = correct(&raw, &opts.backend, opts.max_iterations)?;
    report.correction = Some(CorrectionSummary {
        iterations_used: trace.iterations_used,
        final_valid: trace.final_valid,
        initial_failure_modes: initial.failure_modes.into_iter().collect(),
    });
    t.stop(report, "correct");

    let t = Timer::start();
    let decoded = if trace.final_valid {
        decode_json(&fixed, &enc.codebook).map_err(|e| HarnessError::Input(e.to_string()))?
    } else {
        report
            .notes
            .push("output is not valid JSON after correction".to_string());
        decode_text(&fixed, &enc.codebook)
    };
    write_file(&artifact(out, id, ".out.json"), &(decoded.clone() + "\n"))?;
    t.stop(report, "decode");

    let Some(gt_path) = &entry.gt_path else {
        return Ok(());
    };
    let t = Timer::start();
    let gt = SemanticJson::parse(&read_file(gt_path)?)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", gt_path.display())))?;
    if !trace.final_valid {
        report.isc = Some(0.0);
        report.esc = Some(0.0);
        report
            .notes
            .push("scored 0: output did not parse".to_string());
    } else {
        let pred = SemanticJson::parse(&decoded).map_err(|e| HarnessError::Input(e.to_string()))?;
        let backend = match opts.eval_mode {
            EvalMode::Structural => EvalBackend::Structural,
            EvalMode::Llm => EvalBackend::Model(opts.backend.clone()),
        };
        match evaluate(Some(&clean), &pred, Some(&gt), &backend) {
            Ok(scores) => {
                report.isc = scores.isc;
                report.esc = scores.esc;
                let unscored = scores.qa_items.iter().filter(|i| i.score.is_none()).count();
                if unscored > 0 {
                    report
                        .notes
                        .push(format!("{unscored} question(s) unscored"));
                }
            }
            Err(e) => report.notes.push(format!("evaluation skipped: {e}")),
        }
    }
    t.stop(report, "evaluate");
    Ok(())
}

/// Run one table through every stage. Failures land in the report.
pub fn run_table(entry: &CorpusEntry, opts: &PipelineOptions) -> RunReport {
    let mut report = RunReport::new(&entry.id, &opts.backend);
    if let Err(e) = process_table(entry, opts, &mut report) {
        log::warn!("{}: {e}", entry.id);
        report.error_kind = Some(e.kind());
        report.error = Some(e.to_string());
    }
    report
}

fn append_line(file: &mut fs::File, path: &Path, report: &RunReport) -> Result<(), HarnessError> {
    let mut line = serde_json::to_string(report).expect("report serializes");
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.flush())
        .map_err(|e| HarnessError::io(path, e))
}

/// Full pipeline over a corpus. Records are appended to the run log in id
/// order as tables finish. Returns an error only if every table failed.
pub fn run_pipeline(
    entries: &[CorpusEntry],
    opts: &PipelineOptions,
) -> Result<Vec<RunReport>, HarnessError> {
    fs::create_dir_all(&opts.out_dir).map_err(|e| HarnessError::io(&opts.out_dir, e))?;
    let log_path = opts.run_log_path();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| HarnessError::io(&log_path, e))?;

    let jobs = opts.effective_jobs().min(entries.len().max(1));
    let mut reports: Vec<Option<RunReport>> = vec![None; entries.len()];
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, RunReport)>();

    let mut write_err = None;
    std::thread::scope(|s| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = entries.get(i) else { break };
                if tx.send((i, run_table(entry, opts))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        // Single writer: flush contiguous finished records in id order.
        let mut written = 0;
        for (i, report) in rx {
            reports[i] = Some(report);
            while let Some(Some(r)) = reports.get(written) {
                if write_err.is_none() {
                    write_err = append_line(&mut log, &log_path, r).err();
                }
                written += 1;
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }

    let reports: Vec<RunReport> = reports
        .into_iter()
        .map(|r| r.expect("every table reported"))
        .collect();
    if !reports.is_empty() && reports.iter().all(RunReport::failed) {
        let first = &reports[0];
        let msg = format!(
            "all {} table(s) failed; first: {}",
            reports.len(),
            first.error.as_deref().unwrap_or("")
        );
        return Err(match first.error_kind.unwrap_or(ErrorKind::Input) {
            ErrorKind::Input => HarnessError::Input(msg),
            ErrorKind::Io => HarnessError::Io {
                path: log_path,
                source: std::io::Error::other(msg),
            },
            ErrorKind::Backend => HarnessError::Backend(msg),
        });
    }
    Ok(reports)
}

pub fn read_run_log(path: &Path) -> Result<Vec<RunReport>, HarnessError> {
    let text = read_file(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| HarnessError::Input(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub tables: usize,
    pub failed: usize,
    pub tokens_before: u64,
    pub tokens_after: u64,
    /// From summed token counts, not an average of per-table percentages.
    pub efficiency: Option<f64>,
    pub mean_isc: Option<f64>,
    pub mean_esc: Option<f64>,
    pub scored_tables: usize,
    pub needed_correction: usize,
    pub final_invalid: usize,
    pub correction_calls: u64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize(reports: &[RunReport]) -> CorpusSummary {
    let tokens_before = reports.iter().map(|r| r.tokens_before).sum();
    let tokens_after = reports.iter().map(|r| r.tokens_after).sum();
    let corrections = || reports.iter().filter_map(|r| r.correction.as_ref());
    CorpusSummary {
        tables: reports.len(),
        failed: reports.iter().filter(|r| r.failed()).count(),
        tokens_before,
        tokens_after,
        efficiency: efficiency_of(tokens_before, tokens_after),
        mean_isc: mean(reports.iter().filter_map(|r| r.isc)),
        mean_esc: mean(reports.iter().filter_map(|r| r.esc)),
        scored_tables: reports
            .iter()
            .filter(|r| r.isc.is_some() || r.esc.is_some())
            .count(),
        needed_correction: corrections().filter(|c| c.iterations_used > 0).count(),
        final_invalid: corrections().filter(|c| !c.final_valid).count(),
        correction_calls: corrections().map(|c| u64::from(c.iterations_used)).sum(),
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

pub fn format_summary(s: &CorpusSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tables            {} ({} failed)", s.tables, s.failed);
    let _ = writeln!(out, "tokens before (A) {}", s.tokens_before);
    let _ = writeln!(out, "tokens after (B)  {}", s.tokens_after);
    let _ = writeln!(out, "efficiency %      {}", fmt_pct(s.efficiency));
    let _ = writeln!(
        out,
        "mean ISC          {} over {} table(s)",
        fmt_pct(s.mean_isc),
        s.scored_tables
    );
    let _ = writeln!(out, "mean ESC          {}", fmt_pct(s.mean_esc));
    let _ = writeln!(
        out,
        "correction        {} table(s) corrected, {} call(s), {} still invalid",
        s.needed_correction, s.correction_calls, s.final_invalid
    );
    out
}

pub fn format_optimize(records: &[OptimizeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\tA={}\tB={}\tefficiency={}",
            r.table_id,
            r.tokens_before,
            r.tokens_after,
            fmt_pct(r.efficiency)
        );
    }
    let a: u64 = records.iter().map(|r| r.tokens_before).sum();
    let b: u64 = records.iter().map(|r| r.tokens_after).sum();
    let _ = writeln!(
        out,
        "TOTAL\tA={a}\tB={b}\tefficiency={}",
        fmt_pct(efficiency_of(a, b))
    );
    out
}

/// One row per unique cell with a Yes/No hit column.
pub fn format_cell_table(hits: &[(String, bool)]) -> String {
    let width = hits
        .iter()
        .map(|(c, _)| c.chars().count())
        .max()
        .unwrap_or(0)
        .max(4);
    let mut out = format!("{:<width$}  In JSON\n", "Cell");
    for (cell, hit) in hits {
        let _ = writeln!(out, "{cell:<width$}  {}", if *hit { "Yes" } else { "No" });
    }
    out
}

/// One row per ground-truth path: path, expected, predicted, score.
pub fn format_path_table(items: &[QAItem]) -> String {
    let mut out = String::from("#\tPath\tExpected\tPredicted\tScore\n");
    for (i, item) in items.iter().enumerate() {
        let score = item
            .score
            .map_or_else(|| "-".to_string(), |s| s.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            i + 1,
            item.path,
            item.expected,
            item.predicted.as_deref().unwrap_or("-"),
            score
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(a: u64, b: u64) -> RunReport {
        serde_json::from_str(&format!(
            r#"{{"table_id":"t","tokens_before":{a},"tokens_after":{b}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn summary_uses_summed_counts() {
        let s = summarize(&[record(100, 50), record(100, 100)]);
        assert_eq!(s.efficiency, Some(25.0));
        assert_eq!(summarize(&[record(100, 50)]).efficiency, Some(50.0));
        assert_eq!(summarize(&[]).efficiency, None);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Input("x".into()).exit_code(), 2);
        assert_eq!(
            HarnessError::io(Path::new("p"), std::io::Error::other("x")).exit_code(),
            3
        );
        assert_eq!(HarnessError::from(GatewayError::Auth(401)).exit_code(), 4);
        assert_eq!(
            HarnessError::from(GatewayError::Config("x".into())).exit_code(),
            2
        );
    }

    #[test]
    fn tokenizer_spec() {
        assert_eq!(
            tokenizer_from_spec("whitespace").unwrap().name(),
            "whitespace"
        );
        assert_eq!(
            tokenizer_from_spec("/nonexistent/tok.json")
                .unwrap_err()
                .exit_code(),
            3
        );
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.html", "a.html", "a.gt.json", "a.enc.html", "notes.txt"] {
            fs::write(dir.path().join(name), "<table></table>").unwrap();
        }
        let c = load_corpus(dir.path()).unwrap();
        let ids: Vec<&str> = c.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(c[0].gt_path.is_some());
        assert!(c[1].gt_path.is_none());
        let empty = tempfile::tempdir().unwrap();
        assert_eq!(load_corpus(empty.path()).unwrap_err().exit_code(), 2);
        assert_eq!(
            load_corpus(&empty.path().join("nope"))
                .unwrap_err()
                .exit_code(),
            3
        );
    }

    #[test]
    fn malformed_log_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        fs::write(&p, "{\"table_id\":\"a\"}\nnot json\n").unwrap();
        let err = read_run_log(&p).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains(":2:"));
    }
}
