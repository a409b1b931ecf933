use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use tabsem_core::evaluator::{self, EvalBackend, SemanticJson};
use tabsem_core::harness::{
    self, format_cell_table, format_optimize, format_path_table, format_summary, read_file,
    write_file, EvalMode, HarnessError, PipelineOptions,
};
use tabsem_core::syntax_corrector::{correct, DEFAULT_MAX_ITERATIONS};
use tabsem_core::synthesizer::{synthesize_html, PromptTemplate};
use tabsem_core::{decode_json, decode_text, BackendConfig, Codebook, TokenizerHandle};

#[derive(Parser, Debug)]
#[command(
    name = "tabsem",
    version,
    about = "Convert HTML tables to semantic JSON with a chat model"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Shared settings. Flags win over TABSEM_* variables, which win over --config.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat JSON file with default settings
    #[arg(long, global = true, env = "TABSEM_CONFIG")]
    config: Option<PathBuf>,
    /// `whitespace`, a tokenizer JSON file, or VOCAB,MERGES
    #[arg(long, global = true, env = "TABSEM_TOKENIZER")]
    tokenizer: Option<String>,
    /// Base URL of an OpenAI-compatible API, e.g. http://localhost:8000/v1
    #[arg(long, global = true, env = "TABSEM_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true, env = "TABSEM_MODEL")]
    model: Option<String>,
    /// Environment variable that holds the API key
    #[arg(long, global = true, env = "TABSEM_API_KEY_ENV")]
    api_key_env: Option<String>,
    #[arg(long, global = true, env = "TABSEM_TIMEOUT_SECS")]
    timeout_secs: Option<u64>,
    #[arg(long, global = true, env = "TABSEM_RETRIES")]
    retries: Option<u32>,
    /// Replay model replies from a JSON array of strings instead of calling an API
    #[arg(long, global = true, env = "TABSEM_MOCK_SCRIPT")]
    mock_script: Option<PathBuf>,
    /// Save every model reply of this run as a replayable mock script
    #[arg(long, global = true)]
    record_script: Option<PathBuf>,
    #[arg(long, global = true, env = "TABSEM_MAX_ITERATIONS")]
    max_iterations: Option<u32>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    tokenizer: Option<String>,
    endpoint: Option<String>,
    model: Option<String>,
    api_key_env: Option<String>,
    timeout_secs: Option<u64>,
    retries: Option<u32>,
    mock_script: Option<PathBuf>,
    max_iterations: Option<u32>,
    jobs: Option<usize>,
    mode: Option<Mode>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Structural,
    Llm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode tables; writes {id}.enc.html and {id}.codebook.json
    Optimize {
        /// A directory of {id}.html files or a single html file
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Ask the model for JSON describing an (encoded) html table
    Synthesize {
        #[arg(long)]
        input: PathBuf,
        /// Prompt template; `---` line separates system and user parts
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repair invalid JSON through the model
    Correct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-iteration trace as JSON
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Restore original cell texts in a JSON reply using a codebook
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage over a corpus and append a JSONL run log
    Pipeline {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Run log path (default: OUT/runs.jsonl)
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Score a JSON prediction against its table and/or a ground truth
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Source html table, enables the intrinsic score
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Save scores and per-item details as JSON
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Summarize a JSONL run log
    Report {
        log: PathBuf,
        /// Print the summary as JSON
        #[arg(long)]
        json: bool,
    },
}

/// Flags and env already merged by clap; fill the gaps from the config file.
struct Settings {
    common: Common,
    file: ConfigFile,
}

impl Settings {
    fn load(common: Common) -> Result<Self, HarnessError> {
        let file = match &common.config {
            Some(path) => serde_json::from_str(&read_file(path)?)
                .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))?,
            None => ConfigFile::default(),
        };
        Ok(Self { common, file })
    }

    fn tokenizer(&self) -> Result<TokenizerHandle, HarnessError> {
        let spec = self
            .common
            .tokenizer
            .as_deref()
            .or(self.file.tokenizer.as_deref());
        harness::tokenizer_from_spec(spec.unwrap_or("whitespace"))
    }

    fn max_iterations(&self) -> u32 {
        self.common
            .max_iterations
            .or(self.file.max_iterations)
            .unwrap_or(DEFAULT_MAX_ITERATIONS)
    }

    fn mode(&self, flag: Option<Mode>) -> Mode {
        flag.or(self.file.mode).unwrap_or(Mode::Structural)
    }

    fn backend(&self) -> Result<BackendConfig, HarnessError> {
        let c = &self.common;
        let f = &self.file;
        // A backend named by flag or env beats any backend in the config file.
        let (script, endpoint) = if c.mock_script.is_some() || c.endpoint.is_some() {
            (c.mock_script.as_ref(), c.endpoint.as_ref())
        } else {
            (f.mock_script.as_ref(), f.endpoint.as_ref())
        };
        let mut cfg = if let Some(script) = script {
            harness::load_mock_script(script)?
        } else if let Some(endpoint) = endpoint {
            let model =
                c.model.as_ref().or(f.model.as_ref()).ok_or_else(|| {
                    HarnessError::Input("--model is required with --endpoint".into())
                })?;
            BackendConfig::http(endpoint.clone(), model.clone())
        } else {
            return Err(HarnessError::Input(
                "no model backend: pass --endpoint and --model, or --mock-script".into(),
            ));
        };
        if let Some(env) = c.api_key_env.as_ref().or(f.api_key_env.as_ref()) {
            cfg.api_key_env = env.clone();
        }
        if let Some(secs) = c.timeout_secs.or(f.timeout_secs) {
            cfg.timeout = Duration::from_secs(secs);
        }
        if let Some(r) = c.retries.or(f.retries) {
            cfg.retries = r;
        }
        if c.record_script.is_some() {
            cfg = cfg.with_recording();
        }
        Ok(cfg)
    }

    fn finish(&self, backend: &BackendConfig) -> Result<(), HarnessError> {
        if let Some(path) = &self.common.record_script {
            harness::save_mock_script(path, &backend.recorded())?;
            log::info!("recorded replies to {}", path.display());
        }
        Ok(())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(path) => write_file(path, &format!("{}\n", text.trim_end())),
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn parse_json_file(path: &Path) -> Result<SemanticJson, HarnessError> {
    SemanticJson::parse(&read_file(path)?)
        .map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let settings = Settings::load(cli.common)?;
    match cli.command {
        Command::Optimize { corpus, out } => {
            let entries = harness::load_corpus(&corpus)?;
            let records = harness::run_optimize(&entries, &settings.tokenizer()?, &out)?;
            print!("{}", format_optimize(&records));
        }
        Command::Synthesize {
            input,
            template,
            out,
        } => {
            let backend = settings.backend()?;
            let tmpl = match template {
                Some(p) => PromptTemplate::from_file(&p)?,
                None => PromptTemplate::default(),
            };
            let raw = synthesize_html(&read_file(&input)?, &tmpl, &backend)?;
            emit(out.as_deref(), &raw)?;
            settings.finish(&backend)?;
        }
        Command::Correct { input, out, trace } => {
            let backend = settings.backend()?;
            let text = read_file(&input)?;
            let (fixed, t) = correct(&text, &backend, settings.max_iterations())?;
            if let Some(path) = trace {
                write_file(
                    &path,
                    &serde_json::to_string_pretty(&t).expect("trace serializes"),
                )?;
            }
            eprintln!(
                "iterations used: {}, valid: {}",
                t.iterations_used, t.final_valid
            );
            emit(out.as_deref(), &fixed)?;
            settings.finish(&backend)?;
        }
        Command::Decode {
            input,
            codebook,
            out,
        } => {
            let cb = Codebook::from_json(&read_file(&codebook)?)
                .map_err(|e| HarnessError::Input(format!("{}: {e}", codebook.display())))?;
            let text = read_file(&input)?;
            let decoded = decode_json(&text, &cb).unwrap_or_else(|_| decode_text(&text, &cb));
            emit(out.as_deref(), &decoded)?;
        }
        Command::Pipeline {
            corpus,
            out,
            report,
            mode,
            jobs,
            template,
        } => {
            let entries = harness::load_corpus(&corpus)?;
            let backend = settings.backend()?;
            let mut opts = PipelineOptions::new(settings.tokenizer()?, backend.clone(), out);
            opts.max_iterations = settings.max_iterations();
            opts.eval_mode = match settings.mode(mode) {
                Mode::Structural => EvalMode::Structural,
                Mode::Llm => EvalMode::Llm,
            };
            opts.jobs = jobs.or(settings.file.jobs).unwrap_or(1);
            opts.run_log = report;
            if let Some(p) = template {
                opts.template = PromptTemplate::from_file(&p)?;
            }
            let reports = harness::run_pipeline(&entries, &opts);
            // Save what was recorded even when every table failed.
            settings.finish(&backend)?;
            let reports = reports?;
            for r in &reports {
                match &r.error {
                    Some(e) => eprintln!("{}: FAILED: {e}", r.table_id),
                    None => eprintln!("{}: ok", r.table_id),
                }
            }
            print!("{}", format_summary(&harness::summarize(&reports)));
        }
        Command::Evaluate {
            pred,
            gt,
            table,
            mode,
            save,
        } => {
            if gt.is_none() && table.is_none() {
                return Err(HarnessError::Input(
                    "evaluate needs --gt and/or --table".into(),
                ));
            }
            let pred = parse_json_file(&pred)?;
            let gt = gt.as_deref().map(parse_json_file).transpose()?;
            let clean = match &table {
                Some(path) => Some(harness::load_table(&harness::CorpusEntry {
                    id: "table".into(),
                    html_path: path.clone(),
                    gt_path: None,
                })?),
                None => None,
            };
            let backend = match settings.mode(mode) {
                Mode::Structural => None,
                Mode::Llm => Some(settings.backend()?),
            };
            let eval_backend = backend
                .clone()
                .map_or(EvalBackend::Structural, EvalBackend::Model);
            let scores = evaluator::evaluate(clean.as_ref(), &pred, gt.as_ref(), &eval_backend)
                .map_err(|e| HarnessError::Input(e.to_string()))?;
            if let Some(isc) = scores.isc {
                print!("{}", format_cell_table(&scores.per_cell_hits));
                println!("ISC {isc:.2}\n");
            }
            if let Some(esc) = scores.esc {
                print!("{}", format_path_table(&scores.qa_items));
                println!("ESC {esc:.2}");
            }
            if let Some(path) = save {
                write_file(
                    &path,
                    &serde_json::to_string_pretty(&scores).expect("scores serialize"),
                )?;
            }
            if let Some(b) = &backend {
                settings.finish(b)?;
            }
        }
        Command::Report { log, json } => {
            let summary = harness::summarize(&harness::read_run_log(&log)?);
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&summary).expect("summary serializes")
                );
            } else {
                print!("{}", format_summary(&summary));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
