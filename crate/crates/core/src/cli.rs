//! Command-line front end: parse corpora, evaluate predictions against
//! ground truth, and report pipeline statistics.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser as ClapParser, Subcommand, ValueEnum};
use serde::Deserialize;
use thiserror::Error;

use crate::llm::{HttpBackend, LlmBackend, LlmConfig, MockBackend, UsageCounters};
use crate::metrics::{self, LabeledCorpus};
use crate::pipeline::{AblationFlags, Parser, ParserOptions};
use crate::pos::Lexicon;
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Message(String),
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, ClapParser)]
#[command(name = "logscope", version, about = "Online log template mining and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a log file into templates and structured records.
    Parse(ParseArgs),
    /// Compute GA/PA/FGA/FTA between a prediction CSV and a ground-truth CSV.
    Evaluate(EvaluateArgs),
    /// Summarize a stats JSON produced by `parse`.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    /// One raw message per line.
    Text,
    /// Loghub structured CSV; messages come from the `Content` column.
    Csv,
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Input log file (plain text or Loghub structured CSV).
    #[arg(long)]
    input: PathBuf,
    /// Directory for the structured/templates/stats outputs.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// TOML config file; built-in defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    backend: Backend,
    /// Directory of prompt-digest keyed reply fixtures for the mock backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Cap on pool candidates examined per line (default: unlimited).
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    disable_nlpe: bool,
    #[arg(long)]
    disable_llm: bool,
    #[arg(long)]
    disable_pos: bool,
    #[arg(long)]
    disable_ptmp: bool,
    #[arg(long)]
    disable_bdpt: bool,
    /// Alternate POS lexicon file (word<TAB>TAG).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Input format override; detected from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<InputFormat>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Predictions CSV (LineId, EventTemplate columns).
    #[arg(long)]
    predictions: PathBuf,
    /// Ground-truth CSV (LineId, EventTemplate columns).
    #[arg(long)]
    truth: PathBuf,
    /// Where to write the metrics JSON.
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Stats JSON written by `parse`.
    #[arg(long)]
    input: PathBuf,
}

/// Parse argv and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own help/usage output.
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            1
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Parse(args) => cmd_parse(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<(PreprocessConfig, LlmConfig), CliError> {
    let data = match path {
        Some(path) => std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?,
        None => return Ok((PreprocessConfig::default_config(), LlmConfig::default())),
    };
    let preprocess = PreprocessConfig::from_toml(&data)
        .map_err(|e| CliError::Message(format!("invalid config: {e}")))?;
    let llm = toml::from_str::<LlmFileView>(&data)
        .map_err(|e| CliError::Message(format!("invalid config: {e}")))?
        .llm
        .unwrap_or_default();
    Ok((preprocess, llm))
}

#[derive(Debug, Deserialize)]
struct LlmFileView {
    llm: Option<LlmConfig>,
}

fn read_messages(path: &Path, format: Option<InputFormat>) -> Result<Vec<String>, CliError> {
    let format = format.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Text,
        }
    });
    let read_err = |source| CliError::Read {
        path: path.to_path_buf(),
        source,
    };
    match format {
        InputFormat::Text => {
            let file = File::open(path).map_err(read_err)?;
            let mut lines = Vec::new();
            for line in BufReader::new(file).lines() {
                lines.push(line.map_err(read_err)?);
            }
            Ok(lines)
        }
        InputFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| {
                CliError::Message(format!("cannot open {}: {e}", path.display()))
            })?;
            let headers = reader
                .headers()
                .map_err(|e| CliError::Message(format!("bad CSV header: {e}")))?
                .clone();
            let content_idx = headers
                .iter()
                .position(|h| h == "Content")
                .ok_or_else(|| {
                    CliError::Message(format!("{}: no Content column", path.display()))
                })?;
            let mut lines = Vec::new();
            for record in reader.records() {
                let record =
                    record.map_err(|e| CliError::Message(format!("bad CSV record: {e}")))?;
                lines.push(record.get(content_idx).unwrap_or_default().to_string());
            }
            Ok(lines)
        }
    }
}

fn cmd_parse(args: ParseArgs) -> Result<(), CliError> {
    let (preprocess, llm_config) = load_config(args.config.as_deref())?;
    let lexicon = match &args.lexicon {
        Some(path) => Lexicon::from_file(path)
            .map_err(|e| CliError::Message(format!("invalid lexicon: {e}")))?,
        None => Lexicon::builtin().clone(),
    };
    // Backend construction happens before any input is read so a missing API
    // key fails fast.
    let backend: Box<dyn LlmBackend> = match args.backend {
        Backend::Mock => Box::new(MockBackend::new(args.fixtures.clone())),
        Backend::Live => Box::new(
            HttpBackend::new(llm_config)
                .map_err(|e| CliError::Message(format!("live backend unavailable: {e}")))?,
        ),
    };
    let flags = AblationFlags {
        disable_nlpe: args.disable_nlpe,
        disable_llm: args.disable_llm,
        disable_pos: args.disable_pos,
        disable_ptmp: args.disable_ptmp,
        disable_bdpt: args.disable_bdpt,
    };
    let options = ParserOptions {
        preprocess,
        lexicon,
        flags,
        top_k: args.top_k,
    };
    let mut parser = Parser::new(options, backend);

    let messages = read_messages(&args.input, args.format)?;
    for (idx, message) in messages.iter().enumerate() {
        match parser.parse_line(message) {
            Ok(_) => {}
            Err(crate::pipeline::ParseLineError::Empty(_)) => {
                eprintln!("warning: input line {}: empty, skipped", idx + 1);
            }
            Err(err) => return Err(CliError::Message(err.to_string())),
        }
    }

    let stem = args
        .input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("input")
        .to_string();
    std::fs::create_dir_all(&args.out_dir).map_err(|source| CliError::Write {
        path: args.out_dir.clone(),
        source,
    })?;

    let (records, templates, stats) = parser.export();

    let structured_path = args.out_dir.join(format!("{stem}_structured.csv"));
    write_csv(&structured_path, |w| {
        w.write_record(["LineId", "Content", "EventId", "EventTemplate"])?;
        for r in &records {
            w.write_record([
                r.line_id.to_string(),
                r.content.clone(),
                format!("E{}", r.template_id),
                r.template.clone(),
            ])?;
        }
        Ok(())
    })?;

    let templates_path = args.out_dir.join(format!("{stem}_templates.csv"));
    write_csv(&templates_path, |w| {
        w.write_record(["EventId", "EventTemplate", "Occurrences"])?;
        for t in &templates {
            w.write_record([
                format!("E{}", t.template_id),
                t.template.clone(),
                t.occurrences.to_string(),
            ])?;
        }
        Ok(())
    })?;

    let stats_path = args.out_dir.join(format!("{stem}_stats.json"));
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    std::fs::write(&stats_path, json.as_bytes()).map_err(|source| CliError::Write {
        path: stats_path.clone(),
        source,
    })?;

    println!(
        "parsed {} lines ({} skipped) into {} templates",
        records.len(),
        stats.counters.skipped_lines,
        templates.len()
    );
    println!("wrote {}", structured_path.display());
    println!("wrote {}", templates_path.display());
    println!("wrote {}", stats_path.display());
    Ok(())
}

fn write_csv<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut csv::Writer<File>) -> csv::Result<()>,
{
    let file = File::create(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(file);
    fill(&mut writer).map_err(|e| CliError::Message(format!("CSV write failed: {e}")))?;
    writer
        .flush()
        .map_err(|e| CliError::Message(format!("CSV flush failed: {e}")))?;
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<(u64, String)>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Message(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Message(format!("bad CSV header: {e}")))?
        .clone();
    let line_idx = headers
        .iter()
        .position(|h| h == "LineId")
        .ok_or_else(|| CliError::Message(format!("{}: no LineId column", path.display())))?;
    let template_idx = headers
        .iter()
        .position(|h| h == "EventTemplate")
        .ok_or_else(|| {
            CliError::Message(format!("{}: no EventTemplate column", path.display()))
        })?;
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Message(format!("bad CSV record: {e}")))?;
        let line_id: u64 = record
            .get(line_idx)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|_| {
                CliError::Message(format!(
                    "{}: LineId {:?} is not an integer",
                    path.display(),
                    record.get(line_idx).unwrap_or_default()
                ))
            })?;
        labels.push((line_id, record.get(template_idx).unwrap_or_default().to_string()));
    }
    Ok(labels)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let predictions = read_labels(&args.predictions)?;
    let truth = read_labels(&args.truth)?;
    let corpus = LabeledCorpus::new(truth, predictions)
        .map_err(|e| CliError::Message(format!("corpora do not align: {e}")))?;
    let report = metrics::evaluate(&corpus);
    println!("{report}");
    let json = serde_json::to_string_pretty(&report).expect("metrics serialize");
    let mut file = File::create(&args.out).map_err(|source| CliError::Write {
        path: args.out.clone(),
        source,
    })?;
    file.write_all(json.as_bytes()).map_err(|source| CliError::Write {
        path: args.out.clone(),
        source,
    })?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn percent(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let data = std::fs::read_to_string(&args.input).map_err(|source| CliError::Read {
        path: args.input.clone(),
        source,
    })?;
    let stats: StatsView = serde_json::from_str(&data)
        .map_err(|e| CliError::Message(format!("invalid stats JSON: {e}")))?;
    let c = &stats.counters;
    let total = c.matched_bdpt_forward + c.matched_bdpt_reverse + c.matched_ptmp + c.new_templates;
    println!("lines parsed      {total}");
    println!(
        "bdpt forward      {:>8}  {:5.1}%",
        c.matched_bdpt_forward,
        percent(c.matched_bdpt_forward, total)
    );
    println!(
        "bdpt reverse      {:>8}  {:5.1}%",
        c.matched_bdpt_reverse,
        percent(c.matched_bdpt_reverse, total)
    );
    println!(
        "ptmp              {:>8}  {:5.1}%",
        c.matched_ptmp,
        percent(c.matched_ptmp, total)
    );
    println!(
        "new templates     {:>8}  {:5.1}%",
        c.new_templates,
        percent(c.new_templates, total)
    );
    println!("nlpe invocations  {:>8}", c.nlpe_invocations);
    println!("llm calls         {:>8}", c.llm_calls);
    println!("malformed replies {:>8}", c.malformed_replies);
    println!(
        "llm usage         {} invocations, {} prompt tokens, {} completion tokens",
        stats.llm_usage.invocations, stats.llm_usage.prompt_tokens, stats.llm_usage.completion_tokens
    );
    if !stats.pool.buckets.is_empty() {
        println!("pool buckets (length: size, never-updated/updated):");
        for b in &stats.pool.buckets {
            println!(
                "  len {:>3}: {:>6} templates, {}/{}",
                b.length, b.size, b.never_updated, b.updated
            );
        }
    }
    Ok(())
}

/// Deserialization view of the stats JSON written by `cmd_parse`.
#[derive(Debug, Deserialize)]
struct StatsView {
    counters: CountersView,
    llm_usage: UsageCounters,
    pool: PoolView,
}

#[derive(Debug, Deserialize)]
struct CountersView {
    matched_bdpt_forward: u64,
    matched_bdpt_reverse: u64,
    matched_ptmp: u64,
    new_templates: u64,
    nlpe_invocations: u64,
    llm_calls: u64,
    malformed_replies: u64,
}

#[derive(Debug, Deserialize, Default)]
struct PoolView {
    #[serde(default)]
    buckets: Vec<BucketView>,
}

#[derive(Debug, Deserialize)]
struct BucketView {
    length: usize,
    size: usize,
    never_updated: usize,
    updated: usize,
}
