//! Command line interface: summary generation, chain analysis, corpus
//! evaluation, and transcript replay.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::frontend::{analyze_source, SourceSinkConfig, DEFAULT_BRANCH_DEPTH, DEFAULT_MAX_CHAIN_LEN};
use crate::harness::{evaluate, EvalReport, LabeledCorpus};
use crate::pipeline::{run as run_pipeline, AnalysisOptions, Report};
use crate::rules::RuleRegistry;
use crate::solver::{
    make_backend, BackendConfig, BackendKind, OracleBackend, RecordingBackend, ReplayBackend,
    SolverBackend,
};
use crate::summary::{parse_summary, serialize_summary, CodeInformationSummary};

/// File extension of mini-language sources.
const SOURCE_EXTENSION: &str = "mj";

#[derive(Debug, Parser)]
#[command(
    name = "chainsolver",
    version,
    about = "Path-based vulnerability detection over source-to-sink call chains"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract call chains from sources and emit a code information summary.
    GenSummary(GenSummaryArgs),
    /// Solve every chain of a summary and write the verdict report.
    Analyze(AnalyzeArgs),
    /// Analyze a labeled corpus and score the verdicts against its labels.
    Eval(EvalArgs),
    /// Re-answer a summary from a recorded transcript, no backend needed.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenSummaryArgs {
    /// Source file, or directory scanned recursively for .mj files.
    pub input: PathBuf,
    /// Source/sink pattern configuration (JSON); defaults to the builtin
    /// rule set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Branch tree depth captured below each chain method.
    #[arg(long, default_value_t = DEFAULT_BRANCH_DEPTH)]
    pub branch_depth: u32,
    /// Longest call path extracted between a source and a sink.
    #[arg(long, default_value_t = DEFAULT_MAX_CHAIN_LEN)]
    pub max_chain_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// Deterministic built-in solver.
    Oracle,
    /// Remote chat-completions solver.
    Llm,
}

#[derive(Debug, Args, Clone)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendChoice::Oracle)]
    pub backend: BackendChoice,
    /// Endpoint base URL, required for the llm backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Sampling temperature in [0, 2].
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Extra attempts after a failed request.
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub timeout_seconds: Option<u64>,
    /// Chains analyzed in parallel.
    #[arg(long)]
    pub max_concurrency: Option<usize>,
}

impl BackendArgs {
    fn to_config(&self) -> anyhow::Result<BackendConfig> {
        let mut config = BackendConfig {
            kind: match self.backend {
                BackendChoice::Oracle => BackendKind::Oracle,
                BackendChoice::Llm => BackendKind::Llm,
            },
            ..BackendConfig::default()
        };
        if let Some(endpoint) = &self.endpoint {
            config.endpoint_url = endpoint.clone();
        }
        if let Some(model) = &self.model {
            config.model = model.clone();
        }
        if let Some(temperature) = self.temperature {
            config.temperature = temperature;
        }
        if let Some(max_retries) = self.max_retries {
            config.max_retries = max_retries;
        }
        if let Some(timeout) = self.timeout_seconds {
            config.timeout_seconds = timeout;
        }
        if let Some(concurrency) = self.max_concurrency {
            config.max_concurrency = concurrency;
        }
        config.validated().map_err(anyhow::Error::from)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Code information summary (JSON).
    pub summary: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Skip branch method analysis; contexts lose helper-method facts.
    #[arg(long)]
    pub no_branch_analysis: bool,
    /// Skip context maintenance; every subtask is solved memoryless.
    #[arg(long)]
    pub no_context: bool,
    /// Append every solver reply to this JSONL transcript.
    #[arg(long)]
    pub record_transcript: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled corpus manifest (JSON array of cases).
    pub manifest: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub no_branch_analysis: bool,
    #[arg(long)]
    pub no_context: bool,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BRANCH_DEPTH)]
    pub branch_depth: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_CHAIN_LEN)]
    pub max_chain_len: usize,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Code information summary (JSON).
    pub summary: PathBuf,
    /// Transcript recorded by `analyze --record-transcript`.
    #[arg(long)]
    pub transcript: PathBuf,
    #[arg(long)]
    pub no_branch_analysis: bool,
    #[arg(long)]
    pub no_context: bool,
    /// Output path; stdout when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenSummary(args) => gen_summary(args),
        Command::Analyze(args) => analyze(args),
        Command::Eval(args) => eval(args),
        Command::Replay(args) => replay(args),
    }
}

fn write_output(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn source_files(input: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        bail!("input {} is neither a file nor a directory", input.display());
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(input)
        .into_iter()
        .filter_map(|entry| entry.ok())
        .filter(|entry| entry.file_type().is_file())
        .map(|entry| entry.into_path())
        .filter(|path| {
            path.extension()
                .map(|ext| ext == SOURCE_EXTENSION)
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(
            "no .{SOURCE_EXTENSION} sources under {}",
            input.display()
        );
    }
    Ok(files)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<SourceSinkConfig> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            SourceSinkConfig::from_json(&text).map_err(anyhow::Error::from)
        }
        None => Ok(SourceSinkConfig::default_config()),
    }
}

/// Analyzes each source file separately and merges the resulting chains.
fn summarize_sources(
    files: &[PathBuf],
    config: &SourceSinkConfig,
    branch_depth: u32,
    max_chain_len: usize,
) -> anyhow::Result<CodeInformationSummary> {
    let mut merged: Option<CodeInformationSummary> = None;
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for file in files {
        let source = fs::read_to_string(file)
            .with_context(|| format!("cannot read {}", file.display()))?;
        let summary = analyze_source(&source, config, branch_depth, max_chain_len)
            .with_context(|| format!("cannot analyze {}", file.display()))?;
        for chain in &summary.chains {
            if !seen.insert(chain.id.clone()) {
                bail!(
                    "chain id `{}` produced by more than one source file",
                    chain.id
                );
            }
        }
        match &mut merged {
            None => merged = Some(summary),
            Some(out) => out.chains.extend(summary.chains),
        }
    }
    let mut summary = merged.expect("at least one source file");
    summary.chains.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(summary)
}

fn gen_summary(args: GenSummaryArgs) -> anyhow::Result<()> {
    let files = source_files(&args.input)?;
    let config = load_config(args.config.as_deref())?;
    let summary = summarize_sources(&files, &config, args.branch_depth, args.max_chain_len)?;
    write_output(args.output.as_deref(), &serialize_summary(&summary))
}

fn load_summary(path: &Path) -> anyhow::Result<CodeInformationSummary> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_summary(&text).map_err(anyhow::Error::from)
}

fn build_options(config: &BackendConfig, no_branch_analysis: bool, no_context: bool) -> AnalysisOptions {
    AnalysisOptions {
        branch_analysis: !no_branch_analysis,
        context: !no_context,
        max_concurrency: config.max_concurrency,
        ..AnalysisOptions::default()
    }
}

fn analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let summary = load_summary(&args.summary)?;
    let config = args.backend.to_config()?;
    let mut backend: Box<dyn SolverBackend> = make_backend(&config)?;
    if let Some(path) = &args.record_transcript {
        backend = Box::new(RecordingBackend::new(backend, path)?);
    }
    let options = build_options(&config, args.no_branch_analysis, args.no_context);
    let registry = RuleRegistry::builtin();
    let report = run_pipeline(&summary, &registry, backend.as_ref(), &options);
    write_output(args.output.as_deref(), &report.to_json())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let corpus = LabeledCorpus::from_file(&args.manifest)
        .with_context(|| format!("cannot load manifest {}", args.manifest.display()))?;
    if corpus.is_empty() {
        bail!("manifest {} labels no cases", args.manifest.display());
    }
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let mut files: Vec<PathBuf> = corpus
        .cases
        .iter()
        .map(|case| base.join(&case.source))
        .collect();
    files.sort();
    files.dedup();
    let config = SourceSinkConfig::default_config();
    let summary = summarize_sources(&files, &config, args.branch_depth, args.max_chain_len)?;
    let backend_config = args.backend.to_config()?;
    let backend = make_backend(&backend_config)?;
    let options = build_options(&backend_config, args.no_branch_analysis, args.no_context);
    let registry = RuleRegistry::builtin();
    let report = run_pipeline(&summary, &registry, backend.as_ref(), &options);
    let evaluation = evaluate(&corpus, &report);
    let rendered = EvalReport::from_evaluation(&evaluation)?;
    write_output(args.output.as_deref(), &rendered.to_json())
}

fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let summary = load_summary(&args.summary)?;
    let backend = ReplayBackend::from_jsonl(&args.transcript)?;
    let options = build_options(
        &BackendConfig::default(),
        args.no_branch_analysis,
        args.no_context,
    );
    let registry = RuleRegistry::builtin();
    let report = run_pipeline(&summary, &registry, &backend, &options);
    write_output(args.output.as_deref(), &report.to_json())
}

/// Runs a full analysis in-process; used by integration tests that do not
/// need a subprocess.
pub fn analyze_summary_with_oracle(
    summary: &CodeInformationSummary,
    options: &AnalysisOptions,
) -> Report {
    let registry = RuleRegistry::builtin();
    let backend = OracleBackend::new();
    run_pipeline(summary, &registry, &backend, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn backend_args_reject_llm_without_endpoint() {
        let args = BackendArgs {
            backend: BackendChoice::Llm,
            endpoint: None,
            model: None,
            temperature: None,
            max_retries: None,
            timeout_seconds: None,
            max_concurrency: None,
        };
        assert!(args.to_config().is_err());
        let args = BackendArgs {
            endpoint: Some("http://127.0.0.1:9".to_string()),
            ..args
        };
        assert!(args.to_config().is_ok());
    }

    #[test]
    fn backend_args_propagate_overrides() {
        let args = BackendArgs {
            backend: BackendChoice::Oracle,
            endpoint: None,
            model: Some("m1".to_string()),
            temperature: Some(0.7),
            max_retries: Some(5),
            timeout_seconds: Some(9),
            max_concurrency: Some(2),
        };
        let config = args.to_config().unwrap();
        assert_eq!(config.model, "m1");
        assert_eq!(config.temperature, 0.7);
        assert_eq!(config.max_retries, 5);
        assert_eq!(config.timeout_seconds, 9);
        assert_eq!(config.max_concurrency, 2);
    }
}
