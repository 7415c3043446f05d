//! Static-analysis frontend for a small Java-like language.
//!
//! The frontend parses source text, builds a call graph, extracts
//! source-to-sink call paths, and emits code information summaries that the
//! solving pipeline consumes.

pub mod ast;
pub mod callgraph;
pub mod emit;
pub mod lexer;
pub mod library;
pub mod parser;
pub mod taint;

use thiserror::Error;

pub use ast::MiniProgram;
pub use callgraph::{build_call_graph, extract_main_paths, CallGraph, SinkSpec, SourceSinkConfig};
pub use emit::{emit_summary, DEFAULT_BRANCH_DEPTH, SOURCE_LANGUAGE_TAG};
pub use parser::{parse_program, ParseError};
pub use taint::compute_taint;

use crate::summary::CodeInformationSummary;

/// Default bound on extracted call-path length.
pub const DEFAULT_MAX_CHAIN_LEN: usize = 6;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("ambiguous call to `{method}`: declared by {}", candidates.join(", "))]
    AmbiguousCall {
        method: String,
        candidates: Vec<String>,
    },
    #[error("unknown type `{type_name}` at {context}")]
    UnknownType { type_name: String, context: String },
    #[error("method `{0}` is not declared in the program")]
    MissingMethod(String),
    #[error("invalid source/sink config: {0}")]
    Config(String),
}

/// Full frontend run: parse, graph, extract paths, emit summaries.
pub fn analyze_source(
    source: &str,
    config: &SourceSinkConfig,
    branch_depth_limit: u32,
    max_chain_len: usize,
) -> Result<CodeInformationSummary, FrontendError> {
    let program = parse_program(source)?;
    let graph = build_call_graph(&program)?;
    let paths = extract_main_paths(&graph, config, max_chain_len);
    emit_summary(&program, &graph, &paths, config, branch_depth_limit)
}
