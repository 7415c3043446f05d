//! Pluggable constraint-solving backends.
//!
//! A backend answers self-contained requests about one caller method: either
//! derive the callee's parameter states at a call site (subtask derivation)
//! or probe how one parameter of a branch method flows to its result (branch
//! objective). The deterministic oracle interprets the code directly; the
//! remote backend asks a chat-completion endpoint and parses its reply.

pub mod llm;
pub mod oracle;
pub mod replay;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::SimplifiedFact;
use crate::pipeline::StateKey;
use crate::rules::StateVerdict;
use crate::summary::{ArgBinding, MemberDecl};

pub use llm::{HttpTransport, LlmBackend, Transport};
pub use oracle::OracleBackend;
pub use replay::{RecordingBackend, ReplayBackend};

/// What the backend is asked to derive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RequestKind {
    /// Derive callee parameter states and transfer feasibility at a call site.
    SubtaskDerivation,
    /// Probe whether one attacker-controlled parameter reaches the method's
    /// result unfiltered.
    BranchObjective,
}

/// Whether execution can reach the call site given the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Transfer {
    Feasible,
    Infeasible,
    Unknown,
}

/// A slot of the callee (or probe target) the response must cover.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TargetSlot {
    pub key: StateKey,
    /// Declared name, for display and reply matching.
    pub name: String,
    pub ty: String,
}

/// One caller-side parameter state seeding the derivation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedEntry {
    pub key: StateKey,
    pub name: String,
    pub verdict: StateVerdict,
}

/// A pruned branch-tree descendant whose body the solver may consult.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AuxMethod {
    pub qualified_name: String,
    pub def: String,
    pub code: String,
}

/// Self-contained solving request. Field order is the canonical serialization
/// order used for request hashing.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverRequest {
    pub kind: RequestKind,
    pub rule_id: String,
    /// Human-readable statement of the non-exploitability condition.
    pub condition_text: String,
    /// Body of the method under analysis, verbatim.
    pub caller_code: String,
    pub member_variables: Vec<MemberDecl>,
    /// Call-site snippet inside `caller_code`; empty for branch objectives.
    pub call_site: String,
    /// Receiver expression at the call site, empty when none.
    pub invoker: String,
    /// Actual argument expression per callee formal index.
    pub bindings: Vec<ArgBinding>,
    /// Slots the response must cover.
    pub target_slots: Vec<TargetSlot>,
    /// Rendered analysis context, already budgeted.
    pub context_text: String,
    /// Structured facts behind `context_text`.
    pub context_facts: Vec<SimplifiedFact>,
    /// Caller parameter states, keyed by the caller's own slots.
    pub seed_states: Vec<SeedEntry>,
    /// Free-text statement of what to derive.
    pub objective_text: String,
    /// Branch objectives: the parameter index treated as attacker-controlled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_param: Option<usize>,
    /// Bodies of pruned branch descendants available for inspection.
    pub aux_methods: Vec<AuxMethod>,
}

impl SolverRequest {
    /// Canonical JSON used for hashing and transcripts.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One derived slot state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ResponseEntry {
    pub key: StateKey,
    pub verdict: StateVerdict,
    pub justification: String,
}

/// Backend answer to one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SolverResponse {
    /// Present for subtask derivations; branch objectives leave it `None`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer: Option<Transfer>,
    pub entries: Vec<ResponseEntry>,
    /// Raw reply text the entries were parsed from.
    pub raw: String,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("malformed solver reply: {message}")]
    MalformedReply { message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

/// A solving backend. Implementations must be safe to share across worker
/// threads; the pipeline solves chains concurrently.
pub trait SolverBackend: Sync + Send {
    fn solve(&self, request: &SolverRequest) -> Result<SolverResponse, SolverError>;

    /// Stable backend name for reports.
    fn name(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Llm,
}

/// Remote-backend tuning knobs; the oracle ignores all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Sampling temperature for the remote model.
    pub temperature: f64,
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    pub timeout_seconds: u64,
    pub endpoint_url: String,
    pub model: String,
    /// Upper bound on concurrently solved chains.
    pub max_concurrency: usize,
}

impl Default for BackendConfig {
    fn default() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Oracle,
            temperature: 0.1,
            max_retries: 2,
            timeout_seconds: 30,
            endpoint_url: String::new(),
            model: "default-solver-model".to_string(),
            max_concurrency: 4,
        }
    }
}

impl BackendConfig {
    pub fn validated(self) -> Result<BackendConfig, SolverError> {
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(SolverError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_concurrency == 0 {
            return Err(SolverError::Config("maxConcurrency must be positive".into()));
        }
        if self.kind == BackendKind::Llm && self.endpoint_url.is_empty() {
            return Err(SolverError::Config(
                "llm backend requires an endpoint url".into(),
            ));
        }
        Ok(self)
    }
}

/// Builds the configured backend.
pub fn make_backend(config: &BackendConfig) -> Result<Box<dyn SolverBackend>, SolverError> {
    let config = config.clone().validated()?;
    match config.kind {
        BackendKind::Oracle => Ok(Box::new(OracleBackend::new())),
        BackendKind::Llm => Ok(Box::new(LlmBackend::new(
            config.clone(),
            Box::new(HttpTransport::from_config(&config)),
        ))),
    }
}
