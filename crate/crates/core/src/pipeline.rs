//! Per-chain constraint-solving pipeline: seeds the source state, folds
//! solver subtasks over adjacent method pairs, runs a final derivation from
//! the sink method's parameters to the sink call, and evaluates the trigger
//! constraint there.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::branch::{analyze_branch, classify_branch, prune_tree, BranchAnalysis, PruneConfig};
use crate::context::{
    facts_from_analyses, prune_parameters, render_context, BudgetError, SimplifiedFact,
    DEFAULT_CONTEXT_BUDGET,
};
use crate::rules::{
    atom_true, trigger_satisfied, RuleError, RuleRegistry, StateVerdict, VulnerabilityRule,
};
use crate::solver::{
    RequestKind, SeedEntry, SolverBackend, SolverError, SolverRequest, TargetSlot, Transfer,
};
use crate::summary::{
    critical_parameters, ArgBinding, CallChain, CodeInformationSummary, MethodRecord, MethodInfo,
    SinkCall, Slot, TypeTable, UnknownTypeError,
};
use crate::textflow::{backward_closure, identifier_tokens};

/// Identifies one tracked value slot of a method: a parameter, or a
/// critical-typed member encapsulated by that parameter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StateKey {
    pub arg_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member_path: Option<String>,
}

impl StateKey {
    pub fn param(arg_index: usize) -> StateKey {
        StateKey {
            arg_index,
            member_path: None,
        }
    }

    pub fn member(arg_index: usize, path: &str) -> StateKey {
        StateKey {
            arg_index,
            member_path: Some(path.to_string()),
        }
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.member_path {
            Some(path) => write!(f, "arg{}.{}", self.arg_index, path),
            None => write!(f, "arg{}", self.arg_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StateEntry {
    /// Parameter (or member) name as declared by the method.
    pub name: String,
    pub verdict: StateVerdict,
    pub justification: String,
    /// Call sites walked to derive this entry, oldest first.
    pub source_trail: Vec<String>,
}

/// Non-exploitability states of one method's critical parameters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParameterState {
    pub entries: BTreeMap<StateKey, StateEntry>,
}

impl ParameterState {
    pub fn new() -> ParameterState {
        ParameterState::default()
    }

    pub fn insert(&mut self, key: StateKey, entry: StateEntry) {
        self.entries.insert(key, entry);
    }

    pub fn get(&self, key: &StateKey) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &StateEntry)> {
        self.entries.iter()
    }
}

// Serialized as an array: struct-valued map keys have no JSON spelling.
impl Serialize for ParameterState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct Row<'a> {
            key: String,
            name: &'a str,
            verdict: StateVerdict,
            justification: &'a str,
            source_trail: &'a [String],
        }
        let mut seq = serializer.serialize_seq(Some(self.entries.len()))?;
        for (key, entry) in &self.entries {
            seq.serialize_element(&Row {
                key: key.to_string(),
                name: &entry.name,
                verdict: entry.verdict,
                justification: &entry.justification,
                source_trail: &entry.source_trail,
            })?;
        }
        seq.end()
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Probe branch methods and feed their summaries into the context.
    pub branch_analysis: bool,
    /// Maintain parameter states and simplified facts between subtasks.
    pub context: bool,
    pub prune: PruneConfig,
    pub context_budget: usize,
    pub max_concurrency: usize,
}

impl Default for AnalysisOptions {
    fn default() -> AnalysisOptions {
        AnalysisOptions {
            branch_analysis: true,
            context: true,
            prune: PruneConfig::default(),
            context_budget: DEFAULT_CONTEXT_BUDGET,
            max_concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum VerdictReason {
    /// The sink can receive a state that violates the condition.
    TriggerSatisfied,
    /// Every sensitive sink argument satisfies the condition.
    TriggerUnsatisfied,
    /// Some step of the chain proved unreachable.
    TransferInfeasible,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceStep {
    pub pair_index: usize,
    pub caller: String,
    pub callee: String,
    pub transfer: Transfer,
    /// Hash of the rendered context block handed to the solver.
    pub context_hash: String,
    pub facts: Vec<SimplifiedFact>,
    /// Derived state after this step.
    pub state: ParameterState,
    pub backend_calls: u32,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainVerdict {
    pub chain_id: String,
    pub rule_id: String,
    pub exploitable: bool,
    pub reason: VerdictReason,
    pub sink_state: ParameterState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_witness_note: Option<String>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainFailure {
    pub chain_id: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub backend: String,
    pub branch_analysis: bool,
    pub context_maintenance: bool,
    pub verdicts: Vec<ChainVerdict>,
    pub errors: Vec<ChainFailure>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn exploitable_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.exploitable).count()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error(transparent)]
    Summary(#[from] UnknownTypeError),
}

/// Hex SHA-256 of a context block, recorded in traces so identical runs are
/// byte-comparable without embedding the full text.
pub fn content_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Initial state of the chain head's critical parameters. A parameter is
/// violating when a source-pattern result flows into its name inside the
/// head's own body; anything else enters the chain benign, because the
/// attack surface under analysis is the source call itself.
pub fn init_source_state(
    head: &MethodInfo,
    rule: &VulnerabilityRule,
    types: &TypeTable,
) -> Result<ParameterState, UnknownTypeError> {
    let mut state = ParameterState::new();
    let source_names: BTreeSet<&str> = rule
        .source_patterns
        .iter()
        .map(|p| bare_name(p))
        .collect();
    for param in critical_parameters(head, &rule.critical_types, types)? {
        let arg = &head.args[param.arg_index];
        let name = match &param.member_path {
            Some(path) => format!("{}.{}", arg.name, path),
            None => arg.name.clone(),
        };
        let mut seeds = BTreeSet::new();
        seeds.insert(arg.name.clone());
        let closure = backward_closure(&head.code, &seeds);
        let sourced = source_names.iter().any(|m| closure.contains(*m));
        let (verdict, justification) = if sourced {
            (
                StateVerdict::ViolatesU,
                format!("a source call flows into `{}` inside the chain head", arg.name),
            )
        } else {
            (
                StateVerdict::SatisfiesU,
                format!("no source call reaches `{}` inside the chain head", arg.name),
            )
        };
        state.insert(
            StateKey {
                arg_index: param.arg_index,
                member_path: param.member_path.clone(),
            },
            StateEntry {
                name,
                verdict,
                justification,
                source_trail: Vec::new(),
            },
        );
    }
    Ok(state)
}

fn bare_name(pattern: &str) -> &str {
    pattern.rsplit('.').next().unwrap_or(pattern)
}

/// One derivation: a caller, a call site inside it, and the slots to state.
struct DerivationSpec<'a> {
    pair_index: usize,
    caller: &'a MethodRecord,
    callee_label: String,
    call_site: String,
    invoker: String,
    bindings: Vec<ArgBinding>,
    target_slots: Vec<TargetSlot>,
    objective: String,
}

fn pair_spec<'a>(
    pair_index: usize,
    caller: &'a MethodRecord,
    callee: &MethodRecord,
    rule: &VulnerabilityRule,
    types: &TypeTable,
) -> Result<DerivationSpec<'a>, PipelineError> {
    let info = &callee.info;
    let mut target_slots = Vec::new();
    for param in critical_parameters(info, &rule.critical_types, types)? {
        let arg = &info.args[param.arg_index];
        let (name, ty) = match &param.member_path {
            Some(path) => (
                format!("{}.{}", arg.name, path),
                member_type(types, &arg.ty, path),
            ),
            None => (arg.name.clone(), arg.ty.clone()),
        };
        target_slots.push(TargetSlot {
            key: StateKey {
                arg_index: param.arg_index,
                member_path: param.member_path.clone(),
            },
            name,
            ty,
        });
    }
    Ok(DerivationSpec {
        pair_index,
        caller,
        callee_label: info.qualified_name(),
        call_site: info.snippet_of_called.clone(),
        invoker: info.invoker_of_called.clone(),
        bindings: info.pass_relation_ship.clone(),
        target_slots,
        objective: format!(
            "derive the states of `{}`'s critical parameters at `{}`",
            info.qualified_name(),
            info.snippet_of_called
        ),
    })
}

fn member_type(types: &TypeTable, owner: &str, path: &str) -> String {
    types
        .members_of(owner)
        .and_then(|members| members.iter().find(|m| m.name == path))
        .map(|m| m.ty.clone())
        .unwrap_or_else(|| "String".to_string())
}

fn sink_spec<'a>(
    pair_index: usize,
    sink_method: &'a MethodRecord,
    sink: &SinkCall,
) -> DerivationSpec<'a> {
    let bindings: Vec<ArgBinding> = sink
        .arg_expressions
        .iter()
        .enumerate()
        .map(|(i, expr)| ArgBinding {
            actual_expression: expr.clone(),
            formal_index: i,
        })
        .collect();
    let target_slots: Vec<TargetSlot> = sink
        .sensitive_arg_indices
        .iter()
        .map(|&i| TargetSlot {
            key: StateKey::param(i),
            name: sink
                .arg_expressions
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("arg{i}")),
            ty: "String".to_string(),
        })
        .collect();
    DerivationSpec {
        pair_index,
        caller: sink_method,
        callee_label: sink.pattern.clone(),
        call_site: sink.snippet.clone(),
        invoker: sink.pattern.clone(),
        bindings,
        target_slots,
        objective: format!(
            "derive the states of the sensitive arguments of `{}`",
            sink.snippet
        ),
    }
}

/// Keys the textual state pruning must not drop: anything bound into the
/// upcoming call's argument expressions.
fn protected_keys(state: &ParameterState, bindings: &[ArgBinding]) -> BTreeSet<StateKey> {
    let mut tokens: BTreeSet<String> = BTreeSet::new();
    for binding in bindings {
        tokens.extend(identifier_tokens(&binding.actual_expression));
    }
    state
        .iter()
        .filter(|(_, entry)| {
            let base = entry.name.split('.').next().unwrap_or(&entry.name);
            tokens.contains(base)
        })
        .map(|(key, _)| key.clone())
        .collect()
}

fn derive_step(
    spec: DerivationSpec<'_>,
    state: &ParameterState,
    rule: &VulnerabilityRule,
    backend: &dyn SolverBackend,
    options: &AnalysisOptions,
    types: &TypeTable,
    trail: &[String],
) -> Result<(TraceStep, ParameterState), PipelineError> {
    let caller_info = &spec.caller.info;
    let mut backend_calls: u32 = 0;
    let mut analyses: Vec<BranchAnalysis> = Vec::new();
    // Branch probing only pays off when its facts reach the context.
    if options.branch_analysis && options.context {
        for root in &spec.caller.branchs {
            let pruned = prune_tree(root, &Slot::Return, &options.prune);
            let category = classify_branch(&pruned.info, rule, types);
            let analysis = analyze_branch(&pruned, category, rule, backend);
            backend_calls += analysis.backend_calls;
            analyses.push(analysis);
        }
    }
    let (working_state, facts, context_text) = if options.context {
        let protected = protected_keys(state, &spec.bindings);
        let pruned_state = prune_parameters(state, caller_info, &protected);
        let seed = identifier_tokens(&spec.call_site);
        let facts = facts_from_analyses(&analyses, caller_info, &seed);
        let text = render_context(&pruned_state, &facts, options.context_budget)?;
        (pruned_state, facts, text)
    } else {
        (ParameterState::new(), Vec::new(), String::new())
    };
    let request = SolverRequest {
        kind: RequestKind::SubtaskDerivation,
        rule_id: rule.id.clone(),
        condition_text: rule.non_exploitable.human_text.clone(),
        caller_code: caller_info.code.clone(),
        member_variables: caller_info.member_variables.clone(),
        call_site: spec.call_site.clone(),
        invoker: spec.invoker.clone(),
        bindings: spec.bindings.clone(),
        target_slots: spec.target_slots.clone(),
        context_text: context_text.clone(),
        context_facts: facts.clone(),
        seed_states: working_state
            .iter()
            .map(|(key, entry)| SeedEntry {
                key: key.clone(),
                name: entry.name.clone(),
                verdict: entry.verdict,
            })
            .collect(),
        objective_text: spec.objective.clone(),
        probe_param: None,
        aux_methods: Vec::new(),
    };
    let response = backend.solve(&request)?;
    backend_calls += 1;
    let transfer = response.transfer.unwrap_or(Transfer::Unknown);
    let mut next_trail = trail.to_vec();
    next_trail.push(spec.call_site.clone());
    let mut next = ParameterState::new();
    for slot in &spec.target_slots {
        let entry = response.entries.iter().find(|e| e.key == slot.key);
        let (verdict, justification) = match entry {
            Some(e) => (e.verdict, e.justification.clone()),
            // An uncovered slot stays Unknown; Unknown still triggers.
            None => (
                StateVerdict::Unknown,
                "the solver reply did not cover this slot".to_string(),
            ),
        };
        next.insert(
            slot.key.clone(),
            StateEntry {
                name: slot.name.clone(),
                verdict,
                justification,
                source_trail: next_trail.clone(),
            },
        );
    }
    let step = TraceStep {
        pair_index: spec.pair_index,
        caller: caller_info.qualified_name(),
        callee: spec.callee_label,
        transfer,
        context_hash: content_hash(&context_text),
        facts,
        state: next.clone(),
        backend_calls,
    };
    Ok((step, next))
}

/// Analyzes one chain end to end and produces its verdict.
pub fn analyze_chain(
    chain: &CallChain,
    registry: &RuleRegistry,
    backend: &dyn SolverBackend,
    options: &AnalysisOptions,
) -> Result<ChainVerdict, PipelineError> {
    let rule = registry.get(&chain.rule)?;
    let types = TypeTable::from_chain(chain);
    let head = &chain.methods[0].info;
    let mut state = if options.context {
        init_source_state(head, rule, &types)?
    } else {
        ParameterState::new()
    };
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut trail: Vec<String> = Vec::new();

    for pair_index in 0..chain.methods.len() - 1 {
        let caller = &chain.methods[pair_index];
        let callee = &chain.methods[pair_index + 1];
        let spec = pair_spec(pair_index, caller, callee, rule, &types)?;
        let call_site = spec.call_site.clone();
        let (step, next) = derive_step(spec, &state, rule, backend, options, &types, &trail)?;
        let transfer = step.transfer;
        trace.push(step);
        trail.push(call_site);
        state = next;
        if transfer == Transfer::Infeasible {
            return Ok(verdict_for(
                chain,
                false,
                VerdictReason::TransferInfeasible,
                state,
                trace,
                None,
            ));
        }
    }

    if let Some(sink) = &chain.sink_call {
        let sink_method = chain.methods.last().expect("chains hold two methods or more");
        let spec = sink_spec(chain.methods.len() - 1, sink_method, sink);
        let (step, next) = derive_step(spec, &state, rule, backend, options, &types, &trail)?;
        let transfer = step.transfer;
        trace.push(step);
        state = next;
        if transfer == Transfer::Infeasible {
            return Ok(verdict_for(
                chain,
                false,
                VerdictReason::TransferInfeasible,
                state,
                trace,
                None,
            ));
        }
    }

    let exploitable = trigger_satisfied(rule, &state)?;
    let reason = if exploitable {
        VerdictReason::TriggerSatisfied
    } else {
        VerdictReason::TriggerUnsatisfied
    };
    let note = exploitable.then(|| witness_note(&state, chain));
    Ok(verdict_for(chain, exploitable, reason, state, trace, note))
}

fn verdict_for(
    chain: &CallChain,
    exploitable: bool,
    reason: VerdictReason,
    sink_state: ParameterState,
    trace: Vec<TraceStep>,
    input_witness_note: Option<String>,
) -> ChainVerdict {
    ChainVerdict {
        chain_id: chain.id.clone(),
        rule_id: chain.rule.clone(),
        exploitable,
        reason,
        sink_state,
        input_witness_note,
        trace,
    }
}

fn witness_note(state: &ParameterState, chain: &CallChain) -> String {
    let names: Vec<String> = state
        .iter()
        .filter(|(_, entry)| atom_true(entry.verdict))
        .map(|(_, entry)| format!("`{}`", entry.name))
        .collect();
    let target = chain
        .sink_call
        .as_ref()
        .map(|s| s.pattern.clone())
        .unwrap_or_else(|| {
            chain
                .methods
                .last()
                .map(|m| m.info.qualified_name())
                .unwrap_or_default()
        });
    format!(
        "a request whose source-read value carries a crafted payload reaches {} through [{}]",
        target,
        names.join(", ")
    )
}

/// Analyzes every chain of a summary, bounded by the configured concurrency.
/// Output ordering is deterministic regardless of scheduling.
pub fn run(
    summary: &CodeInformationSummary,
    registry: &RuleRegistry,
    backend: &dyn SolverBackend,
    options: &AnalysisOptions,
) -> Report {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.max_concurrency.max(1))
        .build()
        .expect("worker pool builds");
    let results: Vec<Result<ChainVerdict, ChainFailure>> = pool.install(|| {
        summary
            .chains
            .par_iter()
            .map(|chain| {
                analyze_chain(chain, registry, backend, options).map_err(|e| ChainFailure {
                    chain_id: chain.id.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    });
    let mut verdicts = Vec::new();
    let mut errors = Vec::new();
    for result in results {
        match result {
            Ok(verdict) => verdicts.push(verdict),
            Err(failure) => errors.push(failure),
        }
    }
    verdicts.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
    errors.sort_by(|a, b| a.chain_id.cmp(&b.chain_id));
    Report {
        backend: backend.name().to_string(),
        branch_analysis: options.branch_analysis,
        context_maintenance: options.context,
        verdicts,
        errors,
    }
}
