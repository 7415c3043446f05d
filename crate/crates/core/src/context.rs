//! Context maintenance: distills caller states and branch analyses into a
//! bounded text block the solver can consume without re-reading whole
//! methods.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::branch::{BranchAnalysis, BranchOutcome};
use crate::frontend::library;
use crate::pipeline::{ParameterState, StateKey};
use crate::rules::FilterCheck;
use crate::summary::MethodInfo;
use crate::textflow::{backward_closure, identifier_tokens};

/// Default character budget for rendered context text.
pub const DEFAULT_CONTEXT_BUDGET: usize = 4000;

/// How a branch method treats the data given to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum FactKind {
    /// Inputs pass through to the result unfiltered.
    DirectAssignment,
    /// Completing the call implies a satisfying filter on the listed params.
    StrictSecurityCheck,
    /// Some inputs are filtered, the listed ones are not.
    UnfilteredSourceJudgment,
}

/// One distilled statement about a branch call inside the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimplifiedFact {
    pub kind: FactKind,
    /// Method the fact is about.
    pub subject: String,
    /// Rendered sentence, ready for the context block.
    pub statement_text: String,
    /// Parameter indices of the subject the fact applies to.
    pub params: Vec<usize>,
    /// Specific filter when one is known; `None` means "validated upstream".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<FilterCheck>,
    /// Call snippet inside the caller, used for placement and retention.
    pub snippet: String,
}

/// Rendering exceeded the budget with lines that may not be dropped.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("context requires {required} chars of undroppable content but the budget is {budget}")]
pub struct BudgetError {
    pub required: usize,
    pub budget: usize,
}

/// Getter-style alias for a member name: `query` is also referenced as
/// `getQuery`.
fn getter_alias(name: &str) -> String {
    let mut chars = name.chars();
    match chars.next() {
        Some(first) => format!("get{}{}", first.to_uppercase(), chars.as_str()),
        None => String::new(),
    }
}

/// Drops caller state entries whose names the caller body never mentions.
/// Keys in `protected` survive regardless; the caller feeding the sink must
/// not lose its sink-bound states to textual pruning.
pub fn prune_parameters(
    state: &ParameterState,
    caller: &MethodInfo,
    protected: &BTreeSet<StateKey>,
) -> ParameterState {
    let tokens = identifier_tokens(&caller.code);
    let mut pruned = ParameterState::new();
    for (key, entry) in state.iter() {
        let mut names = vec![entry.name.clone()];
        if let Some(path) = &key.member_path {
            names.push(path.clone());
            names.push(getter_alias(path));
        }
        if let Some(arg) = caller.args.get(key.arg_index) {
            names.push(arg.name.clone());
        }
        let referenced = names.iter().any(|n| tokens.contains(n));
        if referenced || protected.contains(key) {
            pruned.insert(key.clone(), entry.clone());
        }
    }
    pruned
}

/// Syntactic role of the statement containing a call snippet.
#[derive(Debug, PartialEq, Eq)]
enum StatementRole {
    Condition,
    Assignment { lhs: String },
    Return,
    Throw,
    BareCall,
    NotFound,
}

fn statement_role(code: &str, snippet: &str) -> StatementRole {
    let Some(pos) = code.find(snippet) else {
        return StatementRole::NotFound;
    };
    let start = code[..pos]
        .rfind([';', '{', '}'])
        .map(|i| i + 1)
        .unwrap_or(0);
    let end = code[pos..]
        .find([';', '{', '}'])
        .map(|i| pos + i)
        .unwrap_or(code.len());
    let stmt = code[start..end].trim();
    if stmt.starts_with("if") || stmt.starts_with("} else if") {
        return StatementRole::Condition;
    }
    if stmt.starts_with("return") {
        return StatementRole::Return;
    }
    if stmt.starts_with("throw") {
        return StatementRole::Throw;
    }
    let assigns = crate::textflow::assignments(stmt);
    if let Some(assign) = assigns.first() {
        return StatementRole::Assignment {
            lhs: assign.lhs.clone(),
        };
    }
    StatementRole::BareCall
}

fn render_args(analysis: &BranchAnalysis, params: &[usize]) -> String {
    let named: Vec<String> = params
        .iter()
        .map(|&i| {
            analysis
                .actual_args
                .get(i)
                .cloned()
                .unwrap_or_else(|| format!("arg{i}"))
        })
        .collect();
    named.join(", ")
}

/// Builds a simplified fact from one branch analysis, or nothing when the
/// analysis carries no information worth forwarding.
fn simplify(analysis: &BranchAnalysis) -> Option<SimplifiedFact> {
    let subject = analysis.method_name.clone();
    let call = if analysis.snippet.is_empty() {
        format!("{subject}(...)")
    } else {
        analysis.snippet.clone()
    };
    match &analysis.outcome {
        BranchOutcome::Dataflow { edges } => {
            if edges.is_empty() {
                return None;
            }
            Some(SimplifiedFact {
                kind: FactKind::DirectAssignment,
                subject,
                statement_text: format!("`{call}` propagates its inputs: {}", edges.join(", ")),
                params: Vec::new(),
                check: None,
                snippet: analysis.snippet.clone(),
            })
        }
        BranchOutcome::ParamVerdicts { verdicts } => {
            if verdicts.is_empty() {
                return None;
            }
            let unfiltered: Vec<usize> = verdicts
                .iter()
                .filter(|v| v.reaches_target_unfiltered)
                .map(|v| v.param_index)
                .collect();
            if unfiltered.is_empty() {
                let params: Vec<usize> = verdicts.iter().map(|v| v.param_index).collect();
                let args = render_args(analysis, &params);
                Some(SimplifiedFact {
                    kind: FactKind::StrictSecurityCheck,
                    subject,
                    statement_text: format!(
                        "`{call}` only completes after a validating check on [{args}]"
                    ),
                    params,
                    check: Some(FilterCheck::ContextAssumed),
                    snippet: analysis.snippet.clone(),
                })
            } else if unfiltered.len() == verdicts.len() {
                let args = render_args(analysis, &unfiltered);
                Some(SimplifiedFact {
                    kind: FactKind::DirectAssignment,
                    subject,
                    statement_text: format!("`{call}` passes [{args}] through unfiltered"),
                    params: unfiltered,
                    check: None,
                    snippet: analysis.snippet.clone(),
                })
            } else {
                let args = render_args(analysis, &unfiltered);
                Some(SimplifiedFact {
                    kind: FactKind::UnfilteredSourceJudgment,
                    subject,
                    statement_text: format!(
                        "`{call}` filters some inputs but [{args}] flows through unfiltered"
                    ),
                    params: unfiltered,
                    check: None,
                    snippet: analysis.snippet.clone(),
                })
            }
        }
        BranchOutcome::BooleanCheck {
            guards_condition,
            guarded_params,
        } => {
            if !guards_condition {
                return None;
            }
            let args = render_args(analysis, guarded_params);
            Some(SimplifiedFact {
                kind: FactKind::StrictSecurityCheck,
                subject,
                statement_text: format!(
                    "`{call}` returns true only when [{args}] passed a validating check"
                ),
                params: guarded_params.clone(),
                check: Some(FilterCheck::ContextAssumed),
                snippet: analysis.snippet.clone(),
            })
        }
    }
}

/// Distills branch analyses into retained facts, ordered by call position in
/// the caller body.
///
/// Dropped along the way: methods already modeled by the library table, and
/// calls on statements that cannot influence the relevant dataflow (a bare
/// call whose result is discarded, or an assignment into an irrelevant
/// variable).
pub fn facts_from_analyses(
    analyses: &[BranchAnalysis],
    caller: &MethodInfo,
    relevance_seed: &BTreeSet<String>,
) -> Vec<SimplifiedFact> {
    let known: BTreeSet<String> = library::known_semantics_ids().into_iter().collect();
    let relevant = backward_closure(&caller.code, relevance_seed);
    let mut kept: Vec<(usize, SimplifiedFact)> = Vec::new();
    for analysis in analyses {
        if known.contains(&analysis.qualified_name) || known.contains(&analysis.method_name) {
            continue;
        }
        let Some(fact) = simplify(analysis) else {
            continue;
        };
        let role = statement_role(&caller.code, &fact.snippet);
        let retained = match role {
            StatementRole::Condition | StatementRole::Return | StatementRole::Throw => true,
            StatementRole::Assignment { lhs } => relevant.contains(&lhs),
            // A call whose result is discarded cannot feed the dataflow.
            StatementRole::BareCall | StatementRole::NotFound => false,
        };
        if !retained {
            continue;
        }
        let position = caller.code.find(&fact.snippet).unwrap_or(usize::MAX);
        kept.push((position, fact));
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.subject.cmp(&b.1.subject)));
    kept.into_iter().map(|(_, f)| f).collect()
}

/// Renders states and facts into the bounded context block.
///
/// Droppability under budget pressure, last dropped first: direct
/// assignments, then unfiltered-source judgments. Parameter states and
/// strict security checks are never dropped; when they alone exceed the
/// budget the render fails.
pub fn render_context(
    state: &ParameterState,
    facts: &[SimplifiedFact],
    budget: usize,
) -> Result<String, BudgetError> {
    if state.is_empty() && facts.is_empty() {
        return Ok(String::new());
    }
    let mut state_lines: Vec<String> = Vec::new();
    if !state.is_empty() {
        state_lines.push("Parameter states:".to_string());
        for (key, entry) in state.iter() {
            state_lines.push(format!(
                "- {key} {}: {} ({})",
                entry.name,
                verdict_word(entry.verdict),
                entry.justification
            ));
        }
    }
    let fact_line = |fact: &SimplifiedFact| {
        format!("- [{}] {}: {}", kind_word(fact.kind), fact.subject, fact.statement_text)
    };
    let checks: Vec<String> = facts
        .iter()
        .filter(|f| f.kind == FactKind::StrictSecurityCheck)
        .map(fact_line)
        .collect();
    let judgments: Vec<String> = facts
        .iter()
        .filter(|f| f.kind == FactKind::UnfilteredSourceJudgment)
        .map(fact_line)
        .collect();
    let assignments: Vec<String> = facts
        .iter()
        .filter(|f| f.kind == FactKind::DirectAssignment)
        .map(fact_line)
        .collect();

    let assemble = |judgment_count: usize, assignment_count: usize, facts_header: bool| {
        let mut lines = state_lines.clone();
        let any_facts = !checks.is_empty() || judgment_count > 0 || assignment_count > 0;
        if any_facts && facts_header {
            lines.push("Branch facts:".to_string());
        }
        lines.extend(checks.iter().cloned());
        lines.extend(judgments.iter().take(judgment_count).cloned());
        lines.extend(assignments.iter().take(assignment_count).cloned());
        lines.join("\n")
    };

    let full = assemble(judgments.len(), assignments.len(), true);
    if full.len() <= budget {
        return Ok(full);
    }
    // Drop assignments from the end, then judgments from the end.
    for a in (0..assignments.len()).rev() {
        let text = assemble(judgments.len(), a, true);
        if text.len() <= budget {
            return Ok(text);
        }
    }
    for j in (0..judgments.len()).rev() {
        let text = assemble(j, 0, true);
        if text.len() <= budget {
            return Ok(text);
        }
    }
    let required = assemble(0, 0, true).len();
    Err(BudgetError { required, budget })
}

fn verdict_word(verdict: crate::rules::StateVerdict) -> &'static str {
    match verdict {
        crate::rules::StateVerdict::SatisfiesU => "satisfies the condition",
        crate::rules::StateVerdict::Unknown => "unknown",
        crate::rules::StateVerdict::ViolatesU => "violates the condition",
    }
}

fn kind_word(kind: FactKind) -> &'static str {
    match kind {
        FactKind::DirectAssignment => "direct-assignment",
        FactKind::StrictSecurityCheck => "strict-security-check",
        FactKind::UnfilteredSourceJudgment => "unfiltered-source",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branch::{BranchCategory, ParamVerdict};
    use crate::pipeline::StateEntry;
    use crate::rules::StateVerdict;
    use crate::summary::ArgDecl;

    fn entry(name: &str, verdict: StateVerdict) -> StateEntry {
        StateEntry {
            name: name.to_string(),
            verdict,
            justification: "test".to_string(),
            source_trail: Vec::new(),
        }
    }

    fn caller(code: &str, args: &[(&str, &str)]) -> MethodInfo {
        MethodInfo {
            class_name: "C".to_string(),
            def: "void c()".to_string(),
            code: code.to_string(),
            args: args
                .iter()
                .map(|(n, t)| ArgDecl {
                    name: n.to_string(),
                    ty: t.to_string(),
                })
                .collect(),
            ..MethodInfo::default()
        }
    }

    fn analysis(
        qualified: &str,
        snippet: &str,
        args: &[&str],
        outcome: BranchOutcome,
    ) -> BranchAnalysis {
        let method = qualified.rsplit('.').next().unwrap().to_string();
        BranchAnalysis {
            qualified_name: qualified.to_string(),
            method_name: method,
            category: BranchCategory::CriticalConstructorOrReturner,
            outcome,
            snippet: snippet.to_string(),
            invoker: String::new(),
            actual_args: args.iter().map(|s| s.to_string()).collect(),
            backend_calls: 0,
        }
    }

    fn verdicts(flags: &[bool]) -> BranchOutcome {
        BranchOutcome::ParamVerdicts {
            verdicts: flags
                .iter()
                .enumerate()
                .map(|(i, &unfiltered)| ParamVerdict {
                    param_index: i,
                    reaches_target_unfiltered: unfiltered,
                    via_member: None,
                })
                .collect(),
        }
    }

    #[test]
    fn parameter_pruning_keeps_referenced_and_protected_keys() {
        let mut state = ParameterState::new();
        state.insert(StateKey::param(0), entry("fileName", StateVerdict::ViolatesU));
        state.insert(StateKey::param(1), entry("unused", StateVerdict::Unknown));
        state.insert(
            StateKey::member(2, "query"),
            entry("wrapper", StateVerdict::ViolatesU),
        );
        let caller = caller(
            "String p = getPath(fileName); String q = w.getQuery();",
            &[("fileName", "String"), ("unused", "String"), ("w", "Wrapper")],
        );
        let pruned = prune_parameters(&state, &caller, &BTreeSet::new());
        assert!(pruned.get(&StateKey::param(0)).is_some());
        assert!(pruned.get(&StateKey::param(1)).is_none());
        // Member reached through its getter alias.
        assert!(pruned.get(&StateKey::member(2, "query")).is_some());

        let mut protected = BTreeSet::new();
        protected.insert(StateKey::param(1));
        let pruned = prune_parameters(&state, &caller, &protected);
        assert!(pruned.get(&StateKey::param(1)).is_some());
    }

    #[test]
    fn literal_mentions_do_not_count_as_references() {
        let mut state = ParameterState::new();
        state.insert(StateKey::param(0), entry("token", StateVerdict::ViolatesU));
        let caller = caller(r#"log("token rejected");"#, &[("token", "String")]);
        let pruned = prune_parameters(&state, &caller, &BTreeSet::new());
        assert!(pruned.is_empty());
    }

    #[test]
    fn all_filtered_probes_become_a_strict_security_check() {
        let caller = caller(
            "String path = getPath(fileName); return readFile(path);",
            &[("fileName", "String")],
        );
        let analyses = vec![analysis(
            "C.getPath",
            "getPath(fileName)",
            &["fileName"],
            verdicts(&[false]),
        )];
        let seed: BTreeSet<String> = identifier_tokens("readFile(path)");
        let facts = facts_from_analyses(&analyses, &caller, &seed);
        assert_eq!(facts.len(), 1);
        assert_eq!(facts[0].kind, FactKind::StrictSecurityCheck);
        assert_eq!(facts[0].check, Some(FilterCheck::ContextAssumed));
        assert!(facts[0].statement_text.contains("fileName"));
    }

    #[test]
    fn mixed_probes_list_only_unfiltered_params() {
        let caller = caller(
            "String cmd = join(base, tail); run(cmd);",
            &[("base", "String"), ("tail", "String")],
        );
        let analyses = vec![analysis(
            "C.join",
            "join(base, tail)",
            &["base", "tail"],
            verdicts(&[false, true]),
        )];
        let seed = identifier_tokens("run(cmd)");
        let facts = facts_from_analyses(&analyses, &caller, &seed);
        assert_eq!(facts[0].kind, FactKind::UnfilteredSourceJudgment);
        assert_eq!(facts[0].params, vec![1]);
        assert!(facts[0].statement_text.contains("[tail]"));
        assert!(!facts[0].statement_text.contains("[base"));
    }

    #[test]
    fn known_library_methods_contribute_no_facts() {
        let caller = caller("String t = x.trim(); use(t);", &[("x", "String")]);
        let analyses = vec![analysis(
            "String.trim",
            "x.trim()",
            &[],
            BranchOutcome::Dataflow {
                edges: vec!["P0->RET".to_string()],
            },
        )];
        let seed = identifier_tokens("use(t)");
        assert!(facts_from_analyses(&analyses, &caller, &seed).is_empty());
    }

    #[test]
    fn discarded_result_calls_are_dropped_but_conditions_survive() {
        let caller = caller(
            "audit(fileName); if (check(fileName)) { use(fileName); }",
            &[("fileName", "String")],
        );
        let analyses = vec![
            analysis("C.audit", "audit(fileName)", &["fileName"], verdicts(&[true])),
            analysis("C.check", "check(fileName)", &["fileName"], verdicts(&[false])),
        ];
        let seed = identifier_tokens("use(fileName)");
        let facts = facts_from_analyses(&analyses, &caller, &seed);
        assert_eq!(facts.len(), 1);
        assert_eq!(facts[0].subject, "check");
    }

    #[test]
    fn irrelevant_assignments_are_dropped() {
        let caller = caller(
            "String banner = decorate(fileName); String path = getPath(fileName); return readFile(path);",
            &[("fileName", "String")],
        );
        let analyses = vec![
            analysis("C.decorate", "decorate(fileName)", &["fileName"], verdicts(&[true])),
            analysis("C.getPath", "getPath(fileName)", &["fileName"], verdicts(&[true])),
        ];
        let seed = identifier_tokens("readFile(path)");
        let facts = facts_from_analyses(&analyses, &caller, &seed);
        assert_eq!(facts.len(), 1);
        assert_eq!(facts[0].subject, "getPath");
    }

    #[test]
    fn facts_follow_call_order_in_the_caller() {
        let caller = caller(
            "String a = first(x); String b = second(a); return sink(b);",
            &[("x", "String")],
        );
        let analyses = vec![
            analysis("C.second", "second(a)", &["a"], verdicts(&[true])),
            analysis("C.first", "first(x)", &["x"], verdicts(&[true])),
        ];
        let seed = identifier_tokens("sink(b)");
        let facts = facts_from_analyses(&analyses, &caller, &seed);
        let subjects: Vec<&str> = facts.iter().map(|f| f.subject.as_str()).collect();
        assert_eq!(subjects, ["first", "second"]);
    }

    fn sample_fact(kind: FactKind, subject: &str) -> SimplifiedFact {
        SimplifiedFact {
            kind,
            subject: subject.to_string(),
            statement_text: format!("`{subject}(x)` sample statement"),
            params: vec![0],
            check: None,
            snippet: format!("{subject}(x)"),
        }
    }

    #[test]
    fn render_orders_states_before_facts() {
        let mut state = ParameterState::new();
        state.insert(StateKey::param(0), entry("fileName", StateVerdict::ViolatesU));
        let facts = vec![sample_fact(FactKind::StrictSecurityCheck, "getPath")];
        let text = render_context(&state, &facts, DEFAULT_CONTEXT_BUDGET).unwrap();
        let state_pos = text.find("Parameter states:").unwrap();
        let facts_pos = text.find("Branch facts:").unwrap();
        assert!(state_pos < facts_pos);
        assert!(text.contains("- arg0 fileName: violates the condition (test)"));
        assert!(text.contains("- [strict-security-check] getPath:"));
    }

    #[test]
    fn empty_inputs_render_to_an_empty_block() {
        assert_eq!(
            render_context(&ParameterState::new(), &[], DEFAULT_CONTEXT_BUDGET).unwrap(),
            ""
        );
    }

    #[test]
    fn budget_drops_assignments_then_judgments_but_never_checks() {
        let mut state = ParameterState::new();
        state.insert(StateKey::param(0), entry("x", StateVerdict::ViolatesU));
        let facts = vec![
            sample_fact(FactKind::DirectAssignment, "asgnOne"),
            sample_fact(FactKind::StrictSecurityCheck, "checkOne"),
            sample_fact(FactKind::UnfilteredSourceJudgment, "judgeOne"),
            sample_fact(FactKind::DirectAssignment, "asgnTwo"),
        ];
        let full = render_context(&state, &facts, 100000).unwrap();
        assert!(full.contains("asgnOne") && full.contains("asgnTwo"));

        let without_second_assignment = full.len() - 1;
        let text = render_context(&state, &facts, without_second_assignment).unwrap();
        assert!(text.contains("asgnOne"));
        assert!(!text.contains("asgnTwo"));
        assert!(text.contains("checkOne"));
        assert!(text.contains("judgeOne"));

        let tight = render_context(&state, &facts, 150).unwrap();
        assert!(!tight.contains("asgnOne"));
        assert!(tight.contains("checkOne"));

        let err = render_context(&state, &facts, 10).unwrap_err();
        assert!(err.required > err.budget);
        assert_eq!(err.budget, 10);
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut state = ParameterState::new();
        state.insert(StateKey::param(0), entry("a", StateVerdict::Unknown));
        state.insert(StateKey::param(1), entry("b", StateVerdict::ViolatesU));
        let facts = vec![
            sample_fact(FactKind::StrictSecurityCheck, "one"),
            sample_fact(FactKind::DirectAssignment, "two"),
        ];
        let first = render_context(&state, &facts, DEFAULT_CONTEXT_BUDGET).unwrap();
        let second = render_context(&state, &facts, DEFAULT_CONTEXT_BUDGET).unwrap();
        assert_eq!(first, second);
    }
}
