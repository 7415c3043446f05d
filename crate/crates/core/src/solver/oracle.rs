//! Deterministic solving backend: a small abstract interpreter over the
//! mini-language.
//!
//! The oracle re-parses the request's method code inside a synthetic class,
//! walks it path-sensitively (the grammar has no loops), and evaluates the
//! rule's condition over abstract string values. Anything it cannot parse or
//! bound degrades to Unknown, never to a silent "safe".

use std::collections::BTreeMap;

use serde_json::json;

use crate::context::{FactKind, SimplifiedFact};
use crate::frontend::ast::{BinOp, Block, Expr, MethodDecl, MiniProgram, Stmt};
use crate::frontend::{library, parse_program};
use crate::pipeline::StateKey;
use crate::rules::{
    AbstractValue, FilterCheck, RuleRegistry, StateVerdict, VulnerabilityRule,
    DEFAULT_SOURCE_PATTERNS,
};
use crate::summary::TypeTable;

use super::{
    RequestKind, ResponseEntry, SolverBackend, SolverError, SolverRequest, SolverResponse,
    Transfer,
};

/// Nested user-method interpretation bound; beyond it values degrade to
/// Unknown.
const MAX_CALL_DEPTH: u32 = 4;

/// Regexes the oracle recognizes as alphanumeric whitelists.
const ALNUM_REGEXES: &[&str] = &[
    "[a-zA-Z0-9]+",
    "[a-zA-Z0-9_]+",
    "[a-z0-9]+",
    "[A-Za-z0-9]*",
    "\\w+",
];

pub struct OracleBackend {
    rules: RuleRegistry,
}

impl Default for OracleBackend {
    fn default() -> OracleBackend {
        OracleBackend::new()
    }
}

impl OracleBackend {
    pub fn new() -> OracleBackend {
        OracleBackend {
            rules: RuleRegistry::builtin(),
        }
    }
}

impl SolverBackend for OracleBackend {
    fn solve(&self, request: &SolverRequest) -> Result<SolverResponse, SolverError> {
        Ok(self.answer(request))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

type Env = BTreeMap<String, AbstractValue>;

#[derive(Debug, Clone)]
struct PathState {
    env: Env,
    /// Filter refinements active on this path, as (variable, check).
    refinements: Vec<(String, FilterCheck)>,
}

#[derive(Debug)]
struct ReturnSite {
    value: AbstractValue,
    /// Constant boolean result when the returned expression folds.
    bool_const: Option<bool>,
    /// Refinements that hold when the returned expression is true.
    true_refinements: Vec<(String, FilterCheck)>,
}

#[derive(Debug)]
struct WalkResult {
    fallthrough: Option<PathState>,
    returns: Vec<ReturnSite>,
}

struct Interp<'a> {
    program: &'a MiniProgram,
    rule: Option<&'a VulnerabilityRule>,
    facts: &'a [SimplifiedFact],
    /// Call expression whose argument values get snapshotted.
    call_site: &'a str,
    snapshots: Vec<Vec<AbstractValue>>,
    depth: u32,
}

impl OracleBackend {
    fn answer(&self, request: &SolverRequest) -> SolverResponse {
        let rule = self.rules.get(&request.rule_id).ok();
        let source = synthetic_source(request);
        let program = match parse_program(&source) {
            Ok(program) => program,
            Err(err) => {
                return unknown_response(request, &format!("unsupported construct: {err}"))
            }
        };
        let Some(method) = program.classes.first().and_then(|c| c.methods.first()) else {
            return unknown_response(request, "no method body to analyze");
        };
        // Clones detach the borrow of `program` from the interpreter.
        let method = method.clone();
        match request.kind {
            RequestKind::SubtaskDerivation => self.subtask(request, rule, &program, &method),
            RequestKind::BranchObjective => self.probe(request, rule, &program, &method),
        }
    }

    fn subtask(
        &self,
        request: &SolverRequest,
        rule: Option<&VulnerabilityRule>,
        program: &MiniProgram,
        method: &MethodDecl,
    ) -> SolverResponse {
        if request.call_site.is_empty() {
            return unknown_response(request, "no call site to derive states at");
        }
        let types = TypeTable::new();
        let mut env = Env::new();
        for (i, param) in method.params.iter().enumerate() {
            let seeds: Vec<AbstractValue> = request
                .seed_states
                .iter()
                .filter(|s| s.key.arg_index == i)
                .map(|s| verdict_value(s.verdict))
                .collect();
            let value = if seeds.is_empty() {
                default_param_value(&param.ty, rule, &types)
            } else {
                join_all(seeds)
            };
            env.insert(param.name.clone(), value);
        }
        for member in &request.member_variables {
            env.entry(member.name.clone())
                .or_insert(AbstractValue::Unknown);
        }
        let mut interp = Interp {
            program,
            rule,
            facts: &request.context_facts,
            call_site: &request.call_site,
            snapshots: Vec::new(),
            depth: 0,
        };
        interp.walk_block(
            &method.body,
            PathState {
                env,
                refinements: Vec::new(),
            },
        );
        let transfer = if interp.snapshots.is_empty() {
            Transfer::Infeasible
        } else {
            Transfer::Feasible
        };
        let mut entries = Vec::new();
        for slot in &request.target_slots {
            let value = if interp.snapshots.is_empty() {
                AbstractValue::Unknown
            } else {
                let per_hit: Vec<AbstractValue> = interp
                    .snapshots
                    .iter()
                    .map(|args| {
                        args.get(slot.key.arg_index)
                            .cloned()
                            .unwrap_or(AbstractValue::Unknown)
                    })
                    .collect();
                join_all(per_hit)
            };
            let verdict = rule
                .map(|r| r.non_exploitable.evaluate(&value))
                .unwrap_or(StateVerdict::Unknown);
            entries.push(ResponseEntry {
                key: slot.key.clone(),
                verdict,
                justification: value.describe(),
            });
        }
        respond(Some(transfer), entries)
    }

    fn probe(
        &self,
        request: &SolverRequest,
        rule: Option<&VulnerabilityRule>,
        program: &MiniProgram,
        method: &MethodDecl,
    ) -> SolverResponse {
        let mut env = Env::new();
        for (i, param) in method.params.iter().enumerate() {
            let value = match request.probe_param {
                Some(k) if i == k => AbstractValue::AttackerControlled,
                Some(_) => AbstractValue::Literal(String::new()),
                // Guard probes taint everything so filters are observable.
                None => AbstractValue::AttackerControlled,
            };
            env.insert(param.name.clone(), value);
        }
        for member in &request.member_variables {
            env.entry(member.name.clone())
                .or_insert(AbstractValue::Unknown);
        }
        let mut interp = Interp {
            program,
            rule,
            facts: &request.context_facts,
            call_site: "",
            snapshots: Vec::new(),
            depth: 0,
        };
        let walk = interp.walk_block(
            &method.body,
            PathState {
                env,
                refinements: Vec::new(),
            },
        );
        match request.probe_param {
            Some(k) => {
                let value = probe_result_value(&walk, request);
                let verdict = rule
                    .map(|r| r.non_exploitable.evaluate(&value))
                    .unwrap_or(StateVerdict::Unknown);
                respond(
                    None,
                    vec![ResponseEntry {
                        key: StateKey::param(k),
                        verdict,
                        justification: value.describe(),
                    }],
                )
            }
            None => {
                let entries = guard_entries(&walk, method, rule);
                respond(None, entries)
            }
        }
    }
}

/// Result value of a parameter probe: the join of returned values, falling
/// back to final member values for constructors and void methods. A method
/// that never lets the data escape yields an empty literal, which satisfies
/// every condition.
fn probe_result_value(walk: &WalkResult, request: &SolverRequest) -> AbstractValue {
    if !walk.returns.is_empty() {
        return join_all(walk.returns.iter().map(|r| r.value.clone()).collect());
    }
    if let Some(state) = &walk.fallthrough {
        let members: Vec<AbstractValue> = request
            .member_variables
            .iter()
            .filter_map(|m| state.env.get(&m.name).cloned())
            .filter(|v| *v != AbstractValue::Unknown)
            .collect();
        if !members.is_empty() {
            return join_all(members);
        }
    }
    AbstractValue::Literal(String::new())
}

/// Parameters guarded on every path that can return true, restricted to
/// checks the rule accepts.
fn guard_entries(
    walk: &WalkResult,
    method: &MethodDecl,
    rule: Option<&VulnerabilityRule>,
) -> Vec<ResponseEntry> {
    let Some(rule) = rule else {
        return Vec::new();
    };
    let true_sites: Vec<&ReturnSite> = walk
        .returns
        .iter()
        .filter(|r| r.bool_const != Some(false))
        .collect();
    if true_sites.is_empty() {
        return Vec::new();
    }
    let param_index = |name: &str| method.params.iter().position(|p| p.name == name);
    let mut guarded: Option<Vec<usize>> = None;
    for site in &true_sites {
        let mut site_params: Vec<usize> = site
            .true_refinements
            .iter()
            .filter(|(_, check)| rule.non_exploitable.satisfying_checks.contains(check))
            .filter_map(|(name, _)| param_index(name))
            .collect();
        site_params.sort_unstable();
        site_params.dedup();
        guarded = Some(match guarded {
            None => site_params,
            Some(prev) => prev.into_iter().filter(|p| site_params.contains(p)).collect(),
        });
    }
    guarded
        .unwrap_or_default()
        .into_iter()
        .map(|i| ResponseEntry {
            key: StateKey::param(i),
            verdict: StateVerdict::SatisfiesU,
            justification: format!(
                "returning true implies `{}` passed a satisfying filter",
                method.params[i].name
            ),
        })
        .collect()
}

/// Constructors only parse inside a class of the same name, so the wrapper
/// class is named after the method when it is constructor-shaped, and
/// constructor-shaped helpers of other names get their own class blocks.
fn synthetic_source(request: &SolverRequest) -> String {
    let main_class = constructor_name(&request.caller_code).unwrap_or_else(|| "__Solver".to_string());
    let mut source = format!("class {main_class} {{\n");
    for member in &request.member_variables {
        source.push_str(&format!("    {} {};\n", member.ty, member.name));
    }
    source.push_str(&request.caller_code);
    source.push('\n');
    let mut hoisted = String::new();
    for aux in &request.aux_methods {
        match constructor_name(&aux.code) {
            Some(name) if name != main_class => {
                hoisted.push_str(&format!("class {name} {{\n{}\n}}\n", aux.code));
            }
            _ => {
                source.push_str(&aux.code);
                source.push('\n');
            }
        }
    }
    source.push_str("}\n");
    source.push_str(&hoisted);
    source
}

/// Name of a constructor-shaped method body: after any modifiers, a lone
/// identifier directly followed by an opening parenthesis.
fn constructor_name(code: &str) -> Option<String> {
    use crate::frontend::lexer::{tokenize, TokenKind};
    let modifiers = ["public", "private", "protected", "static", "final"];
    let tokens = tokenize(code).ok()?;
    let mut it = tokens
        .iter()
        .skip_while(|t| matches!(&t.kind, TokenKind::Ident(name) if modifiers.contains(&name.as_str())));
    let name = match &it.next()?.kind {
        TokenKind::Ident(name) => name.clone(),
        _ => return None,
    };
    match it.next()?.kind {
        TokenKind::LParen => Some(name),
        _ => None,
    }
}

fn verdict_value(verdict: StateVerdict) -> AbstractValue {
    match verdict {
        StateVerdict::ViolatesU => AbstractValue::AttackerControlled,
        StateVerdict::SatisfiesU => AbstractValue::filtered(
            FilterCheck::ContextAssumed,
            AbstractValue::AttackerControlled,
        ),
        StateVerdict::Unknown => AbstractValue::Unknown,
    }
}

/// Unseeded parameters: critical types could hold anything, benign plumbing
/// types are inert, and unrecognized types stay Unknown.
fn default_param_value(
    ty: &str,
    rule: Option<&VulnerabilityRule>,
    types: &TypeTable,
) -> AbstractValue {
    if let Some(rule) = rule {
        if types.is_critical(ty, &rule.critical_types) {
            return AbstractValue::Unknown;
        }
    }
    if types.is_primitive(ty) || types.is_opaque(ty) {
        return AbstractValue::Literal(String::new());
    }
    AbstractValue::Unknown
}

fn respond(transfer: Option<Transfer>, entries: Vec<ResponseEntry>) -> SolverResponse {
    let raw = render_raw(transfer, &entries);
    SolverResponse {
        transfer,
        entries,
        raw,
    }
}

/// Renders the reply in the same JSON shape remote solvers use.
fn render_raw(transfer: Option<Transfer>, entries: &[ResponseEntry]) -> String {
    let states: Vec<serde_json::Value> = entries
        .iter()
        .map(|e| {
            let slot: serde_json::Value = match &e.key.member_path {
                Some(path) => json!(format!("{}.{}", e.key.arg_index, path)),
                None => json!(e.key.arg_index),
            };
            json!({
                "slot": slot,
                "verdict": e.verdict,
                "justification": e.justification,
            })
        })
        .collect();
    let mut reply = json!({ "states": states });
    if let Some(transfer) = transfer {
        reply["transfer"] = json!(transfer);
    }
    serde_json::to_string(&reply).expect("reply serializes")
}

fn unknown_response(request: &SolverRequest, reason: &str) -> SolverResponse {
    let entries: Vec<ResponseEntry> = request
        .target_slots
        .iter()
        .map(|slot| ResponseEntry {
            key: slot.key.clone(),
            verdict: StateVerdict::Unknown,
            justification: reason.to_string(),
        })
        .collect();
    let transfer = match request.kind {
        RequestKind::SubtaskDerivation => Some(Transfer::Unknown),
        RequestKind::BranchObjective => None,
    };
    respond(transfer, entries)
}

/// Join toward the worst case: attacker control dominates, then Unknown;
/// literals are absorbed by anything; differing filters lose their identity.
fn join(a: AbstractValue, b: AbstractValue) -> AbstractValue {
    use AbstractValue::*;
    if a == b {
        return a;
    }
    match (a, b) {
        (AttackerControlled, _) | (_, AttackerControlled) => AttackerControlled,
        (Unknown, _) | (_, Unknown) => Unknown,
        (Literal(_), other) | (other, Literal(_)) => other,
        (
            FilteredBy {
                check: c1,
                inner: i1,
            },
            FilteredBy {
                check: c2,
                inner: i2,
            },
        ) if c1 == c2 => FilteredBy {
            check: c1,
            inner: Box::new(join(*i1, *i2)),
        },
        _ => Unknown,
    }
}

fn join_all(values: Vec<AbstractValue>) -> AbstractValue {
    values
        .into_iter()
        .reduce(join)
        .unwrap_or(AbstractValue::Literal(String::new()))
}

fn concat(a: AbstractValue, b: AbstractValue) -> AbstractValue {
    let mut parts = Vec::new();
    let mut push = |v: AbstractValue| match v {
        AbstractValue::Concat(inner) => parts.extend(inner),
        other => parts.push(other),
    };
    push(a);
    push(b);
    AbstractValue::Concat(parts)
}

/// What neutralizing this replace/contains target amounts to.
/// Replacement targets that strip every non-alphanumeric character.
const NEG_ALNUM_TARGETS: &[&str] = &["[^a-zA-Z0-9]", "[^A-Za-z0-9]", "[^a-zA-Z0-9_]", "\\W"];

fn classify_filter_target(target: &str) -> Option<FilterCheck> {
    if NEG_ALNUM_TARGETS.contains(&target) {
        return Some(FilterCheck::AlphanumericOnly);
    }
    if target.contains("..") {
        return Some(FilterCheck::NoDotDot);
    }
    if target.contains('\'') || target.contains('"') {
        return Some(FilterCheck::SqlQuoteNeutralized);
    }
    if target.chars().any(|c| ";|&`$".contains(c)) {
        return Some(FilterCheck::ShellMetaNeutralized);
    }
    None
}

fn literal_of(expr: &Expr) -> Option<&str> {
    match expr {
        Expr::StringLit(s, _) => Some(s),
        _ => None,
    }
}

impl<'a> Interp<'a> {
    fn walk_block(&mut self, block: &Block, state: PathState) -> WalkResult {
        let mut current = Some(state);
        let mut returns = Vec::new();
        for stmt in &block.stmts {
            let Some(state) = current.take() else {
                break;
            };
            match stmt {
                Stmt::Local { name, init, .. } => {
                    let value = init
                        .as_ref()
                        .map(|e| self.eval(e, &state.env))
                        .unwrap_or(AbstractValue::Literal(String::new()));
                    let mut next = state;
                    next.env.insert(name.clone(), value);
                    current = Some(next);
                }
                Stmt::Assign { target, value, .. } => {
                    let v = self.eval(value, &state.env);
                    let mut next = state;
                    let name = match target {
                        crate::frontend::ast::AssignTarget::Var(n) => n.clone(),
                        crate::frontend::ast::AssignTarget::Field { field, .. } => field.clone(),
                    };
                    next.env.insert(name, v);
                    current = Some(next);
                }
                Stmt::Expr { expr, .. } => {
                    self.eval(expr, &state.env);
                    current = Some(state);
                }
                Stmt::Return { value, .. } => {
                    let site = match value {
                        None => ReturnSite {
                            value: AbstractValue::Literal(String::new()),
                            bool_const: None,
                            true_refinements: state.refinements.clone(),
                        },
                        Some(expr) => {
                            let v = self.eval(expr, &state.env);
                            let bool_const = self.eval_bool(expr, &state.env);
                            let (then_state, _) = self.refine(expr, &state);
                            ReturnSite {
                                value: v,
                                bool_const,
                                true_refinements: then_state.refinements,
                            }
                        }
                    };
                    returns.push(site);
                    current = None;
                }
                Stmt::Throw { value, .. } => {
                    self.eval(value, &state.env);
                    current = None;
                }
                Stmt::If {
                    cond,
                    then_block,
                    else_block,
                    ..
                } => {
                    self.eval(cond, &state.env);
                    let folded = self.eval_bool(cond, &state.env);
                    let (then_state, else_state) = self.refine(cond, &state);
                    match folded {
                        Some(true) => {
                            let result = self.walk_block(then_block, then_state);
                            returns.extend(result.returns);
                            current = result.fallthrough;
                        }
                        Some(false) => match else_block {
                            Some(block) => {
                                let result = self.walk_block(block, else_state);
                                returns.extend(result.returns);
                                current = result.fallthrough;
                            }
                            None => current = Some(else_state),
                        },
                        None => {
                            let then_result = self.walk_block(then_block, then_state);
                            let else_result = match else_block {
                                Some(block) => self.walk_block(block, else_state),
                                None => WalkResult {
                                    fallthrough: Some(else_state),
                                    returns: Vec::new(),
                                },
                            };
                            returns.extend(then_result.returns);
                            returns.extend(else_result.returns);
                            current = match (then_result.fallthrough, else_result.fallthrough) {
                                (None, None) => None,
                                (Some(s), None) | (None, Some(s)) => Some(s),
                                (Some(a), Some(b)) => Some(PathState {
                                    env: join_envs(&a.env, &b.env),
                                    // Arm-local refinements no longer hold.
                                    refinements: state.refinements.clone(),
                                }),
                            };
                        }
                    }
                }
            }
        }
        WalkResult {
            fallthrough: current,
            returns,
        }
    }

    fn eval(&mut self, expr: &Expr, env: &Env) -> AbstractValue {
        match expr {
            Expr::StringLit(s, _) => AbstractValue::Literal(s.clone()),
            Expr::IntLit(..) | Expr::BoolLit(..) | Expr::This(_) => {
                AbstractValue::Literal(String::new())
            }
            Expr::Var(name, _) => env.get(name).cloned().unwrap_or(AbstractValue::Unknown),
            Expr::Field { object, name, .. } => match env.get(name) {
                Some(value) => value.clone(),
                None => self.eval(object, env),
            },
            Expr::Not { expr, .. } => {
                self.eval(expr, env);
                AbstractValue::Literal(String::new())
            }
            Expr::Binary { op, lhs, rhs, .. } => {
                let l = self.eval(lhs, env);
                let r = self.eval(rhs, env);
                match op {
                    BinOp::Add => concat(l, r),
                    _ => AbstractValue::Literal(String::new()),
                }
            }
            Expr::New {
                class, args, span, ..
            } => self.eval_call(None, class, args, span.slice(&self.program.source), true, env),
            Expr::Call {
                receiver,
                name,
                args,
                span,
            } => {
                let text = span.slice(&self.program.source);
                self.eval_call(receiver.as_deref(), name, args, text, false, env)
            }
        }
    }

    fn eval_call(
        &mut self,
        receiver: Option<&Expr>,
        name: &str,
        args: &[Expr],
        text: &str,
        is_new: bool,
        env: &Env,
    ) -> AbstractValue {
        let receiver_value = receiver.map(|r| self.eval(r, env));
        let arg_values: Vec<AbstractValue> = args.iter().map(|a| self.eval(a, env)).collect();
        if !self.call_site.is_empty() && text == self.call_site {
            self.snapshots.push(arg_values.clone());
        }

        // Source patterns outrank every other model.
        let is_source = match self.rule {
            Some(rule) => rule.is_source("", name),
            None => DEFAULT_SOURCE_PATTERNS.contains(&name),
        };
        if is_source && !is_new {
            return AbstractValue::AttackerControlled;
        }

        if let Some(fact) = self.find_fact(text, name) {
            return apply_fact(fact, &arg_values, receiver_value);
        }

        if let Some(method) = self.find_user_method(name, is_new) {
            if self.depth >= MAX_CALL_DEPTH {
                return AbstractValue::Unknown;
            }
            return self.interpret_method(&method, &arg_values);
        }

        if !is_new {
            if let Some(value) =
                self.library_semantics(name, receiver, receiver_value.clone(), args, &arg_values, env)
            {
                return value;
            }
        }

        // Unknown callee: conservative passthrough of everything it saw.
        let mut parts = arg_values;
        if let Some(r) = receiver_value {
            parts.push(r);
        }
        join_all(parts)
    }

    /// Facts are matched by exact call text first, then by subject name.
    fn find_fact(&self, call_text: &str, name: &str) -> Option<&'a SimplifiedFact> {
        self.facts
            .iter()
            .find(|f| !f.snippet.is_empty() && f.snippet == call_text)
            .or_else(|| self.facts.iter().find(|f| f.subject == name))
    }

    fn find_user_method(&self, name: &str, is_new: bool) -> Option<MethodDecl> {
        let lookup = if is_new { "new" } else { name };
        for class in &self.program.classes {
            if is_new && class.name != name {
                continue;
            }
            if let Some(method) = class.methods.iter().find(|m| m.lookup_name() == lookup) {
                return Some(method.clone());
            }
        }
        None
    }

    fn interpret_method(&mut self, method: &MethodDecl, args: &[AbstractValue]) -> AbstractValue {
        let mut env = Env::new();
        for (i, param) in method.params.iter().enumerate() {
            env.insert(
                param.name.clone(),
                args.get(i).cloned().unwrap_or(AbstractValue::Unknown),
            );
        }
        self.depth += 1;
        let saved_site = self.call_site;
        self.call_site = "";
        let walk = self.walk_block(
            &method.body,
            PathState {
                env,
                refinements: Vec::new(),
            },
        );
        self.call_site = saved_site;
        self.depth -= 1;
        if !walk.returns.is_empty() {
            return join_all(walk.returns.into_iter().map(|r| r.value).collect());
        }
        if method.is_constructor {
            // The constructed object carries whatever its arguments carried.
            return join_all(args.to_vec());
        }
        AbstractValue::Literal(String::new())
    }

    fn library_semantics(
        &mut self,
        name: &str,
        receiver: Option<&Expr>,
        receiver_value: Option<AbstractValue>,
        args: &[Expr],
        arg_values: &[AbstractValue],
        env: &Env,
    ) -> Option<AbstractValue> {
        match name {
            "contains" | "equals" | "equalsIgnoreCase" | "startsWith" | "endsWith" | "matches"
            | "isEmpty"
                if receiver.is_some() =>
            {
                Some(AbstractValue::Literal(String::new()))
            }
            "replace" | "replaceAll" if receiver.is_some() && args.len() == 2 => {
                let recv = receiver_value.unwrap_or(AbstractValue::Unknown);
                let filtered = match literal_of(&args[0]).and_then(classify_filter_target) {
                    Some(check) => AbstractValue::filtered(check, recv),
                    None => recv,
                };
                Some(join(filtered, arg_values[1].clone()))
            }
            _ => {
                let receiver_class = receiver.and_then(|r| match r {
                    Expr::Var(v, _) if !env.contains_key(v) => Some(v.as_str()),
                    _ => None,
                });
                let model = library::lookup(receiver_class, name)?;
                Some(match model.propagation {
                    library::Propagation::None => AbstractValue::Literal(String::new()),
                    library::Propagation::Receiver => {
                        receiver_value.unwrap_or(AbstractValue::Unknown)
                    }
                    library::Propagation::Args => join_all(arg_values.to_vec()),
                    library::Propagation::ReceiverAndArgs => {
                        let mut parts = arg_values.to_vec();
                        if let Some(r) = receiver_value {
                            parts.push(r);
                        }
                        join_all(parts)
                    }
                    library::Propagation::ReceiverAndArg(i) => {
                        let mut parts = Vec::new();
                        if let Some(r) = receiver_value {
                            parts.push(r);
                        }
                        if let Some(v) = arg_values.get(i) {
                            parts.push(v.clone());
                        }
                        join_all(parts)
                    }
                })
            }
        }
    }

    /// Constant-folds a boolean expression when the abstract values pin it.
    fn eval_bool(&self, expr: &Expr, env: &Env) -> Option<bool> {
        match expr {
            Expr::BoolLit(b, _) => Some(*b),
            Expr::Not { expr, .. } => self.eval_bool(expr, env).map(|b| !b),
            Expr::Binary { op, lhs, rhs, .. } => match op {
                BinOp::And => match (self.eval_bool(lhs, env), self.eval_bool(rhs, env)) {
                    (Some(false), _) | (_, Some(false)) => Some(false),
                    (Some(true), Some(true)) => Some(true),
                    _ => None,
                },
                BinOp::Or => match (self.eval_bool(lhs, env), self.eval_bool(rhs, env)) {
                    (Some(true), _) | (_, Some(true)) => Some(true),
                    (Some(false), Some(false)) => Some(false),
                    _ => None,
                },
                _ => None,
            },
            Expr::Call {
                receiver: Some(receiver),
                name,
                args,
                ..
            } => {
                let recv = pure_value(receiver, env)?;
                match (name.as_str(), args.first()) {
                    ("contains", Some(arg)) => {
                        let target = literal_of(arg)?;
                        match recv {
                            AbstractValue::Literal(l) => Some(l.contains(target)),
                            AbstractValue::FilteredBy { check, .. } => {
                                // A value already filtered for this target
                                // cannot contain it.
                                if classify_filter_target(target) == Some(check) {
                                    Some(false)
                                } else {
                                    None
                                }
                            }
                            _ => None,
                        }
                    }
                    ("equals", Some(arg)) => match (recv, literal_of(arg)) {
                        (AbstractValue::Literal(l), Some(s)) => Some(l == s),
                        _ => None,
                    },
                    ("isEmpty", None) => match recv {
                        AbstractValue::Literal(l) => Some(l.is_empty()),
                        _ => None,
                    },
                    ("startsWith", Some(arg)) => match (recv, literal_of(arg)) {
                        (AbstractValue::Literal(l), Some(s)) => Some(l.starts_with(s)),
                        _ => None,
                    },
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Splits a path state on a condition: (state if true, state if false).
    fn refine(&self, cond: &Expr, state: &PathState) -> (PathState, PathState) {
        match cond {
            Expr::Not { expr, .. } => {
                let (t, f) = self.refine(expr, state);
                (f, t)
            }
            Expr::Binary { op, lhs, rhs, .. } => match op {
                BinOp::And => {
                    let (t1, _) = self.refine(lhs, state);
                    let (t2, _) = self.refine(rhs, &t1);
                    (t2, state.clone())
                }
                BinOp::Or => {
                    let (_, f1) = self.refine(lhs, state);
                    let (_, f2) = self.refine(rhs, &f1);
                    (state.clone(), f2)
                }
                _ => (state.clone(), state.clone()),
            },
            Expr::Call {
                receiver,
                name,
                args,
                span,
            } => {
                let var = receiver.as_deref().and_then(|r| match r {
                    Expr::Var(v, _) => Some(v.clone()),
                    _ => None,
                });
                match (name.as_str(), args.first()) {
                    ("contains", Some(arg)) => {
                        // The false arm knows the target is absent.
                        let refined = var.zip(literal_of(arg).and_then(classify_filter_target));
                        match refined {
                            Some((v, check)) => {
                                (state.clone(), apply_refinement(state, &v, check, None))
                            }
                            None => (state.clone(), state.clone()),
                        }
                    }
                    ("equals", Some(arg)) => {
                        let refined = match (&var, literal_of(arg)) {
                            (Some(v), Some(s)) => Some((v.clone(), s.to_string())),
                            _ => match (receiver.as_deref().and_then(literal_of), args.first()) {
                                // literal.equals(var) form
                                (Some(s), Some(Expr::Var(v, _))) => {
                                    Some((v.clone(), s.to_string()))
                                }
                                _ => None,
                            },
                        };
                        match refined {
                            Some((v, s)) => (
                                apply_refinement(
                                    state,
                                    &v,
                                    FilterCheck::EqualsWhitelist,
                                    Some(AbstractValue::Literal(s)),
                                ),
                                state.clone(),
                            ),
                            None => (state.clone(), state.clone()),
                        }
                    }
                    ("equalsIgnoreCase", Some(arg)) if literal_of(arg).is_some() => match var {
                        Some(v) => (
                            apply_refinement(state, &v, FilterCheck::EqualsWhitelist, None),
                            state.clone(),
                        ),
                        None => (state.clone(), state.clone()),
                    },
                    ("startsWith", Some(arg)) if literal_of(arg).is_some() => match var {
                        Some(v) => (
                            apply_refinement(state, &v, FilterCheck::PrefixWhitelist, None),
                            state.clone(),
                        ),
                        None => (state.clone(), state.clone()),
                    },
                    ("matches", Some(arg)) => {
                        let alnum = literal_of(arg)
                            .map(|r| ALNUM_REGEXES.contains(&r))
                            .unwrap_or(false);
                        match (var, alnum) {
                            (Some(v), true) => (
                                apply_refinement(state, &v, FilterCheck::AlphanumericOnly, None),
                                state.clone(),
                            ),
                            _ => (state.clone(), state.clone()),
                        }
                    }
                    ("isEmpty", None) => match var {
                        Some(v) => (
                            apply_refinement(
                                state,
                                &v,
                                FilterCheck::EqualsWhitelist,
                                Some(AbstractValue::Literal(String::new())),
                            ),
                            state.clone(),
                        ),
                        None => (state.clone(), state.clone()),
                    },
                    _ => self.refine_via_fact(name, args, span, state),
                }
            }
            _ => (state.clone(), state.clone()),
        }
    }

    /// A user boolean call with a strict-security-check fact refines its
    /// guarded actual arguments in the true arm.
    fn refine_via_fact(
        &self,
        name: &str,
        args: &[Expr],
        span: &crate::frontend::ast::Span,
        state: &PathState,
    ) -> (PathState, PathState) {
        let text = span.slice(&self.program.source);
        let fact = self
            .find_fact(text, name)
            .filter(|f| f.kind == FactKind::StrictSecurityCheck);
        let Some(fact) = fact else {
            return (state.clone(), state.clone());
        };
        let mut then_state = state.clone();
        for &param in &fact.params {
            if let Some(Expr::Var(v, _)) = args.get(param) {
                let check = fact.check.unwrap_or(FilterCheck::ContextAssumed);
                then_state = apply_refinement(&then_state, v, check, None);
            }
        }
        (then_state, state.clone())
    }
}

fn apply_refinement(
    state: &PathState,
    var: &str,
    check: FilterCheck,
    exact: Option<AbstractValue>,
) -> PathState {
    let mut next = state.clone();
    let value = match exact {
        Some(value) => value,
        None => {
            let old = next
                .env
                .get(var)
                .cloned()
                .unwrap_or(AbstractValue::Unknown);
            AbstractValue::filtered(check, old)
        }
    };
    next.env.insert(var.to_string(), value);
    next.refinements.push((var.to_string(), check));
    next
}

fn join_envs(a: &Env, b: &Env) -> Env {
    let mut out = a.clone();
    for (key, value) in b {
        match out.remove(key) {
            Some(existing) => {
                out.insert(key.clone(), join(existing, value.clone()));
            }
            None => {
                out.insert(key.clone(), value.clone());
            }
        }
    }
    out
}

/// Call-free evaluation used by constant folding and refinement.
fn pure_value(expr: &Expr, env: &Env) -> Option<AbstractValue> {
    match expr {
        Expr::StringLit(s, _) => Some(AbstractValue::Literal(s.clone())),
        Expr::Var(name, _) => env.get(name).cloned(),
        Expr::Field { name, .. } => env.get(name).cloned(),
        _ => None,
    }
}

/// Replaces a call's value with what the context already concluded about it.
fn apply_fact(
    fact: &SimplifiedFact,
    arg_values: &[AbstractValue],
    receiver_value: Option<AbstractValue>,
) -> AbstractValue {
    match fact.kind {
        FactKind::StrictSecurityCheck => {
            let inner = join_all(arg_values.to_vec());
            AbstractValue::filtered(fact.check.unwrap_or(FilterCheck::ContextAssumed), inner)
        }
        FactKind::DirectAssignment => {
            let mut parts = arg_values.to_vec();
            if let Some(r) = receiver_value {
                parts.push(r);
            }
            join_all(parts)
        }
        FactKind::UnfilteredSourceJudgment => {
            let parts: Vec<AbstractValue> = fact
                .params
                .iter()
                .filter_map(|&i| arg_values.get(i).cloned())
                .collect();
            join_all(parts)
        }
    }
}
