//! Code-information summary model: the JSON contract between code extraction
//! and constraint solving.
//!
//! A summary is a set of call chains. Each chain orders the methods from the
//! one that receives attacker input (m1) to the last user method that reaches
//! a dangerous sink (mn). Records carry enough metadata (signatures, call
//! snippets, argument bindings, taint edges) for the solver to reason about a
//! single caller/callee pair without seeing the whole program.
//!
//! Parsing is hand-rolled over `serde_json::Value` rather than derived: the
//! schema needs exact JSON-path diagnostics, a strict/lenient unknown-field
//! toggle, and string-encoded taint edges, none of which derive gives us.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde_json::{Map, Value};
use thiserror::Error;

/// Parameter slots a taint edge can connect. Ordering is Param < Return <
/// Member so edge lists have a stable sort order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Param(usize),
    Return,
    Member(String),
}

impl Slot {
    /// Parses the compact form used in `pollutedPosition`: "P0", "RET", "M:name".
    pub fn parse(text: &str) -> Option<Slot> {
        if text == "RET" {
            return Some(Slot::Return);
        }
        if let Some(rest) = text.strip_prefix("M:") {
            if rest.is_empty() {
                return None;
            }
            return Some(Slot::Member(rest.to_string()));
        }
        if let Some(rest) = text.strip_prefix('P') {
            return rest.parse::<usize>().ok().map(Slot::Param);
        }
        None
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Param(i) => write!(f, "P{i}"),
            Slot::Return => write!(f, "RET"),
            Slot::Member(name) => write!(f, "M:{name}"),
        }
    }
}

/// One taint propagation edge inside a method, e.g. "P0->RET".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaintEdge {
    pub from: Slot,
    pub to: Slot,
}

impl TaintEdge {
    /// Self-edges carry no information and are rejected.
    pub fn new(from: Slot, to: Slot) -> Option<TaintEdge> {
        if from == to {
            None
        } else {
            Some(TaintEdge { from, to })
        }
    }

    pub fn parse(text: &str) -> Option<TaintEdge> {
        let (from, to) = text.split_once("->")?;
        TaintEdge::new(Slot::parse(from)?, Slot::parse(to)?)
    }
}

impl fmt::Display for TaintEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ArgDecl {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct MemberDecl {
    pub name: String,
    pub ty: String,
}

/// Maps an actual argument expression at a call site to a formal parameter
/// index of the callee.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ArgBinding {
    pub actual_expression: String,
    pub formal_index: usize,
}

/// Metadata fields shared by main-path method records and branch records.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MethodInfo {
    pub class_name: String,
    pub def: String,
    pub code: String,
    pub is_static: bool,
    pub is_constructor: bool,
    pub args: Vec<ArgDecl>,
    /// Expression by which this method is invoked inside its caller; empty
    /// for the first method of a chain and for branch-tree roots' callers.
    pub snippet_of_called: String,
    /// Receiver expression at the call site; empty for static or unqualified calls.
    pub invoker_of_called: String,
    pub member_variables: Vec<MemberDecl>,
    pub pass_relation_ship: Vec<ArgBinding>,
    pub polluted_position: Vec<TaintEdge>,
}

const MODIFIER_TOKENS: &[&str] = &[
    "public",
    "private",
    "protected",
    "static",
    "final",
    "abstract",
    "synchronized",
];

impl MethodInfo {
    /// Method name extracted from `def` (the token before the parameter list).
    pub fn method_name(&self) -> String {
        let head = self.def.split('(').next().unwrap_or("").trim();
        let last = head.split_whitespace().last().unwrap_or("");
        last.rsplit('.').next().unwrap_or(last).to_string()
    }

    /// Declared return type from `def`, None for constructors.
    pub fn return_type(&self) -> Option<String> {
        let head = self.def.split('(').next().unwrap_or("").trim();
        let tokens: Vec<&str> = head
            .split_whitespace()
            .filter(|t| !MODIFIER_TOKENS.contains(t))
            .collect();
        if tokens.len() >= 2 {
            Some(tokens[tokens.len() - 2].to_string())
        } else {
            None
        }
    }

    /// "Class.method" identifier used in chain ids and branch-tree cycle checks.
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.class_name, self.method_name())
    }
}

/// A method on the main source-to-sink path.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MethodRecord {
    pub info: MethodInfo,
    /// Branch trees, one per direct callee that is not the next main-path method.
    pub branchs: Vec<BranchRecord>,
}

/// A node of a branch-method tree: a direct or transitive callee off the main
/// path, with its own transitive callees as children.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BranchRecord {
    pub info: MethodInfo,
    pub children: Vec<BranchRecord>,
    /// BFS layer within the tree; the root is 0 and children are parent + 1.
    pub depth: u32,
}

/// Sink call site recorded on the last user method of a chain; chains stop at
/// the last user method instead of fabricating a record for the library sink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkCall {
    pub pattern: String,
    pub snippet: String,
    pub arg_expressions: Vec<String>,
    pub sensitive_arg_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallChain {
    pub id: String,
    /// Vulnerability rule id, serialized under the "rule" key.
    pub rule: String,
    pub methods: Vec<MethodRecord>,
    pub sink_call: Option<SinkCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeInformationSummary {
    pub chains: Vec<CallChain>,
    pub source_language_tag: String,
    pub generator_version: String,
}

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid chain {chain}{}: {message}", pair_index.map(|i| format!(" (pair {i})")).unwrap_or_default())]
    Chain {
        chain: String,
        pair_index: Option<usize>,
        message: String,
    },
}

#[derive(Debug, Error)]
#[error("unknown type `{type_name}` for parameter `{param}`")]
pub struct UnknownTypeError {
    pub type_name: String,
    pub param: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationMode {
    /// Unknown fields are schema errors.
    Strict,
    /// Unknown fields produce warnings and are otherwise ignored.
    Lenient,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parses and fully validates a summary document in strict mode.
pub fn parse_summary(document: &str) -> Result<CodeInformationSummary, SummaryError> {
    let (summary, _) = parse_with_mode(document, ValidationMode::Strict)?;
    Ok(summary)
}

/// Lenient parse: unknown fields are reported as warnings instead of errors.
pub fn parse_summary_lenient(
    document: &str,
) -> Result<(CodeInformationSummary, Vec<String>), SummaryError> {
    parse_with_mode(document, ValidationMode::Lenient)
}

fn parse_with_mode(
    document: &str,
    mode: ValidationMode,
) -> Result<(CodeInformationSummary, Vec<String>), SummaryError> {
    let value: Value = serde_json::from_str(document)?;
    let mut reader = Reader {
        mode,
        warnings: Vec::new(),
    };
    let summary = reader.summary(&value)?;
    validate_summary(&summary)?;
    Ok((summary, reader.warnings))
}

struct Reader {
    mode: ValidationMode,
    warnings: Vec<String>,
}

fn schema_err(path: &str, message: impl Into<String>) -> SummaryError {
    SummaryError::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

impl Reader {
    fn object<'v>(&self, v: &'v Value, path: &str) -> Result<&'v Map<String, Value>, SummaryError> {
        v.as_object()
            .ok_or_else(|| schema_err(path, "expected a JSON object"))
    }

    fn array<'v>(&self, v: &'v Value, path: &str) -> Result<&'v Vec<Value>, SummaryError> {
        v.as_array()
            .ok_or_else(|| schema_err(path, "expected a JSON array"))
    }

    fn string(&self, v: &Value, path: &str) -> Result<String, SummaryError> {
        v.as_str()
            .map(str::to_string)
            .ok_or_else(|| schema_err(path, "expected a string"))
    }

    fn boolean(&self, v: &Value, path: &str) -> Result<bool, SummaryError> {
        v.as_bool()
            .ok_or_else(|| schema_err(path, "expected a boolean"))
    }

    fn index(&self, v: &Value, path: &str) -> Result<usize, SummaryError> {
        v.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| schema_err(path, "expected a non-negative integer"))
    }

    fn check_keys(
        &mut self,
        map: &Map<String, Value>,
        allowed: &[&str],
        path: &str,
    ) -> Result<(), SummaryError> {
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                let at = format!("{path}.{key}");
                match self.mode {
                    ValidationMode::Strict => {
                        return Err(schema_err(&at, "unknown field"));
                    }
                    ValidationMode::Lenient => {
                        self.warnings.push(format!("ignoring unknown field {at}"));
                    }
                }
            }
        }
        Ok(())
    }

    fn opt_string(
        &self,
        map: &Map<String, Value>,
        key: &str,
        path: &str,
    ) -> Result<String, SummaryError> {
        match map.get(key) {
            Some(v) => self.string(v, &format!("{path}.{key}")),
            None => Ok(String::new()),
        }
    }

    fn opt_bool(
        &self,
        map: &Map<String, Value>,
        key: &str,
        path: &str,
    ) -> Result<bool, SummaryError> {
        match map.get(key) {
            Some(v) => self.boolean(v, &format!("{path}.{key}")),
            None => Ok(false),
        }
    }

    fn req_string(
        &self,
        map: &Map<String, Value>,
        key: &str,
        path: &str,
    ) -> Result<String, SummaryError> {
        match map.get(key) {
            Some(v) => self.string(v, &format!("{path}.{key}")),
            None => Err(schema_err(path, format!("missing required field `{key}`"))),
        }
    }

    fn summary(&mut self, v: &Value) -> Result<CodeInformationSummary, SummaryError> {
        let obj = self.object(v, "$")?;
        self.check_keys(obj, &["chains", "sourceLanguageTag", "generatorVersion"], "$")?;
        let chains_value = obj
            .get("chains")
            .ok_or_else(|| schema_err("$", "missing required field `chains`"))?;
        let chain_values = self.array(chains_value, "$.chains")?;
        let mut chains = Vec::with_capacity(chain_values.len());
        for (i, cv) in chain_values.iter().enumerate() {
            chains.push(self.chain(cv, &format!("$.chains[{i}]"))?);
        }
        Ok(CodeInformationSummary {
            chains,
            source_language_tag: self.opt_string(obj, "sourceLanguageTag", "$")?,
            generator_version: self.opt_string(obj, "generatorVersion", "$")?,
        })
    }

    fn chain(&mut self, v: &Value, path: &str) -> Result<CallChain, SummaryError> {
        let obj = self.object(v, path)?;
        self.check_keys(obj, &["id", "rule", "methods", "sinkCall"], path)?;
        let methods_value = obj
            .get("methods")
            .ok_or_else(|| schema_err(path, "missing required field `methods`"))?;
        let method_values = self.array(methods_value, &format!("{path}.methods"))?;
        let mut methods = Vec::with_capacity(method_values.len());
        for (i, mv) in method_values.iter().enumerate() {
            methods.push(self.method(mv, &format!("{path}.methods[{i}]"))?);
        }
        let sink_call = match obj.get("sinkCall") {
            Some(sv) => Some(self.sink_call(sv, &format!("{path}.sinkCall"))?),
            None => None,
        };
        Ok(CallChain {
            id: self.opt_string(obj, "id", path)?,
            rule: self.opt_string(obj, "rule", path)?,
            methods,
            sink_call,
        })
    }

    fn sink_call(&mut self, v: &Value, path: &str) -> Result<SinkCall, SummaryError> {
        let obj = self.object(v, path)?;
        self.check_keys(
            obj,
            &["pattern", "snippet", "argExpressions", "sensitiveArgIndices"],
            path,
        )?;
        let mut arg_expressions = Vec::new();
        if let Some(av) = obj.get("argExpressions") {
            let arr = self.array(av, &format!("{path}.argExpressions"))?;
            for (i, e) in arr.iter().enumerate() {
                arg_expressions.push(self.string(e, &format!("{path}.argExpressions[{i}]"))?);
            }
        }
        let mut sensitive_arg_indices = Vec::new();
        if let Some(sv) = obj.get("sensitiveArgIndices") {
            let arr = self.array(sv, &format!("{path}.sensitiveArgIndices"))?;
            for (i, e) in arr.iter().enumerate() {
                let at = format!("{path}.sensitiveArgIndices[{i}]");
                let idx = self.index(e, &at)?;
                if idx >= arg_expressions.len() {
                    return Err(schema_err(&at, "sensitive index out of bounds"));
                }
                sensitive_arg_indices.push(idx);
            }
        }
        Ok(SinkCall {
            pattern: self.req_string(obj, "pattern", path)?,
            snippet: self.req_string(obj, "snippet", path)?,
            arg_expressions,
            sensitive_arg_indices,
        })
    }

    const INFO_KEYS: &'static [&'static str] = &[
        "className",
        "def",
        "code",
        "isStatic",
        "isConstructor",
        "args",
        "snippetOfCalled",
        "invokerOfCalled",
        "memberVariables",
        "passRelationShip",
        "pollutedPosition",
    ];

    fn method(&mut self, v: &Value, path: &str) -> Result<MethodRecord, SummaryError> {
        let obj = self.object(v, path)?;
        let mut allowed: Vec<&str> = Self::INFO_KEYS.to_vec();
        allowed.push("branchs");
        self.check_keys(obj, &allowed, path)?;
        let info = self.method_info(obj, path)?;
        let mut branchs = Vec::new();
        if let Some(bv) = obj.get("branchs") {
            let arr = self.array(bv, &format!("{path}.branchs"))?;
            for (i, b) in arr.iter().enumerate() {
                let branch = self.branch(b, &format!("{path}.branchs[{i}]"))?;
                branchs.push(branch);
            }
        }
        Ok(MethodRecord { info, branchs })
    }

    fn branch(&mut self, v: &Value, path: &str) -> Result<BranchRecord, SummaryError> {
        let obj = self.object(v, path)?;
        let mut allowed: Vec<&str> = Self::INFO_KEYS.to_vec();
        allowed.extend(["children", "depth"]);
        self.check_keys(obj, &allowed, path)?;
        let info = self.method_info(obj, path)?;
        let depth_value = obj
            .get("depth")
            .ok_or_else(|| schema_err(path, "missing required field `depth`"))?;
        let depth = self.index(depth_value, &format!("{path}.depth"))? as u32;
        let mut children = Vec::new();
        if let Some(cv) = obj.get("children") {
            let arr = self.array(cv, &format!("{path}.children"))?;
            for (i, c) in arr.iter().enumerate() {
                children.push(self.branch(c, &format!("{path}.children[{i}]"))?);
            }
        }
        Ok(BranchRecord {
            info,
            children,
            depth,
        })
    }

    fn method_info(
        &mut self,
        obj: &Map<String, Value>,
        path: &str,
    ) -> Result<MethodInfo, SummaryError> {
        let args = match obj.get("args") {
            Some(av) => {
                let arr = self.array(av, &format!("{path}.args"))?;
                let mut out = Vec::with_capacity(arr.len());
                for (i, a) in arr.iter().enumerate() {
                    let at = format!("{path}.args[{i}]");
                    let am = self.object(a, &at)?;
                    self.check_keys(am, &["name", "type"], &at)?;
                    out.push(ArgDecl {
                        name: self.req_string(am, "name", &at)?,
                        ty: self.req_string(am, "type", &at)?,
                    });
                }
                out
            }
            None => Vec::new(),
        };
        let mut seen = BTreeSet::new();
        for a in &args {
            if !seen.insert(a.name.clone()) {
                return Err(schema_err(
                    &format!("{path}.args"),
                    format!("duplicate parameter name `{}`", a.name),
                ));
            }
        }

        let member_variables = match obj.get("memberVariables") {
            Some(mv) => {
                let arr = self.array(mv, &format!("{path}.memberVariables"))?;
                let mut out = Vec::with_capacity(arr.len());
                for (i, m) in arr.iter().enumerate() {
                    let at = format!("{path}.memberVariables[{i}]");
                    let mm = self.object(m, &at)?;
                    self.check_keys(mm, &["name", "type"], &at)?;
                    out.push(MemberDecl {
                        name: self.req_string(mm, "name", &at)?,
                        ty: self.req_string(mm, "type", &at)?,
                    });
                }
                out
            }
            None => Vec::new(),
        };

        let pass_relation_ship = match obj.get("passRelationShip") {
            Some(pv) => {
                let arr = self.array(pv, &format!("{path}.passRelationShip"))?;
                let mut out = Vec::with_capacity(arr.len());
                for (i, b) in arr.iter().enumerate() {
                    let at = format!("{path}.passRelationShip[{i}]");
                    let bm = self.object(b, &at)?;
                    self.check_keys(bm, &["actualExpression", "formalIndex"], &at)?;
                    let formal_value = bm.get("formalIndex").ok_or_else(|| {
                        schema_err(&at, "missing required field `formalIndex`")
                    })?;
                    let formal_index = self.index(formal_value, &format!("{at}.formalIndex"))?;
                    if formal_index >= args.len() {
                        return Err(schema_err(
                            &format!("{at}.formalIndex"),
                            format!(
                                "formal index {formal_index} out of bounds for {} parameter(s)",
                                args.len()
                            ),
                        ));
                    }
                    out.push(ArgBinding {
                        actual_expression: self.req_string(bm, "actualExpression", &at)?,
                        formal_index,
                    });
                }
                out
            }
            None => Vec::new(),
        };

        let polluted_position = match obj.get("pollutedPosition") {
            Some(pv) => {
                let arr = self.array(pv, &format!("{path}.pollutedPosition"))?;
                let mut out = Vec::with_capacity(arr.len());
                for (i, e) in arr.iter().enumerate() {
                    let at = format!("{path}.pollutedPosition[{i}]");
                    let text = self.string(e, &at)?;
                    let edge = TaintEdge::parse(&text).ok_or_else(|| {
                        schema_err(&at, format!("invalid taint edge `{text}` (self-edges and malformed slots are rejected)"))
                    })?;
                    out.push(edge);
                }
                out
            }
            None => Vec::new(),
        };

        Ok(MethodInfo {
            class_name: self.req_string(obj, "className", path)?,
            def: self.req_string(obj, "def", path)?,
            code: self.req_string(obj, "code", path)?,
            is_static: self.opt_bool(obj, "isStatic", path)?,
            is_constructor: self.opt_bool(obj, "isConstructor", path)?,
            args,
            snippet_of_called: self.opt_string(obj, "snippetOfCalled", path)?,
            invoker_of_called: self.opt_string(obj, "invokerOfCalled", path)?,
            member_variables,
            pass_relation_ship,
            polluted_position,
        })
    }
}

fn chain_ref(chain: &CallChain, index: usize) -> String {
    if chain.id.is_empty() {
        format!("chains[{index}]")
    } else {
        chain.id.clone()
    }
}

fn validate_summary(summary: &CodeInformationSummary) -> Result<(), SummaryError> {
    let mut ids = BTreeSet::new();
    for (ci, chain) in summary.chains.iter().enumerate() {
        let name = chain_ref(chain, ci);
        if !chain.id.is_empty() && !ids.insert(chain.id.clone()) {
            return Err(SummaryError::Chain {
                chain: name,
                pair_index: None,
                message: "duplicate chain id".to_string(),
            });
        }
        if chain.methods.len() < 2 {
            return Err(SummaryError::Chain {
                chain: name,
                pair_index: None,
                message: format!(
                    "chain must contain at least a source and a sink, found {} method(s)",
                    chain.methods.len()
                ),
            });
        }
        for pair in 1..chain.methods.len() {
            let caller = &chain.methods[pair - 1];
            let callee = &chain.methods[pair];
            let snippet = &callee.info.snippet_of_called;
            if snippet.is_empty() || !caller.info.code.contains(snippet.as_str()) {
                return Err(SummaryError::Chain {
                    chain: name,
                    pair_index: Some(pair),
                    message: format!(
                        "snippetOfCalled `{snippet}` of method {pair} is not a non-empty substring of its caller's code"
                    ),
                });
            }
        }
        for (mi, method) in chain.methods.iter().enumerate() {
            for (bi, branch) in method.branchs.iter().enumerate() {
                let path = format!("$.chains[{ci}].methods[{mi}].branchs[{bi}]");
                validate_branch(branch, 0, &mut Vec::new(), &path)?;
            }
        }
    }
    Ok(())
}

fn validate_branch(
    branch: &BranchRecord,
    expected_depth: u32,
    ancestry: &mut Vec<String>,
    path: &str,
) -> Result<(), SummaryError> {
    if branch.depth != expected_depth {
        return Err(schema_err(
            &format!("{path}.depth"),
            format!("expected depth {expected_depth}, found {}", branch.depth),
        ));
    }
    let id = branch.info.qualified_name();
    if ancestry.contains(&id) {
        return Err(schema_err(
            path,
            format!("cycle in branch tree: `{id}` already appears on this path"),
        ));
    }
    ancestry.push(id);
    for (i, child) in branch.children.iter().enumerate() {
        validate_branch(
            child,
            expected_depth + 1,
            ancestry,
            &format!("{path}.children[{i}]"),
        )?;
    }
    ancestry.pop();
    Ok(())
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Serializes a summary with field names spelled exactly as the wire format
/// requires (including `branchs` and `passRelationShip`). Round-trip stable.
pub fn serialize_summary(summary: &CodeInformationSummary) -> String {
    let mut root = Map::new();
    root.insert(
        "chains".to_string(),
        Value::Array(summary.chains.iter().map(chain_to_value).collect()),
    );
    root.insert(
        "sourceLanguageTag".to_string(),
        Value::String(summary.source_language_tag.clone()),
    );
    root.insert(
        "generatorVersion".to_string(),
        Value::String(summary.generator_version.clone()),
    );
    let mut out = serde_json::to_string_pretty(&Value::Object(root)).expect("summary is valid JSON");
    out.push('\n');
    out
}

fn chain_to_value(chain: &CallChain) -> Value {
    let mut obj = Map::new();
    obj.insert("id".to_string(), Value::String(chain.id.clone()));
    obj.insert("rule".to_string(), Value::String(chain.rule.clone()));
    obj.insert(
        "methods".to_string(),
        Value::Array(chain.methods.iter().map(method_to_value).collect()),
    );
    if let Some(sink) = &chain.sink_call {
        let mut sv = Map::new();
        sv.insert("pattern".to_string(), Value::String(sink.pattern.clone()));
        sv.insert("snippet".to_string(), Value::String(sink.snippet.clone()));
        sv.insert(
            "argExpressions".to_string(),
            Value::Array(
                sink.arg_expressions
                    .iter()
                    .map(|e| Value::String(e.clone()))
                    .collect(),
            ),
        );
        sv.insert(
            "sensitiveArgIndices".to_string(),
            Value::Array(
                sink.sensitive_arg_indices
                    .iter()
                    .map(|i| Value::Number((*i as u64).into()))
                    .collect(),
            ),
        );
        obj.insert("sinkCall".to_string(), Value::Object(sv));
    }
    Value::Object(obj)
}

fn info_into_map(info: &MethodInfo, obj: &mut Map<String, Value>) {
    obj.insert("className".to_string(), Value::String(info.class_name.clone()));
    obj.insert("def".to_string(), Value::String(info.def.clone()));
    obj.insert("code".to_string(), Value::String(info.code.clone()));
    obj.insert("isStatic".to_string(), Value::Bool(info.is_static));
    obj.insert("isConstructor".to_string(), Value::Bool(info.is_constructor));
    obj.insert(
        "args".to_string(),
        Value::Array(
            info.args
                .iter()
                .map(|a| {
                    let mut m = Map::new();
                    m.insert("name".to_string(), Value::String(a.name.clone()));
                    m.insert("type".to_string(), Value::String(a.ty.clone()));
                    Value::Object(m)
                })
                .collect(),
        ),
    );
}

fn info_tail_into_map(info: &MethodInfo, obj: &mut Map<String, Value>) {
    obj.insert(
        "snippetOfCalled".to_string(),
        Value::String(info.snippet_of_called.clone()),
    );
    obj.insert(
        "invokerOfCalled".to_string(),
        Value::String(info.invoker_of_called.clone()),
    );
    obj.insert(
        "memberVariables".to_string(),
        Value::Array(
            info.member_variables
                .iter()
                .map(|m| {
                    let mut mm = Map::new();
                    mm.insert("name".to_string(), Value::String(m.name.clone()));
                    mm.insert("type".to_string(), Value::String(m.ty.clone()));
                    Value::Object(mm)
                })
                .collect(),
        ),
    );
    obj.insert(
        "passRelationShip".to_string(),
        Value::Array(
            info.pass_relation_ship
                .iter()
                .map(|b| {
                    let mut bm = Map::new();
                    bm.insert(
                        "actualExpression".to_string(),
                        Value::String(b.actual_expression.clone()),
                    );
                    bm.insert(
                        "formalIndex".to_string(),
                        Value::Number((b.formal_index as u64).into()),
                    );
                    Value::Object(bm)
                })
                .collect(),
        ),
    );
    obj.insert(
        "pollutedPosition".to_string(),
        Value::Array(
            info.polluted_position
                .iter()
                .map(|e| Value::String(e.to_string()))
                .collect(),
        ),
    );
}

fn method_to_value(method: &MethodRecord) -> Value {
    let mut obj = Map::new();
    info_into_map(&method.info, &mut obj);
    obj.insert(
        "branchs".to_string(),
        Value::Array(method.branchs.iter().map(branch_to_value).collect()),
    );
    info_tail_into_map(&method.info, &mut obj);
    Value::Object(obj)
}

fn branch_to_value(branch: &BranchRecord) -> Value {
    let mut obj = Map::new();
    info_into_map(&branch.info, &mut obj);
    info_tail_into_map(&branch.info, &mut obj);
    obj.insert(
        "children".to_string(),
        Value::Array(branch.children.iter().map(branch_to_value).collect()),
    );
    obj.insert("depth".to_string(), Value::Number((branch.depth as u64).into()));
    Value::Object(obj)
}

// ---------------------------------------------------------------------------
// Types and critical parameters
// ---------------------------------------------------------------------------

const PRIMITIVE_TYPES: &[&str] = &[
    "void", "int", "long", "short", "byte", "char", "float", "double", "boolean", "Integer",
    "Long", "Boolean",
];

/// Library types the engine treats as opaque: known to exist, no visible
/// members, never critical by themselves unless a rule lists them.
const OPAQUE_LIBRARY_TYPES: &[&str] = &[
    "String",
    "Object",
    "HttpServletRequest",
    "HttpServletResponse",
    "HttpSession",
    "Cookie",
    "PrintWriter",
    "Writer",
    "Reader",
    "BufferedReader",
    "InputStream",
    "OutputStream",
    "Runtime",
    "Process",
    "ProcessBuilder",
    "Connection",
    "Statement",
    "PreparedStatement",
    "ResultSet",
    "Path",
    "Paths",
    "Files",
    "File",
    "Exception",
    "IOException",
    "IllegalArgumentException",
    "SQLException",
    "StringBuilder",
    "StringBuffer",
];

/// Resolves type names: declared program types with their members, opaque
/// library types, and an alias table folding equivalent names (builder types)
/// into their canonical spelling before critical-set membership checks.
#[derive(Debug, Clone, Default)]
pub struct TypeTable {
    members: BTreeMap<String, Vec<MemberDecl>>,
    opaque: BTreeSet<String>,
    aliases: BTreeMap<String, String>,
}

impl TypeTable {
    pub fn new() -> TypeTable {
        let mut table = TypeTable::default();
        for ty in OPAQUE_LIBRARY_TYPES {
            table.opaque.insert(ty.to_string());
        }
        for (alias, canonical) in [
            ("StringBuilder", "String"),
            ("StringBuffer", "String"),
            ("CharSequence", "String"),
        ] {
            table.aliases.insert(alias.to_string(), canonical.to_string());
        }
        table
    }

    /// Collects declared type members from every record of a summary.
    pub fn from_summary(summary: &CodeInformationSummary) -> TypeTable {
        let mut table = TypeTable::new();
        for chain in &summary.chains {
            table.observe_chain(chain);
        }
        table
    }

    /// Collects declared type members from the records of a single chain.
    pub fn from_chain(chain: &CallChain) -> TypeTable {
        let mut table = TypeTable::new();
        table.observe_chain(chain);
        table
    }

    fn observe_chain(&mut self, chain: &CallChain) {
        for method in &chain.methods {
            self.observe(&method.info);
            for branch in &method.branchs {
                self.observe_branch(branch);
            }
        }
    }

    fn observe_branch(&mut self, branch: &BranchRecord) {
        self.observe(&branch.info);
        for child in &branch.children {
            self.observe_branch(child);
        }
    }

    fn observe(&mut self, info: &MethodInfo) {
        if !info.class_name.is_empty() && !info.member_variables.is_empty() {
            self.members
                .entry(info.class_name.clone())
                .or_insert_with(|| info.member_variables.clone());
        }
    }

    pub fn declare(&mut self, type_name: &str, members: Vec<MemberDecl>) {
        self.members.insert(type_name.to_string(), members);
    }

    pub fn add_alias(&mut self, alias: &str, canonical: &str) {
        self.aliases.insert(alias.to_string(), canonical.to_string());
    }

    pub fn resolve<'a>(&'a self, type_name: &'a str) -> &'a str {
        self.aliases
            .get(type_name)
            .map(String::as_str)
            .unwrap_or(type_name)
    }

    pub fn members_of(&self, type_name: &str) -> Option<&[MemberDecl]> {
        self.members.get(self.resolve(type_name)).map(Vec::as_slice)
    }

    pub fn is_primitive(&self, type_name: &str) -> bool {
        PRIMITIVE_TYPES.contains(&self.resolve(type_name))
    }

    pub fn is_opaque(&self, type_name: &str) -> bool {
        self.opaque.contains(self.resolve(type_name))
    }

    pub fn is_critical(&self, type_name: &str, critical_types: &BTreeSet<String>) -> bool {
        critical_types.contains(self.resolve(type_name))
    }
}

/// A parameter slot the rule cares about: either the parameter itself or a
/// critical-typed member it encapsulates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CriticalParam {
    pub arg_index: usize,
    pub member_path: Option<String>,
}

/// Every parameter whose type is in the rule's critical set, plus every
/// (parameter, member) pair where the parameter's declared type encapsulates
/// a critical-typed member. Output order follows args order.
pub fn critical_parameters(
    info: &MethodInfo,
    critical_types: &BTreeSet<String>,
    types: &TypeTable,
) -> Result<Vec<CriticalParam>, UnknownTypeError> {
    let mut out = Vec::new();
    for (i, arg) in info.args.iter().enumerate() {
        if types.is_critical(&arg.ty, critical_types) {
            out.push(CriticalParam {
                arg_index: i,
                member_path: None,
            });
        } else if types.is_primitive(&arg.ty) {
            continue;
        } else if let Some(members) = types.members_of(&arg.ty) {
            for member in members {
                if types.is_critical(&member.ty, critical_types) {
                    out.push(CriticalParam {
                        arg_index: i,
                        member_path: Some(member.name.clone()),
                    });
                }
            }
        } else if types.is_opaque(&arg.ty) {
            continue;
        } else {
            return Err(UnknownTypeError {
                type_name: arg.ty.clone(),
                param: arg.name.clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn rule_types(types: &[&str]) -> BTreeSet<String> {
        types.iter().map(|t| t.to_string()).collect()
    }

    pub(crate) fn listing1_handwritten() -> String {
        // Four-record form of the running example: the library sink method is
        // kept as the final record, mirroring upstream chain extractors that
        // include the sink API itself.
        serde_json::json!({
            "chains": [{
                "id": "demo-1",
                "rule": "path-traversal",
                "methods": [
                    {
                        "className": "BenchmarkTest",
                        "def": "public void doGet(HttpServletRequest request, HttpServletResponse response)",
                        "code": "public void doGet(HttpServletRequest request, HttpServletResponse response) {\n    String fileName = request.getParameter(\"fileName\");\n    String content = read(fileName);\n    response.getWriter().write(content);\n}",
                        "isStatic": false,
                        "isConstructor": false,
                        "args": [
                            {"name": "request", "type": "HttpServletRequest"},
                            {"name": "response", "type": "HttpServletResponse"}
                        ],
                        "branchs": [],
                        "snippetOfCalled": "",
                        "invokerOfCalled": "",
                        "memberVariables": [],
                        "passRelationShip": [],
                        "pollutedPosition": []
                    },
                    {
                        "className": "BenchmarkTest",
                        "def": "public String read(String fileName)",
                        "code": "public String read(String fileName) {\n    String path = getPath(fileName);\n    return readFile(path);\n}",
                        "isStatic": false,
                        "isConstructor": false,
                        "args": [{"name": "fileName", "type": "String"}],
                        "branchs": [{
                            "className": "BenchmarkTest",
                            "def": "public String getPath(String fileName)",
                            "code": "public String getPath(String fileName) {\n    if (!fileName.contains(\"..\")) {\n        return \"/tmp/files/\" + fileName;\n    } else {\n        throw new IllegalArgumentException(\"bad path\");\n    }\n}",
                            "isStatic": false,
                            "isConstructor": false,
                            "args": [{"name": "fileName", "type": "String"}],
                            "snippetOfCalled": "getPath(fileName)",
                            "invokerOfCalled": "",
                            "memberVariables": [],
                            "passRelationShip": [{"actualExpression": "fileName", "formalIndex": 0}],
                            "pollutedPosition": ["P0->RET"],
                            "children": [],
                            "depth": 0
                        }],
                        "snippetOfCalled": "read(fileName)",
                        "invokerOfCalled": "",
                        "memberVariables": [],
                        "passRelationShip": [{"actualExpression": "fileName", "formalIndex": 0}],
                        "pollutedPosition": ["P0->RET"]
                    },
                    {
                        "className": "BenchmarkTest",
                        "def": "public String readFile(String path)",
                        "code": "public String readFile(String path) {\n    return Files.readString(Paths.get(path));\n}",
                        "isStatic": false,
                        "isConstructor": false,
                        "args": [{"name": "path", "type": "String"}],
                        "branchs": [],
                        "snippetOfCalled": "readFile(path)",
                        "invokerOfCalled": "",
                        "memberVariables": [],
                        "passRelationShip": [{"actualExpression": "path", "formalIndex": 0}],
                        "pollutedPosition": ["P0->RET"]
                    },
                    {
                        "className": "Files",
                        "def": "public static String readString(Path path)",
                        "code": "",
                        "isStatic": true,
                        "isConstructor": false,
                        "args": [{"name": "path", "type": "Path"}],
                        "branchs": [],
                        "snippetOfCalled": "Files.readString(Paths.get(path))",
                        "invokerOfCalled": "Files",
                        "memberVariables": [],
                        "passRelationShip": [{"actualExpression": "Paths.get(path)", "formalIndex": 0}],
                        "pollutedPosition": []
                    }
                ]
            }],
            "sourceLanguageTag": "mini-java",
            "generatorVersion": "0.1.0"
        })
        .to_string()
    }

    #[test]
    fn listing1_fixture_parses_with_four_methods_and_branch() {
        let summary = parse_summary(&listing1_handwritten()).unwrap();
        assert_eq!(summary.chains.len(), 1);
        let chain = &summary.chains[0];
        assert_eq!(chain.methods.len(), 4);
        assert_eq!(chain.methods[1].branchs.len(), 1);
        assert_eq!(
            chain.methods[1].branchs[0].info.method_name(),
            "getPath"
        );
    }

    #[test]
    fn empty_methods_chain_is_chain_error() {
        let doc = r#"{"chains": [{"methods": []}]}"#;
        match parse_summary(doc) {
            Err(SummaryError::Chain { chain, .. }) => assert_eq!(chain, "chains[0]"),
            other => panic!("expected chain error, got {other:?}"),
        }
    }

    #[test]
    fn adjacency_violation_names_pair_index_1() {
        let mut value: Value = serde_json::from_str(&listing1_handwritten()).unwrap();
        value["chains"][0]["methods"][1]["snippetOfCalled"] =
            Value::String("notInCaller()".to_string());
        match parse_summary(&value.to_string()) {
            Err(SummaryError::Chain {
                chain, pair_index, ..
            }) => {
                assert_eq!(chain, "demo-1");
                assert_eq!(pair_index, Some(1));
            }
            other => panic!("expected chain error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_structural_identity() {
        let summary = parse_summary(&listing1_handwritten()).unwrap();
        let text = serialize_summary(&summary);
        let reparsed = parse_summary(&text).unwrap();
        assert_eq!(summary, reparsed);
    }

    #[test]
    fn serialized_output_uses_wire_spellings() {
        let summary = parse_summary(&listing1_handwritten()).unwrap();
        let text = serialize_summary(&summary);
        assert!(text.contains("\"passRelationShip\""));
        assert!(text.contains("\"branchs\""));
        assert!(text.contains("\"snippetOfCalled\""));
        assert!(text.contains("\"pollutedPosition\""));
    }

    #[test]
    fn unknown_field_rejected_in_strict_mode_with_path() {
        let mut value: Value = serde_json::from_str(&listing1_handwritten()).unwrap();
        value["chains"][0]["methods"][0]["extraField"] = Value::Bool(true);
        match parse_summary(&value.to_string()) {
            Err(SummaryError::Schema { path, .. }) => {
                assert_eq!(path, "$.chains[0].methods[0].extraField");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_warned_in_lenient_mode() {
        let mut value: Value = serde_json::from_str(&listing1_handwritten()).unwrap();
        value["chains"][0]["methods"][0]["extraField"] = Value::Bool(true);
        let (summary, warnings) = parse_summary_lenient(&value.to_string()).unwrap();
        assert_eq!(summary.chains.len(), 1);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("extraField"));
    }

    #[test]
    fn taint_edge_round_trip_and_self_edge_rejection() {
        for text in ["P0->RET", "P1->P0", "M:query->RET"] {
            let edge = TaintEdge::parse(text).unwrap();
            assert_eq!(edge.to_string(), text);
        }
        assert!(TaintEdge::parse("P0->P0").is_none());
        assert!(TaintEdge::parse("RET->RET").is_none());
        assert!(TaintEdge::parse("bogus").is_none());
    }

    #[test]
    fn duplicate_chain_ids_rejected() {
        let base = parse_summary(&listing1_handwritten()).unwrap();
        let mut doubled = base.clone();
        doubled.chains.push(base.chains[0].clone());
        let text = serialize_summary(&doubled);
        match parse_summary(&text) {
            Err(SummaryError::Chain { message, .. }) => {
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected chain error, got {other:?}"),
        }
    }

    #[test]
    fn branch_depth_mismatch_is_schema_error() {
        let mut value: Value = serde_json::from_str(&listing1_handwritten()).unwrap();
        value["chains"][0]["methods"][1]["branchs"][0]["depth"] =
            Value::Number(3u64.into());
        match parse_summary(&value.to_string()) {
            Err(SummaryError::Schema { path, .. }) => assert!(path.ends_with(".depth")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn critical_parameters_on_string_param() {
        let summary = parse_summary(&listing1_handwritten()).unwrap();
        let types = TypeTable::from_summary(&summary);
        let read_file = &summary.chains[0].methods[2].info;
        let found =
            critical_parameters(read_file, &rule_types(&["String", "Path"]), &types).unwrap();
        assert_eq!(
            found,
            vec![CriticalParam {
                arg_index: 0,
                member_path: None
            }]
        );
    }

    #[test]
    fn critical_parameters_empty_for_no_params() {
        let info = MethodInfo {
            class_name: "A".into(),
            def: "public void run()".into(),
            code: "public void run() { }".into(),
            ..MethodInfo::default()
        };
        let found =
            critical_parameters(&info, &rule_types(&["String"]), &TypeTable::new()).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn critical_parameters_sees_encapsulated_member() {
        let mut types = TypeTable::new();
        types.declare(
            "UserRequest",
            vec![
                MemberDecl {
                    name: "query".into(),
                    ty: "String".into(),
                },
                MemberDecl {
                    name: "count".into(),
                    ty: "int".into(),
                },
            ],
        );
        let info = MethodInfo {
            class_name: "A".into(),
            def: "public void handle(UserRequest req)".into(),
            code: "public void handle(UserRequest req) { }".into(),
            args: vec![ArgDecl {
                name: "req".into(),
                ty: "UserRequest".into(),
            }],
            ..MethodInfo::default()
        };
        let found = critical_parameters(&info, &rule_types(&["String"]), &types).unwrap();
        assert_eq!(
            found,
            vec![CriticalParam {
                arg_index: 0,
                member_path: Some("query".into())
            }]
        );
    }

    #[test]
    fn critical_parameters_unknown_type_errors() {
        let info = MethodInfo {
            class_name: "A".into(),
            def: "public void handle(Mystery m)".into(),
            code: "public void handle(Mystery m) { }".into(),
            args: vec![ArgDecl {
                name: "m".into(),
                ty: "Mystery".into(),
            }],
            ..MethodInfo::default()
        };
        let err =
            critical_parameters(&info, &rule_types(&["String"]), &TypeTable::new()).unwrap_err();
        assert_eq!(err.type_name, "Mystery");
    }

    #[test]
    fn def_helpers_extract_names_and_return_types() {
        let mk = |def: &str| MethodInfo {
            def: def.into(),
            class_name: "C".into(),
            ..MethodInfo::default()
        };
        assert_eq!(mk("public String getPath(String f)").method_name(), "getPath");
        assert_eq!(
            mk("public String getPath(String f)").return_type(),
            Some("String".into())
        );
        assert_eq!(
            mk("public static void main(String a)").return_type(),
            Some("void".into())
        );
        assert_eq!(mk("boolean String.contains(String)").method_name(), "contains");
        assert_eq!(
            mk("boolean String.contains(String)").return_type(),
            Some("boolean".into())
        );
        assert_eq!(mk("public Wrapper(String q)").return_type(), None);
        assert_eq!(mk("public Wrapper(String q)").method_name(), "Wrapper");
    }

    #[test]
    fn slots_sort_params_then_return_then_members() {
        let mut slots = vec![
            Slot::Member("b".into()),
            Slot::Return,
            Slot::Param(1),
            Slot::Param(0),
            Slot::Member("a".into()),
        ];
        slots.sort();
        assert_eq!(
            slots,
            vec![
                Slot::Param(0),
                Slot::Param(1),
                Slot::Return,
                Slot::Member("a".into()),
                Slot::Member("b".into()),
            ]
        );
    }
}
