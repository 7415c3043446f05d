//! Call-graph construction and source-to-sink path extraction.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::library;
use super::FrontendError;
use crate::rules::{builtin_rules, pattern_matches, DEFAULT_SOURCE_PATTERNS};
use crate::summary::TypeTable;

/// Identity of a method node. Constructors use the name `new`; externals with
/// an unknown receiver type use an empty class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodKey {
    pub class: String,
    pub name: String,
}

impl MethodKey {
    pub fn new(class: impl Into<String>, name: impl Into<String>) -> MethodKey {
        MethodKey {
            class: class.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for MethodKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.class.is_empty() {
            write!(f, "{}", self.name)
        } else {
            write!(f, "{}.{}", self.class, self.name)
        }
    }
}

/// One call site, with enough surrounding text to rebuild summaries later.
#[derive(Debug, Clone)]
pub struct CallEdge {
    pub caller: MethodKey,
    pub callee: MethodKey,
    /// True when the callee has no body in the analyzed program.
    pub external: bool,
    /// Verbatim source of the call expression.
    pub call_snippet: String,
    /// Verbatim source of the receiver expression, when present.
    pub receiver_text: Option<String>,
    /// Verbatim source of each argument expression.
    pub arg_texts: Vec<String>,
    pub span: Span,
}

/// Caller-ordered call graph over one program.
#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    /// User-defined methods in program order.
    pub nodes: Vec<MethodKey>,
    /// Edges ordered by caller, then by evaluation order within the body.
    pub edges: Vec<CallEdge>,
}

impl CallGraph {
    pub fn edges_from<'a>(&'a self, caller: &MethodKey) -> Vec<&'a CallEdge> {
        self.edges.iter().filter(|e| &e.caller == caller).collect()
    }
}

/// One sink pattern with the argument positions that trigger it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct SinkSpec {
    pub pattern: String,
    pub rule: String,
    #[serde(rename = "argIndices")]
    pub arg_indices: Vec<usize>,
}

/// Source and sink patterns steering path extraction.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct SourceSinkConfig {
    pub sources: Vec<String>,
    pub sinks: Vec<SinkSpec>,
}

impl SourceSinkConfig {
    /// Config derived from the built-in rule set.
    pub fn default_config() -> SourceSinkConfig {
        let mut sinks = Vec::new();
        for rule in builtin_rules() {
            for sink in &rule.sink_patterns {
                sinks.push(SinkSpec {
                    pattern: sink.pattern.clone(),
                    rule: rule.id.clone(),
                    arg_indices: sink.sensitive_args.clone(),
                });
            }
        }
        SourceSinkConfig {
            sources: DEFAULT_SOURCE_PATTERNS.iter().map(|s| s.to_string()).collect(),
            sinks,
        }
    }

    pub fn from_json(text: &str) -> Result<SourceSinkConfig, FrontendError> {
        serde_json::from_str(text).map_err(|e| FrontendError::Config(e.to_string()))
    }
}

/// Builds the call graph, resolving receivers through declared types.
pub fn build_call_graph(program: &MiniProgram) -> Result<CallGraph, FrontendError> {
    let mut graph = CallGraph::default();
    let builder = Builder {
        program,
        types: TypeTable::new(),
    };
    for class in &program.classes {
        for method in &class.methods {
            let caller = MethodKey::new(class.name.clone(), method.lookup_name());
            graph.nodes.push(caller.clone());
            let mut env: BTreeMap<String, String> = BTreeMap::new();
            for field in &class.fields {
                env.insert(field.name.clone(), field.ty.clone());
            }
            for param in &method.params {
                env.insert(param.name.clone(), param.ty.clone());
            }
            let mut edges = Vec::new();
            builder.walk_block(&method.body, class, &caller, &mut env, &mut edges)?;
            graph.edges.extend(edges);
        }
    }
    Ok(graph)
}

struct Builder<'p> {
    program: &'p MiniProgram,
    types: TypeTable,
}

impl<'p> Builder<'p> {
    fn walk_block(
        &self,
        block: &Block,
        class: &ClassDecl,
        caller: &MethodKey,
        env: &mut BTreeMap<String, String>,
        edges: &mut Vec<CallEdge>,
    ) -> Result<(), FrontendError> {
        for stmt in &block.stmts {
            match stmt {
                Stmt::Local { ty, name, init, .. } => {
                    if let Some(init) = init {
                        self.walk_expr(init, class, caller, env, edges)?;
                    }
                    env.insert(name.clone(), ty.clone());
                }
                Stmt::Assign { value, .. } => {
                    self.walk_expr(value, class, caller, env, edges)?;
                }
                Stmt::Expr { expr, .. } => {
                    self.walk_expr(expr, class, caller, env, edges)?;
                }
                Stmt::If {
                    cond,
                    then_block,
                    else_block,
                    ..
                } => {
                    self.walk_expr(cond, class, caller, env, edges)?;
                    self.walk_block(then_block, class, caller, env, edges)?;
                    if let Some(else_block) = else_block {
                        self.walk_block(else_block, class, caller, env, edges)?;
                    }
                }
                Stmt::Return { value, .. } => {
                    if let Some(value) = value {
                        self.walk_expr(value, class, caller, env, edges)?;
                    }
                }
                Stmt::Throw { value, .. } => {
                    self.walk_expr(value, class, caller, env, edges)?;
                }
            }
        }
        Ok(())
    }

    fn walk_expr(
        &self,
        expr: &Expr,
        class: &ClassDecl,
        caller: &MethodKey,
        env: &BTreeMap<String, String>,
        edges: &mut Vec<CallEdge>,
    ) -> Result<(), FrontendError> {
        match expr {
            Expr::StringLit(..) | Expr::IntLit(..) | Expr::BoolLit(..) | Expr::Var(..) | Expr::This(..) => Ok(()),
            Expr::Field { object, .. } => self.walk_expr(object, class, caller, env, edges),
            Expr::Not { expr, .. } => self.walk_expr(expr, class, caller, env, edges),
            Expr::Binary { lhs, rhs, .. } => {
                self.walk_expr(lhs, class, caller, env, edges)?;
                self.walk_expr(rhs, class, caller, env, edges)
            }
            Expr::New {
                class: callee_class,
                args,
                span,
            } => {
                for arg in args {
                    self.walk_expr(arg, class, caller, env, edges)?;
                }
                let external = self.program.find_class(callee_class).is_none();
                edges.push(CallEdge {
                    caller: caller.clone(),
                    callee: MethodKey::new(callee_class.clone(), "new"),
                    external,
                    call_snippet: span.slice(&self.program.source).to_string(),
                    receiver_text: None,
                    arg_texts: args
                        .iter()
                        .map(|a| a.span().slice(&self.program.source).to_string())
                        .collect(),
                    span: *span,
                });
                Ok(())
            }
            Expr::Call {
                receiver,
                name,
                args,
                span,
            } => {
                if let Some(receiver) = receiver {
                    self.walk_expr(receiver, class, caller, env, edges)?;
                }
                for arg in args {
                    self.walk_expr(arg, class, caller, env, edges)?;
                }
                let (callee, external) =
                    self.resolve_call(receiver.as_deref(), name, class, env)?;
                edges.push(CallEdge {
                    caller: caller.clone(),
                    callee,
                    external,
                    call_snippet: span.slice(&self.program.source).to_string(),
                    receiver_text: receiver
                        .as_ref()
                        .map(|r| r.span().slice(&self.program.source).to_string()),
                    arg_texts: args
                        .iter()
                        .map(|a| a.span().slice(&self.program.source).to_string())
                        .collect(),
                    span: *span,
                });
                Ok(())
            }
        }
    }

    /// Resolves a call expression to a method key.
    fn resolve_call(
        &self,
        receiver: Option<&Expr>,
        name: &str,
        class: &ClassDecl,
        env: &BTreeMap<String, String>,
    ) -> Result<(MethodKey, bool), FrontendError> {
        let Some(receiver) = receiver else {
            // Unqualified call: enclosing class first, then a unique other class.
            if class.methods.iter().any(|m| m.lookup_name() == name) {
                return Ok((MethodKey::new(class.name.clone(), name), false));
            }
            let owners: Vec<&ClassDecl> = self
                .program
                .classes
                .iter()
                .filter(|c| c.methods.iter().any(|m| m.lookup_name() == name))
                .collect();
            return match owners.len() {
                0 => Ok((MethodKey::new("", name), true)),
                1 => Ok((MethodKey::new(owners[0].name.clone(), name), false)),
                _ => Err(FrontendError::AmbiguousCall {
                    method: name.to_string(),
                    candidates: owners.iter().map(|c| c.name.clone()).collect(),
                }),
            };
        };

        // Static call: the receiver is a bare name that is a class, not a variable.
        if let Expr::Var(var, _) = receiver {
            if !env.contains_key(var) {
                if self.program.find_class(var).is_some() {
                    let external = self
                        .program
                        .find_method(var, name)
                        .is_none();
                    return Ok((MethodKey::new(var.clone(), name), external));
                }
                if self.types.is_opaque(var) {
                    return Ok((MethodKey::new(var.clone(), name), true));
                }
            }
        }

        match self.infer_type(receiver, class, env) {
            Some(ty) => {
                let external = self.program.find_method(&ty, name).is_none();
                Ok((MethodKey::new(ty, name), external))
            }
            None => Ok((MethodKey::new("", name), true)),
        }
    }

    /// Static type of an expression, when the declarations pin one down.
    fn infer_type(
        &self,
        expr: &Expr,
        class: &ClassDecl,
        env: &BTreeMap<String, String>,
    ) -> Option<String> {
        match expr {
            Expr::StringLit(..) => Some("String".to_string()),
            Expr::IntLit(..) => Some("int".to_string()),
            Expr::BoolLit(..) => Some("boolean".to_string()),
            Expr::This(_) => Some(class.name.clone()),
            Expr::Var(name, _) => env.get(name).cloned(),
            Expr::Field { object, name, .. } => {
                let owner = self.infer_type(object, class, env)?;
                let owner_class = self.program.find_class(&owner)?;
                owner_class
                    .fields
                    .iter()
                    .find(|f| &f.name == name)
                    .map(|f| f.ty.clone())
            }
            Expr::New { class: c, .. } => Some(c.clone()),
            Expr::Not { .. } => Some("boolean".to_string()),
            Expr::Binary { op, .. } => match op {
                BinOp::Add => Some("String".to_string()),
                _ => Some("boolean".to_string()),
            },
            Expr::Call { receiver, name, .. } => {
                if let Some((_, method)) = receiver
                    .as_deref()
                    .and_then(|r| self.infer_type(r, class, env))
                    .and_then(|ty| self.program.find_method(&ty, name))
                {
                    return Some(method.return_type.clone());
                }
                if receiver.is_none() {
                    if let Some((_, method)) = self.program.find_method(&class.name, name) {
                        return Some(method.return_type.clone());
                    }
                }
                let receiver_ty = receiver
                    .as_deref()
                    .and_then(|r| self.infer_type_name(r, class, env));
                library::lookup(receiver_ty.as_deref(), name).map(|m| m.ret.to_string())
            }
        }
    }

    /// Like `infer_type`, but also treats a bare class name as that type.
    fn infer_type_name(
        &self,
        expr: &Expr,
        class: &ClassDecl,
        env: &BTreeMap<String, String>,
    ) -> Option<String> {
        if let Expr::Var(name, _) = expr {
            if !env.contains_key(name)
                && (self.program.find_class(name).is_some() || self.types.is_opaque(name))
            {
                return Some(name.clone());
            }
        }
        self.infer_type(expr, class, env)
    }
}

/// True when the edge's callee matches the pattern, using qualified or bare form.
pub fn edge_matches(edge: &CallEdge, pattern: &str) -> bool {
    pattern_matches(pattern, &edge.callee.class, &edge.callee.name)
}

/// Sink indices of `spec` that land inside the edge's actual arity.
pub fn matched_sensitive_indices(edge: &CallEdge, spec: &SinkSpec) -> Vec<usize> {
    if !edge_matches(edge, &spec.pattern) {
        return Vec::new();
    }
    spec.arg_indices
        .iter()
        .copied()
        .filter(|&i| i < edge.arg_texts.len())
        .collect()
}

/// Extracts all source-to-sink call paths of length 2..=max_len.
///
/// A source method is any user method that invokes a source pattern; a path
/// ends at any user method that invokes a sink pattern with an in-range
/// sensitive argument. Nodes never repeat within one path.
pub fn extract_main_paths(
    graph: &CallGraph,
    config: &SourceSinkConfig,
    max_len: usize,
) -> Vec<Vec<MethodKey>> {
    let mut sources: Vec<&MethodKey> = graph
        .nodes
        .iter()
        .filter(|node| {
            graph
                .edges_from(node)
                .iter()
                .any(|e| config.sources.iter().any(|p| edge_matches(e, p)))
        })
        .collect();
    sources.sort();
    sources.dedup();

    let mut paths: Vec<Vec<MethodKey>> = Vec::new();
    for source in sources {
        let mut current = vec![source.clone()];
        dfs(graph, config, max_len, &mut current, &mut paths);
    }
    paths.sort_by(|a, b| {
        let a: Vec<String> = a.iter().map(|k| k.to_string()).collect();
        let b: Vec<String> = b.iter().map(|k| k.to_string()).collect();
        a.cmp(&b)
    });
    paths.dedup();
    paths
}

fn dfs(
    graph: &CallGraph,
    config: &SourceSinkConfig,
    max_len: usize,
    current: &mut Vec<MethodKey>,
    paths: &mut Vec<Vec<MethodKey>>,
) {
    let node = current.last().expect("path is never empty").clone();
    let edges = graph.edges_from(&node);
    let hits_sink = edges.iter().any(|e| {
        config
            .sinks
            .iter()
            .any(|spec| !matched_sensitive_indices(e, spec).is_empty())
    });
    if hits_sink && current.len() >= 2 {
        paths.push(current.clone());
    }
    if current.len() >= max_len {
        return;
    }
    let mut callees: Vec<MethodKey> = edges
        .iter()
        .filter(|e| !e.external)
        .map(|e| e.callee.clone())
        .collect();
    callees.sort();
    callees.dedup();
    for callee in callees {
        if current.contains(&callee) {
            continue;
        }
        current.push(callee);
        dfs(graph, config, max_len, current, paths);
        current.pop();
    }
}
