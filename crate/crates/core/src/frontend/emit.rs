//! Turns extracted call paths into code information summaries.

use std::collections::BTreeSet;

use super::ast::*;
use super::callgraph::{
    matched_sensitive_indices, CallEdge, CallGraph, MethodKey, SinkSpec, SourceSinkConfig,
};
use super::library;
use super::taint::compute_taint;
use super::FrontendError;
use crate::summary::{
    ArgBinding, ArgDecl, BranchRecord, CallChain, CodeInformationSummary, MemberDecl, MethodInfo,
    MethodRecord, SinkCall, Slot, TaintEdge, TypeTable,
};

pub const SOURCE_LANGUAGE_TAG: &str = "mini-java";

/// Default transitive depth recorded for branch trees.
pub const DEFAULT_BRANCH_DEPTH: u32 = 3;

/// Builds one summary chain per (path, sink rule) pair.
///
/// Every emitted summary round-trips through the strict summary parser; the
/// adjacency and branch-shape invariants hold by construction.
pub fn emit_summary(
    program: &MiniProgram,
    graph: &CallGraph,
    paths: &[Vec<MethodKey>],
    config: &SourceSinkConfig,
    branch_depth_limit: u32,
) -> Result<CodeInformationSummary, FrontendError> {
    validate_types(program)?;
    let mut chains = Vec::new();
    for path in paths {
        let last = path.last().expect("paths have at least two methods");
        let mut rules_seen: BTreeSet<String> = BTreeSet::new();
        for edge in graph.edges_from(last) {
            for spec in &config.sinks {
                let indices = matched_sensitive_indices(edge, spec);
                if indices.is_empty() || !rules_seen.insert(spec.rule.clone()) {
                    continue;
                }
                chains.push(build_chain(
                    program,
                    graph,
                    path,
                    spec,
                    edge,
                    indices,
                    branch_depth_limit,
                )?);
            }
        }
    }
    chains.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CodeInformationSummary {
        chains,
        source_language_tag: SOURCE_LANGUAGE_TAG.to_string(),
        generator_version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

/// Rejects programs that mention types the analysis cannot place: every
/// parameter and field type must be primitive, a known library type, or a
/// class declared in the program.
fn validate_types(program: &MiniProgram) -> Result<(), FrontendError> {
    let mut types = TypeTable::new();
    for class in &program.classes {
        types.declare(&class.name, Vec::new());
    }
    let check = |ty: &str, owner: String| -> Result<(), FrontendError> {
        if types.is_primitive(ty) || types.is_opaque(ty) || types.members_of(ty).is_some() {
            Ok(())
        } else {
            Err(FrontendError::UnknownType {
                type_name: ty.to_string(),
                context: owner,
            })
        }
    };
    for class in &program.classes {
        for field in &class.fields {
            check(&field.ty, format!("{}.{}", class.name, field.name))?;
        }
        for method in &class.methods {
            for param in &method.params {
                check(
                    &param.ty,
                    format!("{}.{} parameter {}", class.name, method.name, param.name),
                )?;
            }
        }
    }
    Ok(())
}

fn build_chain(
    program: &MiniProgram,
    graph: &CallGraph,
    path: &[MethodKey],
    spec: &SinkSpec,
    sink_edge: &CallEdge,
    sensitive: Vec<usize>,
    branch_depth_limit: u32,
) -> Result<CallChain, FrontendError> {
    let id = format!(
        "{}:{}",
        spec.rule,
        path.iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join("->")
    );
    let mut methods = Vec::new();
    for (i, key) in path.iter().enumerate() {
        let incoming = if i == 0 {
            None
        } else {
            first_edge_to(graph, &path[i - 1], key)
        };
        let next = path.get(i + 1);
        methods.push(build_record(
            program,
            graph,
            key,
            incoming,
            next,
            branch_depth_limit,
        )?);
    }
    Ok(CallChain {
        id,
        rule: spec.rule.clone(),
        methods,
        sink_call: Some(SinkCall {
            pattern: spec.pattern.clone(),
            snippet: sink_edge.call_snippet.clone(),
            arg_expressions: sink_edge.arg_texts.clone(),
            sensitive_arg_indices: sensitive,
        }),
    })
}

fn first_edge_to<'g>(
    graph: &'g CallGraph,
    caller: &MethodKey,
    callee: &MethodKey,
) -> Option<&'g CallEdge> {
    graph
        .edges_from(caller)
        .into_iter()
        .find(|e| &e.callee == callee)
}

fn user_info(
    program: &MiniProgram,
    key: &MethodKey,
    incoming: Option<&CallEdge>,
) -> Result<MethodInfo, FrontendError> {
    let class = program
        .find_class(&key.class)
        .ok_or_else(|| FrontendError::MissingMethod(key.to_string()))?;
    let method = class
        .methods
        .iter()
        .find(|m| m.lookup_name() == key.name)
        .ok_or_else(|| FrontendError::MissingMethod(key.to_string()))?;
    let pass = incoming
        .map(|edge| {
            edge.arg_texts
                .iter()
                .enumerate()
                .map(|(j, text)| ArgBinding {
                    actual_expression: text.clone(),
                    formal_index: j,
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(MethodInfo {
        class_name: class.name.clone(),
        def: method.sig_span.slice(&program.source).to_string(),
        code: method.span.slice(&program.source).to_string(),
        is_static: method.is_static,
        is_constructor: method.is_constructor,
        args: method
            .params
            .iter()
            .map(|p| ArgDecl {
                name: p.name.clone(),
                ty: p.ty.clone(),
            })
            .collect(),
        snippet_of_called: incoming.map(|e| e.call_snippet.clone()).unwrap_or_default(),
        invoker_of_called: incoming
            .and_then(|e| e.receiver_text.clone())
            .unwrap_or_default(),
        member_variables: class
            .fields
            .iter()
            .map(|f| MemberDecl {
                name: f.name.clone(),
                ty: f.ty.clone(),
            })
            .collect(),
        pass_relation_ship: pass,
        polluted_position: compute_taint(method, class),
    })
}

/// External callee metadata, modeled from the library table when known.
fn external_info(edge: &CallEdge) -> MethodInfo {
    let class_hint = if edge.callee.class.is_empty() {
        None
    } else {
        Some(edge.callee.class.as_str())
    };
    let model = library::lookup(class_hint, &edge.callee.name);
    let class_name = class_hint
        .map(String::from)
        .or_else(|| model.and_then(|m| m.class.map(String::from)))
        .unwrap_or_else(|| "Library".to_string());
    let (def, args, ret) = match model {
        Some(model) => (
            model.def_string(),
            model
                .params
                .iter()
                .enumerate()
                .map(|(i, ty)| ArgDecl {
                    name: format!("a{i}"),
                    ty: ty.to_string(),
                })
                .collect::<Vec<_>>(),
            model.ret,
        ),
        None => {
            let params = vec!["String"; edge.arg_texts.len()];
            (
                format!(
                    "Object {}.{}({})",
                    class_name,
                    edge.callee.name,
                    params.join(", ")
                ),
                edge.arg_texts
                    .iter()
                    .enumerate()
                    .map(|(i, _)| ArgDecl {
                        name: format!("a{i}"),
                        ty: "String".to_string(),
                    })
                    .collect(),
                "Object",
            )
        }
    };
    let mut polluted = Vec::new();
    if ret != "void" {
        let param_count = args.len();
        let flows: Vec<usize> = match model.map(|m| m.propagation) {
            Some(library::Propagation::None) | Some(library::Propagation::Receiver) => Vec::new(),
            Some(library::Propagation::ReceiverAndArg(i)) => vec![i],
            Some(library::Propagation::Args)
            | Some(library::Propagation::ReceiverAndArgs)
            | None => (0..param_count).collect(),
        };
        for i in flows {
            if let Some(edge) = TaintEdge::new(Slot::Param(i), Slot::Return) {
                polluted.push(edge);
            }
        }
    }
    MethodInfo {
        class_name,
        def,
        code: String::new(),
        is_static: false,
        is_constructor: edge.callee.name == "new",
        args,
        snippet_of_called: edge.call_snippet.clone(),
        invoker_of_called: edge.receiver_text.clone().unwrap_or_default(),
        member_variables: Vec::new(),
        pass_relation_ship: edge
            .arg_texts
            .iter()
            .enumerate()
            .map(|(j, text)| ArgBinding {
                actual_expression: text.clone(),
                formal_index: j,
            })
            .collect(),
        polluted_position: polluted,
    }
}

fn build_record(
    program: &MiniProgram,
    graph: &CallGraph,
    key: &MethodKey,
    incoming: Option<&CallEdge>,
    next: Option<&MethodKey>,
    branch_depth_limit: u32,
) -> Result<MethodRecord, FrontendError> {
    let info = user_info(program, key, incoming)?;
    let mut branchs = Vec::new();
    let mut seen: BTreeSet<MethodKey> = BTreeSet::new();
    for edge in graph.edges_from(key) {
        if Some(&edge.callee) == next || edge.callee == *key {
            continue;
        }
        if !seen.insert(edge.callee.clone()) {
            continue;
        }
        let mut ancestors = vec![key.clone()];
        branchs.push(build_branch(
            program,
            graph,
            edge,
            0,
            branch_depth_limit,
            &mut ancestors,
        )?);
    }
    Ok(MethodRecord { info, branchs })
}

fn build_branch(
    program: &MiniProgram,
    graph: &CallGraph,
    edge: &CallEdge,
    depth: u32,
    limit: u32,
    ancestors: &mut Vec<MethodKey>,
) -> Result<BranchRecord, FrontendError> {
    if edge.external {
        return Ok(BranchRecord {
            info: external_info(edge),
            children: Vec::new(),
            depth,
        });
    }
    let info = user_info(program, &edge.callee, Some(edge))?;
    let mut children = Vec::new();
    if depth < limit {
        ancestors.push(edge.callee.clone());
        let mut seen: BTreeSet<MethodKey> = BTreeSet::new();
        for child_edge in graph.edges_from(&edge.callee) {
            if ancestors.contains(&child_edge.callee) || !seen.insert(child_edge.callee.clone()) {
                continue;
            }
            children.push(build_branch(
                program,
                graph,
                child_edge,
                depth + 1,
                limit,
                ancestors,
            )?);
        }
        ancestors.pop();
    }
    Ok(BranchRecord {
        info,
        children,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{analyze_source, parse_program};
    use crate::frontend::callgraph::{build_call_graph, extract_main_paths};
    use crate::summary::{parse_summary, serialize_summary};

    const LISTING1: &str = r#"public class BenchmarkTest {
    public void doGet(HttpServletRequest request, HttpServletResponse response) {
        String fileName = request.getParameter("fileName");
        String content = read(fileName);
        response.getWriter().write(content);
    }

    public String read(String fileName) {
        String path = getPath(fileName);
        return readFile(path);
    }

    public String getPath(String fileName) {
        if (!fileName.contains("..")) {
            return "/tmp/files/" + fileName;
        } else {
            throw new IllegalArgumentException("Invalid file name");
        }
    }

    public String readFile(String path) throws IOException {
        return Files.readString(Paths.get(path));
    }
}
"#;

    fn summary_for(source: &str) -> CodeInformationSummary {
        analyze_source(source, &SourceSinkConfig::default_config(), DEFAULT_BRANCH_DEPTH, 6)
            .unwrap()
    }

    #[test]
    fn listing1_chain_has_three_records_and_a_sink_call() {
        let summary = summary_for(LISTING1);
        assert_eq!(summary.chains.len(), 1);
        let chain = &summary.chains[0];
        assert_eq!(chain.rule, "path-traversal");
        assert_eq!(
            chain.id,
            "path-traversal:BenchmarkTest.doGet->BenchmarkTest.read->BenchmarkTest.readFile"
        );
        assert_eq!(chain.methods.len(), 3);
        let sink = chain.sink_call.as_ref().unwrap();
        assert_eq!(sink.pattern, "Files.readString");
        assert_eq!(sink.snippet, "Files.readString(Paths.get(path))");
        assert_eq!(sink.arg_expressions, ["Paths.get(path)"]);
        assert_eq!(sink.sensitive_arg_indices, [0]);
    }

    #[test]
    fn listing1_records_carry_adjacency_metadata() {
        let summary = summary_for(LISTING1);
        let chain = &summary.chains[0];
        let read = &chain.methods[1];
        assert_eq!(read.info.snippet_of_called, "read(fileName)");
        assert_eq!(read.info.pass_relation_ship.len(), 1);
        assert_eq!(read.info.pass_relation_ship[0].actual_expression, "fileName");
        assert_eq!(
            read.info.polluted_position[0].to_string(),
            "P0->RET"
        );
        // doGet heads the chain, so its call-site fields stay empty.
        assert!(chain.methods[0].info.snippet_of_called.is_empty());
    }

    #[test]
    fn branch_trees_exclude_the_next_main_path_method() {
        let summary = summary_for(LISTING1);
        let chain = &summary.chains[0];
        let read = &chain.methods[1];
        let roots: Vec<String> = read
            .branchs
            .iter()
            .map(|b| b.info.qualified_name())
            .collect();
        assert_eq!(roots, ["BenchmarkTest.getPath"]);
        // getPath calls only external code, recorded as leaf children.
        let children: Vec<String> = read.branchs[0]
            .children
            .iter()
            .map(|b| b.info.qualified_name())
            .collect();
        assert_eq!(
            children,
            ["String.contains", "IllegalArgumentException.new"]
        );
        assert!(read.branchs[0].children.iter().all(|c| c.info.code.is_empty()));
    }

    #[test]
    fn external_branch_nodes_model_known_dataflow() {
        let summary = summary_for(LISTING1);
        let read_file = &summary.chains[0].methods[2];
        let paths_get = read_file
            .branchs
            .iter()
            .find(|b| b.info.qualified_name() == "Paths.get")
            .unwrap();
        assert_eq!(paths_get.info.polluted_position[0].to_string(), "P0->RET");
        assert_eq!(paths_get.info.def, "Path Paths.get(String)");
    }

    #[test]
    fn emitted_summary_round_trips_through_the_strict_parser() {
        let summary = summary_for(LISTING1);
        let text = serialize_summary(&summary);
        let parsed = parse_summary(&text).unwrap();
        assert_eq!(parsed, summary);
    }

    #[test]
    fn branch_depth_limit_truncates_deep_trees() {
        let source = r#"class Deep {
            void doGet(HttpServletRequest request) {
                String x = request.getParameter("x");
                sinkIt(x);
            }
            void sinkIt(String x) {
                helper1(x);
                Runtime.getRuntime().exec(x);
            }
            void helper1(String x) { helper2(x); }
            void helper2(String x) { helper3(x); }
            void helper3(String x) { helper4(x); }
            void helper4(String x) { x.trim(); }
        }"#;
        let program = parse_program(source).unwrap();
        let graph = build_call_graph(&program).unwrap();
        let config = SourceSinkConfig::default_config();
        let paths = extract_main_paths(&graph, &config, 6);

        fn tree_size(b: &BranchRecord) -> usize {
            1 + b.children.iter().map(tree_size).sum::<usize>()
        }
        fn max_depth(b: &BranchRecord) -> u32 {
            b.children.iter().map(max_depth).max().unwrap_or(b.depth)
        }

        let deep = emit_summary(&program, &graph, &paths, &config, 4).unwrap();
        let helper1 = &deep.chains[0].methods[1].branchs[0];
        assert_eq!(max_depth(helper1), 4);
        assert_eq!(tree_size(helper1), 5);

        let shallow = emit_summary(&program, &graph, &paths, &config, 1).unwrap();
        let helper1 = &shallow.chains[0].methods[1].branchs[0];
        assert_eq!(max_depth(helper1), 1);
        assert_eq!(tree_size(helper1), 2);
    }

    #[test]
    fn one_chain_per_rule_when_sinks_overlap() {
        let source = r#"class Multi {
            void doGet(HttpServletRequest request, Connection con) {
                String q = request.getParameter("q");
                run(con, q);
            }
            void run(Connection con, String q) {
                Statement st = con.createStatement();
                st.executeQuery(q);
                Runtime.getRuntime().exec(q);
            }
        }"#;
        let summary = summary_for(source);
        let rules: Vec<&str> = summary.chains.iter().map(|c| c.rule.as_str()).collect();
        assert_eq!(rules, ["command-injection", "sql-injection"]);
    }

    #[test]
    fn unknown_parameter_type_is_rejected() {
        let source = "class A { void f(Widget w) { } }";
        let program = parse_program(source).unwrap();
        let graph = build_call_graph(&program).unwrap();
        let err = emit_summary(
            &program,
            &graph,
            &[],
            &SourceSinkConfig::default_config(),
            DEFAULT_BRANCH_DEPTH,
        )
        .unwrap_err();
        assert!(matches!(err, FrontendError::UnknownType { .. }));
    }
}
