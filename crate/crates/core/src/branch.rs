//! Branch-method analysis: prunes branch trees down to what can influence
//! the main path, classifies each branch, and probes how parameters flow
//! through it.

use std::collections::{BTreeSet, VecDeque};

use crate::solver::{RequestKind, SolverBackend, SolverRequest, TargetSlot};
use crate::summary::{BranchRecord, MethodInfo, Slot, TaintEdge, TypeTable};
use crate::rules::VulnerabilityRule;
use crate::pipeline::StateKey;
use crate::textflow::identifier_tokens;
use crate::frontend::library;

/// Limits applied when pruning one branch tree.
#[derive(Debug, Clone)]
pub struct PruneConfig {
    /// Deepest layer kept; the root is layer 0.
    pub max_depth: u32,
    /// Upper bound on nodes per tree, taken as a breadth-first prefix.
    pub max_methods: usize,
    /// Qualified (or bare) names whose bodies add nothing beyond their
    /// modeled dataflow.
    pub known_semantics: BTreeSet<String>,
}

impl Default for PruneConfig {
    fn default() -> PruneConfig {
        PruneConfig {
            max_depth: 3,
            max_methods: 12,
            known_semantics: library::known_semantics_ids().into_iter().collect(),
        }
    }
}

/// Prunes a branch tree in four passes: dataflow relevance, layer depth,
/// known-semantics body elision, and a breadth-first node cap. The root is
/// always retained and the node count never increases.
pub fn prune_tree(tree: &BranchRecord, target: &Slot, config: &PruneConfig) -> BranchRecord {
    let mut root = dataflow_filter(tree, target);
    layer_filter(&mut root, config.max_depth);
    known_filter(&mut root, &config.known_semantics);
    upper_limit_filter(&mut root, config.max_methods);
    root
}

/// Slots whose data counts as "reaching the result" of a node: the primary
/// target plus every member, since members persist past the call.
fn live_slots(info: &MethodInfo, primary: &Slot) -> BTreeSet<Slot> {
    let mut slots = BTreeSet::new();
    slots.insert(primary.clone());
    for member in &info.member_variables {
        slots.insert(Slot::Member(member.name.clone()));
    }
    slots
}

/// Transitive-closure sources over taint edges: every slot with an edge path
/// into `targets`.
fn reaching_slots(edges: &[TaintEdge], targets: &BTreeSet<Slot>) -> BTreeSet<Slot> {
    let mut reach = targets.clone();
    loop {
        let before = reach.len();
        for edge in edges {
            if reach.contains(&edge.to) {
                reach.insert(edge.from.clone());
            }
        }
        if reach.len() == before {
            return reach;
        }
    }
}

/// Names carrying data that reaches the node's live slots.
fn carrier_names(info: &MethodInfo, primary: &Slot) -> BTreeSet<String> {
    let targets = live_slots(info, primary);
    let reach = reaching_slots(&info.polluted_position, &targets);
    let mut names = BTreeSet::new();
    for slot in reach {
        match slot {
            Slot::Param(i) => {
                if let Some(arg) = info.args.get(i) {
                    names.insert(arg.name.clone());
                }
            }
            Slot::Member(name) => {
                names.insert(name);
            }
            Slot::Return => {}
        }
    }
    names
}

fn dataflow_filter(node: &BranchRecord, primary: &Slot) -> BranchRecord {
    let carriers = carrier_names(&node.info, primary);
    let children = node
        .children
        .iter()
        .filter(|child| child_touches_carriers(child, &carriers))
        .map(|child| dataflow_filter(child, &Slot::Return))
        .collect();
    BranchRecord {
        info: node.info.clone(),
        children,
        depth: node.depth,
    }
}

/// A child is relevant when its call expression mentions a carrier name or
/// its own dataflow writes into a carrier member of the parent.
fn child_touches_carriers(child: &BranchRecord, carriers: &BTreeSet<String>) -> bool {
    let mut tokens = identifier_tokens(&child.info.snippet_of_called);
    tokens.extend(identifier_tokens(&child.info.invoker_of_called));
    if tokens.iter().any(|t| carriers.contains(t)) {
        return true;
    }
    child.info.polluted_position.iter().any(|edge| {
        matches!(&edge.to, Slot::Member(name) if carriers.contains(name))
    })
}

fn layer_filter(node: &mut BranchRecord, max_depth: u32) {
    node.children.retain(|c| c.depth <= max_depth);
    for child in &mut node.children {
        layer_filter(child, max_depth);
    }
}

fn known_filter(node: &mut BranchRecord, known: &BTreeSet<String>) {
    if known.contains(&node.info.qualified_name()) || known.contains(&node.info.method_name()) {
        node.info.code = String::new();
        node.children.clear();
    }
    for child in &mut node.children {
        known_filter(child, known);
    }
}

fn count_nodes(node: &BranchRecord) -> usize {
    1 + node.children.iter().map(count_nodes).sum::<usize>()
}

fn upper_limit_filter(root: &mut BranchRecord, max_methods: usize) {
    if count_nodes(root) <= max_methods {
        return;
    }
    // Breadth-first order guarantees every kept node's ancestors are kept.
    let mut kept: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut queue: VecDeque<(Vec<usize>, &BranchRecord)> = VecDeque::new();
    queue.push_back((Vec::new(), root));
    let mut order: Vec<(Vec<usize>, &BranchRecord)> = Vec::new();
    while let Some((path, node)) = queue.pop_front() {
        order.push((path.clone(), node));
        for (i, child) in node.children.iter().enumerate() {
            let mut child_path = path.clone();
            child_path.push(i);
            queue.push_back((child_path, child));
        }
    }
    for (path, _) in order.into_iter().take(max_methods.max(1)) {
        kept.insert(path);
    }
    retain_paths(root, &mut Vec::new(), &kept);
}

fn retain_paths(node: &mut BranchRecord, path: &mut Vec<usize>, kept: &BTreeSet<Vec<usize>>) {
    let mut filtered = Vec::new();
    for (i, child) in node.children.drain(..).enumerate() {
        path.push(i);
        if kept.contains(path) {
            filtered.push((path.clone(), child));
        }
        path.pop();
    }
    for (child_path, mut child) in filtered {
        path.clone_from(&child_path);
        retain_paths(&mut child, path, kept);
        path.truncate(child_path.len() - 1);
        node.children.push(child);
    }
}

/// Branch categories in decreasing analysis priority. Classification walks
/// the list top to bottom and stops at the first match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub enum BranchCategory {
    /// Constructs or returns a critical-typed value.
    CriticalConstructorOrReturner,
    /// Constructs or returns a type that encapsulates a critical member.
    EncapsulatedConstructorOrReturner,
    /// Consumes a critical-typed parameter.
    CriticalParamConsumer,
    /// Consumes a parameter whose type encapsulates a critical member.
    EncapsulatedParamConsumer,
    /// Returns boolean; a potential guard for surrounding conditions.
    BooleanReturner,
    /// Everything else; dataflow summary only.
    Other,
}

impl BranchCategory {
    pub fn priority(self) -> u8 {
        match self {
            BranchCategory::CriticalConstructorOrReturner => 1,
            BranchCategory::EncapsulatedConstructorOrReturner => 2,
            BranchCategory::CriticalParamConsumer => 3,
            BranchCategory::EncapsulatedParamConsumer => 4,
            BranchCategory::BooleanReturner => 5,
            BranchCategory::Other => 6,
        }
    }
}

fn encapsulates_critical(ty: &str, rule: &VulnerabilityRule, types: &TypeTable) -> bool {
    types
        .members_of(ty)
        .is_some_and(|members| {
            members
                .iter()
                .any(|m| types.is_critical(&m.ty, &rule.critical_types))
        })
}

/// Assigns the analysis category for one branch method.
pub fn classify_branch(
    info: &MethodInfo,
    rule: &VulnerabilityRule,
    types: &TypeTable,
) -> BranchCategory {
    let produced = if info.is_constructor {
        Some(info.class_name.clone())
    } else {
        info.return_type().filter(|t| t != "void")
    };
    if let Some(ty) = &produced {
        if types.is_critical(ty, &rule.critical_types) {
            return BranchCategory::CriticalConstructorOrReturner;
        }
        if encapsulates_critical(ty, rule, types) {
            return BranchCategory::EncapsulatedConstructorOrReturner;
        }
    }
    if info
        .args
        .iter()
        .any(|a| types.is_critical(&a.ty, &rule.critical_types))
    {
        return BranchCategory::CriticalParamConsumer;
    }
    if info.args.iter().any(|a| encapsulates_critical(&a.ty, rule, types)) {
        return BranchCategory::EncapsulatedParamConsumer;
    }
    if produced.as_deref() == Some("boolean") {
        return BranchCategory::BooleanReturner;
    }
    BranchCategory::Other
}

/// Probe result for one parameter of a branch method.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamVerdict {
    pub param_index: usize,
    /// True when attacker data in this parameter reaches the method's result
    /// without a satisfying filter. Probe failures land here too.
    pub reaches_target_unfiltered: bool,
    /// Member that receives the flow, when it lands in one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub via_member: Option<String>,
}

/// What branch analysis concluded about one branch tree.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum BranchOutcome {
    /// No probing done; the taint edges say everything worth knowing.
    Dataflow { edges: Vec<String> },
    /// Per-parameter probe verdicts, in parameter order.
    ParamVerdicts { verdicts: Vec<ParamVerdict> },
    /// Boolean-returner guard summary.
    BooleanCheck {
        /// True when returning true implies a satisfying filter passed.
        guards_condition: bool,
        guarded_params: Vec<usize>,
    },
}

/// Full analysis of one pruned branch tree.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BranchAnalysis {
    pub qualified_name: String,
    pub method_name: String,
    pub category: BranchCategory,
    pub outcome: BranchOutcome,
    /// Call expression inside the caller, for fact placement and ordering.
    pub snippet: String,
    pub invoker: String,
    /// Actual argument expression per formal index at the call site.
    pub actual_args: Vec<String>,
    /// Backend probes issued.
    pub backend_calls: u32,
}

/// Parameters whose data reaches the return value or a member, with the
/// member they land in when they bypass the return value.
fn contributing_params(info: &MethodInfo) -> Vec<(usize, Option<String>)> {
    let mut result = Vec::new();
    for i in 0..info.args.len() {
        let mut targets = BTreeSet::new();
        targets.insert(Slot::Return);
        let to_return =
            reaching_slots(&info.polluted_position, &targets).contains(&Slot::Param(i));
        let mut via_member = None;
        if !to_return {
            for member in &info.member_variables {
                let mut target = BTreeSet::new();
                target.insert(Slot::Member(member.name.clone()));
                if reaching_slots(&info.polluted_position, &target).contains(&Slot::Param(i)) {
                    via_member = Some(member.name.clone());
                    break;
                }
            }
        }
        if to_return || via_member.is_some() {
            result.push((i, via_member));
        }
    }
    result
}

fn descendants_with_bodies(node: &BranchRecord, out: &mut Vec<crate::solver::AuxMethod>) {
    for child in &node.children {
        if !child.info.code.is_empty() {
            out.push(crate::solver::AuxMethod {
                qualified_name: child.info.qualified_name(),
                def: child.info.def.clone(),
                code: child.info.code.clone(),
            });
        }
        descendants_with_bodies(child, out);
    }
}

fn probe_request(
    root: &BranchRecord,
    rule: &VulnerabilityRule,
    param_index: Option<usize>,
    objective: String,
) -> SolverRequest {
    let mut aux = Vec::new();
    descendants_with_bodies(root, &mut aux);
    let target = param_index
        .and_then(|i| {
            root.info.args.get(i).map(|a| TargetSlot {
                key: StateKey::param(i),
                name: a.name.clone(),
                ty: a.ty.clone(),
            })
        })
        .into_iter()
        .collect();
    SolverRequest {
        kind: RequestKind::BranchObjective,
        rule_id: rule.id.clone(),
        condition_text: rule.non_exploitable.human_text.clone(),
        caller_code: root.info.code.clone(),
        member_variables: root.info.member_variables.clone(),
        call_site: String::new(),
        invoker: String::new(),
        bindings: Vec::new(),
        target_slots: target,
        context_text: String::new(),
        context_facts: Vec::new(),
        seed_states: Vec::new(),
        objective_text: objective,
        probe_param: param_index,
        aux_methods: aux,
    }
}

/// Analyzes one pruned branch tree, probing the backend as the category
/// requires. Probe failures degrade toward "unfiltered", never the reverse.
pub fn analyze_branch(
    pruned: &BranchRecord,
    category: BranchCategory,
    rule: &VulnerabilityRule,
    backend: &dyn SolverBackend,
) -> BranchAnalysis {
    let info = &pruned.info;
    let base = |outcome: BranchOutcome, calls: u32| BranchAnalysis {
        qualified_name: info.qualified_name(),
        method_name: info.method_name(),
        category,
        outcome,
        snippet: info.snippet_of_called.clone(),
        invoker: info.invoker_of_called.clone(),
        actual_args: info
            .pass_relation_ship
            .iter()
            .map(|b| b.actual_expression.clone())
            .collect(),
        backend_calls: calls,
    };
    let dataflow = || BranchOutcome::Dataflow {
        edges: info
            .polluted_position
            .iter()
            .map(|e| e.to_string())
            .collect(),
    };

    // Bodiless methods carry their whole semantics in the taint edges.
    if info.code.is_empty() || category == BranchCategory::Other {
        return base(dataflow(), 0);
    }

    match category {
        BranchCategory::BooleanReturner => {
            let request = probe_request(
                pruned,
                rule,
                None,
                format!(
                    "decide whether `{}` returning true implies its inputs passed a filter satisfying the condition",
                    info.method_name()
                ),
            );
            match backend.solve(&request) {
                Ok(response) => {
                    let guarded: Vec<usize> = response
                        .entries
                        .iter()
                        .filter(|e| e.verdict == crate::rules::StateVerdict::SatisfiesU)
                        .map(|e| e.key.arg_index)
                        .collect();
                    base(
                        BranchOutcome::BooleanCheck {
                            guards_condition: !guarded.is_empty(),
                            guarded_params: guarded,
                        },
                        1,
                    )
                }
                Err(_) => base(
                    BranchOutcome::BooleanCheck {
                        guards_condition: false,
                        guarded_params: Vec::new(),
                    },
                    1,
                ),
            }
        }
        _ => {
            let mut verdicts = Vec::new();
            let mut calls = 0;
            for (param_index, via_member) in contributing_params(info) {
                let name = info
                    .args
                    .get(param_index)
                    .map(|a| a.name.clone())
                    .unwrap_or_else(|| format!("arg{param_index}"));
                let request = probe_request(
                    pruned,
                    rule,
                    Some(param_index),
                    format!(
                        "treat parameter `{name}` as attacker-controlled and every other input as a benign literal; decide whether the method's result still satisfies the condition"
                    ),
                );
                calls += 1;
                let unfiltered = match backend.solve(&request) {
                    Ok(response) => response
                        .entries
                        .iter()
                        .find(|e| e.key.arg_index == param_index)
                        .map(|e| e.verdict != crate::rules::StateVerdict::SatisfiesU)
                        .unwrap_or(true),
                    Err(_) => true,
                };
                verdicts.push(ParamVerdict {
                    param_index,
                    reaches_target_unfiltered: unfiltered,
                    via_member,
                });
            }
            base(BranchOutcome::ParamVerdicts { verdicts }, calls)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::builtin_rules;
    use crate::solver::{ResponseEntry, SolverError, SolverResponse};
    use crate::summary::{ArgDecl, MemberDecl};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn info(
        class: &str,
        def: &str,
        code: &str,
        args: &[(&str, &str)],
        edges: &[&str],
        snippet: &str,
    ) -> MethodInfo {
        MethodInfo {
            class_name: class.to_string(),
            def: def.to_string(),
            code: code.to_string(),
            args: args
                .iter()
                .map(|(n, t)| ArgDecl {
                    name: n.to_string(),
                    ty: t.to_string(),
                })
                .collect(),
            polluted_position: edges.iter().map(|e| TaintEdge::parse(e).unwrap()).collect(),
            snippet_of_called: snippet.to_string(),
            ..MethodInfo::default()
        }
    }

    fn node(info: MethodInfo, depth: u32, children: Vec<BranchRecord>) -> BranchRecord {
        BranchRecord {
            info,
            children,
            depth,
        }
    }

    fn rule() -> crate::rules::VulnerabilityRule {
        builtin_rules()
            .into_iter()
            .find(|r| r.id == "path-traversal")
            .unwrap()
    }

    #[test]
    fn default_prune_config_matches_documented_limits() {
        let config = PruneConfig::default();
        assert_eq!(config.max_depth, 3);
        assert_eq!(config.max_methods, 12);
        assert!(config.known_semantics.contains("String.contains"));
    }

    #[test]
    fn dataflow_filter_drops_children_off_the_carrier_set() {
        // Root: String getPath(String fileName), P0->RET. Child A's call
        // mentions fileName; child B only mentions an unrelated local.
        let child_a = node(
            info("A", "String norm(String s)", "...", &[("s", "String")], &[], "norm(fileName)"),
            1,
            vec![],
        );
        let child_b = node(
            info("A", "void log(String s)", "...", &[("s", "String")], &[], "log(other)"),
            1,
            vec![],
        );
        let root = node(
            info(
                "A",
                "String getPath(String fileName)",
                "return norm(fileName);",
                &[("fileName", "String")],
                &["P0->RET"],
                "getPath(fileName)",
            ),
            0,
            vec![child_a, child_b],
        );
        let config = PruneConfig {
            known_semantics: BTreeSet::new(),
            ..PruneConfig::default()
        };
        let pruned = prune_tree(&root, &Slot::Return, &config);
        assert_eq!(pruned.children.len(), 1);
        assert_eq!(pruned.children[0].info.method_name(), "norm");
    }

    #[test]
    fn member_writing_child_survives_dataflow_filter() {
        let setter = node(
            info("A", "void init()", "...", &[], &["P0->M:base"], "init()"),
            1,
            vec![],
        );
        let mut root_info = info(
            "A",
            "String resolve(String p)",
            "...",
            &[("p", "String")],
            &["P0->RET", "M:base->RET"],
            "resolve(p)",
        );
        root_info.member_variables = vec![MemberDecl {
            name: "base".to_string(),
            ty: "String".to_string(),
        }];
        let root = node(root_info, 0, vec![setter]);
        let pruned = dataflow_filter(&root, &Slot::Return);
        assert_eq!(pruned.children.len(), 1);
    }

    #[test]
    fn layer_filter_cuts_below_max_depth() {
        let deep = node(
            info("A", "void d3(String x)", "...", &[("x", "String")], &[], "d3(x)"),
            3,
            vec![],
        );
        let mid = node(
            info("A", "String d2(String x)", "...", &[("x", "String")], &["P0->RET"], "d2(x)"),
            2,
            vec![deep],
        );
        let top = node(
            info("A", "String d1(String x)", "...", &[("x", "String")], &["P0->RET"], "d1(x)"),
            1,
            vec![mid],
        );
        let root = node(
            info("A", "String d0(String x)", "...", &[("x", "String")], &["P0->RET"], "d0(x)"),
            0,
            vec![top],
        );
        let config = PruneConfig {
            max_depth: 2,
            known_semantics: BTreeSet::new(),
            ..PruneConfig::default()
        };
        let pruned = prune_tree(&root, &Slot::Return, &config);
        assert_eq!(count_nodes(&pruned), 3);
    }

    #[test]
    fn known_semantics_elides_bodies_but_keeps_signatures() {
        let child = node(
            info(
                "String",
                "String String.trim()",
                "nontrivial body",
                &[],
                &[],
                "x.trim()",
            ),
            1,
            vec![node(
                info("A", "void gone(String x)", "...", &[("x", "String")], &[], "gone(x)"),
                2,
                vec![],
            )],
        );
        let mut root = node(
            info("A", "String f(String x)", "...", &[("x", "String")], &["P0->RET"], "f(x)"),
            0,
            vec![child],
        );
        // Make the child relevant so only the known filter can touch it.
        root.children[0].info.invoker_of_called = "x".to_string();
        let pruned = prune_tree(&root, &Slot::Return, &PruneConfig::default());
        let trimmed = &pruned.children[0];
        assert_eq!(trimmed.info.def, "String String.trim()");
        assert!(trimmed.info.code.is_empty());
        assert!(trimmed.children.is_empty());
    }

    /// Fifteen-node complete-ish tree capped at seven methods: the
    /// breadth-first prefix keeps the root, its three children, and the
    /// first three grandchildren.
    #[test]
    fn upper_limit_keeps_breadth_first_prefix() {
        fn leafy(tag: usize, depth: u32, children: Vec<BranchRecord>) -> BranchRecord {
            node(
                info(
                    "T",
                    &format!("String m{tag}(String x)"),
                    "body",
                    &[("x", "String")],
                    &["P0->RET"],
                    "m(x)",
                ),
                depth,
                children,
            )
        }
        let mut tag = 0;
        let mut next = || {
            tag += 1;
            tag
        };
        let grandchildren = |next: &mut dyn FnMut() -> usize| {
            (0..2).map(|_| leafy(next(), 2, vec![])).collect::<Vec<_>>()
        };
        let root_tag = next();
        let mut children = Vec::new();
        let mut grandchild_tags = Vec::new();
        for _ in 0..3 {
            let child_tag = next();
            let gc = grandchildren(&mut next);
            grandchild_tags.extend(gc.iter().map(|g| g.info.def.clone()));
            children.push(leafy(child_tag, 1, gc));
        }
        // 1 root + 3 children + 6 grandchildren = 10; extend to 15 with
        // great-grandchildren under the first grandchild.
        let mut root = leafy(root_tag, 0, children);
        let extra: Vec<BranchRecord> = (0..5).map(|_| leafy(next(), 3, vec![])).collect();
        root.children[0].children[0].children = extra;
        assert_eq!(count_nodes(&root), 15);

        let config = PruneConfig {
            max_methods: 7,
            known_semantics: BTreeSet::new(),
            ..PruneConfig::default()
        };
        let pruned = prune_tree(&root, &Slot::Return, &config);
        assert_eq!(count_nodes(&pruned), 7);
        // Kept: root (m1), children m2 m5 m8, then grandchildren m3 m4 m6.
        assert_eq!(pruned.children.len(), 3);
        assert_eq!(pruned.children[0].children.len(), 2);
        assert_eq!(pruned.children[1].children.len(), 1);
        assert!(pruned.children[2].children.is_empty());
        assert!(pruned.children[0].children[0].children.is_empty());
    }

    fn random_tree(rng: &mut ChaCha8Rng, depth: u32, max_depth: u32) -> BranchRecord {
        let names = ["fileName", "path", "other", "q"];
        let arg = names[rng.gen_range(0..names.len())];
        let edges: &[&str] = if rng.gen_bool(0.6) { &["P0->RET"] } else { &[] };
        let snippet = format!("call({})", names[rng.gen_range(0..names.len())]);
        let code = if rng.gen_bool(0.8) { "body" } else { "" };
        let child_count = if depth >= max_depth {
            0
        } else {
            rng.gen_range(0..3)
        };
        let children = (0..child_count)
            .map(|_| random_tree(rng, depth + 1, max_depth))
            .collect();
        node(
            info(
                "R",
                &format!("String m(String {arg})"),
                code,
                &[(arg, "String")],
                edges,
                &snippet,
            ),
            depth,
            children,
        )
    }

    #[test]
    fn prune_is_idempotent_and_never_grows_across_random_trees() {
        for seed in 0..200u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree(&mut rng, 0, 4);
            let config = PruneConfig {
                max_depth: 2,
                max_methods: 5,
                ..PruneConfig::default()
            };
            let once = prune_tree(&tree, &Slot::Return, &config);
            assert!(count_nodes(&once) <= count_nodes(&tree));
            assert!(count_nodes(&once) <= config.max_methods);
            let twice = prune_tree(&once, &Slot::Return, &config);
            assert_eq!(once, twice, "seed {seed} not idempotent");
        }
    }

    #[test]
    fn classification_follows_fixed_precedence() {
        let rule = rule();
        let types = TypeTable::new();
        let critical_returner = info("A", "String getPath(String f)", "x", &[("f", "String")], &[], "");
        assert_eq!(
            classify_branch(&critical_returner, &rule, &types),
            BranchCategory::CriticalConstructorOrReturner
        );
        // Boolean returner with a critical param: the param consumer
        // category wins over the boolean one.
        let is_safe = info("A", "boolean isSafe(String s)", "x", &[("s", "String")], &[], "");
        assert_eq!(
            classify_branch(&is_safe, &rule, &types),
            BranchCategory::CriticalParamConsumer
        );
        let flag_up = info("A", "boolean flagUp()", "x", &[], &[], "");
        assert_eq!(
            classify_branch(&flag_up, &rule, &types),
            BranchCategory::BooleanReturner
        );
        let counter = info("A", "int count()", "x", &[], &[], "");
        assert_eq!(classify_branch(&counter, &rule, &types), BranchCategory::Other);

        let mut types = TypeTable::new();
        types.declare(
            "Wrapper",
            vec![MemberDecl {
                name: "inner".to_string(),
                ty: "String".to_string(),
            }],
        );
        let mut ctor = info("Wrapper", "Wrapper(String q)", "x", &[("q", "String")], &[], "");
        ctor.is_constructor = true;
        assert_eq!(
            classify_branch(&ctor, &rule, &types),
            BranchCategory::EncapsulatedConstructorOrReturner
        );
        let consumer = info("A", "void use(Wrapper w)", "x", &[("w", "Wrapper")], &[], "");
        assert_eq!(
            classify_branch(&consumer, &rule, &types),
            BranchCategory::EncapsulatedParamConsumer
        );
    }

    struct CountingBackend {
        calls: AtomicU32,
        reply: fn(&SolverRequest) -> Result<SolverResponse, SolverError>,
    }

    impl SolverBackend for CountingBackend {
        fn solve(&self, request: &SolverRequest) -> Result<SolverResponse, SolverError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            (self.reply)(request)
        }
        fn name(&self) -> &'static str {
            "counting"
        }
    }

    fn satisfies_reply(request: &SolverRequest) -> Result<SolverResponse, SolverError> {
        Ok(SolverResponse {
            transfer: None,
            entries: vec![ResponseEntry {
                key: StateKey::param(request.probe_param.unwrap_or(0)),
                verdict: crate::rules::StateVerdict::SatisfiesU,
                justification: "filtered".to_string(),
            }],
            raw: String::new(),
        })
    }

    fn failing_reply(_: &SolverRequest) -> Result<SolverResponse, SolverError> {
        Err(SolverError::Transport {
            message: "down".to_string(),
            attempts: 1,
        })
    }

    #[test]
    fn other_category_uses_dataflow_and_never_calls_the_backend() {
        let backend = CountingBackend {
            calls: AtomicU32::new(0),
            reply: satisfies_reply,
        };
        let tree = node(
            info("A", "void log(int n)", "body", &[("n", "int")], &[], "log(1)"),
            0,
            vec![],
        );
        let analysis = analyze_branch(&tree, BranchCategory::Other, &rule(), &backend);
        assert!(matches!(analysis.outcome, BranchOutcome::Dataflow { .. }));
        assert_eq!(analysis.backend_calls, 0);
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn param_probe_records_filtered_verdicts() {
        let backend = CountingBackend {
            calls: AtomicU32::new(0),
            reply: satisfies_reply,
        };
        let tree = node(
            info(
                "A",
                "String getPath(String fileName)",
                "guarded body",
                &[("fileName", "String")],
                &["P0->RET"],
                "getPath(fileName)",
            ),
            0,
            vec![],
        );
        let analysis = analyze_branch(
            &tree,
            BranchCategory::CriticalConstructorOrReturner,
            &rule(),
            &backend,
        );
        match &analysis.outcome {
            BranchOutcome::ParamVerdicts { verdicts } => {
                assert_eq!(verdicts.len(), 1);
                assert!(!verdicts[0].reaches_target_unfiltered);
                assert_eq!(verdicts[0].via_member, None);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn probe_failure_degrades_to_unfiltered() {
        let backend = CountingBackend {
            calls: AtomicU32::new(0),
            reply: failing_reply,
        };
        let tree = node(
            info(
                "A",
                "String getPath(String fileName)",
                "body",
                &[("fileName", "String")],
                &["P0->RET"],
                "getPath(fileName)",
            ),
            0,
            vec![],
        );
        let analysis = analyze_branch(
            &tree,
            BranchCategory::CriticalConstructorOrReturner,
            &rule(),
            &backend,
        );
        match &analysis.outcome {
            BranchOutcome::ParamVerdicts { verdicts } => {
                assert!(verdicts[0].reaches_target_unfiltered);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn constructor_flow_reports_the_receiving_member() {
        let backend = CountingBackend {
            calls: AtomicU32::new(0),
            reply: failing_reply,
        };
        let mut ctor_info = info(
            "Wrapper",
            "Wrapper(String q)",
            "this.query = q;",
            &[("q", "String")],
            &["P0->M:query"],
            "new Wrapper(q)",
        );
        ctor_info.is_constructor = true;
        ctor_info.member_variables = vec![MemberDecl {
            name: "query".to_string(),
            ty: "String".to_string(),
        }];
        let tree = node(ctor_info, 0, vec![]);
        let analysis = analyze_branch(
            &tree,
            BranchCategory::EncapsulatedConstructorOrReturner,
            &rule(),
            &backend,
        );
        match &analysis.outcome {
            BranchOutcome::ParamVerdicts { verdicts } => {
                assert_eq!(verdicts[0].via_member.as_deref(), Some("query"));
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn boolean_returner_probe_failure_means_no_guard() {
        let backend = CountingBackend {
            calls: AtomicU32::new(0),
            reply: failing_reply,
        };
        let tree = node(
            info("A", "boolean flagUp()", "return this.flag;", &[], &[], "flagUp()"),
            0,
            vec![],
        );
        let analysis = analyze_branch(&tree, BranchCategory::BooleanReturner, &rule(), &backend);
        assert_eq!(
            analysis.outcome,
            BranchOutcome::BooleanCheck {
                guards_condition: false,
                guarded_params: Vec::new(),
            }
        );
        assert_eq!(analysis.backend_calls, 1);
    }

    #[test]
    fn bodiless_roots_skip_probing_entirely() {
        let backend = CountingBackend {
            calls: AtomicU32::new(0),
            reply: satisfies_reply,
        };
        let tree = node(
            info("String", "String String.trim()", "", &[], &[], "x.trim()"),
            0,
            vec![],
        );
        let analysis = analyze_branch(
            &tree,
            BranchCategory::CriticalConstructorOrReturner,
            &rule(),
            &backend,
        );
        assert!(matches!(analysis.outcome, BranchOutcome::Dataflow { .. }));
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);
    }
}
