//! Intra-method taint summaries: which slots feed which other slots.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::library::{self, Propagation};
use crate::summary::{Slot, TaintEdge};

/// Computes the method's taint edges over parameter, member, and return slots.
///
/// The analysis is flow-insensitive: an assignment anywhere in the body makes
/// the target carry the source's slots everywhere. That overapproximates real
/// flow, which is the safe direction for a reachability summary.
pub fn compute_taint(method: &MethodDecl, class: &ClassDecl) -> Vec<TaintEdge> {
    let mut carries: BTreeMap<String, BTreeSet<Slot>> = BTreeMap::new();
    for (i, param) in method.params.iter().enumerate() {
        carries
            .entry(param.name.clone())
            .or_default()
            .insert(Slot::Param(i));
    }
    for field in &class.fields {
        carries
            .entry(field.name.clone())
            .or_default()
            .insert(Slot::Member(field.name.clone()));
    }

    // Fixpoint: every pass replays all assignments until no set grows.
    loop {
        let before = carries.clone();
        apply_block(&method.body, class, &mut carries);
        if carries == before {
            break;
        }
    }

    let mut edges: BTreeSet<TaintEdge> = BTreeSet::new();
    collect_return_edges(&method.body, class, &carries, &mut edges);
    for (i, param) in method.params.iter().enumerate() {
        for slot in carries.get(&param.name).into_iter().flatten() {
            if let Some(edge) = TaintEdge::new(slot.clone(), Slot::Param(i)) {
                edges.insert(edge);
            }
        }
    }
    for field in &class.fields {
        for slot in carries.get(&field.name).into_iter().flatten() {
            if let Some(edge) = TaintEdge::new(slot.clone(), Slot::Member(field.name.clone())) {
                edges.insert(edge);
            }
        }
    }
    edges.into_iter().collect()
}

fn apply_block(block: &Block, class: &ClassDecl, carries: &mut BTreeMap<String, BTreeSet<Slot>>) {
    for stmt in &block.stmts {
        match stmt {
            Stmt::Local { name, init, .. } => {
                let sources = init
                    .as_ref()
                    .map(|e| eval(e, class, carries))
                    .unwrap_or_default();
                carries.entry(name.clone()).or_default().extend(sources);
            }
            Stmt::Assign { target, value, .. } => {
                let sources = eval(value, class, carries);
                let name = match target {
                    AssignTarget::Var(name) => name.clone(),
                    AssignTarget::Field { field, .. } => field.clone(),
                };
                carries.entry(name).or_default().extend(sources);
            }
            Stmt::If {
                then_block,
                else_block,
                ..
            } => {
                apply_block(then_block, class, carries);
                if let Some(else_block) = else_block {
                    apply_block(else_block, class, carries);
                }
            }
            Stmt::Expr { .. } | Stmt::Return { .. } | Stmt::Throw { .. } => {}
        }
    }
}

fn collect_return_edges(
    block: &Block,
    class: &ClassDecl,
    carries: &BTreeMap<String, BTreeSet<Slot>>,
    edges: &mut BTreeSet<TaintEdge>,
) {
    for stmt in &block.stmts {
        match stmt {
            Stmt::Return {
                value: Some(value), ..
            } => {
                for slot in eval(value, class, carries) {
                    if let Some(edge) = TaintEdge::new(slot, Slot::Return) {
                        edges.insert(edge);
                    }
                }
            }
            Stmt::If {
                then_block,
                else_block,
                ..
            } => {
                collect_return_edges(then_block, class, carries, edges);
                if let Some(else_block) = else_block {
                    collect_return_edges(else_block, class, carries, edges);
                }
            }
            _ => {}
        }
    }
}

/// Slots whose data the expression's value may carry.
fn eval(
    expr: &Expr,
    class: &ClassDecl,
    carries: &BTreeMap<String, BTreeSet<Slot>>,
) -> BTreeSet<Slot> {
    match expr {
        Expr::StringLit(..) | Expr::IntLit(..) | Expr::BoolLit(..) | Expr::This(..) => {
            BTreeSet::new()
        }
        Expr::Var(name, _) => carries.get(name).cloned().unwrap_or_default(),
        Expr::Field { object, name, .. } => match object.as_ref() {
            Expr::This(_) => carries.get(name).cloned().unwrap_or_default(),
            Expr::Var(obj, _) if class.fields.iter().any(|f| &f.name == obj) => {
                carries.get(name).cloned().unwrap_or_default()
            }
            Expr::Var(obj, _) => carries.get(obj).cloned().unwrap_or_default(),
            other => eval(other, class, carries),
        },
        Expr::Binary { op, lhs, rhs, .. } => match op {
            BinOp::Add => {
                let mut set = eval(lhs, class, carries);
                set.extend(eval(rhs, class, carries));
                set
            }
            _ => BTreeSet::new(),
        },
        Expr::Not { .. } => BTreeSet::new(),
        Expr::New { args, .. } => {
            let mut set = BTreeSet::new();
            for arg in args {
                set.extend(eval(arg, class, carries));
            }
            set
        }
        Expr::Call {
            receiver,
            name,
            args,
            ..
        } => {
            let receiver_class = receiver.as_deref().and_then(|r| match r {
                Expr::Var(v, _) if !carries.contains_key(v) => Some(v.as_str()),
                _ => None,
            });
            let receiver_set = receiver
                .as_deref()
                .map(|r| eval(r, class, carries))
                .unwrap_or_default();
            let arg_sets: Vec<BTreeSet<Slot>> =
                args.iter().map(|a| eval(a, class, carries)).collect();
            let propagation = library::lookup(receiver_class, name)
                .map(|m| m.propagation)
                // User and unknown callees conservatively mix everything.
                .unwrap_or(Propagation::ReceiverAndArgs);
            let mut set = BTreeSet::new();
            match propagation {
                Propagation::None => {}
                Propagation::Receiver => set.extend(receiver_set),
                Propagation::Args => {
                    for s in &arg_sets {
                        set.extend(s.iter().cloned());
                    }
                }
                Propagation::ReceiverAndArgs => {
                    set.extend(receiver_set);
                    for s in &arg_sets {
                        set.extend(s.iter().cloned());
                    }
                }
                Propagation::ReceiverAndArg(i) => {
                    set.extend(receiver_set);
                    if let Some(s) = arg_sets.get(i) {
                        set.extend(s.iter().cloned());
                    }
                }
            }
            set
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_program;

    fn edges_of(source: &str, class: &str, method: &str) -> Vec<String> {
        let program = parse_program(source).unwrap();
        let class = program.find_class(class).unwrap();
        let method = class
            .methods
            .iter()
            .find(|m| m.lookup_name() == method)
            .unwrap();
        compute_taint(method, class)
            .into_iter()
            .map(|e| e.to_string())
            .collect()
    }

    #[test]
    fn get_path_flows_param_to_return() {
        let source = r#"class A {
            String getPath(String fileName) {
                if (!fileName.contains("..")) {
                    return "/tmp/files/" + fileName;
                } else {
                    throw new IllegalArgumentException("bad");
                }
            }
        }"#;
        assert_eq!(edges_of(source, "A", "getPath"), ["P0->RET"]);
    }

    #[test]
    fn constant_returner_has_no_edges() {
        let source = "class A { int five() { return 5; } }";
        assert!(edges_of(source, "A", "five").is_empty());
    }

    #[test]
    fn boolean_checks_do_not_propagate() {
        let source = r#"class A {
            boolean isSafe(String s) { return s.contains(".."); }
        }"#;
        assert!(edges_of(source, "A", "isSafe").is_empty());
    }

    #[test]
    fn constructor_assignment_reaches_member() {
        let source = r#"class W {
            private String query;
            W(String q) { this.query = q; }
            String get() { return this.query; }
        }"#;
        assert_eq!(edges_of(source, "W", "new"), ["P0->M:query"]);
        assert_eq!(edges_of(source, "W", "get"), ["M:query->RET"]);
    }

    #[test]
    fn transitive_local_flow_is_closed() {
        let source = r#"class A {
            String chain(String a) {
                String b = a;
                String c = b + "suffix";
                return c.trim();
            }
        }"#;
        assert_eq!(edges_of(source, "A", "chain"), ["P0->RET"]);
    }

    #[test]
    fn replace_drops_the_match_target_but_keeps_the_replacement() {
        let source = r#"class A {
            String scrub(String text, String bad, String fill) {
                return text.replace(bad, fill);
            }
        }"#;
        assert_eq!(edges_of(source, "A", "scrub"), ["P0->RET", "P2->RET"]);
    }

    /// Concrete check of the `replace` model: characters of the match target
    /// never appear in the output, while replacement characters can.
    #[test]
    fn replace_model_matches_concrete_string_semantics() {
        let text = "abcXXdef";
        let target = "XX";
        let fill = "YY";
        let out = text.replace(target, fill);
        assert!(!out.contains('X'));
        assert!(out.contains('Y'));
        assert!(out.contains("abc"));
    }

    #[test]
    fn later_assignment_feeds_earlier_use_flow_insensitively() {
        let source = r#"class A {
            String odd(String p) {
                String t = u;
                String u = p;
                return t;
            }
        }"#;
        // Flow-insensitive reading: u carries P0, so t does too.
        assert_eq!(edges_of(source, "A", "odd"), ["P0->RET"]);
    }
}
