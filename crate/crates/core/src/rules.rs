//! Vulnerability rule registry: critical types, non-exploitability
//! conditions, source/sink signature patterns, and trigger formulas.
//!
//! Each rule states its condition U twice: as prose (used verbatim in solver
//! prompts) and as a predicate over an abstract string domain (used by the
//! deterministic oracle backend). The two are kept in agreement by the
//! labeled-corpus acceptance test rather than statically.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::ParameterState;

/// Non-exploitability verdict for one value. The derived ordering is the
/// state lattice SatisfiesU < Unknown < ViolatesU used by monotonicity
/// arguments: upgrades move rightward only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
pub enum StateVerdict {
    #[serde(rename = "satisfies")]
    SatisfiesU,
    #[serde(rename = "unknown")]
    Unknown,
    #[serde(rename = "violates")]
    ViolatesU,
}

/// Guard catalogue: sanitization and validation shapes the engine can
/// recognize. Whether a given check actually discharges a rule's condition U
/// is decided per rule; a recognized-but-insufficient check (for example a
/// prefix whitelist against path traversal) deliberately does not satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum FilterCheck {
    /// Rejects values containing the ".." traversal sequence.
    NoDotDot,
    /// Equality against a literal whitelist.
    EqualsWhitelist,
    /// startsWith against a literal prefix; does not constrain the rest.
    PrefixWhitelist,
    /// Format whitelist admitting only alphanumeric-like characters.
    AlphanumericOnly,
    /// Quote metacharacters escaped or removed.
    SqlQuoteNeutralized,
    /// Some shell metacharacters removed; partial by construction.
    ShellMetaNeutralized,
    /// Value bound through a parameterized API, never spliced into structure.
    ParameterBound,
    /// An upstream fact asserts the value satisfies U.
    ContextAssumed,
}

/// Abstract string values the oracle reasons over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AbstractValue {
    Literal(String),
    AttackerControlled,
    Concat(Vec<AbstractValue>),
    FilteredBy {
        check: FilterCheck,
        inner: Box<AbstractValue>,
    },
    Unknown,
}

impl AbstractValue {
    pub fn filtered(check: FilterCheck, inner: AbstractValue) -> AbstractValue {
        AbstractValue::FilteredBy {
            check,
            inner: Box::new(inner),
        }
    }

    /// Short stable rendering used in justification strings.
    pub fn describe(&self) -> String {
        match self {
            AbstractValue::Literal(s) => format!("literal {s:?}"),
            AbstractValue::AttackerControlled => "attacker-controlled input".to_string(),
            AbstractValue::Concat(parts) => {
                let inner: Vec<String> = parts.iter().map(|p| p.describe()).collect();
                format!("concat({})", inner.join(", "))
            }
            AbstractValue::FilteredBy { check, inner } => {
                format!("{} past {check:?}", inner.describe())
            }
            AbstractValue::Unknown => "value of unknown origin".to_string(),
        }
    }
}

/// The condition U of a rule: prose for prompts, a satisfying-check set for
/// the machine-checkable predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionSpec {
    pub human_text: String,
    pub satisfying_checks: BTreeSet<FilterCheck>,
}

impl ConditionSpec {
    /// The oracle predicate: verdict of an abstract value against U.
    pub fn evaluate(&self, value: &AbstractValue) -> StateVerdict {
        match value {
            AbstractValue::Literal(_) => StateVerdict::SatisfiesU,
            AbstractValue::AttackerControlled => StateVerdict::ViolatesU,
            AbstractValue::Unknown => StateVerdict::Unknown,
            AbstractValue::Concat(parts) => parts
                .iter()
                .map(|p| self.evaluate(p))
                .max()
                .unwrap_or(StateVerdict::SatisfiesU),
            AbstractValue::FilteredBy { check, inner } => {
                if self.satisfying_checks.contains(check) {
                    StateVerdict::SatisfiesU
                } else {
                    self.evaluate(inner)
                }
            }
        }
    }
}

/// A source or sink signature pattern: "Class.method" matches exactly,
/// a bare "method" matches the name in any class, "Class.new" matches
/// constructor calls.
pub fn pattern_matches(pattern: &str, class_name: &str, method_name: &str) -> bool {
    match pattern.split_once('.') {
        Some((class, method)) => class == class_name && method == method_name,
        None => pattern == method_name,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkPattern {
    pub pattern: String,
    /// Indices of the sink call's arguments that trigger the rule.
    pub sensitive_args: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriggerFormula {
    /// OR over every sensitive sink argument: "argument violates U".
    AnySensitive,
    /// A single argument index violates U.
    Atom(usize),
    AnyOf(Vec<TriggerFormula>),
    AllOf(Vec<TriggerFormula>),
}

impl TriggerFormula {
    fn referenced_indices(&self, out: &mut BTreeSet<usize>) {
        match self {
            TriggerFormula::AnySensitive => {}
            TriggerFormula::Atom(i) => {
                out.insert(*i);
            }
            TriggerFormula::AnyOf(fs) | TriggerFormula::AllOf(fs) => {
                for f in fs {
                    f.referenced_indices(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VulnerabilityRule {
    pub id: String,
    pub critical_types: BTreeSet<String>,
    pub non_exploitable: ConditionSpec,
    pub sink_patterns: Vec<SinkPattern>,
    pub source_patterns: Vec<String>,
    pub trigger: TriggerFormula,
}

impl VulnerabilityRule {
    pub fn sink_pattern_for(&self, class_name: &str, method_name: &str) -> Option<&SinkPattern> {
        self.sink_patterns
            .iter()
            .find(|p| pattern_matches(&p.pattern, class_name, method_name))
    }

    pub fn is_source(&self, class_name: &str, method_name: &str) -> bool {
        self.source_patterns
            .iter()
            .any(|p| pattern_matches(p, class_name, method_name))
    }
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule `{0}` is already registered")]
    DuplicateId(String),
    #[error("rule `{0}` is invalid: {1}")]
    Invalid(String, String),
    #[error("no rule registered with id `{0}`")]
    NotFound(String),
    #[error("trigger formula references argument {arg_index} but the sink state has no entry for it")]
    MissingState { arg_index: usize },
    #[error("cannot read rule overrides: {0}")]
    BadOverride(String),
}

#[derive(Debug, Clone, Default)]
pub struct RuleRegistry {
    rules: Vec<VulnerabilityRule>,
}

impl RuleRegistry {
    pub fn empty() -> RuleRegistry {
        RuleRegistry::default()
    }

    /// Registry preloaded with the three builtin rules.
    pub fn builtin() -> RuleRegistry {
        let mut registry = RuleRegistry::empty();
        for rule in builtin_rules() {
            registry.register(rule).expect("builtin rules are valid");
        }
        registry
    }

    pub fn register(&mut self, rule: VulnerabilityRule) -> Result<(), RuleError> {
        if self.rules.iter().any(|r| r.id == rule.id) {
            return Err(RuleError::DuplicateId(rule.id));
        }
        validate_rule(&rule)?;
        self.rules.push(rule);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&VulnerabilityRule, RuleError> {
        self.rules
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| RuleError::NotFound(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &VulnerabilityRule> {
        self.rules.iter()
    }

    /// Applies a JSON override document: existing rules are patched per
    /// field, unknown ids define new rules.
    pub fn apply_overrides(&mut self, document: &str) -> Result<(), RuleError> {
        let overrides: Vec<RuleOverride> = serde_json::from_str(document)
            .map_err(|e| RuleError::BadOverride(e.to_string()))?;
        for over in overrides {
            let existing = self.rules.iter_mut().find(|r| r.id == over.id);
            match existing {
                Some(rule) => {
                    patch_rule(rule, &over);
                    let checked = rule.clone();
                    validate_rule(&checked)?;
                }
                None => {
                    let mut rule = VulnerabilityRule {
                        id: over.id.clone(),
                        critical_types: BTreeSet::new(),
                        non_exploitable: ConditionSpec {
                            human_text: String::new(),
                            satisfying_checks: [FilterCheck::ContextAssumed].into(),
                        },
                        sink_patterns: Vec::new(),
                        source_patterns: DEFAULT_SOURCE_PATTERNS
                            .iter()
                            .map(|s| s.to_string())
                            .collect(),
                        trigger: TriggerFormula::AnySensitive,
                    };
                    patch_rule(&mut rule, &over);
                    self.register(rule)?;
                }
            }
        }
        Ok(())
    }
}

fn validate_rule(rule: &VulnerabilityRule) -> Result<(), RuleError> {
    if rule.id.is_empty() {
        return Err(RuleError::Invalid(rule.id.clone(), "empty id".into()));
    }
    if rule.critical_types.is_empty() {
        return Err(RuleError::Invalid(
            rule.id.clone(),
            "criticalTypes must be non-empty".into(),
        ));
    }
    for sink in &rule.sink_patterns {
        if sink.sensitive_args.is_empty() {
            return Err(RuleError::Invalid(
                rule.id.clone(),
                format!("sink pattern `{}` declares no sensitive arguments", sink.pattern),
            ));
        }
    }
    let mut referenced = BTreeSet::new();
    rule.trigger.referenced_indices(&mut referenced);
    let declared: BTreeSet<usize> = rule
        .sink_patterns
        .iter()
        .flat_map(|p| p.sensitive_args.iter().copied())
        .collect();
    for idx in referenced {
        if !declared.contains(&idx) {
            return Err(RuleError::Invalid(
                rule.id.clone(),
                format!("trigger formula references undeclared argument index {idx}"),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RuleOverride {
    id: String,
    #[serde(default)]
    critical_types: Option<Vec<String>>,
    #[serde(default)]
    condition_text: Option<String>,
    #[serde(default)]
    satisfying_checks: Option<Vec<FilterCheck>>,
    #[serde(default)]
    sink_patterns: Option<Vec<SinkPatternOverride>>,
    #[serde(default)]
    source_patterns: Option<Vec<String>>,
    #[serde(default)]
    trigger_formula: Option<TriggerFormulaOverride>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SinkPatternOverride {
    pattern: String,
    arg_indices: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
enum TriggerFormulaOverride {
    #[serde(rename = "anySensitive")]
    AnySensitive,
    #[serde(rename = "anyOf")]
    AnyOf(Vec<usize>),
    #[serde(rename = "allOf")]
    AllOf(Vec<usize>),
}

// serde needs the unit variant spelled as a bare string in JSON.
impl TriggerFormulaOverride {
    fn into_formula(self) -> TriggerFormula {
        match self {
            TriggerFormulaOverride::AnySensitive => TriggerFormula::AnySensitive,
            TriggerFormulaOverride::AnyOf(indices) => {
                TriggerFormula::AnyOf(indices.into_iter().map(TriggerFormula::Atom).collect())
            }
            TriggerFormulaOverride::AllOf(indices) => {
                TriggerFormula::AllOf(indices.into_iter().map(TriggerFormula::Atom).collect())
            }
        }
    }
}

fn patch_rule(rule: &mut VulnerabilityRule, over: &RuleOverride) {
    if let Some(types) = &over.critical_types {
        rule.critical_types = types.iter().cloned().collect();
    }
    if let Some(text) = &over.condition_text {
        rule.non_exploitable.human_text = text.clone();
    }
    if let Some(checks) = &over.satisfying_checks {
        rule.non_exploitable.satisfying_checks = checks.iter().copied().collect();
        rule.non_exploitable
            .satisfying_checks
            .insert(FilterCheck::ContextAssumed);
    }
    if let Some(sinks) = &over.sink_patterns {
        rule.sink_patterns = sinks
            .iter()
            .map(|s| SinkPattern {
                pattern: s.pattern.clone(),
                sensitive_args: s.arg_indices.clone(),
            })
            .collect();
    }
    if let Some(sources) = &over.source_patterns {
        rule.source_patterns = sources.clone();
    }
    if let Some(formula) = &over.trigger_formula {
        rule.trigger = match formula {
            TriggerFormulaOverride::AnySensitive => TriggerFormula::AnySensitive,
            TriggerFormulaOverride::AnyOf(indices) => TriggerFormulaOverride::AnyOf(indices.clone()).into_formula(),
            TriggerFormulaOverride::AllOf(indices) => TriggerFormulaOverride::AllOf(indices.clone()).into_formula(),
        };
    }
}

pub const DEFAULT_SOURCE_PATTERNS: &[&str] = &[
    "getParameter",
    "getHeader",
    "getQueryString",
    "readLine",
];

/// The three builtin rules.
pub fn builtin_rules() -> Vec<VulnerabilityRule> {
    let sources: Vec<String> = DEFAULT_SOURCE_PATTERNS
        .iter()
        .map(|s| s.to_string())
        .collect();
    vec![
        VulnerabilityRule {
            id: "path-traversal".to_string(),
            critical_types: ["String", "Path", "File"]
                .into_iter()
                .map(String::from)
                .collect(),
            non_exploitable: ConditionSpec {
                human_text: "the value cannot contain the \"..\" path traversal sequence \
                             derived from attacker-controlled input"
                    .to_string(),
                satisfying_checks: [
                    FilterCheck::NoDotDot,
                    FilterCheck::EqualsWhitelist,
                    FilterCheck::AlphanumericOnly,
                    FilterCheck::ContextAssumed,
                ]
                .into(),
            },
            sink_patterns: vec![
                SinkPattern {
                    pattern: "Files.readString".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "Files.readAllBytes".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "Files.newInputStream".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "Files.delete".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "FileInputStream.new".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "FileReader.new".into(),
                    sensitive_args: vec![0],
                },
            ],
            source_patterns: sources.clone(),
            trigger: TriggerFormula::AnySensitive,
        },
        VulnerabilityRule {
            id: "sql-injection".to_string(),
            critical_types: ["String"].into_iter().map(String::from).collect(),
            non_exploitable: ConditionSpec {
                human_text: "attacker-controlled text cannot alter the query structure: quote \
                             and comment metacharacters are neutralized, or the value is bound \
                             through a parameterized call"
                    .to_string(),
                satisfying_checks: [
                    FilterCheck::SqlQuoteNeutralized,
                    FilterCheck::ParameterBound,
                    FilterCheck::EqualsWhitelist,
                    FilterCheck::AlphanumericOnly,
                    FilterCheck::ContextAssumed,
                ]
                .into(),
            },
            sink_patterns: vec![
                SinkPattern {
                    pattern: "executeQuery".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "executeUpdate".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "execute".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "addBatch".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "prepareStatement".into(),
                    sensitive_args: vec![0],
                },
            ],
            source_patterns: sources.clone(),
            trigger: TriggerFormula::AnySensitive,
        },
        VulnerabilityRule {
            id: "command-injection".to_string(),
            critical_types: ["String"].into_iter().map(String::from).collect(),
            non_exploitable: ConditionSpec {
                human_text: "attacker-controlled text cannot introduce shell metacharacters or \
                             additional command arguments"
                    .to_string(),
                // A metacharacter replace is recognized but deliberately not
                // satisfying: removing one metacharacter leaves the others.
                satisfying_checks: [
                    FilterCheck::EqualsWhitelist,
                    FilterCheck::AlphanumericOnly,
                    FilterCheck::ContextAssumed,
                ]
                .into(),
            },
            sink_patterns: vec![
                SinkPattern {
                    pattern: "exec".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "ProcessBuilder.new".into(),
                    sensitive_args: vec![0],
                },
                SinkPattern {
                    pattern: "ProcessBuilder.command".into(),
                    sensitive_args: vec![0],
                },
            ],
            source_patterns: sources,
            trigger: TriggerFormula::AnySensitive,
        },
    ]
}

pub fn atom_true(verdict: StateVerdict) -> bool {
    // Unknown counts as triggering: doubt resolves toward exploitability.
    verdict >= StateVerdict::Unknown
}

/// Evaluates the rule's trigger formula against a sink-side parameter state.
/// Callers restrict the state to the entries feeding the sink call.
pub fn trigger_satisfied(
    rule: &VulnerabilityRule,
    sink_state: &ParameterState,
) -> Result<bool, RuleError> {
    evaluate_formula(&rule.trigger, sink_state)
}

fn evaluate_formula(
    formula: &TriggerFormula,
    state: &ParameterState,
) -> Result<bool, RuleError> {
    match formula {
        TriggerFormula::AnySensitive => {
            Ok(state.iter().any(|(_, entry)| atom_true(entry.verdict)))
        }
        TriggerFormula::Atom(index) => {
            let mut found = false;
            let mut triggered = false;
            for (key, entry) in state.iter() {
                if key.arg_index == *index {
                    found = true;
                    triggered |= atom_true(entry.verdict);
                }
            }
            if !found {
                return Err(RuleError::MissingState { arg_index: *index });
            }
            Ok(triggered)
        }
        TriggerFormula::AnyOf(fs) => {
            let mut result = false;
            for f in fs {
                result |= evaluate_formula(f, state)?;
            }
            Ok(result)
        }
        TriggerFormula::AllOf(fs) => {
            let mut result = true;
            for f in fs {
                result &= evaluate_formula(f, state)?;
            }
            Ok(result)
        }
    }
}
