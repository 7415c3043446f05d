//! Evaluation harness: confusion counts, derived metrics, and labeled-corpus
//! scoring of analysis reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, expected: bool, predicted: bool) {
        match (expected, predicted) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn metrics(&self) -> Result<Metrics, HarnessError> {
        if self.total() == 0 {
            return Err(HarnessError::EmptyCounts);
        }
        let tp = self.tp as f64;
        let accuracy = (self.tp + self.tn) as f64 / self.total() as f64;
        // An empty positive-prediction (or positive-label) set is counted as
        // perfect rather than undefined.
        let precision = if self.tp + self.fp == 0 {
            1.0
        } else {
            tp / (self.tp + self.fp) as f64
        };
        let recall = if self.tp + self.fn_ == 0 {
            1.0
        } else {
            tp / (self.tp + self.fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Metrics {
            accuracy,
            precision,
            recall,
            f1,
        })
    }
}

/// Metric ratios in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn accuracy_pct(&self) -> f64 {
        round_pct(self.accuracy * 100.0)
    }

    pub fn precision_pct(&self) -> f64 {
        round_pct(self.precision * 100.0)
    }

    pub fn recall_pct(&self) -> f64 {
        round_pct(self.recall * 100.0)
    }

    pub fn f1_pct(&self) -> f64 {
        round_pct(self.f1 * 100.0)
    }
}

/// Rounds a percentage half-up to two decimals.
pub fn round_pct(pct: f64) -> f64 {
    (pct * 100.0 + 0.5).floor() / 100.0
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot score an empty set of counts")]
    EmptyCounts,
    #[error("manifest i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest syntax: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate chain id `{0}` in manifest")]
    DuplicateChainId(String),
}

/// One labeled corpus entry tying a chain to its ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LabeledCase {
    /// Source file the chain was extracted from, relative to the manifest.
    pub source: String,
    pub chain_id: String,
    pub rule_id: String,
    pub expected_exploitable: bool,
}

#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    pub cases: Vec<LabeledCase>,
}

impl LabeledCorpus {
    pub fn from_json(text: &str) -> Result<LabeledCorpus, HarnessError> {
        let cases: Vec<LabeledCase> = serde_json::from_str(text)?;
        let mut seen = BTreeSet::new();
        for case in &cases {
            if !seen.insert(case.chain_id.clone()) {
                return Err(HarnessError::DuplicateChainId(case.chain_id.clone()));
            }
        }
        Ok(LabeledCorpus { cases })
    }

    pub fn from_file(path: &Path) -> Result<LabeledCorpus, HarnessError> {
        LabeledCorpus::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }
}

/// Confusion counts of a report against a labeled corpus, overall and per
/// rule. Chains that only one side knows about are listed, not scored.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Evaluation {
    pub overall: ConfusionCounts,
    pub per_rule: BTreeMap<String, ConfusionCounts>,
    /// Labeled chains the report carries no verdict for.
    pub missing: Vec<String>,
    /// Report verdicts no label covers.
    pub unlabeled: Vec<String>,
}

pub fn evaluate(corpus: &LabeledCorpus, report: &Report) -> Evaluation {
    let verdicts: BTreeMap<&str, bool> = report
        .verdicts
        .iter()
        .map(|v| (v.chain_id.as_str(), v.exploitable))
        .collect();
    let labeled: BTreeSet<&str> = corpus.cases.iter().map(|c| c.chain_id.as_str()).collect();
    let mut overall = ConfusionCounts::default();
    let mut per_rule: BTreeMap<String, ConfusionCounts> = BTreeMap::new();
    let mut missing = Vec::new();
    for case in &corpus.cases {
        match verdicts.get(case.chain_id.as_str()) {
            Some(&predicted) => {
                overall.record(case.expected_exploitable, predicted);
                per_rule
                    .entry(case.rule_id.clone())
                    .or_default()
                    .record(case.expected_exploitable, predicted);
            }
            None => missing.push(case.chain_id.clone()),
        }
    }
    let unlabeled: Vec<String> = report
        .verdicts
        .iter()
        .filter(|v| !labeled.contains(v.chain_id.as_str()))
        .map(|v| v.chain_id.clone())
        .collect();
    Evaluation {
        overall,
        per_rule,
        missing,
        unlabeled,
    }
}

/// Rendered scores for one count set: the counts plus rounded percentages.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreBlock {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreBlock {
    pub fn from_counts(counts: &ConfusionCounts) -> Result<ScoreBlock, HarnessError> {
        let metrics = counts.metrics()?;
        Ok(ScoreBlock {
            counts: *counts,
            accuracy: metrics.accuracy_pct(),
            precision: metrics.precision_pct(),
            recall: metrics.recall_pct(),
            f1: metrics.f1_pct(),
        })
    }
}

/// Full evaluation output as written by the command line.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub overall: ScoreBlock,
    pub per_rule: BTreeMap<String, ScoreBlock>,
    pub missing: Vec<String>,
    pub unlabeled: Vec<String>,
}

impl EvalReport {
    pub fn from_evaluation(evaluation: &Evaluation) -> Result<EvalReport, HarnessError> {
        let overall = ScoreBlock::from_counts(&evaluation.overall)?;
        let mut per_rule = BTreeMap::new();
        for (rule, counts) in &evaluation.per_rule {
            per_rule.insert(rule.clone(), ScoreBlock::from_counts(counts)?);
        }
        Ok(EvalReport {
            overall,
            per_rule,
            missing: evaluation.missing.clone(),
            unlabeled: evaluation.unlabeled.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("eval report serializes");
        out.push('\n');
        out
    }
}
