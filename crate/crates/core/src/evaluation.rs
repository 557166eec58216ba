//! Scoring predicted pairs against gold labels.
//!
//! Predicted pairs whose attribute has no gold label on the same product
//! are discarded before matching. Counts are summed over products and
//! precision, recall and F1 computed once from the totals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{AttributeValuePair, PairSet};
use crate::parsing::normalize;
use crate::prompting::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Compare [`normalize`]d attribute and value strings.
    #[default]
    Normalized,
    /// Compare strings as stored.
    Exact,
}

impl MatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchMode::Normalized => "normalized",
            MatchMode::Exact => "exact",
        }
    }

    fn key(self, s: &str) -> String {
        match self {
            MatchMode::Normalized => normalize(s),
            MatchMode::Exact => s.to_string(),
        }
    }

    fn pair_key(self, p: &AttributeValuePair) -> (String, String) {
        (self.key(p.attribute()), self.key(p.value()))
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(MatchMode::Normalized),
            "exact" => Ok(MatchMode::Exact),
            other => Err(format!("unknown match mode {other:?} (expected exact or normalized)")),
        }
    }
}

/// Split predictions into those whose attribute is labeled on this product
/// and those that are not.
pub fn apply_discard_rule(pred: &PairSet, gold: &PairSet, mode: MatchMode) -> (PairSet, PairSet) {
    let labeled: BTreeSet<String> = gold.iter().map(|p| mode.key(p.attribute())).collect();
    pred.iter()
        .cloned()
        .partition(|p| labeled.contains(&mode.key(p.attribute())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductScore {
    pub product_id: String,
    pub category: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub discarded: Vec<AttributeValuePair>,
}

/// Score one product. Pairs that coincide after normalisation count once,
/// on both the predicted and the gold side.
pub fn score_product(
    product_id: &str,
    category: &str,
    pred: &PairSet,
    gold: &PairSet,
    mode: MatchMode,
) -> ProductScore {
    let (kept, discarded) = apply_discard_rule(pred, gold, mode);
    let kept: BTreeSet<_> = kept.iter().map(|p| mode.pair_key(p)).collect();
    let gold: BTreeSet<_> = gold.iter().map(|p| mode.pair_key(p)).collect();
    let tp = kept.intersection(&gold).count() as u64;
    ProductScore {
        product_id: product_id.to_string(),
        category: category.to_string(),
        tp,
        fp: kept.len() as u64 - tp,
        fn_: gold.len() as u64 - tp,
        discarded: discarded.into_iter().collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub totals: Metrics,
    pub per_category: BTreeMap<String, Metrics>,
    pub per_product: Vec<ProductScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_version: Option<String>,
}

impl EvaluationReport {
    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = Some(strategy);
        self
    }

    pub fn with_template_version(mut self, version: impl Into<String>) -> Self {
        self.template_version = Some(version.into());
        self
    }
}

/// Micro-averaged report over all products, with the same computation
/// repeated within each category.
pub fn aggregate(scores: &[ProductScore]) -> EvaluationReport {
    let mut totals = (0, 0, 0);
    let mut by_category: BTreeMap<&str, (u64, u64, u64)> = BTreeMap::new();
    for s in scores {
        totals.0 += s.tp;
        totals.1 += s.fp;
        totals.2 += s.fn_;
        let c = by_category.entry(&s.category).or_default();
        c.0 += s.tp;
        c.1 += s.fp;
        c.2 += s.fn_;
    }
    let overall = Metrics::from_counts(totals.0, totals.1, totals.2);
    EvaluationReport {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        totals: overall,
        per_category: by_category
            .into_iter()
            .map(|(c, (tp, fp, fn_))| (c.to_string(), Metrics::from_counts(tp, fp, fn_)))
            .collect(),
        per_product: scores.to_vec(),
        strategy: None,
        template_version: None,
    }
}
