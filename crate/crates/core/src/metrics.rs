//! Flat and hierarchical evaluation.
//!
//! * micro-F1 pools true/false positives over all classes;
//! * macro-F1 averages per-class F1 over a caller-chosen class set;
//! * hierarchical F1 compares ancestor sets (label included, root excluded)
//!   of predicted and true classes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub truth: NodeId,
    pub predicted: NodeId,
}

impl EvalPair {
    pub fn new(truth: NodeId, predicted: NodeId) -> Self {
        EvalPair { truth, predicted }
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_from(p: f64, r: f64) -> f64 {
    if p == r {
        p
    } else if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of test instances whose true class this is.
    pub support: usize,
}

impl ClassStats {
    fn finish(mut self) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.precision = ratio(self.tp, self.tp + self.fp);
        self.recall = ratio(self.tp, self.tp + self.fn_);
        self.f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        self.support = self.tp + self.fn_;
        self
    }
}

/// Per-class confusion counts for every class seen as truth or prediction.
pub fn per_class(pairs: &[EvalPair]) -> BTreeMap<NodeId, ClassStats> {
    let mut m: BTreeMap<NodeId, ClassStats> = BTreeMap::new();
    for p in pairs {
        if p.truth == p.predicted {
            m.entry(p.truth).or_default().tp += 1;
        } else {
            m.entry(p.truth).or_default().fn_ += 1;
            m.entry(p.predicted).or_default().fp += 1;
        }
    }
    m.into_iter().map(|(k, v)| (k, v.finish())).collect()
}

pub fn micro_f1(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let stats = per_class(pairs);
    let tp: usize = stats.values().map(|s| s.tp).sum();
    let fp: usize = stats.values().map(|s| s.fp).sum();
    let fn_: usize = stats.values().map(|s| s.fn_).sum();
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    Ok(f1_from(p, r))
}

/// Mean per-class F1 over `classes`. Classes that never occur contribute 0.
pub fn macro_f1(pairs: &[EvalPair], classes: &BTreeSet<NodeId>) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::invalid("empty class set"));
    }
    let stats = per_class(pairs);
    let sum: f64 = classes
        .iter()
        .map(|c| stats.get(c).map_or(0.0, |s| s.f1))
        .sum();
    Ok(sum / classes.len() as f64)
}

/// The distinct true classes of `pairs`.
pub fn truth_classes(pairs: &[EvalPair]) -> BTreeSet<NodeId> {
    pairs.iter().map(|p| p.truth).collect()
}

/// Hierarchical F1. With ancestor sets that exclude the root,
/// `|A(a) ∩ A(b)|` is the depth of `lca(a, b)` and `|A(a)|` the depth of `a`.
pub fn hier_f1(pairs: &[EvalPair], h: &Taxonomy) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no predictions to score"));
    }
    let (mut inter, mut pred, mut truth) = (0usize, 0usize, 0usize);
    for p in pairs {
        for n in [p.truth, p.predicted] {
            if !h.is_leaf(n) {
                return Err(if h.contains(n) {
                    Error::invalid(format!("{n} is not a class"))
                } else {
                    Error::UnknownNode(n)
                });
            }
        }
        inter += h.depth(h.lca(p.truth, p.predicted)?)?;
        pred += h.depth(p.predicted)?;
        truth += h.depth(p.truth)?;
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(f1_from(ratio(inter, pred), ratio(inter, truth)))
}

/// Per-class stats for classes with fewer than `threshold` training instances.
/// Classes missing from `train_counts` count as having none.
pub fn rare_category_report(
    pairs: &[EvalPair],
    train_counts: &BTreeMap<NodeId, usize>,
    threshold: usize,
) -> BTreeMap<NodeId, ClassStats> {
    let stats = per_class(pairs);
    let mut classes: BTreeSet<NodeId> = train_counts.keys().copied().collect();
    classes.extend(stats.keys().copied());
    classes
        .into_iter()
        .filter(|c| train_counts.get(c).copied().unwrap_or(0) < threshold)
        .map(|c| (c, stats.get(&c).copied().unwrap_or_default()))
        .collect()
}

/// Percentage of rare classes on which system A's class F1 strictly beats system B's.
pub fn rare_improvement(
    a: &[EvalPair],
    b: &[EvalPair],
    train_counts: &BTreeMap<NodeId, usize>,
    threshold: usize,
) -> f64 {
    let ra = rare_category_report(a, train_counts, threshold);
    let rb = rare_category_report(b, train_counts, threshold);
    let classes: BTreeSet<NodeId> = ra.keys().chain(rb.keys()).copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let f1 = |r: &BTreeMap<NodeId, ClassStats>, c| r.get(c).map_or(0.0, |s| s.f1);
    let better = classes.iter().filter(|c| f1(&ra, c) > f1(&rb, c)).count();
    100.0 * better as f64 / classes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub hier_f1: f64,
    pub per_class: BTreeMap<NodeId, ClassStats>,
    pub rare_threshold: usize,
    pub rare_slice: BTreeMap<NodeId, ClassStats>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rare_improvement_pct: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub train_counts: BTreeMap<NodeId, usize>,
}

impl MetricsReport {
    /// All metrics at once. `macro_classes` defaults to the test truth classes.
    pub fn compute(
        pairs: &[EvalPair],
        h: &Taxonomy,
        macro_classes: Option<&BTreeSet<NodeId>>,
        train_counts: &BTreeMap<NodeId, usize>,
        rare_threshold: usize,
    ) -> Result<Self> {
        let truth = truth_classes(pairs);
        Ok(MetricsReport {
            n: pairs.len(),
            micro_f1: micro_f1(pairs)?,
            macro_f1: macro_f1(pairs, macro_classes.unwrap_or(&truth))?,
            hier_f1: hier_f1(pairs, h)?,
            per_class: per_class(pairs),
            rare_threshold,
            rare_slice: if train_counts.is_empty() {
                BTreeMap::new()
            } else {
                rare_category_report(pairs, train_counts, rare_threshold)
            },
            rare_improvement_pct: None,
            train_counts: train_counts.clone(),
        })
    }

    /// `class,precision,recall,f1,support,train_count`
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1,support,train_count\n");
        for (c, s) in &self.per_class {
            let tc = self
                .train_counts
                .get(c)
                .map_or(String::new(), |v| v.to_string());
            writeln!(
                out,
                "{c},{},{},{},{},{tc}",
                s.precision, s.recall, s.f1, s.support
            )
            .unwrap();
        }
        out
    }
}
