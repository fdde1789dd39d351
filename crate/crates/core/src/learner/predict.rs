use rayon::prelude::*;

use super::objective::sigmoid;
use super::train::class_fingerprint;
use super::{Method, ModelSet, NodeModel};
use crate::corpus::{Dataset, SparseVector};
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, Taxonomy};

/// Positive-class probability of a single node model.
pub fn predict_proba(nm: &NodeModel, x: &SparseVector) -> f64 {
    sigmoid(nm.score(x))
}

fn check_fingerprint(m: &ModelSet, h: &Taxonomy) -> Result<()> {
    let got = match m.method {
        Method::TopDown => h.fingerprint(),
        Method::Flat => class_fingerprint(h.leaves()),
    };
    if got != m.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: m.fingerprint.clone(),
            got,
        });
    }
    Ok(())
}

/// Greedy descent from the root: at every internal node move to the child
/// with the highest raw score (smallest id on ties). Also returns the number
/// of model evaluations.
pub fn predict_topdown_traced(
    m: &ModelSet,
    h: &Taxonomy,
    x: &SparseVector,
) -> Result<(NodeId, usize)> {
    if m.method != Method::TopDown {
        return Err(Error::invalid("flat models cannot drive a top-down descent"));
    }
    check_fingerprint(m, h)?;
    let mut p = h.root();
    let mut evals = 0;
    while !h.is_leaf(p) {
        let mut best: Option<(NodeId, f64)> = None;
        for &q in h.children(p) {
            let s = m
                .score(q, x)
                .ok_or_else(|| Error::invalid(format!("no model for node {q}")))?;
            evals += 1;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((q, s));
            }
        }
        p = best
            .ok_or_else(|| Error::Taxonomy(format!("internal node {p} has no children")))?
            .0;
    }
    Ok((p, evals))
}

pub fn predict_topdown(m: &ModelSet, h: &Taxonomy, x: &SparseVector) -> Result<NodeId> {
    predict_topdown_traced(m, h, x).map(|r| r.0)
}

/// Class with the highest raw score (smallest id on ties).
pub fn predict_flat(m: &ModelSet, x: &SparseVector) -> Result<NodeId> {
    if m.method != Method::Flat {
        return Err(Error::invalid("expected flat models"));
    }
    argmax(m.models.values(), x).ok_or_else(|| Error::invalid("empty model set"))
}

fn argmax<'a>(models: impl Iterator<Item = &'a NodeModel>, x: &SparseVector) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for nm in models {
        let s = nm.score(x);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((nm.node, s));
        }
    }
    best.map(|b| b.0)
}

struct TreeNode<'a> {
    id: NodeId,
    model: Option<&'a NodeModel>,
    /// Indices into `Predictor::nodes`; empty for classes.
    children: Vec<usize>,
}

enum Plan<'a> {
    TopDown(Vec<TreeNode<'a>>),
    Flat(Vec<&'a NodeModel>),
}

/// Batch predictor with the tree flattened into index-linked nodes.
pub struct Predictor<'a> {
    models: &'a ModelSet,
    plan: Plan<'a>,
}

impl<'a> Predictor<'a> {
    /// Top-down model sets need the training hierarchy; flat sets ignore it
    /// (but check it when given).
    pub fn new(models: &'a ModelSet, h: Option<&Taxonomy>) -> Result<Self> {
        if let Some(h) = h {
            check_fingerprint(models, h)?;
        }
        let plan = match models.method {
            Method::Flat => Plan::Flat(models.models.values().collect()),
            Method::TopDown => {
                let h = h.ok_or_else(|| Error::invalid("top-down prediction needs a hierarchy"))?;
                h.validate_strict()?;
                let ids: Vec<NodeId> = h.nodes().collect();
                let index = |n: NodeId| ids.binary_search(&n).expect("node of h");
                let mut nodes = Vec::with_capacity(ids.len());
                for &id in &ids {
                    let model = if id == h.root() {
                        None
                    } else {
                        Some(
                            models
                                .models
                                .get(&id)
                                .ok_or_else(|| Error::invalid(format!("no model for node {id}")))?,
                        )
                    };
                    nodes.push(TreeNode {
                        id,
                        model,
                        children: h.children(id).iter().map(|&c| index(c)).collect(),
                    });
                }
                // move the root to slot 0
                let r = index(h.root());
                nodes.swap(0, r);
                for n in &mut nodes {
                    for c in &mut n.children {
                        if *c == r {
                            *c = 0;
                        } else if *c == 0 {
                            *c = r;
                        }
                    }
                }
                Plan::TopDown(nodes)
            }
        };
        Ok(Predictor { models, plan })
    }

    /// Prediction for an already weighted vector, with the number of model
    /// evaluations it took.
    #[inline]
    pub fn predict_prepared(&self, x: &SparseVector) -> (NodeId, usize) {
        match &self.plan {
            Plan::Flat(ms) => (argmax(ms.iter().copied(), x).expect("non-empty"), ms.len()),
            Plan::TopDown(nodes) => {
                let mut p = 0;
                let mut evals = 0;
                while !nodes[p].children.is_empty() {
                    let mut best = usize::MAX;
                    let mut best_s = f64::NEG_INFINITY;
                    for &q in &nodes[p].children {
                        let s = nodes[q].model.expect("non-root").score(x);
                        evals += 1;
                        if best == usize::MAX || s > best_s {
                            best = q;
                            best_s = s;
                        }
                    }
                    p = best;
                }
                (nodes[p].id, evals)
            }
        }
    }

    /// Prediction for a raw input vector.
    pub fn predict(&self, x: &SparseVector) -> NodeId {
        self.predict_prepared(&self.models.prepare(x)).0
    }

    pub fn predict_batch(&self, d: &Dataset) -> Vec<NodeId> {
        d.instances
            .par_iter()
            .map(|x| self.predict(&x.features))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn model(node: u32, theta: Vec<f64>) -> NodeModel {
        NodeModel {
            node: NodeId(node),
            theta,
            final_objective: 0.0,
            c_used: 1.0,
            iterations: 0,
            converged: true,
            bias: false,
        }
    }

    fn set(method: Method, fp: String, ms: Vec<NodeModel>) -> ModelSet {
        ModelSet {
            method,
            fingerprint: fp,
            dimensionality: 2,
            bias: false,
            c: Some(1.0),
            idf: None,
            meta: BTreeMap::new(),
            models: ms.into_iter().map(|m| (m.node, m)).collect(),
        }
    }

    fn tree() -> Taxonomy {
        // 0 -> {1, 2}; 1 -> {3, 4}; 2 -> {5, 6}
        Taxonomy::parse("0 1\n0 2\n1 3\n1 4\n2 5\n2 6").unwrap()
    }

    fn td_models(h: &Taxonomy) -> ModelSet {
        set(
            Method::TopDown,
            h.fingerprint(),
            vec![
                model(1, vec![1.0, 0.0]),
                model(2, vec![-1.0, 0.0]),
                model(3, vec![0.0, 1.0]),
                model(4, vec![0.0, -1.0]),
                model(5, vec![0.0, 1.0]),
                model(6, vec![0.0, -1.0]),
            ],
        )
    }

    #[test]
    fn descent_and_count() {
        let h = tree();
        let m = td_models(&h);
        let x = SparseVector::from_dense(&[2.0, -1.0]);
        assert_eq!(predict_topdown_traced(&m, &h, &x).unwrap(), (NodeId(4), 4));
        let p = Predictor::new(&m, Some(&h)).unwrap();
        assert_eq!(p.predict_prepared(&x), (NodeId(4), 4));
        let y = SparseVector::from_dense(&[-2.0, 1.0]);
        assert_eq!(p.predict(&y), NodeId(5));
    }

    #[test]
    fn zero_vector_ties_go_to_smallest() {
        let h = tree();
        let m = td_models(&h);
        let z = SparseVector::default();
        assert_eq!(predict_topdown(&m, &h, &z).unwrap(), NodeId(3));
        assert_eq!(Predictor::new(&m, Some(&h)).unwrap().predict(&z), NodeId(3));
    }

    #[test]
    fn fingerprint_mismatch() {
        let h = tree();
        let m = td_models(&h);
        let other = Taxonomy::parse("0 1\n0 2\n1 3\n1 4\n1 5\n2 6").unwrap();
        let x = SparseVector::default();
        assert!(matches!(
            predict_topdown(&m, &other, &x),
            Err(Error::FingerprintMismatch { .. })
        ));
        assert!(Predictor::new(&m, Some(&other)).is_err());
        assert!(Predictor::new(&m, None).is_err());
    }

    #[test]
    fn flat_argmax() {
        let leaves = [3, 4, 5].map(NodeId).into_iter().collect();
        let m = set(
            Method::Flat,
            class_fingerprint(&leaves),
            vec![
                model(3, vec![1.0, 0.0]),
                model(4, vec![0.0, 1.0]),
                model(5, vec![1.0, 0.0]),
            ],
        );
        let x = SparseVector::from_dense(&[1.0, 0.5]);
        assert_eq!(predict_flat(&m, &x).unwrap(), NodeId(3));
        let p = Predictor::new(&m, None).unwrap();
        assert_eq!(p.predict_prepared(&x), (NodeId(3), 3));
    }

    #[test]
    fn proba() {
        let m = model(1, vec![3f64.ln(), 0.0]);
        let x = SparseVector::from_dense(&[1.0, 0.0]);
        assert!((predict_proba(&m, &x) - 0.75).abs() < 1e-15);
        assert_eq!(predict_proba(&m, &SparseVector::default()), 0.5);
        let big = model(1, vec![1e6, 0.0]);
        assert_eq!(predict_proba(&big, &x), 1.0);
    }
}
