use std::collections::{BTreeMap, BTreeSet};

use log::{debug, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::lbfgs::{self, LbfgsConfig};
use super::objective::BinaryProblem;
use super::predict::Predictor;
use super::{CostVector, Method, ModelSet, NodeModel, TrainOptions};
use crate::corpus::{split_indices, Dataset, TfIdf};
use crate::error::{Error, Result};
use crate::metrics::{micro_f1, EvalPair};
use crate::taxonomy::{NodeId, Taxonomy};

pub const DEFAULT_C_GRID: [f64; 7] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];

/// `+1` for instances whose class lies in the subtree of `node`, `-1` for all others.
pub fn binary_labels(h: &Taxonomy, d: &Dataset, node: NodeId) -> Vec<f64> {
    d.labels()
        .map(|l| {
            if h.ancestors(l).any(|a| a == node) {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

fn check_costs(d: &Dataset, costs: Option<&CostVector>) -> Result<()> {
    match costs {
        Some(c) if c.len() != d.len() => Err(Error::DimensionMismatch {
            expected: d.len(),
            got: c.len(),
        }),
        _ => Ok(()),
    }
}

fn fit_binary(
    node: NodeId,
    d: &Dataset,
    ys: Vec<f64>,
    costs: Option<&CostVector>,
    opts: &TrainOptions,
) -> Result<NodeModel> {
    if d.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let positives = ys.iter().filter(|y| **y > 0.0).count();
    if positives == 0 {
        warn!("node {node} has no positive training instances");
    }
    let xs = d.instances.iter().map(|x| &x.features).collect();
    let problem = BinaryProblem::new(
        xs,
        ys,
        costs.map(|c| c.as_slice().to_vec()),
        opts.c,
        d.dimensionality,
        opts.bias,
    )?;
    let cfg = LbfgsConfig {
        tol: opts.tol,
        max_iter: opts.max_iter,
        ..Default::default()
    };
    let sol = lbfgs::minimize(
        |theta, grad| problem.eval(theta, grad),
        vec![0.0; problem.n_params()],
        cfg,
    );
    if !sol.converged {
        warn!(
            "node {node}: solver stopped after {} iterations (|g| = {:.3e})",
            sol.iterations, sol.grad_norm
        );
    }
    debug!(
        "node {node}: {} positives, objective {} after {} iterations",
        positives, sol.value, sol.iterations
    );
    Ok(NodeModel {
        node,
        theta: sol.x,
        final_objective: sol.value,
        c_used: opts.c,
        iterations: sol.iterations,
        converged: sol.converged,
        bias: opts.bias,
    })
}

fn check_labels(h: &Taxonomy, d: &Dataset) -> Result<()> {
    if let Some(l) = d.labels().find(|l| !h.is_leaf(*l)) {
        return Err(Error::invalid(format!(
            "instance label {l} is not a class of the hierarchy"
        )));
    }
    let seen: BTreeSet<NodeId> = d.labels().collect();
    let absent = h.leaves().iter().filter(|l| !seen.contains(l)).count();
    if absent > 0 {
        warn!("{absent} classes have no training instances");
    }
    Ok(())
}

/// One-vs-rest model for `node`: positives are the instances under it,
/// negatives every other instance.
pub fn train_node(
    node: NodeId,
    train: &Dataset,
    h: &Taxonomy,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<NodeModel> {
    if !h.contains(node) {
        return Err(Error::UnknownNode(node));
    }
    if node == h.root() {
        return Err(Error::invalid("the root has no model"));
    }
    check_costs(train, costs)?;
    fit_binary(node, train, binary_labels(h, train, node), costs, opts)
}

fn train_nodes(
    nodes: Vec<NodeId>,
    train: &Dataset,
    labels_of: impl Fn(NodeId) -> Vec<f64> + Sync,
    c_of: impl Fn(NodeId) -> f64 + Sync,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<BTreeMap<NodeId, NodeModel>> {
    check_costs(train, costs)?;
    let fitted: Vec<NodeModel> = nodes
        .into_par_iter()
        .map(|n| {
            let o = TrainOptions { c: c_of(n), ..*opts };
            fit_binary(n, train, labels_of(n), costs, &o)
        })
        .collect::<Result<_>>()?;
    Ok(fitted.into_iter().map(|m| (m.node, m)).collect())
}

fn topdown_with(
    h: &Taxonomy,
    train: &Dataset,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
    c_of: impl Fn(NodeId) -> f64 + Sync,
) -> Result<BTreeMap<NodeId, NodeModel>> {
    h.validate_strict()?;
    check_labels(h, train)?;
    // ancestor sets per instance, computed once for all nodes
    let paths: Vec<BTreeSet<NodeId>> = train.labels().map(|l| h.ancestors(l).collect()).collect();
    train_nodes(
        h.non_root_nodes().collect(),
        train,
        |n| {
            paths
                .iter()
                .map(|p| if p.contains(&n) { 1.0 } else { -1.0 })
                .collect()
        },
        c_of,
        opts,
        costs,
    )
}

/// A model for every non-root node of `h`. Nodes are trained independently
/// on the ambient rayon pool.
pub fn train_topdown(
    h: &Taxonomy,
    train: &Dataset,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<ModelSet> {
    let models = topdown_with(h, train, opts, costs, |_| opts.c)?;
    Ok(ModelSet {
        method: Method::TopDown,
        fingerprint: h.fingerprint(),
        dimensionality: train.dimensionality,
        bias: opts.bias,
        c: Some(opts.c),
        idf: None,
        meta: BTreeMap::new(),
        models,
    })
}

pub(crate) fn class_fingerprint(leaves: &BTreeSet<NodeId>) -> String {
    let mut h = Sha256::new();
    h.update(b"flat");
    for l in leaves {
        h.update(format!(" {l}").as_bytes());
    }
    hex::encode(h.finalize())
}

fn flat_with(
    leaves: &BTreeSet<NodeId>,
    train: &Dataset,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
    c_of: impl Fn(NodeId) -> f64 + Sync,
) -> Result<BTreeMap<NodeId, NodeModel>> {
    if leaves.is_empty() {
        return Err(Error::invalid("no classes to train"));
    }
    if let Some(l) = train.labels().find(|l| !leaves.contains(l)) {
        return Err(Error::invalid(format!("instance label {l} is not a known class")));
    }
    train_nodes(
        leaves.iter().copied().collect(),
        train,
        |n| train.labels().map(|l| if l == n { 1.0 } else { -1.0 }).collect(),
        c_of,
        opts,
        costs,
    )
}

/// One-vs-rest models over `leaves`, ignoring any hierarchy.
pub fn train_flat(
    leaves: &BTreeSet<NodeId>,
    train: &Dataset,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<ModelSet> {
    let models = flat_with(leaves, train, opts, costs, |_| opts.c)?;
    Ok(ModelSet {
        method: Method::Flat,
        fingerprint: class_fingerprint(leaves),
        dimensionality: train.dimensionality,
        bias: opts.bias,
        c: Some(opts.c),
        idf: None,
        meta: BTreeMap::new(),
        models,
    })
}

fn train_method(
    method: Method,
    h: &Taxonomy,
    train: &Dataset,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<ModelSet> {
    match method {
        Method::TopDown => train_topdown(h, train, opts, costs),
        Method::Flat => train_flat(h.leaves(), train, opts, costs),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub c: f64,
    /// `(C, validation micro-F1)` for every grid value, ascending in C.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the global C with the best validation micro-F1 of the full
/// pipeline; ties go to the smaller C. An empty validation set falls back to
/// C = 1.
pub fn tune_c(
    h: &Taxonomy,
    method: Method,
    train: &Dataset,
    validation: &Dataset,
    grid: &[f64],
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<TuneReport> {
    if grid.is_empty() {
        return Err(Error::invalid("empty C grid"));
    }
    if validation.is_empty() {
        warn!("empty validation set; using C = 1");
        return Ok(TuneReport {
            c: 1.0,
            scores: Vec::new(),
        });
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &c in &grid {
        let o = TrainOptions { c, ..*opts };
        let models = train_method(method, h, train, &o, costs)?;
        let predictor = Predictor::new(&models, Some(h))?;
        let pairs: Vec<EvalPair> = validation
            .instances
            .par_iter()
            .map(|x| EvalPair {
                truth: x.label,
                predicted: predictor.predict_prepared(&x.features).0,
            })
            .collect();
        let score = micro_f1(&pairs)?;
        debug!("C = {c}: validation micro-F1 {score}");
        scores.push((c, score));
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    Ok(TuneReport {
        c: best.expect("non-empty grid").0,
        scores,
    })
}

/// Per-node C: each node keeps the grid value with the best binary
/// validation accuracy (ties to the smaller C).
fn tune_c_per_node(
    h: &Taxonomy,
    method: Method,
    train: &Dataset,
    validation: &Dataset,
    grid: &[f64],
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<BTreeMap<NodeId, f64>> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let nodes: Vec<NodeId> = match method {
        Method::TopDown => h.non_root_nodes().collect(),
        Method::Flat => h.leaves().iter().copied().collect(),
    };
    if validation.is_empty() {
        warn!("empty validation set; using C = 1 for every node");
        return Ok(nodes.into_iter().map(|n| (n, 1.0)).collect());
    }
    let mut best: BTreeMap<NodeId, (f64, f64)> = BTreeMap::new();
    for &c in &grid {
        let o = TrainOptions { c, ..*opts };
        let models = train_method(method, h, train, &o, costs)?;
        for n in &nodes {
            let m = &models.models[n];
            let truth = match method {
                Method::TopDown => binary_labels(h, validation, *n),
                Method::Flat => validation
                    .labels()
                    .map(|l| if l == *n { 1.0 } else { -1.0 })
                    .collect(),
            };
            let correct = validation
                .instances
                .iter()
                .zip(&truth)
                .filter(|(x, y)| (m.score(&x.features) >= 0.0) == (**y > 0.0))
                .count();
            let acc = correct as f64 / validation.len() as f64;
            let e = best.entry(*n).or_insert((c, acc));
            if acc > e.1 {
                *e = (c, acc);
            }
        }
    }
    Ok(best.into_iter().map(|(n, (c, _))| (n, c)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum CChoice {
    Fixed(f64),
    Grid {
        grid: Vec<f64>,
        /// Train share of the tuning split.
        ratio: f64,
        seed: u64,
        per_node: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub c: Option<f64>,
    pub per_node_c: Option<BTreeMap<NodeId, f64>>,
    pub tuning: Option<TuneReport>,
}

/// Full training entry point: optional tf-idf fitted on `train`, C selection
/// on a seeded split, then a final fit on all of `train`.
pub fn fit(
    h: &Taxonomy,
    method: Method,
    train: &Dataset,
    choice: &CChoice,
    tfidf: bool,
    opts: &TrainOptions,
    costs: Option<&CostVector>,
) -> Result<(ModelSet, FitReport)> {
    check_costs(train, costs)?;
    let idf = tfidf.then(|| TfIdf::fit(train));
    let data = match &idf {
        Some(t) => t.transform(train),
        None => train.clone(),
    };
    let (mut models, report) = match choice {
        CChoice::Fixed(c) => {
            let o = TrainOptions { c: *c, ..*opts };
            (
                train_method(method, h, &data, &o, costs)?,
                FitReport {
                    c: Some(*c),
                    ..Default::default()
                },
            )
        }
        CChoice::Grid {
            grid,
            ratio,
            seed,
            per_node,
        } => {
            let (a, b) = split_indices(data.len(), *ratio, *seed)?;
            let (tr, va) = (data.subset(&a), data.subset(&b));
            let tr_costs = costs.map(|c| c.subset(&a));
            if *per_node {
                let cs = tune_c_per_node(h, method, &tr, &va, grid, opts, tr_costs.as_ref())?;
                let models = match method {
                    Method::TopDown => topdown_with(h, &data, opts, costs, |n| cs[&n])?,
                    Method::Flat => flat_with(h.leaves(), &data, opts, costs, |n| cs[&n])?,
                };
                let fingerprint = match method {
                    Method::TopDown => h.fingerprint(),
                    Method::Flat => class_fingerprint(h.leaves()),
                };
                (
                    ModelSet {
                        method,
                        fingerprint,
                        dimensionality: data.dimensionality,
                        bias: opts.bias,
                        c: None,
                        idf: None,
                        meta: BTreeMap::new(),
                        models,
                    },
                    FitReport {
                        per_node_c: Some(cs),
                        ..Default::default()
                    },
                )
            } else {
                let t = tune_c(h, method, &tr, &va, grid, opts, tr_costs.as_ref())?;
                let o = TrainOptions { c: t.c, ..*opts };
                (
                    train_method(method, h, &data, &o, costs)?,
                    FitReport {
                        c: Some(t.c),
                        tuning: Some(t),
                        ..Default::default()
                    },
                )
            }
        }
    };
    models.idf = idf;
    Ok((models, report))
}
