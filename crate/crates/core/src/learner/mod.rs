//! Per-node logistic regression and hierarchical prediction.

pub mod lbfgs;
pub mod objective;
mod predict;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{SparseVector, TfIdf};
use crate::error::{Error, Result};
use crate::taxonomy::NodeId;

pub use objective::{lr_objective_gradient, sigmoid, BinaryProblem};
pub use predict::{predict_flat, predict_proba, predict_topdown, predict_topdown_traced, Predictor};
pub use train::{
    binary_labels, fit, train_flat, train_node, train_topdown, tune_c, CChoice, FitReport,
    TuneReport, DEFAULT_C_GRID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// One model per non-root node, greedy root-to-leaf descent.
    #[serde(rename = "td-lr")]
    TopDown,
    /// One-vs-rest over the classes only.
    #[serde(rename = "flat")]
    Flat,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::TopDown => "td-lr",
            Method::Flat => "flat",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "td-lr" => Ok(Method::TopDown),
            "flat" => Ok(Method::Flat),
            _ => Err(Error::invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// Per-instance loss weights; unit weights reduce to the plain objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    sigma: Vec<f64>,
}

impl CostVector {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        if let Some(v) = sigma.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("cost {v} is not positive")));
        }
        Ok(CostVector { sigma })
    }

    pub fn ones(n: usize) -> Self {
        CostVector {
            sigma: vec![1.0; n],
        }
    }

    /// One value per line, blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sigma = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            sigma.push(
                s.parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, format!("bad cost {s:?}")))?,
            );
        }
        CostVector::new(sigma)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> CostVector {
        CostVector {
            sigma: indices.iter().map(|&i| self.sigma[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Append a constant feature so every model gets an intercept.
    pub bias: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            c: 1.0,
            tol: 1e-6,
            max_iter: 1000,
            bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    pub node: NodeId,
    /// Feature `i` at `theta[i - 1]`; the intercept, if any, is last.
    pub theta: Vec<f64>,
    /// Objective value at the returned weights.
    pub final_objective: f64,
    pub c_used: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `theta` carries a trailing intercept.
    pub bias: bool,
}

impl NodeModel {
    /// Raw decision score `theta . x` (plus intercept).
    #[inline]
    pub fn score(&self, x: &SparseVector) -> f64 {
        if self.bias {
            let dim = self.theta.len() - 1;
            x.dot_dense(&self.theta[..dim]) + self.theta[dim]
        } else {
            x.dot_dense(&self.theta)
        }
    }
}

/// Models for every non-root node (top-down) or every class (flat), bound to
/// the hierarchy they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet {
    pub method: Method,
    pub fingerprint: String,
    pub dimensionality: usize,
    pub bias: bool,
    /// Global C, or `None` when C was chosen per node.
    pub c: Option<f64>,
    /// Feature weighting applied to raw inputs before scoring.
    pub idf: Option<TfIdf>,
    /// Free-form provenance, written as `meta key value` header lines.
    pub meta: BTreeMap<String, String>,
    pub models: BTreeMap<NodeId, NodeModel>,
}

const MAGIC: &str = "# taxrewire model v1";

impl ModelSet {
    pub fn score(&self, node: NodeId, x: &SparseVector) -> Option<f64> {
        self.models.get(&node).map(|m| m.score(x))
    }

    /// Applies the stored feature weighting, if any.
    pub fn prepare(&self, x: &SparseVector) -> SparseVector {
        match &self.idf {
            Some(t) => t.transform_vector(x),
            None => x.clone(),
        }
    }

    /// Text model file: `key value` header lines, then one
    /// `node_id idx:weight ...` record per model.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        writeln!(o, "{MAGIC}").unwrap();
        writeln!(o, "method {}", self.method).unwrap();
        writeln!(o, "fingerprint {}", self.fingerprint).unwrap();
        writeln!(o, "dimensionality {}", self.dimensionality).unwrap();
        writeln!(o, "bias {}", self.bias).unwrap();
        match self.c {
            Some(c) => writeln!(o, "c {c}").unwrap(),
            None => writeln!(o, "c per-node").unwrap(),
        }
        for (k, v) in &self.meta {
            writeln!(o, "meta {k} {v}").unwrap();
        }
        if let Some(t) = &self.idf {
            o.push_str("idf");
            for (i, w) in t.weights().iter().enumerate() {
                if let Some(w) = w {
                    write!(o, " {}:{w}", i + 1).unwrap();
                }
            }
            o.push('\n');
        }
        for m in self.models.values() {
            writeln!(
                o,
                "stats {} {} {} {} {}",
                m.node, m.c_used, m.final_objective, m.iterations, m.converged
            )
            .unwrap();
        }
        writeln!(o, "models {}", self.models.len()).unwrap();
        for m in self.models.values() {
            write!(o, "{}", m.node).unwrap();
            for (i, w) in m.theta.iter().enumerate() {
                if *w != 0.0 {
                    write!(o, " {}:{w}", i + 1).unwrap();
                }
            }
            o.push('\n');
        }
        o
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(Error::parse(1, "missing model header")),
        }
        let mut method = None;
        let mut fingerprint = None;
        let mut dim = None;
        let mut bias = false;
        let mut c = None;
        let mut idf = None;
        let mut meta = BTreeMap::new();
        let mut stats: BTreeMap<NodeId, (f64, f64, usize, bool)> = BTreeMap::new();
        let mut n_models = None;

        let num = |line: usize, s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("bad number {s:?}")))
        };
        let int = |line: usize, s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::parse(line, format!("bad integer {s:?}")))
        };

        for (i, raw) in lines.by_ref() {
            let line = i + 1;
            let (key, rest) = raw.split_once(' ').unwrap_or((raw, ""));
            match key {
                "method" => method = Some(rest.parse::<Method>()?),
                "fingerprint" => fingerprint = Some(rest.to_string()),
                "dimensionality" => dim = Some(int(line, rest)?),
                "bias" => bias = rest == "true",
                "c" => c = if rest == "per-node" { None } else { Some(num(line, rest)?) },
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "idf" => {
                    let d = dim.ok_or_else(|| Error::parse(line, "idf before dimensionality"))?;
                    let mut w = vec![None; d];
                    for (j, v) in parse_weights(line, rest)? {
                        *w.get_mut(j as usize - 1)
                            .ok_or_else(|| Error::parse(line, "idf index out of range"))? =
                            Some(v);
                    }
                    idf = Some(TfIdf::from_weights(w));
                }
                "stats" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 5 {
                        return Err(Error::parse(line, "malformed stats line"));
                    }
                    let node = NodeId(int(line, f[0])? as u32);
                    stats.insert(
                        node,
                        (num(line, f[1])?, num(line, f[2])?, int(line, f[3])?, f[4] == "true"),
                    );
                }
                "models" => {
                    n_models = Some(int(line, rest)?);
                    break;
                }
                "" => {}
                other => return Err(Error::parse(line, format!("unknown header key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::parse(0, format!("model header lacks `{k}`"));
        let method = method.ok_or_else(|| missing("method"))?;
        let fingerprint = fingerprint.ok_or_else(|| missing("fingerprint"))?;
        let dim = dim.ok_or_else(|| missing("dimensionality"))?;
        let n_models = n_models.ok_or_else(|| missing("models"))?;
        let n_params = dim + usize::from(bias);

        let mut models = BTreeMap::new();
        for (i, raw) in lines {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (id, rest) = raw.split_once(' ').unwrap_or((raw, ""));
            let node = NodeId(int(line, id)? as u32);
            let mut theta = vec![0.0; n_params];
            for (j, v) in parse_weights(line, rest)? {
                *theta
                    .get_mut(j as usize - 1)
                    .ok_or_else(|| Error::parse(line, "weight index out of range"))? = v;
            }
            let (c_used, final_objective, iterations, converged) =
                stats.get(&node).copied().unwrap_or((c.unwrap_or(f64::NAN), f64::NAN, 0, true));
            models.insert(
                node,
                NodeModel {
                    node,
                    theta,
                    final_objective,
                    c_used,
                    iterations,
                    converged,
                    bias,
                },
            );
        }
        if models.len() != n_models {
            return Err(Error::parse(
                0,
                format!("expected {n_models} model records, found {}", models.len()),
            ));
        }
        Ok(ModelSet {
            method,
            fingerprint,
            dimensionality: dim,
            bias,
            c,
            idf,
            meta,
            models,
        })
    }
}

fn parse_weights(line: usize, s: &str) -> Result<Vec<(u32, f64)>> {
    s.split_whitespace()
        .map(|tok| {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(line, format!("expected idx:val, got {tok:?}")))?;
            let i: u32 = i
                .parse()
                .map_err(|_| Error::parse(line, format!("bad index {i:?}")))?;
            if i == 0 {
                return Err(Error::parse(line, "indices start at 1"));
            }
            let v: f64 = v
                .parse()
                .map_err(|_| Error::parse(line, format!("bad value {v:?}")))?;
            Ok((i, v))
        })
        .collect()
}
