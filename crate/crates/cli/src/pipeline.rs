//! Steps shared by the subcommands and the benchmark driver.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};
use taxrewire_core::learner::{Predictor, DEFAULT_C_GRID};
use taxrewire_core::simgraph::{all_pairs_scores, auto_threshold, class_centroids, select_pairs, Knee};
use taxrewire_core::{
    Dataset, EvalPair, ModelSet, NodeId, PairScore, Selection, SimilarPairSet, Taxonomy, TfIdf,
};

use crate::error::{CliError, CliResult};
use crate::SelectArgs;

pub fn parse_taxonomy(text: &str, path: &Path) -> CliResult<Taxonomy> {
    Taxonomy::parse(text).map_err(CliError::in_file(path))
}

pub fn parse_dataset(text: &str, path: &Path) -> CliResult<Dataset> {
    Dataset::parse(text).map_err(CliError::in_file(path))
}

/// Sorted centroid-cosine scores of every class pair of `h`.
pub fn pair_scores(d: &Dataset, h: &Taxonomy, tfidf: bool) -> CliResult<Vec<PairScore>> {
    let weighted;
    let d = if tfidf {
        weighted = TfIdf::fit(d).transform(d);
        &weighted
    } else {
        d
    };
    let (centroids, _) = class_centroids(d, h.leaves().iter().copied());
    Ok(all_pairs_scores(&centroids)?)
}

/// Applies the threshold mode (the knee when none is given). The knee is
/// returned whenever the curve has one.
pub fn select(
    scores: &[PairScore],
    mode: &SelectArgs,
) -> CliResult<(SimilarPairSet, Option<Knee>)> {
    let curve: Vec<f64> = scores.iter().map(|p| p.score).collect();
    let knee = if curve.len() >= 3 {
        Some(auto_threshold(&curve)?)
    } else {
        None
    };
    let selection = match (mode.tau, mode.top_k) {
        (Some(t), _) => Selection::Tau(t),
        (_, Some(k)) => Selection::TopK(k),
        _ => match knee {
            Some(k) => Selection::TopK(k.rank),
            None => {
                return Err(CliError::usage(
                    "automatic threshold needs at least 3 class pairs; give --tau or --top-k",
                ))
            }
        },
    };
    Ok((select_pairs(scores, selection)?, knee))
}

pub fn selection_label(mode: &SelectArgs) -> Value {
    match (mode.tau, mode.top_k) {
        (Some(t), _) => json!({ "tau": t }),
        (_, Some(k)) => json!({ "top_k": k }),
        _ => json!("auto"),
    }
}

pub fn knee_json(knee: Option<Knee>) -> Value {
    match knee {
        Some(k) => json!({ "rank": k.rank, "score": k.score, "flat": k.flat }),
        None => Value::Null,
    }
}

pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    if s == "default" {
        return Ok(DEFAULT_C_GRID.to_vec());
    }
    let grid = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|c| c.is_finite() && *c > 0.0)
                .ok_or_else(|| CliError::usage(format!("bad C value {t:?} in --grid")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if grid.is_empty() {
        return Err(CliError::usage("empty --grid"));
    }
    Ok(grid)
}

pub fn predict_all(models: &ModelSet, h: Option<&Taxonomy>, d: &Dataset) -> CliResult<Vec<NodeId>> {
    let p = Predictor::new(models, h)?;
    Ok(p.predict_batch(d))
}

/// `index label` lines, indices from 0 in data order.
pub fn predictions_text(labels: &[NodeId]) -> String {
    let mut out = String::with_capacity(labels.len() * 8);
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i} {l}").unwrap();
    }
    out
}

pub fn parse_predictions(text: &str, path: &Path, expected: usize) -> CliResult<Vec<NodeId>> {
    let bad = |line: usize, msg: String| {
        CliError::InFile(
            path.to_path_buf(),
            taxrewire_core::Error::Parse { line, msg },
        )
    };
    let mut out = Vec::with_capacity(expected);
    for (i, raw) in text.lines().enumerate() {
        let s = raw.trim();
        if s.is_empty() {
            continue;
        }
        let (idx, label) = s
            .split_once(' ')
            .ok_or_else(|| bad(i + 1, format!("expected `index label`, got {s:?}")))?;
        if idx.parse::<usize>().ok() != Some(out.len()) {
            return Err(bad(i + 1, format!("expected index {}, got {idx:?}", out.len())));
        }
        out.push(
            label
                .trim()
                .parse::<NodeId>()
                .map_err(|_| bad(i + 1, format!("bad label {label:?}")))?,
        );
    }
    if out.len() != expected {
        return Err(CliError::usage(format!(
            "{}: {} predictions for {expected} instances",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

pub fn eval_pairs(d: &Dataset, predicted: &[NodeId]) -> Vec<EvalPair> {
    d.labels()
        .zip(predicted)
        .map(|(t, &p)| EvalPair::new(t, p))
        .collect()
}

/// Provenance as a `#` comment line, for text formats that skip comments.
pub fn comment_header(provenance: &str) -> String {
    format!("# provenance {provenance}\n")
}
