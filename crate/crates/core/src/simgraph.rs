//! Class similarity: centroids, all-pairs cosine scores and the similar-pair set.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;
use rayon::prelude::*;

use crate::corpus::{Dataset, SparseVector};
use crate::error::{Error, Result};
use crate::taxonomy::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    /// Always `a < b`.
    pub a: NodeId,
    pub b: NodeId,
    pub score: f64,
}

impl PairScore {
    pub fn new(x: NodeId, y: NodeId, score: f64) -> Self {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        PairScore { a, b, score }
    }
}

/// Score descending, then `(a, b)` ascending.
fn rank_order(x: &PairScore, y: &PairScore) -> std::cmp::Ordering {
    y.score
        .total_cmp(&x.score)
        .then(x.a.cmp(&y.a))
        .then(x.b.cmp(&y.b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Keep pairs scoring strictly above `tau`.
    Tau(f64),
    /// Keep the `k` best pairs; `tau` becomes the k-th score.
    TopK(usize),
}

#[derive(Debug, Clone)]
pub struct SimilarPairSet {
    pairs: Vec<PairScore>,
    tau: f64,
    lookup: HashSet<(NodeId, NodeId)>,
}

impl SimilarPairSet {
    pub fn new(mut pairs: Vec<PairScore>, tau: f64) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.score < tau) {
            return Err(Error::invalid(format!(
                "pair ({}, {}) scores {} below tau {tau}",
                p.a, p.b, p.score
            )));
        }
        if let Some(p) = pairs.iter().find(|p| p.a >= p.b) {
            return Err(Error::invalid(format!("malformed pair ({}, {})", p.a, p.b)));
        }
        pairs.sort_by(rank_order);
        let lookup = pairs.iter().map(|p| (p.a, p.b)).collect();
        Ok(SimilarPairSet { pairs, tau, lookup })
    }

    pub fn pairs(&self) -> &[PairScore] {
        &self.pairs
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Order-insensitive membership.
    pub fn contains(&self, x: NodeId, y: NodeId) -> bool {
        let key = if x < y { (x, y) } else { (y, x) };
        self.lookup.contains(&key)
    }

    /// Pairs scoring at least `tau`.
    pub fn restrict(&self, tau: f64) -> SimilarPairSet {
        let pairs = self.pairs.iter().filter(|p| p.score >= tau).copied().collect();
        SimilarPairSet::new(pairs, tau).expect("subset of a valid set")
    }

    /// `a b score` lines, preceded by a `# tau` comment.
    pub fn to_text(&self) -> String {
        let mut out = format!("# tau {}\n", self.tau);
        for p in &self.pairs {
            writeln!(out, "{} {} {}", p.a, p.b, p.score).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tau = None;
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if let Some(rest) = s.strip_prefix("# tau") {
                tau = Some(
                    rest.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(line, "bad tau"))?,
                );
                continue;
            }
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = s.split_whitespace().collect();
            let [a, b, sc] = f.as_slice() else {
                return Err(Error::parse(line, "expected `a b score`"));
            };
            let bad = |_| Error::parse(line, format!("bad pair line {s:?}"));
            pairs.push(PairScore::new(
                a.parse().map_err(bad)?,
                b.parse().map_err(bad)?,
                sc.parse::<f64>().map_err(|_| Error::parse(line, "bad score"))?,
            ));
        }
        let tau = tau.unwrap_or_else(|| pairs.iter().map(|p| p.score).fold(1.0, f64::min));
        SimilarPairSet::new(pairs, tau)
    }
}

/// Per-class mean of the instance vectors. Classes in `leaves` without any
/// instance are returned in the second element and left out of the map.
pub fn class_centroids(
    d: &Dataset,
    leaves: impl IntoIterator<Item = NodeId>,
) -> (BTreeMap<NodeId, SparseVector>, Vec<NodeId>) {
    let mut sums: BTreeMap<NodeId, (BTreeMap<u32, f64>, usize)> =
        leaves.into_iter().map(|l| (l, Default::default())).collect();
    let mut stray = 0usize;
    for x in &d.instances {
        let Some((acc, n)) = sums.get_mut(&x.label) else {
            stray += 1;
            continue;
        };
        *n += 1;
        for (i, v) in x.features.iter() {
            *acc.entry(i).or_insert(0.0) += v;
        }
    }
    if stray > 0 {
        warn!("{stray} instances carry labels outside the class set; ignored");
    }
    let mut missing = Vec::new();
    let mut out = BTreeMap::new();
    for (label, (acc, n)) in sums {
        if n == 0 {
            missing.push(label);
            continue;
        }
        let inv = 1.0 / n as f64;
        out.insert(
            label,
            SparseVector::from_sorted(acc.into_iter().map(|(i, v)| (i, v * inv)).collect()),
        );
    }
    if !missing.is_empty() {
        warn!(
            "{} classes have no training instances and are excluded from pairing",
            missing.len()
        );
    }
    (out, missing)
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(u: &SparseVector, v: &SparseVector) -> f64 {
    cosine_with_norms(u, u.norm(), v, v.norm())
}

fn cosine_with_norms(u: &SparseVector, nu: f64, v: &SparseVector, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Scores every unordered class pair. Runs on the ambient rayon pool; the
/// result is sorted once after the parallel phase, so it does not depend on
/// the number of workers.
pub fn all_pairs_scores(centroids: &BTreeMap<NodeId, SparseVector>) -> Result<Vec<PairScore>> {
    if centroids.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 classes to pair, got {}",
            centroids.len()
        )));
    }
    let items: Vec<(NodeId, &SparseVector, f64)> = centroids
        .iter()
        .map(|(&id, v)| (id, v, v.norm()))
        .collect();
    let mut scores: Vec<PairScore> = (0..items.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let (a, u, nu) = items[i];
            items[i + 1..]
                .iter()
                .map(move |&(b, v, nv)| PairScore::new(a, b, cosine_with_norms(u, nu, v, nv)))
        })
        .collect();
    scores.par_sort_unstable_by(rank_order);
    Ok(scores)
}

pub fn select_pairs(scores: &[PairScore], mode: Selection) -> Result<SimilarPairSet> {
    match mode {
        Selection::Tau(tau) => {
            if !(-1.0..=1.0).contains(&tau) {
                return Err(Error::invalid(format!("tau {tau} outside [-1, 1]")));
            }
            let kept = scores.iter().filter(|p| p.score > tau).copied().collect();
            SimilarPairSet::new(kept, tau)
        }
        Selection::TopK(k) => {
            if k == 0 {
                return Err(Error::invalid("top-k must be positive"));
            }
            if scores.is_empty() {
                return Err(Error::invalid("no scored pairs to select from"));
            }
            let k = if k > scores.len() {
                warn!("top-k {k} exceeds the {} scored pairs; clamped", scores.len());
                scores.len()
            } else {
                k
            };
            let mut sorted = scores.to_vec();
            sorted.sort_by(rank_order);
            sorted.truncate(k);
            let tau = sorted[k - 1].score;
            SimilarPairSet::new(sorted, tau)
        }
    }
}

/// Knee of the descending rank-vs-score curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knee {
    /// 1-based rank of the knee point.
    pub rank: usize,
    pub score: f64,
    /// No point lies off the chord; `rank` is 1 and `score` the top score.
    pub flat: bool,
}

/// Locates the knee by distance from the chord joining the first and last
/// points of the curve.
///
/// Points above the chord (a high plateau followed by a drop) take
/// precedence and the farthest of them is the knee; otherwise the farthest
/// point below the chord (a drop flattening into a tail) is used. Distances
/// are compared along the score axis, which is proportional to the
/// perpendicular distance for a fixed chord.
pub fn auto_threshold(scores: &[f64]) -> Result<Knee> {
    let m = scores.len();
    if m < 3 {
        return Err(Error::invalid(format!("need at least 3 scores, got {m}")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("similarity curve"));
    }
    let (first, last) = (scores[0], scores[m - 1]);
    let slope = (last - first) / (m - 1) as f64;
    let eps = 1e-12 * first.abs().max(last.abs()).max(1.0);

    let mut above: Option<(usize, f64)> = None;
    let mut below: Option<(usize, f64)> = None;
    for (r, &s) in scores.iter().enumerate() {
        let off = s - (first + slope * r as f64);
        if off > eps && above.is_none_or(|(_, d)| off > d) {
            above = Some((r, off));
        }
        if -off > eps && below.is_none_or(|(_, d)| -off > d) {
            below = Some((r, -off));
        }
    }
    Ok(match above.or(below) {
        Some((r, _)) => Knee {
            rank: r + 1,
            score: scores[r],
            flat: false,
        },
        None => {
            warn!("similarity curve has no knee; falling back to the top score");
            Knee {
                rank: 1,
                score: first,
                flat: true,
            }
        }
    })
}

/// `rank,class_a,class_b,score` with a header row.
pub fn curve_csv(scores: &[PairScore]) -> String {
    let mut out = String::from("rank,class_a,class_b,score\n");
    for (r, p) in scores.iter().enumerate() {
        writeln!(out, "{},{},{},{}", r + 1, p.a, p.b, p.score).unwrap();
    }
    out
}
