//! Sparse labeled data: SVMlight-style parsing, tf-idf weighting and seeded
//! train/validation splits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::taxonomy::NodeId;

/// Feature vector with 1-based, strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::invalid(format!(
                    "indices not strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(i, _)) = entries.first() {
            if i == 0 {
                return Err(Error::invalid("feature indices start at 1"));
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("feature value"));
        }
        Ok(Self::from_sorted(entries))
    }

    /// Drops zeros; caller guarantees ordering.
    pub(crate) fn from_sorted(mut entries: Vec<(u32, f64)>) -> Self {
        entries.retain(|&(_, v)| v != 0.0);
        SparseVector { entries }
    }

    /// Builds a sparse vector from a dense slice (index `i` maps to feature `i + 1`).
    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_sorted(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as u32 + 1, v))
                .collect(),
        )
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_index(&self) -> u32 {
        self.entries.last().map_or(0, |e| e.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> SparseVector {
        Self::from_sorted(self.entries.iter().map(|&(i, v)| (i, v * alpha)).collect())
    }

    /// Dot product with a dense weight vector where feature `i` lives at `w[i - 1]`.
    /// Features beyond `w.len()` contribute nothing.
    #[inline]
    pub fn dot_dense(&self, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for &(i, v) in &self.entries {
            if let Some(wi) = w.get(i as usize - 1) {
                s += wi * v;
            }
        }
        s
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: SparseVector,
    pub label: NodeId,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    /// Largest feature index in use.
    pub dimensionality: usize,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>) -> Self {
        let dimensionality = instances
            .iter()
            .map(|x| x.features.max_index() as usize)
            .max()
            .unwrap_or(0);
        Dataset {
            instances,
            dimensionality,
        }
    }

    /// Parses `label idx:val idx:val ...` lines. Blank lines and `#` comments
    /// are skipped; stored zeros are dropped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut instances = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            let mut tokens = s.split_whitespace();
            let label_tok = tokens.next().expect("non-empty line");
            let label: NodeId = label_tok
                .parse()
                .map_err(|_| Error::parse(line, format!("bad label {label_tok:?}")))?;
            let mut entries = Vec::new();
            let mut last = 0u32;
            for tok in tokens {
                let (idx, val) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::parse(line, format!("expected idx:val, got {tok:?}")))?;
                let idx: u32 = idx
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad feature index {idx:?}")))?;
                let val: f64 = val
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad feature value {val:?}")))?;
                if idx == 0 {
                    return Err(Error::parse(line, "feature indices start at 1"));
                }
                if idx <= last {
                    return Err(Error::parse(
                        line,
                        format!("indices out of order ({last} then {idx})"),
                    ));
                }
                if !val.is_finite() {
                    return Err(Error::parse(line, format!("non-finite value at {idx}")));
                }
                last = idx;
                entries.push((idx, val));
            }
            instances.push(Instance {
                features: SparseVector::from_sorted(entries),
                label,
            });
        }
        if instances.is_empty() {
            return Err(Error::parse(0, "empty dataset"));
        }
        Ok(Dataset::new(instances))
    }

    /// SVMlight text; values printed with round-trip precision.
    pub fn to_svmlight(&self) -> String {
        let mut out = String::new();
        for x in &self.instances {
            write!(out, "{}", x.label).unwrap();
            for (i, v) in x.features.iter() {
                write!(out, " {i}:{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.instances.iter().map(|x| x.label)
    }

    pub fn label_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut m = BTreeMap::new();
        for l in self.labels() {
            *m.entry(l).or_insert(0) += 1;
        }
        m
    }

    /// Instances at `indices`, in that order. Dimensionality is inherited.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            dimensionality: self.dimensionality,
        }
    }
}

/// Inverse document frequencies fitted on a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    /// `idf[i - 1]` for feature `i`; `None` where the feature never occurs.
    idf: Vec<Option<f64>>,
}

impl TfIdf {
    /// `idf_j = ln(N / df_j)`, no smoothing.
    pub fn fit(d: &Dataset) -> Self {
        let mut df = vec![0usize; d.dimensionality];
        for x in &d.instances {
            for (i, _) in x.features.iter() {
                df[i as usize - 1] += 1;
            }
        }
        let n = d.len() as f64;
        TfIdf {
            idf: df
                .into_iter()
                .map(|c| (c > 0).then(|| (n / c as f64).ln()))
                .collect(),
        }
    }

    pub fn from_weights(idf: Vec<Option<f64>>) -> Self {
        TfIdf { idf }
    }

    pub fn weights(&self) -> &[Option<f64>] {
        &self.idf
    }

    /// `tf * idf` followed by unit l2 scaling. Features unseen at fit time are dropped.
    pub fn transform_vector(&self, v: &SparseVector) -> SparseVector {
        let weighted = SparseVector::from_sorted(
            v.iter()
                .filter_map(|(i, tf)| {
                    let w = self.idf.get(i as usize - 1).copied().flatten()?;
                    Some((i, tf * w))
                })
                .collect(),
        );
        l2_normalized(&weighted)
    }

    pub fn transform(&self, d: &Dataset) -> Dataset {
        Dataset {
            instances: d
                .instances
                .iter()
                .map(|x| Instance {
                    features: self.transform_vector(&x.features),
                    label: x.label,
                })
                .collect(),
            dimensionality: d.dimensionality,
        }
    }
}

pub fn l2_normalized(v: &SparseVector) -> SparseVector {
    let n = v.norm();
    if n == 0.0 {
        SparseVector::default()
    } else {
        v.scaled(1.0 / n)
    }
}

/// Tf-idf weighting with document frequencies taken from `d` itself.
pub fn tfidf_normalize(d: &Dataset) -> Dataset {
    TfIdf::fit(d).transform(d)
}

/// Seeded shuffle of `0..n` split into `ceil(ratio * n)` and the rest.
/// Both parts are returned in ascending order.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::invalid(format!("cannot split {n} instances")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // guard against 0.9 * 100 = 90.000...01
    let k = ((ratio * n as f64) - 1e-9).ceil() as usize;
    let mut rest = idx.split_off(k.min(n));
    idx.sort_unstable();
    rest.sort_unstable();
    Ok((idx, rest))
}

pub fn split_train_validation(d: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (a, b) = split_indices(d.len(), ratio, seed)?;
    Ok((d.subset(&a), d.subset(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(e: &[(u32, f64)]) -> SparseVector {
        SparseVector::new(e.to_vec()).unwrap()
    }

    #[test]
    fn parse_one_line() {
        let d = Dataset::parse("7 1:1.0 5:2.0").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.instances[0].label, NodeId(7));
        assert_eq!(d.instances[0].features.entries(), &[(1, 1.0), (5, 2.0)]);
        assert_eq!(d.dimensionality, 5);
    }

    #[test]
    fn parse_rejects() {
        let e = Dataset::parse("7 5:1 1:1").unwrap_err();
        assert!(e.to_string().contains("out of order"), "{e}");
        assert!(Dataset::parse("7 5:1 5:1").is_err());
        assert!(Dataset::parse("x 1:1").is_err());
        assert!(Dataset::parse("1 1:abc").is_err());
        assert!(Dataset::parse("1 0:1").is_err());
        assert!(Dataset::parse("").is_err());
        assert!(Dataset::parse("\n\n").is_err());
        let e = Dataset::parse("1 1:1\n2 3").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn parse_three_lines() {
        let d = Dataset::parse("1 2:1\n\n2 1:1 9:0.5 # comment\n1 4:2\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dimensionality, 9);
        assert_eq!(d.label_counts()[&NodeId(1)], 2);
    }

    #[test]
    fn svmlight_round_trip() {
        let text = "3 1:0.1 4:2.5\n5 2:-1\n";
        let d = Dataset::parse(text).unwrap();
        assert_eq!(d.to_svmlight(), text);
    }

    #[test]
    fn tfidf_hand_case() {
        let d = Dataset::parse("1 1:1\n2 1:1 2:1").unwrap();
        let t = tfidf_normalize(&d);
        assert!(t.instances[0].features.is_empty());
        assert_eq!(t.instances[1].features.entries(), &[(2, 1.0)]);
    }

    #[test]
    fn tfidf_unit_norm() {
        let d = Dataset::parse("1 1:3 2:1\n2 2:2 3:5\n1 3:1 4:4\n2 1:1").unwrap();
        let t = tfidf_normalize(&d);
        for x in &t.instances {
            if !x.features.is_empty() {
                assert!((x.features.norm() - 1.0).abs() < 1e-9);
            }
        }
        // idempotent in norm
        for x in &t.instances {
            let again = l2_normalized(&x.features);
            for (a, b) in again.iter().zip(x.features.iter()) {
                assert!((a.1 - b.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tfidf_unseen_feature_dropped() {
        let d = Dataset::parse("1 1:1\n2 2:1").unwrap();
        let tf = TfIdf::fit(&d);
        let v = tf.transform_vector(&sv(&[(2, 1.0), (7, 3.0)]));
        assert_eq!(v.entries(), &[(2, 1.0)]);
    }

    #[test]
    fn split_sizes() {
        let d = Dataset::new(
            (0..100)
                .map(|i| Instance {
                    features: sv(&[(1, i as f64 + 1.0)]),
                    label: NodeId(i % 3),
                })
                .collect(),
        );
        let (a, b) = split_train_validation(&d, 0.9, 1).unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        let (a2, b2) = split_train_validation(&d, 0.9, 1).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));

        let (x, y) = split_indices(11, 0.9, 3).unwrap();
        assert_eq!((x.len(), y.len()), (10, 1));
        assert!(split_indices(1, 0.5, 0).is_err());
        assert!(split_indices(10, 1.0, 0).is_err());
        assert!(split_indices(10, 0.0, 0).is_err());
    }

    #[test]
    fn split_is_partition_with_same_labels() {
        let d = Dataset::new(
            (0..37)
                .map(|i| Instance {
                    features: sv(&[(1 + i as u32, 1.0)]),
                    label: NodeId(i as u32 % 5),
                })
                .collect(),
        );
        let (a, b) = split_indices(d.len(), 0.7, 9).unwrap();
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        let mut counts = d.subset(&a).label_counts();
        for (l, c) in d.subset(&b).label_counts() {
            *counts.entry(l).or_insert(0) += c;
        }
        assert_eq!(counts, d.label_counts());
    }

    #[test]
    fn dot_products() {
        let u = sv(&[(1, 3.0), (2, 4.0)]);
        let v = sv(&[(2, 4.0), (9, 1.0)]);
        assert_eq!(u.dot(&v), 16.0);
        assert_eq!(u.dot_dense(&[1.0, 2.0]), 11.0);
        assert_eq!(v.dot_dense(&[1.0, 2.0]), 8.0);
        assert_eq!(u.norm(), 5.0);
    }
}
