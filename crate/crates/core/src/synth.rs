//! Synthetic taxonomies with planted misplacements, random trees and pair
//! sets for property tests, and brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance, SparseVector};
use crate::error::{Error, Result};
use crate::metrics::{f1_from, EvalPair};
use crate::simgraph::{class_centroids, cosine, PairScore, SimilarPairSet};
use crate::taxonomy::{NodeId, Taxonomy};

/// Weight of a leaf's own direction relative to each ancestor direction.
/// Small values make sibling classes hard to tell apart, so a misplaced
/// class is costly for a top-down classifier.
pub const LEAF_WEIGHT: f64 = 0.35;

/// Number of coordinates each node's direction occupies.
pub const SUPPORT: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Internal node count including the root; 0 derives it from the shape.
    pub n_internal: usize,
    /// Must be a power of `fanout`.
    pub n_leaves: usize,
    pub fanout: usize,
    pub dims: usize,
    pub instances_per_leaf: usize,
    /// When set, each class draws its size uniformly from
    /// `instances_per_leaf..=instances_per_leaf_max`.
    pub instances_per_leaf_max: Option<usize>,
    pub n_misplaced: usize,
    /// Per-coordinate noise bound, in `[0, 1)`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            n_internal: 0,
            n_leaves: 27,
            fanout: 3,
            dims: 300,
            instances_per_leaf: 30,
            instances_per_leaf_max: None,
            n_misplaced: 2,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Misplacement {
    pub leaf: NodeId,
    pub true_parent: NodeId,
    pub wrong_parent: NodeId,
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub truth: Taxonomy,
    pub corrupted: Taxonomy,
    pub data: Dataset,
    pub misplaced: Vec<Misplacement>,
}

fn depth_for(cfg: &PlantConfig) -> Result<u32> {
    if cfg.fanout < 2 {
        return Err(Error::invalid("fanout must be at least 2"));
    }
    let mut depth = 0;
    let mut n = 1usize;
    while n < cfg.n_leaves {
        n = n
            .checked_mul(cfg.fanout)
            .ok_or_else(|| Error::invalid("tree too large"))?;
        depth += 1;
    }
    if n != cfg.n_leaves || depth == 0 {
        return Err(Error::invalid(format!(
            "{} leaves is not a positive power of fanout {}",
            cfg.n_leaves, cfg.fanout
        )));
    }
    Ok(depth)
}

/// Complete tree of the configured shape; ids are assigned breadth first
/// from the root (0), so classes carry the largest ids.
pub fn balanced_tree(fanout: usize, depth: u32) -> Result<Taxonomy> {
    if fanout < 2 || depth == 0 {
        return Err(Error::invalid("need fanout >= 2 and depth >= 1"));
    }
    let mut edges = Vec::new();
    let mut level = vec![0u32];
    let mut next = 1u32;
    for _ in 0..depth {
        let mut below = Vec::with_capacity(level.len() * fanout);
        for &p in &level {
            for _ in 0..fanout {
                edges.push((NodeId(p), NodeId(next)));
                below.push(next);
                next += 1;
            }
        }
        level = below;
    }
    Taxonomy::from_edges(edges)
}

/// Nonnegative unit vector spread evenly over `SUPPORT` random coordinates.
fn sparse_direction(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    let k = SUPPORT.min(dims);
    let mut v = vec![0.0; dims];
    for j in rand::seq::index::sample(rng, dims, k) {
        v[j] = 1.0 / (k as f64).sqrt();
    }
    v
}

/// Builds the true tree, class data and a copy of the tree with
/// `n_misplaced` classes moved under wrong parents.
pub fn gen_planted(cfg: &PlantConfig) -> Result<Planted> {
    let depth = depth_for(cfg)?;
    let expected_internal = (cfg.n_leaves - 1) / (cfg.fanout - 1);
    if cfg.n_internal != 0 && cfg.n_internal != expected_internal {
        return Err(Error::invalid(format!(
            "fanout {} with {} leaves needs {expected_internal} internal nodes, not {}",
            cfg.fanout, cfg.n_leaves, cfg.n_internal
        )));
    }
    if cfg.n_misplaced >= cfg.n_leaves {
        return Err(Error::invalid("n_misplaced must be below n_leaves"));
    }
    if cfg.n_misplaced > 0 && depth < 2 {
        return Err(Error::invalid("a one-level tree has no wrong parent to move to"));
    }
    if !(0.0..1.0).contains(&cfg.noise) {
        return Err(Error::invalid(format!("noise {} not in [0, 1)", cfg.noise)));
    }
    if cfg.dims == 0 || cfg.instances_per_leaf == 0 {
        return Err(Error::invalid("dims and instances_per_leaf must be positive"));
    }
    if cfg.instances_per_leaf_max.is_some_and(|m| m < cfg.instances_per_leaf) {
        return Err(Error::invalid("instances_per_leaf_max below instances_per_leaf"));
    }

    let truth = balanced_tree(cfg.fanout, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let directions: BTreeMap<NodeId, Vec<f64>> = truth
        .non_root_nodes()
        .map(|n| (n, sparse_direction(&mut rng, cfg.dims)))
        .collect();

    let mut instances = Vec::new();
    for &leaf in truth.leaves() {
        let mut c = vec![0.0; cfg.dims];
        for a in truth.ancestors(leaf).filter(|&a| a != truth.root()) {
            let w = if a == leaf { LEAF_WEIGHT } else { 1.0 };
            for (ci, di) in c.iter_mut().zip(&directions[&a]) {
                *ci += w * di;
            }
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x /= norm);

        let count = match cfg.instances_per_leaf_max {
            Some(max) => rng.random_range(cfg.instances_per_leaf..=max),
            None => cfg.instances_per_leaf,
        };
        for _ in 0..count {
            let x: Vec<f64> = c
                .iter()
                .map(|ci| {
                    if cfg.noise > 0.0 {
                        ci + cfg.noise * rng.random_range(-1.0..=1.0)
                    } else {
                        *ci
                    }
                })
                .collect();
            instances.push(Instance {
                features: SparseVector::from_dense(&x),
                label: leaf,
            });
        }
    }
    let mut data = Dataset::new(instances);
    data.dimensionality = cfg.dims;

    if cfg.noise <= 0.1 && depth >= 2 {
        check_separability(&truth, &data)?;
    }

    let mut corrupted = truth.clone();
    let mut misplaced = Vec::new();
    let leaf_parents: Vec<NodeId> = truth
        .nodes()
        .filter(|&n| truth.children(n).first().is_some_and(|&c| truth.is_leaf(c)))
        .collect();
    let mut order: Vec<NodeId> = truth.leaves().iter().copied().collect();
    order.shuffle(&mut rng);
    for leaf in order {
        if misplaced.len() == cfg.n_misplaced {
            break;
        }
        let true_parent = truth.parent(leaf).expect("class below root");
        // keep every parent populated
        if corrupted.children(true_parent).len() < 2 {
            continue;
        }
        let options: Vec<NodeId> = leaf_parents
            .iter()
            .copied()
            .filter(|&p| p != true_parent)
            .collect();
        let wrong_parent = *options.choose(&mut rng).expect("depth >= 2");
        corrupted.reparent(leaf, wrong_parent)?;
        misplaced.push(Misplacement {
            leaf,
            true_parent,
            wrong_parent,
        });
    }
    if misplaced.len() < cfg.n_misplaced {
        return Err(Error::invalid("too many misplacements for this tree shape"));
    }
    corrupted.validate_strict()?;

    Ok(Planted {
        truth,
        corrupted,
        data,
        misplaced,
    })
}

/// Mean class-centroid cosine of true siblings versus classes in different
/// top-level branches. Errors unless siblings are strictly closer.
fn check_separability(h: &Taxonomy, d: &Dataset) -> Result<()> {
    let (centroids, _) = class_centroids(d, h.leaves().iter().copied());
    let top = |n: NodeId| {
        h.ancestors(n)
            .take_while(|&a| a != h.root())
            .last()
            .expect("non-root")
    };
    let (mut sib, mut ns, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    let leaves: Vec<NodeId> = centroids.keys().copied().collect();
    for (i, &a) in leaves.iter().enumerate() {
        for &b in &leaves[i + 1..] {
            let s = cosine(&centroids[&a], &centroids[&b]);
            if h.parent(a) == h.parent(b) {
                sib += s;
                ns += 1;
            } else if top(a) != top(b) {
                cross += s;
                nc += 1;
            }
        }
    }
    if ns > 0 && nc > 0 && sib / ns as f64 <= cross / nc as f64 {
        return Err(Error::invalid(format!(
            "planted structure not separable: sibling cosine {} <= cross-branch {}",
            sib / ns as f64,
            cross / nc as f64
        )));
    }
    Ok(())
}

/// Uniform random recursive tree on `n` nodes with shuffled ids in
/// `0..2n`; childless nodes are the classes.
pub fn random_taxonomy(n: usize, seed: u64) -> Result<Taxonomy> {
    if n < 2 {
        return Err(Error::invalid("random trees need at least 2 nodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (0..2 * n as u32).collect();
    ids.shuffle(&mut rng);
    ids.truncate(n);
    let edges = (1..n).map(|i| {
        let p = rng.random_range(0..i);
        (NodeId(ids[p]), NodeId(ids[i]))
    });
    Taxonomy::from_edges(edges.collect::<Vec<_>>())
}

/// `k` distinct random class pairs with random scores in `[0, 1)`.
pub fn random_pair_set(h: &Taxonomy, k: usize, seed: u64) -> Result<SimilarPairSet> {
    let leaves: Vec<NodeId> = h.leaves().iter().copied().collect();
    let total = leaves.len() * leaves.len().saturating_sub(1) / 2;
    let k = k.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(k);
    while pairs.len() < k {
        let a = leaves[rng.random_range(0..leaves.len())];
        let b = leaves[rng.random_range(0..leaves.len())];
        if a == b {
            continue;
        }
        let p = PairScore::new(a, b, rng.random::<f64>());
        if seen.insert((p.a, p.b)) {
            pairs.push(p);
        }
    }
    SimilarPairSet::new(pairs, 0.0)
}

/// Brute-force lowest common ancestor: materialize `a`'s ancestor list and
/// walk up from `b` until hitting it.
pub fn oracle_lca(h: &Taxonomy, a: NodeId, b: NodeId) -> Option<NodeId> {
    if !h.contains(a) || !h.contains(b) {
        return None;
    }
    let mut up_a = vec![a];
    while let Some(p) = h.parent(*up_a.last().unwrap()) {
        up_a.push(p);
    }
    let mut cur = Some(b);
    while let Some(x) = cur {
        if up_a.contains(&x) {
            return Some(x);
        }
        cur = h.parent(x);
    }
    None
}

fn ancestor_set(h: &Taxonomy, n: NodeId) -> BTreeSet<NodeId> {
    let mut s = BTreeSet::new();
    let mut cur = Some(n);
    while let Some(x) = cur {
        if x != h.root() {
            s.insert(x);
        }
        cur = h.parent(x);
    }
    s
}

/// Hierarchical F1 from explicitly materialized ancestor sets.
pub fn oracle_hier_f1(pairs: &[EvalPair], h: &Taxonomy) -> f64 {
    let (mut inter, mut pred, mut truth) = (0usize, 0usize, 0usize);
    for p in pairs {
        let ap = ancestor_set(h, p.predicted);
        let at = ancestor_set(h, p.truth);
        inter += ap.intersection(&at).count();
        pred += ap.len();
        truth += at.len();
    }
    let hp = if pred == 0 { 0.0 } else { inter as f64 / pred as f64 };
    let hr = if truth == 0 { 0.0 } else { inter as f64 / truth as f64 };
    f1_from(hp, hr)
}

/// Partition of the classes by parent, as sorted class lists.
pub fn sibling_groups(h: &Taxonomy) -> BTreeSet<Vec<NodeId>> {
    let mut groups: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &l in h.leaves() {
        if let Some(p) = h.parent(l) {
            groups.entry(p).or_default().push(l);
        }
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PlantConfig {
        PlantConfig {
            dims: 40,
            instances_per_leaf: 5,
            ..Default::default()
        }
    }

    #[test]
    fn shapes() {
        let p = gen_planted(&cfg()).unwrap();
        assert_eq!(p.truth.leaves().len(), 27);
        assert_eq!(p.truth.len(), 40);
        assert_eq!(p.data.len(), 27 * 5);
        assert_eq!(p.misplaced.len(), 2);
        assert_eq!(p.truth.leaves(), p.corrupted.leaves());
        for m in &p.misplaced {
            assert_eq!(p.truth.parent(m.leaf), Some(m.true_parent));
            assert_eq!(p.corrupted.parent(m.leaf), Some(m.wrong_parent));
        }
    }

    #[test]
    fn no_misplacement_keeps_tree() {
        let p = gen_planted(&PlantConfig {
            n_misplaced: 0,
            ..cfg()
        })
        .unwrap();
        assert_eq!(p.truth, p.corrupted);
    }

    #[test]
    fn noiseless_instances_identical() {
        let p = gen_planted(&PlantConfig {
            noise: 0.0,
            ..cfg()
        })
        .unwrap();
        let by_label: BTreeMap<NodeId, Vec<&SparseVector>> =
            p.data.instances.iter().fold(BTreeMap::new(), |mut m, x| {
                m.entry(x.label).or_insert_with(Vec::new).push(&x.features);
                m
            });
        for xs in by_label.values() {
            for x in xs {
                assert_eq!(*x, xs[0]);
                assert!((cosine(x, xs[0]) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = gen_planted(&cfg()).unwrap();
        let b = gen_planted(&cfg()).unwrap();
        assert_eq!(a.data.to_svmlight(), b.data.to_svmlight());
        assert_eq!(a.corrupted, b.corrupted);
        let c = gen_planted(&PlantConfig { seed: 1, ..cfg() }).unwrap();
        assert_ne!(a.data.to_svmlight(), c.data.to_svmlight());
    }

    #[test]
    fn invalid_configs() {
        assert!(gen_planted(&PlantConfig { n_leaves: 26, ..cfg() }).is_err());
        assert!(gen_planted(&PlantConfig { fanout: 1, ..cfg() }).is_err());
        assert!(gen_planted(&PlantConfig { n_internal: 13, ..cfg() }).is_ok());
        assert!(gen_planted(&PlantConfig { n_internal: 5, ..cfg() }).is_err());
        assert!(gen_planted(&PlantConfig { n_misplaced: 27, ..cfg() }).is_err());
        assert!(gen_planted(&PlantConfig {
            n_leaves: 3,
            n_misplaced: 1,
            ..cfg()
        })
        .is_err());
        assert!(gen_planted(&PlantConfig { noise: 1.0, ..cfg() }).is_err());
    }

    #[test]
    fn rare_mode_sizes() {
        let p = gen_planted(&PlantConfig {
            instances_per_leaf: 1,
            instances_per_leaf_max: Some(12),
            ..cfg()
        })
        .unwrap();
        let counts = p.data.label_counts();
        assert!(counts.values().all(|&c| (1..=12).contains(&c)));
        assert!(counts.values().any(|&c| c < 10));
    }

    #[test]
    fn oracles_on_single_edge() {
        let t = Taxonomy::parse("4 2").unwrap();
        assert_eq!(oracle_lca(&t, NodeId(2), NodeId(2)), Some(NodeId(2)));
        assert_eq!(oracle_lca(&t, NodeId(2), NodeId(4)), Some(NodeId(4)));
        let p = [EvalPair::new(NodeId(2), NodeId(2))];
        assert_eq!(oracle_hier_f1(&p, &t), 1.0);
    }

    #[test]
    fn random_helpers() {
        let t = random_taxonomy(30, 5).unwrap();
        t.validate_strict().unwrap();
        assert_eq!(t.len(), 30);
        let s = random_pair_set(&t, 20, 5).unwrap();
        assert!(s.len() <= 20);
        assert!(s.pairs().iter().all(|p| t.is_leaf(p.a) && t.is_leaf(p.b)));
    }
}
