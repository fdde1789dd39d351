//! Inconsistency correction over a similar-pair set.
//!
//! Pairs are visited in descending score order. A pair whose classes sit
//! under different parents is repaired with one elementary operation:
//!
//! * parent-child rewiring, when one class is similar to every class sibling
//!   of the other and can simply move next to it;
//! * node creation otherwise: a fresh internal node under the pair's lowest
//!   common ancestor adopts both classes.
//!
//! Internal nodes left without classes underneath are deleted at the end.
//! Every applied operation is recorded in a [`RewireLog`] that replays to
//! the same tree.

use std::fmt::Write as _;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simgraph::SimilarPairSet;
use crate::taxonomy::{NodeId, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewireFlags {
    /// The first class may move under the second class's parent.
    pub rewire1: bool,
    /// The second class may move under the first class's parent.
    pub rewire2: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RewireOp {
    NodeCreate {
        iteration: usize,
        new_node: NodeId,
        parent: NodeId,
        pair: (NodeId, NodeId),
    },
    PcRewire {
        iteration: usize,
        leaf: NodeId,
        old_parent: NodeId,
        new_parent: NodeId,
    },
    NodeDelete {
        iteration: usize,
        node: NodeId,
    },
    /// Single-child internal node spliced out; its child moves up one level.
    Collapse {
        iteration: usize,
        node: NodeId,
    },
}

impl RewireOp {
    pub fn iteration(&self) -> usize {
        match *self {
            RewireOp::NodeCreate { iteration, .. }
            | RewireOp::PcRewire { iteration, .. }
            | RewireOp::NodeDelete { iteration, .. }
            | RewireOp::Collapse { iteration, .. } => iteration,
        }
    }

    pub fn apply(&self, t: &mut Taxonomy) -> Result<()> {
        match *self {
            RewireOp::NodeCreate {
                new_node,
                parent,
                pair: (a, b),
                ..
            } => {
                t.add_internal(new_node, parent)?;
                t.reparent(a, new_node)?;
                t.reparent(b, new_node)
            }
            RewireOp::PcRewire {
                leaf,
                old_parent,
                new_parent,
                ..
            } => {
                if t.parent(leaf) != Some(old_parent) {
                    return Err(Error::Rewire(format!(
                        "{leaf} is not under {old_parent}"
                    )));
                }
                t.reparent(leaf, new_parent)
            }
            RewireOp::NodeDelete { node, .. } => t.remove_childless_internal(node),
            RewireOp::Collapse { node, .. } => {
                let (child, up) = match (t.children(node), t.parent(node)) {
                    (&[c], Some(p)) => (c, p),
                    _ => {
                        return Err(Error::Rewire(format!(
                            "{node} is not a single-child internal node"
                        )))
                    }
                };
                t.reparent(child, up)?;
                t.remove_childless_internal(node)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RewireLog {
    pub ops: Vec<RewireOp>,
}

impl RewireLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for op in &self.ops {
            writeln!(out, "{}", serde_json::to_string(op).expect("plain data")).unwrap();
        }
        out
    }

    /// Reads `to_jsonl` output; blank lines and `#` comment lines are skipped.
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            ops.push(
                serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?,
            );
        }
        Ok(RewireLog { ops })
    }

    /// Applies the log to a copy of `h`, calling `check` after every operation.
    pub fn replay_with(
        &self,
        h: &Taxonomy,
        mut check: impl FnMut(&RewireOp, &Taxonomy) -> Result<()>,
    ) -> Result<Taxonomy> {
        let mut t = h.clone();
        for op in &self.ops {
            op.apply(&mut t)?;
            check(op, &t)?;
        }
        Ok(t)
    }

    pub fn replay(&self, h: &Taxonomy) -> Result<Taxonomy> {
        self.replay_with(h, |_, t| t.validate())
    }

    pub fn count(&self, pred: impl Fn(&RewireOp) -> bool) -> usize {
        self.ops.iter().filter(|op| pred(op)).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RewireOptions {
    /// Splice out single-child internal nodes after the deletion sweep.
    pub collapse_chains: bool,
}

fn require_leaf(h: &Taxonomy, n: NodeId) -> Result<()> {
    if !h.contains(n) {
        return Err(Error::UnknownNode(n));
    }
    if !h.is_leaf(n) {
        return Err(Error::invalid(format!("{n} is not a class")));
    }
    Ok(())
}

/// Sibling-completeness test for an inconsistent pair, evaluated on the
/// current tree. Only class siblings are consulted.
pub fn rewire_flags(
    h: &Taxonomy,
    s: &SimilarPairSet,
    (first, second): (NodeId, NodeId),
) -> Result<RewireFlags> {
    require_leaf(h, first)?;
    require_leaf(h, second)?;
    let rewire2 = h
        .leaf_siblings(first)?
        .into_iter()
        .all(|j| s.contains(j, second));
    let rewire1 = h
        .leaf_siblings(second)?
        .into_iter()
        .all(|j| s.contains(j, first));
    Ok(RewireFlags { rewire1, rewire2 })
}

fn node_create_in_place(
    t: &mut Taxonomy,
    (a, b): (NodeId, NodeId),
    iteration: usize,
) -> Result<RewireOp> {
    require_leaf(t, a)?;
    require_leaf(t, b)?;
    if t.parent(a) == t.parent(b) {
        return Err(Error::Rewire(format!("{a} and {b} already share a parent")));
    }
    let new_node = NodeId(
        t.max_id()
            .0
            .checked_add(1)
            .ok_or_else(|| Error::Rewire("node id space exhausted".into()))?,
    );
    let op = RewireOp::NodeCreate {
        iteration,
        new_node,
        parent: t.lca(a, b)?,
        pair: (a, b),
    };
    op.apply(t)?;
    Ok(op)
}

fn pc_rewire_in_place(
    t: &mut Taxonomy,
    leaf: NodeId,
    new_parent: NodeId,
    iteration: usize,
) -> Result<RewireOp> {
    require_leaf(t, leaf)?;
    if !t.contains(new_parent) {
        return Err(Error::UnknownNode(new_parent));
    }
    if t.is_leaf(new_parent) {
        return Err(Error::invalid(format!("target parent {new_parent} is a class")));
    }
    let old_parent = t
        .parent(leaf)
        .ok_or_else(|| Error::invalid(format!("{leaf} is the root")))?;
    if old_parent == new_parent {
        return Err(Error::invalid(format!("{leaf} already sits under {new_parent}")));
    }
    let op = RewireOp::PcRewire {
        iteration,
        leaf,
        old_parent,
        new_parent,
    };
    op.apply(t)?;
    Ok(op)
}

/// Groups the pair under a fresh node (id = max id + 1) attached to their
/// lowest common ancestor.
pub fn node_create(h: &Taxonomy, pair: (NodeId, NodeId)) -> Result<Taxonomy> {
    let mut t = h.clone();
    node_create_in_place(&mut t, pair, 0)?;
    Ok(t)
}

/// Moves class `leaf` under `new_parent`.
pub fn pc_rewire(h: &Taxonomy, leaf: NodeId, new_parent: NodeId) -> Result<Taxonomy> {
    let mut t = h.clone();
    pc_rewire_in_place(&mut t, leaf, new_parent, 0)?;
    Ok(t)
}

fn delete_sweep_in_place(t: &mut Taxonomy, iteration: usize, log: &mut Vec<RewireOp>) {
    loop {
        let dead: Vec<NodeId> = t
            .non_root_nodes()
            .filter(|&n| !t.is_leaf(n) && t.children(n).is_empty())
            .collect();
        if dead.is_empty() {
            break;
        }
        for node in dead {
            let op = RewireOp::NodeDelete { iteration, node };
            op.apply(t).expect("childless internal node");
            log.push(op);
        }
    }
}

/// Removes internal non-root nodes with no classes below them, to a fixpoint.
pub fn node_delete_sweep(h: &Taxonomy) -> Taxonomy {
    let mut t = h.clone();
    delete_sweep_in_place(&mut t, 0, &mut Vec::new());
    t
}

fn collapse_chains_in_place(t: &mut Taxonomy, iteration: usize, log: &mut Vec<RewireOp>) {
    loop {
        let next = t
            .non_root_nodes()
            .find(|&n| !t.is_leaf(n) && t.children(n).len() == 1);
        let Some(node) = next else { break };
        let op = RewireOp::Collapse { iteration, node };
        op.apply(t).expect("single-child internal node");
        log.push(op);
    }
}

/// Runs the correction pass over `s` (in its stored, descending order) and
/// returns the modified tree with the log of applied operations. The input
/// tree is never touched.
pub fn rewhier(
    h: &Taxonomy,
    s: &SimilarPairSet,
    opts: RewireOptions,
) -> Result<(Taxonomy, RewireLog)> {
    let mut t = h.clone();
    let mut ops = Vec::new();
    for (i, p) in s.pairs().iter().enumerate() {
        let (a, b) = (p.a, p.b);
        if !(t.is_leaf(a) && t.is_leaf(b)) {
            warn!("pair ({a}, {b}) is not a pair of classes in the hierarchy; skipped");
            continue;
        }
        if t.parent(a) == t.parent(b) {
            continue;
        }
        let flags = rewire_flags(&t, s, (a, b))?;
        let op = match flags {
            RewireFlags {
                rewire1: false,
                rewire2: false,
            } => node_create_in_place(&mut t, (a, b), i)?,
            RewireFlags { rewire1: true, .. } => {
                let target = t.parent(b).expect("class is not the root");
                pc_rewire_in_place(&mut t, a, target, i)?
            }
            _ => {
                let target = t.parent(a).expect("class is not the root");
                pc_rewire_in_place(&mut t, b, target, i)?
            }
        };
        debug!("pair {i} ({a}, {b}) score {}: {op:?}", p.score);
        ops.push(op);
        if t.parent(a) != t.parent(b) {
            return Err(Error::Rewire(format!(
                "pair ({a}, {b}) still split after iteration {i}"
            )));
        }
        debug_assert!(t.validate().is_ok());
    }

    let end = s.len();
    delete_sweep_in_place(&mut t, end, &mut ops);
    if opts.collapse_chains {
        collapse_chains_in_place(&mut t, end, &mut ops);
    }
    t.validate_strict()?;
    Ok((t, RewireLog { ops }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgraph::PairScore;
    use crate::taxonomy::tests::{fig_tree, A, B, C};

    fn n(v: u32) -> NodeId {
        NodeId(v)
    }

    fn pairs(p: &[(u32, u32, f64)]) -> SimilarPairSet {
        let v = p.iter().map(|&(a, b, s)| PairScore::new(n(a), n(b), s)).collect();
        SimilarPairSet::new(v, 0.0).unwrap()
    }

    #[test]
    fn flags_vacuous_when_no_siblings() {
        // 0 -> {1, 2}, 1 -> {10}, 2 -> {20, 21}
        let t = Taxonomy::parse("0 1\n0 2\n1 10\n2 20\n2 21").unwrap();
        let s = pairs(&[(10, 20, 0.9)]);
        let f = rewire_flags(&t, &s, (n(10), n(20))).unwrap();
        assert!(f.rewire2);
        assert!(!f.rewire1);
    }

    #[test]
    fn flags_sibling_complete() {
        let t = fig_tree();
        let s = pairs(&[(5, 6, 0.9), (3, 6, 0.8), (4, 6, 0.8)]);
        let f = rewire_flags(&t, &s, (n(6), n(5))).unwrap();
        // 6 is similar to all of 5's siblings {3, 4}
        assert!(f.rewire1);
        assert!(!f.rewire2);
    }

    #[test]
    fn flags_proper_subset() {
        let t = fig_tree();
        let s = pairs(&[(5, 6, 0.9)]);
        let f = rewire_flags(&t, &s, (n(5), n(6))).unwrap();
        assert_eq!(
            f,
            RewireFlags {
                rewire1: false,
                rewire2: false
            }
        );
        assert!(rewire_flags(&t, &s, (n(B), n(6))).is_err());
    }

    #[test]
    fn node_create_figure() {
        let t = fig_tree();
        let m = node_create(&t, (n(5), n(6))).unwrap();
        let d = n(C + 1);
        assert_eq!(m.parent(d), Some(n(A)));
        assert_eq!(m.children(d), &[n(5), n(6)]);
        assert_eq!(m.parent(n(5)), m.parent(n(6)));
        assert_eq!(m.leaves(), t.leaves());
        m.validate_strict().unwrap();
        assert!(node_create(&t, (n(3), n(4))).is_err());
    }

    #[test]
    fn pc_rewire_figure() {
        let t = fig_tree();
        let m = pc_rewire(&t, n(6), n(B)).unwrap();
        assert_eq!(m.children(n(B)), &[n(3), n(4), n(5), n(6)]);
        assert_eq!(m.children(n(C)), &[n(7), n(8)]);
        assert_eq!(pc_rewire(&m, n(6), n(C)).unwrap(), t);
        assert!(pc_rewire(&t, n(6), n(7)).is_err());
        assert!(pc_rewire(&t, n(6), n(C)).is_err());
        assert!(pc_rewire(&t, n(B), n(C)).is_err());
    }

    #[test]
    fn pc_rewire_keeps_other_depths() {
        let t = Taxonomy::parse("0 1\n0 2\n1 3\n3 4\n3 5\n2 6\n2 7\n1 8").unwrap();
        let m = pc_rewire(&t, n(4), n(2)).unwrap();
        for l in t.leaves() {
            if *l != n(4) {
                assert_eq!(t.depth(*l).unwrap(), m.depth(*l).unwrap());
            }
        }
        assert_eq!(m.depth(n(4)).unwrap(), 2);
    }

    #[test]
    fn delete_sweep_cases() {
        let mut t = fig_tree();
        for l in [3, 4, 5] {
            t = pc_rewire(&t, n(l), n(C)).unwrap();
        }
        let m = node_delete_sweep(&t);
        assert!(!m.contains(n(B)));
        m.validate_strict().unwrap();

        let clean = fig_tree();
        assert_eq!(node_delete_sweep(&clean), clean);

        // root -> {X, 1}, X -> Y, Y had one class that moved away.
        let mut chain = Taxonomy::parse("0 10\n0 1\n10 11\n11 2").unwrap();
        chain.reparent(n(2), n(0)).unwrap();
        let m = node_delete_sweep(&chain);
        assert!(!m.contains(n(10)) && !m.contains(n(11)));
        assert_eq!(m.children(n(0)), &[n(1), n(2)]);
    }

    #[test]
    fn rewhier_empty_is_identity() {
        let t = fig_tree();
        let (m, log) = rewhier(&t, &pairs(&[]), RewireOptions::default()).unwrap();
        assert_eq!(m, t);
        assert!(log.ops.is_empty());
    }

    #[test]
    fn rewhier_node_creation() {
        let t = fig_tree();
        let (m, log) = rewhier(&t, &pairs(&[(5, 6, 0.9)]), RewireOptions::default()).unwrap();
        let d = n(C + 1);
        assert_eq!(m.parent(d), Some(n(A)));
        assert_eq!(m.children(d), &[n(5), n(6)]);
        assert_eq!(log.ops.len(), 1);
        assert_eq!(log.replay(&t).unwrap(), m);
    }

    #[test]
    fn rewhier_moves_and_deletes() {
        let t = fig_tree();
        // 3, 4, 5 all look like C's classes: each moves, B empties and goes.
        let mut p = Vec::new();
        for a in [3, 4, 5] {
            for b in [6, 7, 8] {
                p.push((a, b, 0.9 - 0.01 * (a + b) as f64));
            }
        }
        p.extend([(3, 4, 0.5), (3, 5, 0.5), (4, 5, 0.5)]);
        let s = pairs(&p);
        let (m, log) = rewhier(&t, &s, RewireOptions::default()).unwrap();
        assert!(!m.contains(n(B)));
        assert_eq!(m.children(n(C)), &[n(3), n(4), n(5), n(6), n(7), n(8)]);
        assert_eq!(log.count(|o| matches!(o, RewireOp::NodeDelete { .. })), 1);
        assert_eq!(m.leaves(), t.leaves());

        let text = log.to_jsonl();
        let back = RewireLog::parse_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.replay(&t).unwrap(), m);
    }

    #[test]
    fn both_flags_prefer_first() {
        // 0 -> {1, 2}; 1 -> {10}; 2 -> {20}: both flags vacuously set.
        let t = Taxonomy::parse("0 1\n0 2\n1 10\n2 20").unwrap();
        let (m, log) = rewhier(&t, &pairs(&[(10, 20, 0.9)]), RewireOptions::default()).unwrap();
        assert!(matches!(
            log.ops[0],
            RewireOp::PcRewire { leaf: NodeId(10), new_parent: NodeId(2), .. }
        ));
        assert!(!m.contains(n(1)));
    }

    #[test]
    fn collapse_chains_option() {
        let t = Taxonomy::parse("0 1\n0 2\n1 5\n1 6\n2 3\n3 7\n3 8").unwrap();
        let opts = RewireOptions {
            collapse_chains: true,
        };
        let (m, log) = rewhier(&t, &pairs(&[]), opts).unwrap();
        assert!(!m.contains(n(2)));
        assert_eq!(m.parent(n(3)), Some(n(0)));
        assert_eq!(log.replay(&t).unwrap(), m);
        let (plain, _) = rewhier(&t, &pairs(&[]), RewireOptions::default()).unwrap();
        assert_eq!(plain, t);
    }

    #[test]
    fn skips_unknown_pairs() {
        let t = fig_tree();
        let (m, _) = rewhier(&t, &pairs(&[(5, 99, 0.9)]), RewireOptions::default()).unwrap();
        assert_eq!(m, t);
    }
}
