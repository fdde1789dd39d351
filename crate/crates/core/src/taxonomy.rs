//! Rooted class trees.
//!
//! A [`Taxonomy`] keeps explicit parent and child maps plus the set of class
//! (leaf) nodes. The class set is fixed at construction: while a tree is
//! being rewired an internal node may temporarily lose all of its children,
//! and it must not silently turn into a class. [`Taxonomy::validate`] checks
//! the structural tree invariants, [`Taxonomy::validate_strict`] additionally
//! requires that the childless nodes are exactly the classes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    root: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    /// Every node has an entry; child lists are kept sorted ascending.
    children: BTreeMap<NodeId, Vec<NodeId>>,
    leaves: BTreeSet<NodeId>,
}

impl Taxonomy {
    /// A tree holding only `root`. The root counts as its single class.
    pub fn single(root: NodeId) -> Self {
        let mut children = BTreeMap::new();
        children.insert(root, Vec::new());
        Taxonomy {
            root,
            parent: BTreeMap::new(),
            children,
            leaves: BTreeSet::from([root]),
        }
    }

    /// One-level tree: every class hangs directly off `root`.
    pub fn flat(root: NodeId, classes: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let edges: Vec<_> = classes.into_iter().map(|c| (root, c)).collect();
        if edges.is_empty() {
            return Ok(Taxonomy::single(root));
        }
        Taxonomy::from_edges(edges)
    }

    /// Builds and validates a tree from `(parent, child)` edges. The root is
    /// the unique node that never appears as a child.
    pub fn from_edges(edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Result<Self> {
        Self::build(edges.into_iter().enumerate().map(|(i, e)| (i + 1, e)))
    }

    fn build(edges: impl Iterator<Item = (usize, (NodeId, NodeId))>) -> Result<Self> {
        let mut parent = BTreeMap::new();
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (line, (p, c)) in edges {
            if let Some(prev) = parent.insert(c, p) {
                let msg = if prev == p {
                    format!("duplicate edge {p} -> {c}")
                } else {
                    format!("node {c} has two parents ({prev} and {p})")
                };
                return Err(Error::parse(line, msg));
            }
            children.entry(p).or_default().push(c);
            children.entry(c).or_default();
        }
        if children.is_empty() {
            return Err(Error::Taxonomy("no edges".into()));
        }

        // Cycles first: a cycle also removes the root candidate, and the
        // cycle is the more useful diagnostic.
        let mut state: BTreeMap<NodeId, u8> = BTreeMap::new();
        for &start in children.keys() {
            let mut path = Vec::new();
            let mut cur = start;
            loop {
                match state.get(&cur) {
                    Some(2) => break,
                    Some(1) => {
                        return Err(Error::Taxonomy(format!("cycle through node {cur}")));
                    }
                    _ => {}
                }
                state.insert(cur, 1);
                path.push(cur);
                match parent.get(&cur) {
                    Some(&p) => cur = p,
                    None => break,
                }
            }
            for n in path {
                state.insert(n, 2);
            }
        }

        let roots: Vec<NodeId> = children
            .keys()
            .filter(|n| !parent.contains_key(n))
            .copied()
            .collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Taxonomy("no root candidate".into())),
            many => {
                return Err(Error::Taxonomy(format!(
                    "{} root candidates: {:?}",
                    many.len(),
                    many.iter().map(|n| n.0).collect::<Vec<_>>()
                )))
            }
        };

        for list in children.values_mut() {
            list.sort_unstable();
        }
        let leaves = children
            .iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(&n, _)| n)
            .collect();
        let t = Taxonomy {
            root,
            parent,
            children,
            leaves,
        };
        debug_assert!(t.validate_strict().is_ok());
        Ok(t)
    }

    /// Parses a whitespace-separated `parent child` edge list. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let mut it = s.split_whitespace();
            let (p, c) = match (it.next(), it.next(), it.next()) {
                (Some(p), Some(c), None) => (p, c),
                _ => return Err(Error::parse(line, format!("expected `parent child`, got {s:?}"))),
            };
            let p: NodeId = p
                .parse()
                .map_err(|_| Error::parse(line, format!("bad node id {p:?}")))?;
            let c: NodeId = c
                .parse()
                .map_err(|_| Error::parse(line, format!("bad node id {c:?}")))?;
            edges.push((line, (p, c)));
        }
        if edges.is_empty() {
            return Err(Error::Taxonomy("no edges".into()));
        }
        Self::build(edges.into_iter())
    }

    /// All `(parent, child)` edges sorted by parent, then child.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        // children lists are sorted and the map is ordered by parent.
        self.children
            .iter()
            .flat_map(|(&p, cs)| cs.iter().map(move |&c| (p, c)))
            .collect()
    }

    /// Edge-list text, one `parent child` line per edge, LF terminated.
    pub fn to_edge_text(&self) -> String {
        let mut out = String::new();
        for (p, c) in self.edges() {
            out.push_str(&format!("{p} {c}\n"));
        }
        out
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.children.contains_key(&n)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.keys().copied()
    }

    /// Every node except the root, ascending.
    pub fn non_root_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parent.keys().copied()
    }

    pub fn leaves(&self) -> &BTreeSet<NodeId> {
        &self.leaves
    }

    pub fn is_leaf(&self, n: NodeId) -> bool {
        self.leaves.contains(&n)
    }

    pub fn parent(&self, n: NodeId) -> Option<NodeId> {
        self.parent.get(&n).copied()
    }

    pub fn children(&self, n: NodeId) -> &[NodeId] {
        self.children.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    fn check(&self, n: NodeId) -> Result<()> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(Error::UnknownNode(n))
        }
    }

    pub fn max_id(&self) -> NodeId {
        *self.children.keys().next_back().expect("taxonomy is never empty")
    }

    /// Walks from `n` up to the root, yielding `n` first and the root last.
    pub fn ancestors(&self, n: NodeId) -> Ancestors<'_> {
        Ancestors {
            tree: self,
            next: self.contains(n).then_some(n),
        }
    }

    /// Number of edges between `n` and the root.
    pub fn depth(&self, n: NodeId) -> Result<usize> {
        self.check(n)?;
        Ok(self.ancestors(n).count() - 1)
    }

    /// Lowest common ancestor; a node is its own ancestor.
    pub fn lca(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (mut da, mut db) = (self.depth(a)?, self.depth(b)?);
        let (mut a, mut b) = (a, b);
        while da > db {
            a = self.parent[&a];
            da -= 1;
        }
        while db > da {
            b = self.parent[&b];
            db -= 1;
        }
        while a != b {
            a = self.parent[&a];
            b = self.parent[&b];
        }
        Ok(a)
    }

    /// Class siblings of `n`: the leaf children of its parent other than `n`.
    pub fn leaf_siblings(&self, n: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.sibling_split(n)?.0)
    }

    /// `(leaf siblings, number of internal siblings)` of a non-root node.
    pub fn sibling_split(&self, n: NodeId) -> Result<(Vec<NodeId>, usize)> {
        self.check(n)?;
        let p = self
            .parent(n)
            .ok_or_else(|| Error::invalid(format!("root {n} has no siblings")))?;
        let mut leaves = Vec::new();
        let mut internal = 0;
        for &s in self.children(p) {
            if s == n {
                continue;
            }
            if self.is_leaf(s) {
                leaves.push(s);
            } else {
                internal += 1;
            }
        }
        Ok((leaves, internal))
    }

    /// Classes in the subtree rooted at `n` (including `n` itself if it is one).
    pub fn subtree_leaves(&self, n: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![n];
        while let Some(x) = stack.pop() {
            if self.is_leaf(x) {
                out.push(x);
            }
            stack.extend(self.children(x).iter().rev());
        }
        out.sort_unstable();
        out
    }

    /// SHA-256 over the root, the sorted edge list and the class set.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("root {}\n", self.root).as_bytes());
        h.update(self.to_edge_text().as_bytes());
        for l in &self.leaves {
            h.update(format!("leaf {l}\n").as_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Structural invariants: single root, consistent parent/child maps,
    /// every node reachable from the root, classes have no children.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Taxonomy(m));
        if !self.contains(self.root) || self.parent.contains_key(&self.root) {
            return bad(format!("root {} missing or has a parent", self.root));
        }
        if self.parent.len() + 1 != self.children.len() {
            return bad("node count does not match edge count + 1".into());
        }
        for (&c, &p) in &self.parent {
            if !self.children(p).contains(&c) {
                return bad(format!("{c} lists parent {p} but is not its child"));
            }
        }
        for (&p, cs) in &self.children {
            if cs.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("children of {p} not strictly ascending"));
            }
            for c in cs {
                if self.parent(*c) != Some(p) {
                    return bad(format!("{c} is a child of {p} but has another parent"));
                }
            }
        }
        let mut seen = 0;
        let mut stack = vec![self.root];
        while let Some(n) = stack.pop() {
            seen += 1;
            if seen > self.len() {
                return bad("cycle detected".into());
            }
            stack.extend_from_slice(self.children(n));
        }
        if seen != self.len() {
            return bad(format!("{} nodes unreachable from root", self.len() - seen));
        }
        for &l in &self.leaves {
            if !self.contains(l) {
                return bad(format!("class {l} is not a node"));
            }
            if !self.children(l).is_empty() {
                return bad(format!("class {l} has children"));
            }
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus: the childless nodes are exactly the classes.
    pub fn validate_strict(&self) -> Result<()> {
        self.validate()?;
        if let Some((n, _)) = self
            .children
            .iter()
            .find(|(n, c)| c.is_empty() && !self.leaves.contains(n))
        {
            return Err(Error::Taxonomy(format!("internal node {n} has no children")));
        }
        Ok(())
    }

    // -- mutation ---------------------------------------------------------

    /// Adds a fresh internal node `id` under `parent`.
    pub fn add_internal(&mut self, id: NodeId, parent: NodeId) -> Result<()> {
        self.check(parent)?;
        if self.contains(id) {
            return Err(Error::invalid(format!("node {id} already exists")));
        }
        if self.is_leaf(parent) {
            return Err(Error::invalid(format!("cannot attach {id} under class {parent}")));
        }
        self.children.insert(id, Vec::new());
        self.attach(id, parent);
        Ok(())
    }

    /// Moves `node` (and its subtree) under `new_parent`.
    pub fn reparent(&mut self, node: NodeId, new_parent: NodeId) -> Result<()> {
        self.check(node)?;
        self.check(new_parent)?;
        let old = self
            .parent(node)
            .ok_or_else(|| Error::invalid(format!("cannot move the root {node}")))?;
        if self.is_leaf(new_parent) {
            return Err(Error::invalid(format!("new parent {new_parent} is a class")));
        }
        if self.ancestors(new_parent).any(|a| a == node) {
            return Err(Error::invalid(format!(
                "{new_parent} lies in the subtree of {node}"
            )));
        }
        if old == new_parent {
            return Ok(());
        }
        self.detach(node, old);
        self.attach(node, new_parent);
        Ok(())
    }

    /// Removes a childless, non-class, non-root node.
    pub fn remove_childless_internal(&mut self, node: NodeId) -> Result<()> {
        self.check(node)?;
        if node == self.root || self.is_leaf(node) || !self.children(node).is_empty() {
            return Err(Error::invalid(format!(
                "{node} is not a childless internal node"
            )));
        }
        let p = self.parent[&node];
        self.detach(node, p);
        self.parent.remove(&node);
        self.children.remove(&node);
        Ok(())
    }

    fn attach(&mut self, node: NodeId, parent: NodeId) {
        let list = self.children.get_mut(&parent).expect("checked");
        let pos = list.binary_search(&node).unwrap_err();
        list.insert(pos, node);
        self.parent.insert(node, parent);
    }

    fn detach(&mut self, node: NodeId, parent: NodeId) {
        let list = self.children.get_mut(&parent).expect("checked");
        if let Ok(pos) = list.binary_search(&node) {
            list.remove(pos);
        }
    }
}

impl FromStr for Taxonomy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Taxonomy::parse(s)
    }
}

pub struct Ancestors<'a> {
    tree: &'a Taxonomy,
    next: Option<NodeId>,
}

impl Iterator for Ancestors<'_> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        let cur = self.next?;
        self.next = self.tree.parent(cur);
        Some(cur)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const A: u32 = 100;
    pub(crate) const B: u32 = 101;
    pub(crate) const C: u32 = 102;

    /// A -> {B, C}, B -> {3, 4, 5}, C -> {6, 7, 8}.
    pub(crate) fn fig_tree() -> Taxonomy {
        let text = format!(
            "{A} {B}\n{A} {C}\n{B} 3\n{B} 4\n{B} 5\n{C} 6\n{C} 7\n{C} 8\n"
        );
        Taxonomy::parse(&text).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn parse_small() {
        let t = Taxonomy::parse("0 1\n0 2\n1 3\n1 4").unwrap();
        assert_eq!(t.root(), NodeId(0));
        assert_eq!(t.leaves().iter().copied().collect::<Vec<_>>(), ids(&[2, 3, 4]));
        assert_eq!(t.len(), 5);
        t.validate_strict().unwrap();
    }

    #[test]
    fn parse_cycle() {
        let err = Taxonomy::parse("0 1\n1 0").unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
        assert!(Taxonomy::parse("0 1\n1 2\n2 1").is_err());
        assert!(Taxonomy::parse("5 5").unwrap_err().to_string().contains("cycle"));
    }

    #[test]
    fn parse_errors() {
        let e = Taxonomy::parse("0 1\n2 1").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = Taxonomy::parse("0 1\n2 3").unwrap_err();
        assert!(e.to_string().contains("2 root candidates"), "{e}");
        let e = Taxonomy::parse("0 1\n\n0 x").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = Taxonomy::parse("0 1 2").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        assert!(Taxonomy::parse("\n  \n").is_err());
    }

    #[test]
    fn figure_tree_shape() {
        let t = fig_tree();
        assert_eq!(t.root(), NodeId(A));
        assert_eq!(
            t.leaves().iter().copied().collect::<Vec<_>>(),
            ids(&[3, 4, 5, 6, 7, 8])
        );
        let internal: Vec<_> = t.nodes().filter(|n| !t.is_leaf(*n)).collect();
        assert_eq!(internal, ids(&[A, B, C]));
    }

    #[test]
    fn lca_cases() {
        let t = fig_tree();
        assert_eq!(t.lca(NodeId(5), NodeId(5)).unwrap(), NodeId(5));
        assert_eq!(t.lca(NodeId(5), NodeId(6)).unwrap(), NodeId(A));
        assert_eq!(t.lca(NodeId(3), NodeId(4)).unwrap(), NodeId(B));
        assert_eq!(t.lca(NodeId(B), NodeId(4)).unwrap(), NodeId(B));
        assert!(matches!(
            t.lca(NodeId(3), NodeId(99)),
            Err(Error::UnknownNode(NodeId(99)))
        ));
    }

    #[test]
    fn siblings() {
        let t = fig_tree();
        assert_eq!(t.leaf_siblings(NodeId(3)).unwrap(), ids(&[4, 5]));
        assert!(t.leaf_siblings(NodeId(A)).is_err());

        let only = Taxonomy::parse("0 1\n1 2\n0 3").unwrap();
        assert!(only.leaf_siblings(NodeId(2)).unwrap().is_empty());

        // 0 -> {1, 2, 3}, 3 -> {4}: node 1 has leaf sibling 2 and internal sibling 3.
        let mixed = Taxonomy::parse("0 1\n0 2\n0 3\n3 4").unwrap();
        assert_eq!(mixed.leaf_siblings(NodeId(1)).unwrap(), ids(&[2]));
        assert_eq!(mixed.sibling_split(NodeId(1)).unwrap(), (ids(&[2]), 1));
    }

    #[test]
    fn serialize_round_trip() {
        let t = fig_tree();
        let text = t.to_edge_text();
        assert_eq!(Taxonomy::parse(&text).unwrap(), t);
        assert_eq!(text.lines().count(), t.len() - 1);
        assert_eq!(Taxonomy::single(NodeId(0)).to_edge_text(), "");
    }

    #[test]
    fn serialize_sorted() {
        let t = Taxonomy::parse("0 9\n0 2\n2 7\n2 3").unwrap();
        assert_eq!(t.to_edge_text(), "0 2\n0 9\n2 3\n2 7\n");
    }

    #[test]
    fn mutation_keeps_classes() {
        let mut t = fig_tree();
        t.reparent(NodeId(6), NodeId(B)).unwrap();
        assert_eq!(t.children(NodeId(B)), ids(&[3, 4, 5, 6]).as_slice());
        assert_eq!(t.children(NodeId(C)), ids(&[7, 8]).as_slice());
        for l in [7, 8] {
            t.reparent(NodeId(l), NodeId(B)).unwrap();
        }
        t.validate().unwrap();
        assert!(t.validate_strict().is_err());
        assert!(!t.is_leaf(NodeId(C)));
        t.remove_childless_internal(NodeId(C)).unwrap();
        t.validate_strict().unwrap();
        assert!(t.reparent(NodeId(3), NodeId(4)).is_err());
        assert!(t.reparent(NodeId(B), NodeId(B)).is_err());
        assert!(t.add_internal(NodeId(3), NodeId(A)).is_err());
    }

    #[test]
    fn fingerprint_changes_with_structure() {
        let t = fig_tree();
        let mut u = t.clone();
        assert_eq!(t.fingerprint(), u.fingerprint());
        u.reparent(NodeId(6), NodeId(B)).unwrap();
        assert_ne!(t.fingerprint(), u.fingerprint());
    }
}
