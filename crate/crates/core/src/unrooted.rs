//! Unrooted trees with labelled leaves, used for reconstruction output and
//! topology comparison.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::newick::{NewickNode, NewickTree};
use crate::tree::ModelTree;

#[derive(Clone, Debug, PartialEq)]
pub struct UnrootedEdge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    /// Length as a multiple of the grid step, when it sits on the grid.
    pub multiple: Option<u32>,
}

/// Leaf bipartition as a bitset over sorted leaf labels. The side holding the
/// smallest label is always cleared.
pub type Bipartition = Vec<u64>;

#[derive(Clone, Debug, Default)]
pub struct ReconstructedTree {
    labels: Vec<Option<String>>,
    edges: Vec<UnrootedEdge>,
    adj: Vec<Vec<usize>>,
    /// Free-form decision log.
    pub log: Vec<String>,
}

impl ReconstructedTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: Option<String>) -> usize {
        self.labels.push(label);
        self.adj.push(Vec::new());
        self.labels.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize, length: f64, multiple: Option<u32>) {
        let id = self.edges.len();
        self.edges.push(UnrootedEdge { a, b, length, multiple });
        self.adj[a].push(id);
        self.adj[b].push(id);
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edges(&self) -> &[UnrootedEdge] {
        &self.edges
    }

    pub fn label(&self, v: usize) -> Option<&str> {
        self.labels[v].as_deref()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    fn other(&self, e: usize, v: usize) -> usize {
        let e = &self.edges[e];
        if e.a == v {
            e.b
        } else {
            e.a
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&v| self.adj[v].len() <= 1).collect()
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .leaves()
            .into_iter()
            .map(|l| self.labels[l].clone().unwrap_or_default())
            .collect();
        v.sort();
        v
    }

    /// Every internal node has degree 3 and the graph is a tree.
    pub fn is_binary(&self) -> bool {
        let n = self.node_count();
        n >= 2
            && self.edges.len() == n - 1
            && (0..n).all(|v| matches!(self.adj[v].len(), 1 | 3))
    }

    /// Converts a rooted model tree by suppressing the degree-2 root; the two
    /// root edges merge into one whose multiple is their sum.
    pub fn from_model(tree: &ModelTree) -> Self {
        let mut t = Self::new();
        for v in 0..tree.len() {
            t.add_node(tree.label(v).map(str::to_string));
        }
        let root_kids = tree.children(tree.root());
        for v in 1..tree.len() {
            let p = tree.parent(v).unwrap();
            if p == tree.root() {
                continue;
            }
            t.add_edge(p, v, tree.edge_len(v), Some(tree.edge_multiple(v)));
        }
        match root_kids {
            [a, b] => t.add_edge(
                *a,
                *b,
                tree.edge_len(*a) + tree.edge_len(*b),
                Some(tree.edge_multiple(*a) + tree.edge_multiple(*b)),
            ),
            _ => {
                for &c in root_kids {
                    t.add_edge(tree.root(), c, tree.edge_len(c), Some(tree.edge_multiple(c)));
                }
            }
        }
        t.compact()
    }

    /// Reads a Newick tree, suppressing a degree-2 root. Missing lengths are
    /// read as 0.
    pub fn from_newick(nw: &NewickTree) -> Result<Self> {
        let mut t = Self::new();
        for (i, n) in nw.nodes.iter().enumerate() {
            let label = if n.children.is_empty() {
                Some(n.name.clone().ok_or_else(|| Error::InvalidTree(format!("unlabelled leaf {i}")))?)
            } else {
                None
            };
            t.add_node(label);
        }
        let root_kids = &nw.nodes[nw.root].children;
        let len = |c: usize| nw.nodes[c].length.unwrap_or(0.0);
        for (p, n) in nw.nodes.iter().enumerate() {
            if p == nw.root && root_kids.len() == 2 {
                continue;
            }
            for &c in &n.children {
                t.add_edge(p, c, len(c), None);
            }
        }
        if let [a, b] = root_kids[..] {
            t.add_edge(a, b, len(a) + len(b), None);
        }
        let t = t.compact();
        let labels = t.leaf_labels();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidTree("duplicate leaf label".into()));
        }
        Ok(t)
    }

    /// Drops isolated nodes and renumbers.
    fn compact(self) -> Self {
        let keep: Vec<usize> = (0..self.node_count())
            .filter(|&v| !self.adj[v].is_empty() || self.node_count() == 1)
            .collect();
        let mut map = vec![usize::MAX; self.node_count()];
        let mut t = Self::new();
        for &v in &keep {
            map[v] = t.add_node(self.labels[v].clone());
        }
        for e in &self.edges {
            t.add_edge(map[e.a], map[e.b], e.length, e.multiple);
        }
        t.log = self.log;
        t
    }

    fn leaf_index(&self) -> (Vec<String>, BTreeMap<usize, usize>) {
        let labels = self.leaf_labels();
        let mut idx = BTreeMap::new();
        for l in self.leaves() {
            let name = self.labels[l].clone().unwrap_or_default();
            idx.insert(l, labels.binary_search(&name).unwrap());
        }
        (labels, idx)
    }

    /// For each edge, the leaf bitset on the side of `edge.b`, normalized.
    fn edge_splits(&self) -> Vec<Bipartition> {
        let (labels, idx) = self.leaf_index();
        let n = labels.len();
        let words = n.div_ceil(64).max(1);
        let mut out = Vec::with_capacity(self.edges.len());
        for (eid, e) in self.edges.iter().enumerate() {
            let mut bits = vec![0u64; words];
            let mut stack = vec![(e.b, eid)];
            while let Some((v, from)) = stack.pop() {
                if let Some(&i) = idx.get(&v) {
                    bits[i / 64] |= 1 << (i % 64);
                }
                for &f in &self.adj[v] {
                    if f != from {
                        stack.push((self.other(f, v), f));
                    }
                }
            }
            if bits[0] & 1 == 1 {
                for (i, w) in bits.iter_mut().enumerate() {
                    *w = !*w;
                    let hi = n - 64 * i;
                    if hi < 64 {
                        *w &= (1u64 << hi) - 1;
                    }
                }
            }
            out.push(bits);
        }
        out
    }

    /// Nontrivial bipartitions (both sides with at least two leaves).
    pub fn bipartitions(&self) -> BTreeSet<Bipartition> {
        let n = self.leaves().len();
        self.edge_splits()
            .into_iter()
            .filter(|b| {
                let c: u32 = b.iter().map(|w| w.count_ones()).sum();
                c >= 2 && (c as usize) + 2 <= n
            })
            .collect()
    }

    /// Every edge keyed by the bipartition it induces, with its multiple.
    pub fn split_multiples(&self) -> BTreeMap<Bipartition, Option<u32>> {
        self.edge_splits()
            .into_iter()
            .zip(&self.edges)
            .map(|(s, e)| (s, e.multiple))
            .collect()
    }

    /// Newick rooted at the internal node next to the leaf with the smallest
    /// label, children ordered by their smallest leaf label.
    pub fn to_newick(&self) -> String {
        if self.node_count() == 0 {
            return ";".into();
        }
        let leaves = self.leaves();
        let first = leaves
            .iter()
            .copied()
            .min_by(|&a, &b| self.labels[a].cmp(&self.labels[b]))
            .unwrap();
        let root = if self.adj[first].is_empty() {
            first
        } else {
            self.other(self.adj[first][0], first)
        };
        let mut nodes = Vec::with_capacity(self.node_count());
        self.emit(root, None, &mut nodes);
        let mut nw = NewickTree { nodes, root: 0 };
        nw.canonicalize();
        nw.to_newick()
    }

    fn emit(&self, v: usize, from: Option<usize>, nodes: &mut Vec<NewickNode>) -> usize {
        let id = nodes.len();
        nodes.push(NewickNode {
            name: self.labels[v].clone(),
            length: from.map(|e| self.edges[e].length),
            children: Vec::new(),
        });
        let kids: Vec<usize> = self.adj[v]
            .iter()
            .copied()
            .filter(|&e| Some(e) != from)
            .collect();
        for e in kids {
            let c = self.emit(self.other(e, v), Some(e), nodes);
            nodes[id].children.push(c);
        }
        id
    }
}

/// Robinson-Foulds distance: size of the symmetric difference of the
/// nontrivial bipartition sets.
pub fn rf_distance(t1: &ReconstructedTree, t2: &ReconstructedTree) -> Result<usize> {
    if t1.leaf_labels() != t2.leaf_labels() {
        return Err(Error::LeafSetMismatch);
    }
    let (b1, b2) = (t1.bipartitions(), t2.bipartitions());
    Ok(b1.symmetric_difference(&b2).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nw(s: &str) -> ReconstructedTree {
        ReconstructedTree::from_newick(&NewickTree::parse(s).unwrap()).unwrap()
    }

    #[test]
    fn rf_examples() {
        let a = nw("((A,B),(C,D));");
        let b = nw("((A,C),(B,D));");
        assert_eq!(rf_distance(&a, &a).unwrap(), 0);
        assert_eq!(rf_distance(&a, &b).unwrap(), 2);
        assert!(a.is_binary());
        let c = nw("((A,B),(C,E));");
        assert!(matches!(rf_distance(&a, &c), Err(Error::LeafSetMismatch)));
    }

    #[test]
    fn rf_caterpillar_vs_balanced() {
        // caterpillar splits: AB|CDEF, ABC|DEF, ABCD|EF
        // balanced ((A,B),(C,D),(E,F)) splits: AB, CD, EF
        let cat = nw("(((((A,B),C),D),E),F);");
        let bal = nw("((A,B),(C,D),(E,F));");
        assert_eq!(cat.bipartitions().len(), 3);
        assert_eq!(bal.bipartitions().len(), 3);
        // shared: AB|CDEF and ABCD|EF
        assert_eq!(rf_distance(&cat, &bal).unwrap(), 2);
    }

    #[test]
    fn newick_rooting_is_canonical() {
        let a = nw("((C:1,D:1):2,(B:1,A:1):3);");
        assert_eq!(a.to_newick(), "(A:1,B:1,(C:1,D:1):5);");
        let again = nw(&a.to_newick());
        assert_eq!(again.to_newick(), a.to_newick());
    }

    #[test]
    fn model_conversion_merges_root_edges() {
        use crate::tree::{EdgeParams, ModelTree};
        let p = EdgeParams::with_length(0.1, 0.0, 0.0).unwrap();
        let m = ModelTree::balanced(2, p).unwrap();
        let t = ReconstructedTree::from_model(&m);
        assert!(t.is_binary());
        assert_eq!(t.node_count(), 6);
        let mult: Vec<Option<u32>> = t.split_multiples().values().copied().collect();
        assert_eq!(mult.iter().filter(|&&m| m == Some(2)).count(), 1);
        assert_eq!(mult.iter().filter(|&&m| m == Some(1)).count(), 4);
    }
}
