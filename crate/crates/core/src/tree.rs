//! Model trees carrying per-edge CFN-Indel parameters.
//!
//! Nodes are dense ids in BFS order from the root (the root is always 0).
//! Each non-root node owns the edge from its parent, so edge data is indexed
//! by the child id.

use std::collections::{HashMap, VecDeque};
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Hierarchy, KnownDistances};
use crate::newick::{format_length, NewickNode, NewickTree};
use crate::rng::RngStream;

pub type NodeId = usize;

/// `ln(sqrt(2))`, the Kesten-Stigum bound on the largest edge length.
pub const KS_THRESHOLD: f64 = 0.5 * LN_2;

/// Tolerance used when checking that edge lengths sit on the `lambda_min` grid.
pub const DELTA_BRANCH_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
}

impl EdgeParams {
    pub fn new(p_sub: f64, p_del: f64, p_ins: f64) -> Result<Self> {
        let p = Self {
            p_sub,
            p_del,
            p_ins,
        };
        p.validate()?;
        Ok(p)
    }

    pub const fn none() -> Self {
        Self {
            p_sub: 0.0,
            p_del: 0.0,
            p_ins: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64, hi: f64| x.is_finite() && (0.0..hi).contains(&x);
        if !ok(self.p_sub, 0.5) {
            return Err(Error::Domain(format!("p_sub = {} not in [0, 1/2)", self.p_sub)));
        }
        // p_del = 1 is allowed for simulation (the child is empty); edge_length rejects it.
        if !(self.p_del.is_finite() && (0.0..=1.0).contains(&self.p_del)) {
            return Err(Error::Domain(format!("p_del = {} not in [0, 1]", self.p_del)));
        }
        if !ok(self.p_ins, 1.0) {
            return Err(Error::Domain(format!("p_ins = {} not in [0, 1)", self.p_ins)));
        }
        Ok(())
    }

    /// Parameters with the given indel rates whose length is `lambda`,
    /// obtained by solving for `p_sub`.
    pub fn with_length(lambda: f64, p_del: f64, p_ins: f64) -> Result<Self> {
        let indel = -(1.0 - p_del).ln() + 0.5 * (1.0 + p_ins - p_del).ln();
        let log_keep = -(lambda - indel);
        if log_keep > 0.0 {
            return Err(Error::Domain(format!(
                "length {lambda} is below the indel contribution {indel}"
            )));
        }
        let p_sub = 0.5 * (1.0 - log_keep.exp());
        Self::new(p_sub, p_del, p_ins)
    }

    pub fn is_symmetric(&self) -> bool {
        self.p_ins == self.p_del
    }
}

/// Edge length: `-[ln(1 - 2 p_sub) + ln(1 - p_del) - 1/2 ln(1 + p_ins - p_del)]`.
pub fn edge_length(params: &EdgeParams) -> Result<f64> {
    let a = 1.0 - 2.0 * params.p_sub;
    let b = 1.0 - params.p_del;
    let c = 1.0 + params.p_ins - params.p_del;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Domain(format!(
            "edge length undefined for {params:?}"
        )));
    }
    Ok(-(a.ln() + b.ln() - 0.5 * c.ln()))
}

/// One line of the tree-parameter text format.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub child: usize,
    pub parent: usize,
    pub params: EdgeParams,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeReport {
    pub lambda_max: f64,
    pub ks_ok: bool,
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub asym_bound_ok: bool,
}

#[derive(Clone, Debug)]
pub struct ModelTree {
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    params: Vec<EdgeParams>,
    lengths: Vec<f64>,
    multiples: Vec<u32>,
    labels: Vec<Option<String>>,
    depth: Vec<usize>,
    leaves: Vec<NodeId>,
    lambda_min: f64,
}

fn leaf_label(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).max(1).to_string().len();
    format!("L{i:0width$}")
}

fn parse_records(text: &str) -> Result<Vec<EdgeRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse { line: i + 1, msg };
        if f.len() != 5 && f.len() != 6 {
            return Err(perr(format!("expected 5 or 6 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("bad node id {s:?}")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad probability {s:?}")));
        records.push(EdgeRecord {
            child: int(f[0])?,
            parent: int(f[1])?,
            params: EdgeParams::new(real(f[2])?, real(f[3])?, real(f[4])?).map_err(|e| perr(e.to_string()))?,
            label: f.get(5).map(|s| s.to_string()),
        });
    }
    Ok(records)
}

impl ModelTree {
    /// Builds a tree from parent links. Ids are renumbered into BFS order,
    /// visiting children in the order their records appear.
    pub fn from_edges(records: &[EdgeRecord], lambda_min: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min.is_finite()) {
            return Err(Error::Domain(format!("lambda_min = {lambda_min} must be positive")));
        }
        if records.is_empty() {
            return Err(Error::InvalidTree("no edges".into()));
        }
        let mut parent_of: HashMap<usize, usize> = HashMap::new();
        let mut kids: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut edge: HashMap<usize, (EdgeParams, Option<String>)> = HashMap::new();
        for r in records {
            r.params.validate()?;
            if r.child == r.parent {
                return Err(Error::InvalidTree(format!("node {} is its own parent", r.child)));
            }
            if parent_of.insert(r.child, r.parent).is_some() {
                return Err(Error::InvalidTree(format!("node {} has two parents", r.child)));
            }
            kids.entry(r.parent).or_default().push(r.child);
            edge.insert(r.child, (r.params, r.label.clone()));
        }
        let roots: Vec<usize> = {
            let mut v: Vec<usize> = kids
                .keys()
                .copied()
                .filter(|p| !parent_of.contains_key(p))
                .collect();
            v.sort_unstable();
            v
        };
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!("expected one root, found {}", roots.len())));
        }

        let mut order = Vec::new();
        let mut new_id: HashMap<usize, NodeId> = HashMap::new();
        let mut queue = VecDeque::from([roots[0]]);
        while let Some(v) = queue.pop_front() {
            new_id.insert(v, order.len());
            order.push(v);
            if let Some(ch) = kids.get(&v) {
                if ch.len() != 2 {
                    return Err(Error::InvalidTree(format!(
                        "node {v} has {} children; trees must be binary",
                        ch.len()
                    )));
                }
                queue.extend(ch.iter().copied());
            }
        }
        if order.len() != parent_of.len() + 1 {
            return Err(Error::InvalidTree("edges do not form a single tree".into()));
        }

        let n = order.len();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut params = vec![EdgeParams::none(); n];
        let mut labels = vec![None; n];
        for (id, &orig) in order.iter().enumerate() {
            if let Some(&p) = parent_of.get(&orig) {
                parent[id] = Some(new_id[&p]);
                let (ep, label) = &edge[&orig];
                params[id] = *ep;
                if !kids.contains_key(&orig) {
                    labels[id] = Some(label.clone().unwrap_or_else(|| format!("n{orig}")));
                }
            }
            if let Some(ch) = kids.get(&orig) {
                children[id] = ch.iter().map(|c| new_id[c]).collect();
            }
        }
        Self::assemble(parent, children, params, labels, lambda_min)
    }

    fn assemble(
        parent: Vec<Option<NodeId>>,
        children: Vec<Vec<NodeId>>,
        params: Vec<EdgeParams>,
        labels: Vec<Option<String>>,
        lambda_min: f64,
    ) -> Result<Self> {
        let n = parent.len();
        let mut depth = vec![0; n];
        let mut lengths = vec![0.0; n];
        let mut multiples = vec![0; n];
        for v in 1..n {
            let p = parent[v].expect("non-root node without parent");
            depth[v] = depth[p] + 1;
            let lambda = edge_length(&params[v])?;
            if lambda <= 0.0 {
                return Err(Error::InvalidTree(format!("edge into node {v} has zero length")));
            }
            let ratio = lambda / lambda_min;
            let tau = ratio.round();
            if tau < 1.0 || (ratio - tau).abs() > DELTA_BRANCH_TOL {
                return Err(Error::InvalidTree(format!(
                    "edge into node {v} has length {lambda}, not a positive multiple of {lambda_min}"
                )));
            }
            lengths[v] = lambda;
            multiples[v] = tau as u32;
        }
        let leaves: Vec<NodeId> = (0..n).filter(|&v| children[v].is_empty()).collect();
        let mut seen = HashMap::new();
        for &l in &leaves {
            let label = labels[l]
                .as_ref()
                .ok_or_else(|| Error::InvalidTree(format!("leaf {l} has no label")))?;
            if seen.insert(label.clone(), l).is_some() {
                return Err(Error::InvalidTree(format!("duplicate leaf label {label}")));
            }
        }
        Ok(Self {
            parent,
            children,
            params,
            lengths,
            multiples,
            labels,
            depth,
            leaves,
            lambda_min,
        })
    }

    /// Perfect binary tree of the given depth with identical parameters on
    /// every edge; `lambda_min` is the common edge length.
    pub fn balanced(depth: usize, params: EdgeParams) -> Result<Self> {
        let lambda = edge_length(&params)?;
        Self::balanced_with(depth, lambda, |_| Ok(params))
    }

    /// Perfect binary tree whose edge lengths are `tau * lambda_min`, with
    /// `tau` uniform in `1..=tau_max`. Indel rates are fixed; `p_sub` absorbs
    /// the length.
    pub fn balanced_jittered(
        depth: usize,
        p_del: f64,
        p_ins: f64,
        lambda_min: f64,
        tau_max: u32,
        rng: &mut RngStream,
    ) -> Result<Self> {
        use rand::Rng;
        if tau_max == 0 {
            return Err(Error::Domain("tau_max must be at least 1".into()));
        }
        Self::balanced_with(depth, lambda_min, |_| {
            let tau = rng.random_range(1..=tau_max);
            EdgeParams::with_length(tau as f64 * lambda_min, p_del, p_ins)
        })
    }

    fn balanced_with(
        depth: usize,
        lambda_min: f64,
        mut edge_params: impl FnMut(NodeId) -> Result<EdgeParams>,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidTree("balanced tree needs depth >= 1".into()));
        }
        let n = (1usize << (depth + 1)) - 1;
        let n_leaves = 1usize << depth;
        let first_leaf = n - n_leaves;
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut params = vec![EdgeParams::none(); n];
        let mut labels = vec![None; n];
        for v in 1..n {
            parent[v] = Some((v - 1) / 2);
            children[(v - 1) / 2].push(v);
            params[v] = edge_params(v)?;
            if v >= first_leaf {
                labels[v] = Some(leaf_label(v - first_leaf, n_leaves));
            }
        }
        Self::assemble(parent, children, params, labels, lambda_min)
    }

    /// Builds a model tree from Newick branch lengths, read as edge lengths of
    /// substitution-only edges.
    pub fn from_newick(tree: &NewickTree, lambda_min: f64) -> Result<Self> {
        let mut records = Vec::new();
        for (id, node) in tree.nodes.iter().enumerate() {
            for &c in &node.children {
                let child = &tree.nodes[c];
                let len = child.length.ok_or_else(|| {
                    Error::InvalidTree(format!("branch into newick node {c} has no length"))
                })?;
                let label = if child.children.is_empty() {
                    Some(child.name.clone().ok_or_else(|| {
                        Error::InvalidTree("leaf without a label".into())
                    })?)
                } else {
                    None
                };
                records.push(EdgeRecord {
                    child: c,
                    parent: id,
                    params: EdgeParams::with_length(len, 0.0, 0.0)?,
                    label,
                });
            }
        }
        Self::from_edges(&records, lambda_min)
    }

    pub fn to_newick(&self) -> String {
        let nodes = (0..self.len())
            .map(|v| NewickNode {
                name: self.labels[v].clone(),
                length: (v != 0).then(|| self.lengths[v]),
                children: self.children[v].clone(),
            })
            .collect();
        let mut t = NewickTree { nodes, root: 0 };
        t.canonicalize();
        t.to_newick()
    }

    /// Parses the `child_id parent_id p_sub p_del p_ins [label]` format.
    /// Blank lines and `#` comments are ignored.
    pub fn parse_params(text: &str, lambda_min: f64) -> Result<Self> {
        Self::from_edges(&parse_records(text)?, lambda_min)
    }

    /// [`ModelTree::parse_params`] with `lambda_min` taken as the shortest
    /// edge length in the file.
    pub fn parse_params_auto(text: &str) -> Result<Self> {
        let records = parse_records(text)?;
        let mut lambda_min = f64::INFINITY;
        for r in &records {
            lambda_min = lambda_min.min(edge_length(&r.params)?);
        }
        Self::from_edges(&records, lambda_min)
    }

    pub fn to_params_text(&self) -> String {
        let mut out = String::new();
        for v in 1..self.len() {
            let p = &self.params[v];
            out.push_str(&format!(
                "{} {} {} {} {}",
                v,
                self.parent[v].unwrap(),
                p.p_sub,
                p.p_del,
                p.p_ins
            ));
            if let Some(l) = &self.labels[v] {
                out.push(' ');
                out.push_str(l);
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent[v]
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v]
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.children[v].is_empty()
    }

    /// Leaves in BFS order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn label(&self, v: NodeId) -> Option<&str> {
        self.labels[v].as_deref()
    }

    pub fn leaf_by_label(&self, label: &str) -> Option<NodeId> {
        self.leaves
            .iter()
            .copied()
            .find(|&l| self.labels[l].as_deref() == Some(label))
    }

    pub fn depth(&self, v: NodeId) -> usize {
        self.depth[v]
    }

    pub fn depth_max(&self) -> usize {
        self.leaves.iter().map(|&l| self.depth[l]).max().unwrap_or(0)
    }

    /// Edges above `v`'s deepest descendant leaf; leaves have height 0.
    pub fn height(&self, v: NodeId) -> usize {
        let mut h = 0;
        let mut frontier = vec![v];
        loop {
            let next: Vec<NodeId> = frontier
                .iter()
                .flat_map(|&x| self.children[x].iter().copied())
                .collect();
            if next.is_empty() {
                return h;
            }
            h += 1;
            frontier = next;
        }
    }

    pub fn is_balanced(&self) -> bool {
        let d = self.depth_max();
        self.leaves.iter().all(|&l| self.depth[l] == d)
    }

    /// Parameters on the edge into `v` (all zero for the root).
    pub fn edge_params(&self, v: NodeId) -> &EdgeParams {
        &self.params[v]
    }

    /// Length of the edge into `v` (0 for the root).
    pub fn edge_len(&self, v: NodeId) -> f64 {
        self.lengths[v]
    }

    /// Length of the edge into `v` as a multiple of `lambda_min`.
    pub fn edge_multiple(&self, v: NodeId) -> u32 {
        self.multiples[v]
    }

    fn check(&self, v: NodeId) -> Result<()> {
        if v < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(v))
        }
    }

    pub fn lca(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (mut a, mut b) = (a, b);
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        Ok(a)
    }

    /// Sum of edge lengths on the path between `a` and `b`.
    pub fn path_distance(&self, a: NodeId, b: NodeId) -> Result<f64> {
        let top = self.lca(a, b)?;
        let mut d = 0.0;
        for mut v in [a, b] {
            while v != top {
                d += self.lengths[v];
                v = self.parent[v].unwrap();
            }
        }
        Ok(d)
    }

    /// Product of `1 + p_ins - p_del` over the root-to-`a` path.
    pub fn eta(&self, a: NodeId) -> Result<f64> {
        self.check(a)?;
        let mut eta = 1.0;
        let mut v = a;
        while let Some(p) = self.parent[v] {
            let e = &self.params[v];
            eta *= 1.0 + e.p_ins - e.p_del;
            v = p;
        }
        Ok(eta)
    }

    pub fn check_regime(&self, asym_bound: f64) -> RegimeReport {
        let lambda_max = self.lengths.iter().copied().fold(0.0, f64::max);
        let max_asymmetry = self.params[1..]
            .iter()
            .map(|p| (p.p_ins - p.p_del).abs())
            .fold(0.0, f64::max);
        RegimeReport {
            lambda_max,
            ks_ok: (2.0 * lambda_max).exp() < 2.0,
            symmetric: self.params[1..].iter().all(EdgeParams::is_symmetric),
            max_asymmetry,
            asym_bound_ok: max_asymmetry <= asym_bound,
        }
    }

    /// Exact distances from every node to each of its descendants.
    pub fn known_distances(&self) -> KnownDistances {
        let mut kd = KnownDistances::new();
        for v in 0..self.len() {
            kd.insert(v, v, 0.0);
            let mut d = 0.0;
            let mut x = v;
            while let Some(p) = self.parent[x] {
                d += self.lengths[x];
                kd.insert(p, v, d);
                x = p;
            }
        }
        kd
    }

    /// Nodes at each height (index = height), BFS order within a height.
    pub fn nodes_by_height(&self) -> Vec<Vec<NodeId>> {
        let mut out: Vec<Vec<NodeId>> = Vec::new();
        for v in 0..self.len() {
            let h = self.height(v);
            if out.len() <= h {
                out.resize(h + 1, Vec::new());
            }
            out[h].push(v);
        }
        out
    }
}

impl Hierarchy for ModelTree {
    fn descendants_at(&self, node: NodeId, offset: usize) -> Vec<NodeId> {
        let mut frontier = vec![node];
        for _ in 0..offset {
            frontier = frontier
                .iter()
                .flat_map(|&x| self.children[x].iter().copied())
                .collect();
        }
        frontier
    }

    fn leaves_below(&self, node: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([node]);
        while let Some(v) = queue.pop_front() {
            if self.children[v].is_empty() {
                out.push(v);
            } else {
                queue.extend(self.children[v].iter().copied());
            }
        }
        out
    }
}

/// Writes `x` the way branch lengths are written in Newick output.
pub fn format_branch_length(x: f64) -> String {
    format_length(x)
}
