//! Level-by-level tree reconstruction from leaf signatures.
//!
//! Leaves start as single-node subtrees. At every level the current subtree
//! roots are compared pairwise, quartets whose members are all close to each
//! other are resolved with the four point method, and pairs that are always
//! grouped together are joined as cherries. Edge lengths come from the
//! three-point rule rounded to the `lambda_min` grid, and the rounded lengths
//! feed the deep estimators used at higher levels.
//!
//! Below the cutoff height the level distances are leaf-to-leaf shallow
//! estimates corrected by the known within-subtree distances; from the cutoff
//! upward they are deep estimates built from reconstructed signatures.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::Serialize;

use crate::bitstring::Bitstring;
use crate::error::{Error, Result};
use crate::estimators::{
    aggregate_deep, diameter_test, distance_or_inf, matched_descendants, pair_estimate,
    Hierarchy, KnownDistances,
};
use crate::quartet::{
    cherry_candidates, four_point_method, greedy_pairing, mark_split, round_to_multiple, three_point,
};
use crate::signature::{pseudo_signature_vector, signature_vector, BlockScheme, SignatureVector};
use crate::tree::{ModelTree, NodeId};
use crate::unrooted::ReconstructedTree;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructConfig {
    pub lambda_min: f64,
    /// Scales both the cutoff height and the default shortness radius.
    pub delta: f64,
    /// Shortness radius; defaults to `2 delta log2 log2 n`.
    pub r: Option<f64>,
    /// Record quartet decisions and level distances.
    pub log: bool,
}

impl ReconstructConfig {
    pub fn new(lambda_min: f64) -> Self {
        Self {
            lambda_min,
            delta: 1.0,
            r: None,
            log: false,
        }
    }

    fn loglog(n: usize) -> f64 {
        (n as f64).log2().log2().max(0.0)
    }

    /// Height at which deep estimates take over: `ceil(delta log2 log2 n)`.
    pub fn cutoff(&self, n: usize) -> usize {
        (self.delta * Self::loglog(n)).ceil().max(0.0) as usize
    }

    pub fn radius(&self, n: usize) -> f64 {
        self.r.unwrap_or(2.0 * self.delta * Self::loglog(n))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min > 0.0 && self.lambda_min.is_finite()) {
            return Err(Error::Config(format!("lambda_min = {} must be positive", self.lambda_min)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config(format!("delta = {} must be positive", self.delta)));
        }
        if let Some(r) = self.r {
            if !(r > 0.0) {
                return Err(Error::Config(format!("r = {r} must be positive")));
            }
        }
        Ok(())
    }
}

/// Partially built forest. Leaves are ids `0..n`; internal nodes are appended
/// as they are created.
#[derive(Clone, Debug)]
pub struct Forest {
    children: Vec<Vec<NodeId>>,
    parent: Vec<Option<NodeId>>,
    /// Multiple of `lambda_min` on the edge into each node.
    edge_mult: Vec<u32>,
    min_depth: Vec<usize>,
    n_leaves: usize,
}

impl Forest {
    pub fn new(n_leaves: usize) -> Self {
        Self {
            children: vec![Vec::new(); n_leaves],
            parent: vec![None; n_leaves],
            edge_mult: vec![0; n_leaves],
            min_depth: vec![0; n_leaves],
            n_leaves,
        }
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.n_leaves
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v]
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent[v]
    }

    pub fn edge_multiple(&self, v: NodeId) -> u32 {
        self.edge_mult[v]
    }

    /// Edges from `v` down to its nearest leaf.
    pub fn min_depth(&self, v: NodeId) -> usize {
        self.min_depth[v]
    }

    /// Joins the given roots under a new node; `mults[i]` is the multiple on
    /// the edge into `kids[i]`.
    pub fn join(&mut self, kids: &[NodeId], mults: &[u32]) -> NodeId {
        let id = self.len();
        self.children.push(kids.to_vec());
        self.parent.push(None);
        self.edge_mult.push(0);
        self.min_depth
            .push(1 + kids.iter().map(|&k| self.min_depth[k]).min().unwrap_or(0));
        for (&k, &m) in kids.iter().zip(mults) {
            self.parent[k] = Some(id);
            self.edge_mult[k] = m;
        }
        id
    }
}

impl Hierarchy for Forest {
    fn descendants_at(&self, node: NodeId, offset: usize) -> Vec<NodeId> {
        let mut frontier = vec![node];
        for _ in 0..offset {
            frontier = frontier
                .iter()
                .flat_map(|&x| {
                    if self.children[x].is_empty() {
                        vec![x]
                    } else {
                        self.children[x].clone()
                    }
                })
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

/// Source of the level distances.
pub trait DistanceBackend {
    fn leaf_count(&self) -> usize;

    /// Shallow distance between leaves `x` and `y`; `+inf` when undefined.
    fn leaf_distance(&self, x: usize, y: usize) -> f64;

    /// Deep correlation for each pair of forest nodes.
    fn correlations(&self, forest: &Forest, kd: &KnownDistances, pairs: &[(NodeId, NodeId)]) -> Result<Vec<f64>>;

    /// Label for the distance-table dump.
    fn source_name(&self) -> &'static str;
}

/// Backend built from leaf signature vectors.
#[derive(Clone, Debug)]
pub struct SignatureBackend {
    /// Odd-block signatures per leaf.
    odd: Vec<Vec<f64>>,
    shallow: Vec<f64>,
    pseudo: bool,
}

impl SignatureBackend {
    pub fn from_vectors(sigs: &[SignatureVector]) -> Result<Self> {
        let odd: Vec<Vec<f64>> = sigs.iter().map(|s| s.odd_values().collect()).collect();
        let n = odd.len();
        let mut shallow = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = distance_or_inf(mean_product(&odd[i], &odd[j])?);
                shallow[i * n + j] = d;
                shallow[j * n + i] = d;
            }
        }
        let pseudo = sigs
            .iter()
            .any(|s| s.mode == crate::signature::SigMode::PseudoBlock);
        Ok(Self { odd, shallow, pseudo })
    }

    /// True-block signatures over the first `L l` bits of each leaf.
    pub fn symmetric(seqs: &[Bitstring], scheme: &BlockScheme) -> Result<Self> {
        let sigs = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| signature_vector(i, s, scheme))
            .collect::<Result<Vec<_>>>()
            .map_err(degenerate)?;
        Self::from_vectors(&sigs)
    }

    /// Pseudo-block signatures: each leaf is cut into `L` equal blocks.
    pub fn asymmetric(seqs: &[Bitstring], big_l: usize) -> Result<Self> {
        let sigs = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| pseudo_signature_vector(i, s, big_l))
            .collect::<Result<Vec<_>>>()
            .map_err(degenerate)?;
        Self::from_vectors(&sigs)
    }

    fn hat(&self, forest: &Forest, kd: &KnownDistances, v: NodeId) -> Result<Vec<f64>> {
        if v < forest.leaf_count() {
            return Ok(self.odd[v].clone());
        }
        let leaves = forest.leaves_below(v);
        let mut acc = vec![0.0; self.odd[0].len()];
        for &x in &leaves {
            let w = kd.get(v, x)?.exp();
            for (t, s) in acc.iter_mut().zip(&self.odd[x]) {
                *t += w * s;
            }
        }
        let n = leaves.len() as f64;
        acc.iter_mut().for_each(|t| *t /= n);
        Ok(acc)
    }
}

fn degenerate(e: Error) -> Error {
    match e {
        Error::InsufficientLength { needed, available } => Error::Degenerate(format!(
            "leaf sequence too short for the block scheme: need {needed} bits, have {available}"
        )),
        other => other,
    }
}

/// Mean of `a_i b_i`; equals `(2/L) sum` over the odd blocks.
fn mean_product(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::MismatchedBlocks {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::Domain("no blocks".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64)
}

impl DistanceBackend for SignatureBackend {
    fn leaf_count(&self) -> usize {
        self.odd.len()
    }

    fn leaf_distance(&self, x: usize, y: usize) -> f64 {
        self.shallow[x * self.odd.len() + y]
    }

    fn correlations(&self, forest: &Forest, kd: &KnownDistances, pairs: &[(NodeId, NodeId)]) -> Result<Vec<f64>> {
        let mut cache: HashMap<NodeId, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            for v in [a, b] {
                if let Entry::Vacant(e) = cache.entry(v) {
                    e.insert(self.hat(forest, kd, v)?);
                }
            }
            out.push(mean_product(&cache[&a], &cache[&b])?);
        }
        Ok(out)
    }

    fn source_name(&self) -> &'static str {
        if self.pseudo {
            "leaf-pseudo-sig"
        } else {
            "true-sig"
        }
    }
}

/// Backend that reads exact distances off a model tree: shallow distances
/// are path lengths and deep correlations are `e^{-d}/4` between the model
/// nodes that the forest nodes correspond to.
#[derive(Clone, Debug)]
pub struct OracleBackend<'a> {
    model: &'a ModelTree,
    leaves: Vec<NodeId>,
}

impl<'a> OracleBackend<'a> {
    /// `labels[i]` names forest leaf `i`.
    pub fn new(model: &'a ModelTree, labels: &[String]) -> Result<Self> {
        let leaves = labels
            .iter()
            .map(|l| model.leaf_by_label(l).ok_or(Error::LeafSetMismatch))
            .collect::<Result<Vec<_>>>()?;
        if leaves.len() != model.leaves().len() {
            return Err(Error::LeafSetMismatch);
        }
        Ok(Self { model, leaves })
    }

    fn model_node(&self, forest: &Forest, v: NodeId) -> Result<NodeId> {
        let leaves = forest.leaves_below(v);
        let mut acc = self.leaves[leaves[0]];
        for &x in &leaves[1..] {
            acc = self.model.lca(acc, self.leaves[x])?;
        }
        Ok(acc)
    }
}

impl DistanceBackend for OracleBackend<'_> {
    fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    fn leaf_distance(&self, x: usize, y: usize) -> f64 {
        self.model
            .path_distance(self.leaves[x], self.leaves[y])
            .unwrap_or(f64::INFINITY)
    }

    fn correlations(&self, forest: &Forest, _kd: &KnownDistances, pairs: &[(NodeId, NodeId)]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|&(a, b)| {
                let d = self
                    .model
                    .path_distance(self.model_node(forest, a)?, self.model_node(forest, b)?)?;
                Ok(0.25 * (-d).exp())
            })
            .collect()
    }

    fn source_name(&self) -> &'static str {
        "oracle"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceRow {
    pub level: usize,
    pub a: NodeId,
    pub b: NodeId,
    pub estimate: f64,
    pub source: String,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub tree: ReconstructedTree,
    pub forest: Forest,
    pub levels: usize,
    pub distances: Vec<DistanceRow>,
}

/// Distance-table dump: `a<TAB>b<TAB>estimate<TAB>source`, one row per pair
/// and level.
pub fn distance_table(rows: &[DistanceRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.a, r.b, r.estimate, r.source);
    }
    out
}

struct Level {
    d: Vec<f64>,
    close: Vec<bool>,
    m: usize,
}

impl Level {
    fn d(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.m + j]
    }

    fn close(&self, i: usize, j: usize) -> bool {
        self.close[i * self.m + j]
    }
}

struct Run<'a, B: DistanceBackend + ?Sized> {
    backend: &'a B,
    cfg: &'a ReconstructConfig,
    forest: Forest,
    kd: KnownDistances,
    cutoff: usize,
    r: f64,
    log: Vec<String>,
    rows: Vec<DistanceRow>,
}

impl<B: DistanceBackend + ?Sized> Run<'_, B> {
    fn level_distances(&mut self, h: usize, nodes: &[NodeId]) -> Result<Level> {
        let m = nodes.len();
        let mut d = vec![0.0; m * m];
        let mut close = vec![true; m * m];
        if h < self.cutoff {
            let leaves: Vec<Vec<NodeId>> = nodes.iter().map(|&v| self.forest.leaves_below(v)).collect();
            for i in 0..m {
                for j in i + 1..m {
                    let (mut sum, mut cnt) = (0.0, 0usize);
                    for &x in &leaves[i] {
                        for &y in &leaves[j] {
                            let d0 = self.backend.leaf_distance(x, y);
                            if d0.is_finite() {
                                sum += d0 - self.kd.get(nodes[i], x)? - self.kd.get(nodes[j], y)?;
                                cnt += 1;
                            }
                        }
                    }
                    let v = if cnt > 0 { sum / cnt as f64 } else { f64::INFINITY };
                    d[i * m + j] = v;
                    d[j * m + i] = v;
                    let c = v <= self.r;
                    close[i * m + j] = c;
                    close[j * m + i] = c;
                }
            }
            if self.cfg.log {
                let src = if h == 0 { "shallow" } else { "shallow-corrected" };
                self.record(h, nodes, &d, src);
            }
        } else {
            let mut jobs: Vec<(usize, usize, usize, Vec<(NodeId, NodeId)>)> = Vec::new();
            let mut flat: Vec<(NodeId, NodeId)> = Vec::new();
            for i in 0..m {
                for j in i + 1..m {
                    let (a, b) = (nodes[i], nodes[j]);
                    let t = self
                        .cutoff
                        .min(self.forest.min_depth(a))
                        .min(self.forest.min_depth(b));
                    let pairs = matched_descendants(&self.forest, a, b, t)?;
                    let start = flat.len();
                    flat.extend(pairs.iter().copied());
                    jobs.push((i, j, start, pairs));
                }
            }
            let corr = self.backend.correlations(&self.forest, &self.kd, &flat)?;
            for (i, j, start, pairs) in jobs {
                let (a, b) = (nodes[i], nodes[j]);
                let mut entries = Vec::with_capacity(pairs.len());
                for (k, &(aj, bj)) in pairs.iter().enumerate() {
                    entries.push(pair_estimate(corr[start + k], self.kd.get(a, aj)?, self.kd.get(b, bj)?));
                }
                let (v, c) = match aggregate_deep(&entries) {
                    Ok(agg) => (agg.estimate, agg.estimate.is_finite() && diameter_test(&entries, self.r)),
                    Err(Error::AllInfinite) => (f64::INFINITY, false),
                    Err(e) => return Err(e),
                };
                d[i * m + j] = v;
                d[j * m + i] = v;
                close[i * m + j] = c;
                close[j * m + i] = c;
            }
            if self.cfg.log {
                self.record(h, nodes, &d, "deep");
            }
        }
        Ok(Level { d, close, m })
    }

    fn record(&mut self, h: usize, nodes: &[NodeId], d: &[f64], source: &str) {
        let m = nodes.len();
        for i in 0..m {
            for j in i + 1..m {
                self.rows.push(DistanceRow {
                    level: h,
                    a: nodes[i],
                    b: nodes[j],
                    estimate: d[i * m + j],
                    source: format!("{}:{}", source, self.backend.source_name()),
                });
            }
        }
    }

    fn cherries(&mut self, h: usize, nodes: &[NodeId], lv: &Level) -> Result<Vec<(usize, usize)>> {
        let m = nodes.len();
        let mut witnessed = vec![false; m * m];
        let mut separated = vec![false; m * m];
        for a in 0..m {
            for b in a + 1..m {
                for c in b + 1..m {
                    for e in c + 1..m {
                        let q = [a, b, c, e];
                        let short = q
                            .iter()
                            .enumerate()
                            .all(|(x, &i)| q[x + 1..].iter().all(|&j| lv.close(i, j)));
                        let split = if short {
                            let mut dm = [[0.0; 4]; 4];
                            for x in 0..4 {
                                for y in 0..4 {
                                    if x != y {
                                        dm[x][y] = lv.d(q[x], q[y]);
                                    }
                                }
                            }
                            let taxa = [nodes[a], nodes[b], nodes[c], nodes[e]];
                            let s = four_point_method(taxa, &dm)?;
                            mark_split(&q, s.split, &mut witnessed, &mut separated, m);
                            Some(s)
                        } else {
                            None
                        };
                        if self.cfg.log {
                            self.log.push(format!(
                                "h={} quartet={},{},{},{} split={} short={}",
                                h,
                                nodes[a],
                                nodes[b],
                                nodes[c],
                                nodes[e],
                                split.map(|s| s.describe()).unwrap_or_else(|| "-".into()),
                                short as u8
                            ));
                        }
                    }
                }
            }
        }
        let mut cands = cherry_candidates(&witnessed, &separated, m);
        Ok(greedy_pairing(&mut cands, m, |i, j| lv.d(i, j)))
    }

    fn record_join(&mut self, w: NodeId, kids: &[NodeId], mults: &[u32]) -> Result<()> {
        self.kd.insert(w, w, 0.0);
        for (&k, &mu) in kids.iter().zip(mults) {
            let e = mu as f64 * self.cfg.lambda_min;
            self.kd.insert(w, k, e);
            for x in self.subtree(k) {
                if x != k {
                    let below = self.kd.get(k, x)?;
                    self.kd.insert(w, x, e + below);
                }
            }
        }
        Ok(())
    }

    fn subtree(&self, v: NodeId) -> Vec<NodeId> {
        let mut out = vec![v];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.forest.children(out[i]).iter().copied());
            i += 1;
        }
        out
    }
}

/// Reconstructs the tree over leaves `labels` (leaf `i` is `labels[i]`) from
/// the distances supplied by `backend`.
pub fn tree_reconstruct<B: DistanceBackend + ?Sized>(
    labels: &[String],
    backend: &B,
    cfg: &ReconstructConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let n = labels.len();
    if n < 4 {
        return Err(Error::TooFewLeaves(n));
    }
    if backend.leaf_count() != n {
        return Err(Error::LeafSetMismatch);
    }
    let mut run = Run {
        backend,
        cfg,
        forest: Forest::new(n),
        kd: KnownDistances::new(),
        cutoff: cfg.cutoff(n),
        r: cfg.radius(n),
        log: Vec::new(),
        rows: Vec::new(),
    };
    let lm = cfg.lambda_min;
    let mut nodes: Vec<NodeId> = (0..n).collect();
    let mut h = 0;
    let final_edge: Option<(NodeId, NodeId, u32)>;
    loop {
        let m = nodes.len();
        let lv = run.level_distances(h, &nodes)?;
        if m == 2 {
            let d = lv.d(0, 1);
            if !d.is_finite() {
                return Err(Error::Degenerate(format!("final join at level {h} has no finite distance")));
            }
            final_edge = Some((nodes[0], nodes[1], round_to_multiple(d, lm)));
            run.log.push(format!("h={h} join={},{} length={}", nodes[0], nodes[1], d));
            break;
        }
        if m == 3 {
            let (d01, d02, d12) = (lv.d(0, 1), lv.d(0, 2), lv.d(1, 2));
            if !(d01.is_finite() && d02.is_finite() && d12.is_finite()) {
                return Err(Error::Degenerate(format!("final join at level {h} has no finite distance")));
            }
            let mults = [
                round_to_multiple(three_point(d01, d02, d12), lm),
                round_to_multiple(three_point(d01, d12, d02), lm),
                round_to_multiple(three_point(d02, d12, d01), lm),
            ];
            let w = run.forest.join(&nodes, &mults);
            run.record_join(w, &nodes.clone(), &mults)?;
            run.log.push(format!("h={h} star={},{},{}", nodes[0], nodes[1], nodes[2]));
            final_edge = None;
            break;
        }
        let cherries = run.cherries(h, &nodes, &lv)?;
        if cherries.is_empty() {
            run.log.push(format!("h={h} stall remaining={m}"));
            return Err(Error::Stall { level: h, remaining: m });
        }
        let mut next = Vec::with_capacity(m);
        let mut partner = vec![None; m];
        for &(i, j) in &cherries {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
        for i in 0..m {
            match partner[i] {
                Some(j) if j > i => {
                    let (a, b) = (nodes[i], nodes[j]);
                    let dab = lv.d(i, j);
                    let (mut ea, mut eb, mut cnt) = (0.0, 0.0, 0usize);
                    for c in 0..m {
                        if c != i && c != j && lv.close(i, c) && lv.close(j, c) {
                            ea += three_point(dab, lv.d(i, c), lv.d(j, c));
                            eb += three_point(dab, lv.d(j, c), lv.d(i, c));
                            cnt += 1;
                        }
                    }
                    if cnt == 0 {
                        ea = dab / 2.0;
                        eb = dab / 2.0;
                        cnt = 1;
                    }
                    let mults = [
                        round_to_multiple(ea / cnt as f64, lm),
                        round_to_multiple(eb / cnt as f64, lm),
                    ];
                    let w = run.forest.join(&[a, b], &mults);
                    run.record_join(w, &[a, b], &mults)?;
                    run.log.push(format!("h={h} cherry={a},{b} parent={w} lengths={},{}", mults[0], mults[1]));
                    next.push(w);
                }
                Some(_) => {}
                None => next.push(nodes[i]),
            }
        }
        nodes = next;
        h += 1;
    }

    let forest = run.forest;
    let mut tree = ReconstructedTree::new();
    for v in 0..forest.len() {
        tree.add_node((v < n).then(|| labels[v].clone()));
    }
    for v in 0..forest.len() {
        if let Some(p) = forest.parent(v) {
            let mu = forest.edge_multiple(v);
            tree.add_edge(p, v, mu as f64 * lm, Some(mu));
        }
    }
    if let Some((a, b, mu)) = final_edge {
        tree.add_edge(a, b, mu as f64 * lm, Some(mu));
    }
    tree.log = run.log;
    Ok(Reconstruction {
        tree,
        forest,
        levels: h + 1,
        distances: run.rows,
    })
}
