//! CFN-Indel simulation down a model tree.
//!
//! Each edge makes one left-to-right pass over the parent string. Every parent
//! bit independently draws a flip, a deletion and an insertion; the output for
//! that bit is the (possibly flipped) bit unless deleted, followed by a fresh
//! uniform bit if the insertion fired. Inserted bits are not mutated again on
//! the same edge.
//!
//! Event positions are sampled by geometric skipping when the rate is small
//! and by word-wide Bernoulli masks otherwise, so the cost per edge is
//! proportional to the number of words plus the number of events.

use std::collections::HashMap;

use rand::RngCore;

use crate::bitstring::Bitstring;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tree::{EdgeParams, ModelTree, NodeId};

/// Rates below this use geometric skipping; larger rates use word masks.
const SKIP_CUTOFF: f64 = 0.125;

/// Random word whose bits are independently 1 with probability `q / 2^32`.
#[inline]
fn bernoulli_word(rng: &mut RngStream, q: u64) -> u64 {
    if q >= 1 << 32 {
        return u64::MAX;
    }
    if q == 0 {
        return 0;
    }
    // Consume the binary expansion of q from its lowest set bit upward:
    // OR with a fresh word on a 1, AND on a 0. Each step maps P to P/2 + b/2.
    let mut m = 0u64;
    for j in q.trailing_zeros()..32 {
        let r = rng.next_u64();
        m = if (q >> j) & 1 == 1 { m | r } else { m & r };
    }
    m
}

fn fixed_point(p: f64) -> u64 {
    (p * (1u64 << 32) as f64).round() as u64
}

/// Sorted positions in `0..n` where an independent `p`-coin lands heads.
fn event_positions(n: usize, p: f64, rng: &mut RngStream) -> Vec<usize> {
    if p <= 0.0 || n == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..n).collect();
    }
    if p < SKIP_CUTOFF {
        let log_q = (-p).ln_1p();
        let mut out = Vec::with_capacity((n as f64 * p * 1.2) as usize + 8);
        let mut pos = 0usize;
        loop {
            let gap = (rng.open_unit().ln() / log_q).floor();
            if gap >= (n - pos) as f64 {
                break;
            }
            pos += gap as usize;
            out.push(pos);
            pos += 1;
            if pos >= n {
                break;
            }
        }
        out
    } else {
        let q = fixed_point(p);
        let mut out = Vec::with_capacity((n as f64 * p * 1.1) as usize + 8);
        for w in 0..n.div_ceil(64) {
            let mut m = bernoulli_word(rng, q);
            let base = w * 64;
            while m != 0 {
                let pos = base + m.trailing_zeros() as usize;
                if pos >= n {
                    break;
                }
                out.push(pos);
                m &= m - 1;
            }
        }
        out
    }
}

fn apply_flips(bits: &mut Bitstring, p: f64, rng: &mut RngStream) {
    if p <= 0.0 || bits.is_empty() {
        return;
    }
    if p < SKIP_CUTOFF {
        for pos in event_positions(bits.len(), p, rng) {
            bits.toggle(pos);
        }
    } else {
        let q = fixed_point(p);
        for w in 0..bits.words().len() {
            let m = bernoulli_word(rng, q);
            bits.xor_word(w, m);
        }
    }
}

/// Lineage bookkeeping for one edge.
pub struct LineageEdge<'a> {
    pub parent_ids: &'a [u64],
    pub next_id: &'a mut u64,
}

/// Mutates `parent` across one edge. When `lineage` is given, returns the
/// child's lineage ids alongside the bits. The bits produced do not depend on
/// whether lineage is tracked.
pub fn mutate_edge_with_lineage(
    parent: &Bitstring,
    params: &EdgeParams,
    rng: &mut RngStream,
    lineage: Option<LineageEdge<'_>>,
) -> (Bitstring, Option<Vec<u64>>) {
    let n = parent.len();
    let mut flipped = parent.clone();
    apply_flips(&mut flipped, params.p_sub, rng);
    let dels = event_positions(n, params.p_del, rng);
    let ins = event_positions(n, params.p_ins, rng);

    let expect = n + ins.len() - dels.len().min(n);
    let mut child = Bitstring::with_capacity(expect);
    let mut ids = lineage.as_ref().map(|_| Vec::with_capacity(expect));
    let mut lineage = lineage;

    let copy =|child: &mut Bitstring, ids: &mut Option<Vec<u64>>, from: usize, to: usize| {
        if to > from {
            child.extend_from_range(&flipped, from, to - from);
            if let (Some(ids), Some(l)) = (ids.as_mut(), lineage.as_ref()) {
                ids.extend_from_slice(&l.parent_ids[from..to]);
            }
        }
    };

    let (mut di, mut ii) = (0, 0);
    let mut cursor = 0;
    let mut inserted: Vec<usize> = Vec::new();
    while di < dels.len() || ii < ins.len() {
        let dpos = dels.get(di).copied().unwrap_or(usize::MAX);
        let ipos = ins.get(ii).copied().unwrap_or(usize::MAX);
        let pos = dpos.min(ipos);
        if dpos == pos {
            copy(&mut child, &mut ids, cursor, pos);
            di += 1;
        } else {
            copy(&mut child, &mut ids, cursor, pos + 1);
        }
        cursor = pos + 1;
        if ipos == pos {
            child.push(rng.next_u64() & 1 == 1);
            if let Some(ids) = ids.as_mut() {
                // placeholder; `copy` still borrows the lineage, so fresh ids
                // are filled in after the pass
                inserted.push(ids.len());
                ids.push(u64::MAX);
            }
            ii += 1;
        }
    }
    copy(&mut child, &mut ids, cursor, n);

    if let (Some(ids), Some(l)) = (ids.as_mut(), lineage.as_mut()) {
        for &at in &inserted {
            ids[at] = *l.next_id;
            *l.next_id += 1;
        }
    }
    (child, ids)
}

/// Mutates `parent` across one edge with the given parameters.
pub fn mutate_edge(parent: &Bitstring, params: &EdgeParams, rng: &mut RngStream) -> Bitstring {
    mutate_edge_with_lineage(parent, params, rng, None).0
}

/// Bitstrings at every node of a model tree, indexed by node id.
#[derive(Clone, Debug)]
pub struct SequenceAssignment {
    seqs: Vec<Bitstring>,
    lineage: Option<Vec<Vec<u64>>>,
    root_length: usize,
    next_id: u64,
}

impl SequenceAssignment {
    pub fn from_parts(seqs: Vec<Bitstring>, lineage: Option<Vec<Vec<u64>>>, root_length: usize) -> Self {
        let next_id = lineage
            .as_ref()
            .and_then(|l| l.iter().flatten().max().map(|m| m + 1))
            .unwrap_or(root_length as u64);
        Self {
            seqs,
            lineage,
            root_length,
            next_id,
        }
    }

    pub fn seq(&self, v: NodeId) -> &Bitstring {
        &self.seqs[v]
    }

    pub fn seqs(&self) -> &[Bitstring] {
        &self.seqs
    }

    pub fn seq_mut(&mut self, v: NodeId) -> &mut Bitstring {
        &mut self.seqs[v]
    }

    pub fn root_length(&self) -> usize {
        self.root_length
    }

    pub fn has_lineage(&self) -> bool {
        self.lineage.is_some()
    }

    pub fn lineage(&self, v: NodeId) -> Result<&[u64]> {
        self.lineage
            .as_ref()
            .map(|l| l[v].as_slice())
            .ok_or(Error::LineageMissing)
    }

    /// One past the largest lineage id handed out.
    pub fn id_bound(&self) -> u64 {
        self.next_id
    }

    /// Per-node bitstrings, lineage and root length.
    pub fn into_parts(self) -> (Vec<Bitstring>, Option<Vec<Vec<u64>>>, usize) {
        (self.seqs, self.lineage, self.root_length)
    }

    /// Drops everything except the leaves' bitstrings.
    pub fn into_leaf_seqs(self, tree: &ModelTree) -> Vec<Bitstring> {
        let mut seqs = self.seqs;
        tree.leaves()
            .iter()
            .map(|&l| std::mem::take(&mut seqs[l]))
            .collect()
    }
}

/// Simulates the process on every edge of `tree` from a uniform root string
/// of length `k_root`. Node `v` draws from `rng.substream(v)`.
pub fn evolve_tree(
    tree: &ModelTree,
    k_root: usize,
    rng: &RngStream,
    track_lineage: bool,
) -> Result<SequenceAssignment> {
    if k_root == 0 {
        return Err(Error::Domain("root length must be at least 1".into()));
    }
    let mut seqs = vec![Bitstring::new(); tree.len()];
    seqs[0] = Bitstring::random(k_root, &mut rng.substream(0));
    let mut lineage = track_lineage.then(|| {
        let mut l = vec![Vec::new(); tree.len()];
        l[0] = (0..k_root as u64).collect();
        l
    });
    let mut next_id = k_root as u64;
    // BFS ids guarantee parents are filled before children
    for v in 1..tree.len() {
        let p = tree.parent(v).expect("non-root node without parent");
        let mut edge_rng = rng.substream(v as u64);
        let (child, ids) = match lineage.as_ref() {
            Some(l) => mutate_edge_with_lineage(
                &seqs[p],
                tree.edge_params(v),
                &mut edge_rng,
                Some(LineageEdge {
                    parent_ids: &l[p],
                    next_id: &mut next_id,
                }),
            ),
            None => mutate_edge_with_lineage(&seqs[p], tree.edge_params(v), &mut edge_rng, None),
        };
        seqs[v] = child;
        if let (Some(l), Some(ids)) = (lineage.as_mut(), ids) {
            l[v] = ids;
        }
    }
    Ok(SequenceAssignment {
        seqs,
        lineage,
        root_length: k_root,
        next_id,
    })
}

/// Pairs of 0-based positions `(pos_in_a, pos_in_b)` holding the same lineage
/// id, ordered by id.
pub fn shared_bits(assign: &SequenceAssignment, a: NodeId, b: NodeId) -> Result<Vec<(usize, usize)>> {
    let la = assign.lineage(a)?;
    let lb = assign.lineage(b)?;
    let index: HashMap<u64, usize> = la.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut out: Vec<(u64, usize, usize)> = lb
        .iter()
        .enumerate()
        .filter_map(|(j, id)| index.get(id).map(|&i| (*id, i, j)))
        .collect();
    out.sort_unstable();
    Ok(out.into_iter().map(|(_, i, j)| (i, j)).collect())
}

/// Largest `|j_b / eta(b) - j_a / eta(a)|` over shared bits, with 1-based
/// positions. Zero when no bits are shared.
pub fn normalized_shift_max(
    assign: &SequenceAssignment,
    tree: &ModelTree,
    a: NodeId,
    b: NodeId,
) -> Result<f64> {
    let (ea, eb) = (tree.eta(a)?, tree.eta(b)?);
    Ok(shared_bits(assign, a, b)?
        .into_iter()
        .map(|(i, j)| ((j + 1) as f64 / eb - (i + 1) as f64 / ea).abs())
        .fold(0.0, f64::max))
}

/// `normalized_shift_max` maximized over every pair of nodes, in time linear
/// in the total number of bits.
pub fn max_normalized_shift_all_pairs(assign: &SequenceAssignment, tree: &ModelTree) -> Result<f64> {
    let bound = assign.id_bound() as usize;
    let mut lo = vec![f64::INFINITY; bound];
    let mut hi = vec![f64::NEG_INFINITY; bound];
    for v in 0..tree.len() {
        let eta = tree.eta(v)?;
        for (pos, &id) in assign.lineage(v)?.iter().enumerate() {
            let x = (pos + 1) as f64 / eta;
            let id = id as usize;
            lo[id] = lo[id].min(x);
            hi[id] = hi[id].max(x);
        }
    }
    Ok(lo
        .iter()
        .zip(&hi)
        .filter(|(l, _)| l.is_finite())
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max))
}

/// Leaf sequence file: one `label<TAB>bits` line per leaf, in leaf order.
pub fn write_leaf_file(tree: &ModelTree, assign: &SequenceAssignment) -> String {
    let mut out = String::new();
    for &l in tree.leaves() {
        out.push_str(tree.label(l).unwrap_or_default());
        out.push('\t');
        out.push_str(&assign.seq(l).to_ascii());
        out.push('\n');
    }
    out
}

/// Lineage sidecar: one `label<TAB>id,id,...` line per leaf.
pub fn write_lineage_file(tree: &ModelTree, assign: &SequenceAssignment) -> Result<String> {
    let mut out = String::new();
    for &l in tree.leaves() {
        out.push_str(tree.label(l).unwrap_or_default());
        out.push('\t');
        let ids: Vec<String> = assign.lineage(l)?.iter().map(u64::to_string).collect();
        out.push_str(&ids.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn split_record(line: &str, lineno: usize) -> Result<(&str, &str)> {
    line.split_once('\t').ok_or_else(|| Error::Parse {
        line: lineno,
        msg: "expected label<TAB>value".into(),
    })
}

/// Parses a leaf sequence file. Blank lines and `#` comment lines are
/// skipped; labels must be unique.
pub fn parse_leaf_file(text: &str) -> Result<Vec<(String, Bitstring)>> {
    let mut out: Vec<(String, Bitstring)> = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, bits) = split_record(line, i + 1)?;
        let bits = Bitstring::from_ascii(bits.trim()).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::Parse { line: i + 1, msg },
            other => other,
        })?;
        if label.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty label".into(),
            });
        }
        if seen.insert(label.to_string(), i + 1).is_some() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("duplicate label {label:?}"),
            });
        }
        out.push((label.to_string(), bits));
    }
    Ok(out)
}

/// Parses a lineage sidecar file.
pub fn parse_lineage_file(text: &str) -> Result<Vec<(String, Vec<u64>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, ids) = split_record(line, i + 1)?;
        let ids = if ids.trim().is_empty() {
            Vec::new()
        } else {
            ids.trim()
                .split(',')
                .map(|s| {
                    s.parse::<u64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad lineage id {s:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        out.push((label.to_string(), ids));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(s: f64, d: f64, i: f64) -> EdgeParams {
        EdgeParams::new(s, d, i).unwrap()
    }

    #[test]
    fn bernoulli_word_rate() {
        let mut rng = RngStream::new(9, 0);
        for p in [0.3, 0.5, 0.77] {
            let q = fixed_point(p);
            let ones: u32 = (0..20_000).map(|_| bernoulli_word(&mut rng, q).count_ones()).sum();
            let n = 20_000.0 * 64.0;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((ones as f64 / n - p).abs() < 5.0 * se, "p = {p}");
        }
    }

    #[test]
    fn event_rate_both_paths() {
        let mut rng = RngStream::new(1, 1);
        for p in [0.01, 0.1, 0.2, 0.6] {
            let n = 200_000;
            let ev = event_positions(n, p, &mut rng);
            assert!(ev.windows(2).all(|w| w[0] < w[1]));
            assert!(ev.iter().all(|&x| x < n));
            let se = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((ev.len() as f64 - n as f64 * p).abs() < 5.0 * se, "p = {p}");
        }
    }

    #[test]
    fn identity_and_full_deletion() {
        let mut rng = RngStream::new(0, 0);
        let s = Bitstring::random(777, &mut rng);
        assert_eq!(mutate_edge(&s, &EdgeParams::none(), &mut rng), s);
        let gone = EdgeParams {
            p_sub: 0.0,
            p_del: 1.0,
            p_ins: 0.0,
        };
        assert!(mutate_edge(&s, &gone, &mut rng).is_empty());
    }

    #[test]
    fn deleted_bits_still_insert() {
        let mut rng = RngStream::new(2, 0);
        let s = Bitstring::zeros(500);
        let p = EdgeParams {
            p_sub: 0.0,
            p_del: 1.0,
            p_ins: 0.99,
        };
        let c = mutate_edge(&s, &p, &mut rng);
        assert!(c.len() > 450);
    }

    #[test]
    fn lineage_does_not_change_bits() {
        let tree = ModelTree::balanced(3, ep(0.1, 0.05, 0.07)).unwrap();
        let rng = RngStream::new(11, 3);
        let a = evolve_tree(&tree, 5000, &rng, false).unwrap();
        let b = evolve_tree(&tree, 5000, &rng, true).unwrap();
        assert_eq!(a.seqs(), b.seqs());
        for v in 0..tree.len() {
            assert_eq!(b.lineage(v).unwrap().len(), b.seq(v).len());
        }
    }

    #[test]
    fn lineage_preserves_order_and_uniqueness() {
        let tree = ModelTree::balanced(3, ep(0.1, 0.1, 0.1)).unwrap();
        let a = evolve_tree(&tree, 3000, &RngStream::new(5, 0), true).unwrap();
        let k = a.root_length() as u64;
        for v in 0..tree.len() {
            let ids = a.lineage(v).unwrap();
            let root_ids: Vec<u64> = ids.iter().copied().filter(|&x| x < k).collect();
            assert!(root_ids.windows(2).all(|w| w[0] < w[1]));
            let mut sorted = ids.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), ids.len());
        }
        // fresh ids never appear in two sibling subtrees
        let l = tree.leaves();
        let left: std::collections::HashSet<u64> =
            a.lineage(l[0]).unwrap().iter().copied().filter(|&x| x >= k).collect();
        let far = a.lineage(l[l.len() - 1]).unwrap();
        assert!(far.iter().all(|x| !left.contains(x)));
    }

    #[test]
    fn shared_bits_examples() {
        let tree = ModelTree::balanced(2, ep(0.1, 0.0, 0.0)).unwrap();
        let a = evolve_tree(&tree, 100, &RngStream::new(0, 0), true).unwrap();
        let l = tree.leaves();
        let diag: Vec<(usize, usize)> = (0..100).map(|j| (j, j)).collect();
        assert_eq!(shared_bits(&a, l[0], l[0]).unwrap(), diag);
        assert_eq!(shared_bits(&a, l[0], l[3]).unwrap(), diag);
        assert_eq!(normalized_shift_max(&a, &tree, l[0], l[3]).unwrap(), 0.0);

        let no_lineage = evolve_tree(&tree, 100, &RngStream::new(0, 0), false).unwrap();
        assert!(matches!(shared_bits(&no_lineage, 1, 2), Err(Error::LineageMissing)));
    }

    #[test]
    fn all_pairs_shift_matches_brute_force() {
        let tree = ModelTree::balanced(3, ep(0.05, 0.04, 0.06)).unwrap();
        let a = evolve_tree(&tree, 2000, &RngStream::new(8, 0), true).unwrap();
        let mut brute: f64 = 0.0;
        for x in 0..tree.len() {
            for y in x + 1..tree.len() {
                brute = brute.max(normalized_shift_max(&a, &tree, x, y).unwrap());
            }
        }
        let fast = max_normalized_shift_all_pairs(&a, &tree).unwrap();
        assert!((brute - fast).abs() < 1e-9, "{brute} vs {fast}");
        assert!(fast > 0.0);
    }

    #[test]
    fn leaf_file_round_trip() {
        let tree = ModelTree::balanced(2, ep(0.1, 0.02, 0.02)).unwrap();
        let a = evolve_tree(&tree, 64, &RngStream::new(4, 0), true).unwrap();
        let text = write_leaf_file(&tree, &a);
        let parsed = parse_leaf_file(&text).unwrap();
        assert_eq!(parsed.len(), 4);
        for ((label, bits), &l) in parsed.iter().zip(tree.leaves()) {
            assert_eq!(Some(label.as_str()), tree.label(l));
            assert_eq!(bits, a.seq(l));
        }
        let lin = parse_lineage_file(&write_lineage_file(&tree, &a).unwrap()).unwrap();
        for ((_, ids), &l) in lin.iter().zip(tree.leaves()) {
            assert_eq!(ids.as_slice(), a.lineage(l).unwrap());
        }
        let err = parse_leaf_file("A\t0101\nB\t01x1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_leaf_file("A 0101\n").is_err());
    }
}
