//! Quartet-level primitives: the four point method, the three-point rule,
//! grid rounding and cherry picking.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Split {
    /// ab|cd
    AbCd,
    /// ac|bd
    AcBd,
    /// ad|bc
    AdBc,
}

impl Split {
    /// The two pairs, as positions into the quartet.
    pub fn pairs(&self) -> [(usize, usize); 2] {
        match self {
            Split::AbCd => [(0, 1), (2, 3)],
            Split::AcBd => [(0, 2), (1, 3)],
            Split::AdBc => [(0, 3), (1, 2)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuartetSplit {
    pub taxa: [NodeId; 4],
    pub split: Split,
    /// Second-smallest pair sum minus the smallest.
    pub margin: f64,
}

impl QuartetSplit {
    /// `a,b|c,d` with the taxa ids.
    pub fn describe(&self) -> String {
        let [(a, b), (c, d)] = self.split.pairs();
        let t = &self.taxa;
        format!("{},{}|{},{}", t[a], t[b], t[c], t[d])
    }

    /// Whether the split puts `x` and `y` on the same side.
    pub fn joins(&self, x: NodeId, y: NodeId) -> bool {
        self.split.pairs().iter().any(|&(i, j)| {
            let (p, q) = (self.taxa[i], self.taxa[j]);
            (p == x && q == y) || (p == y && q == x)
        })
    }
}

/// Picks the split with the smallest within-pair distance sum. Ties go to
/// ab|cd, then ac|bd, then ad|bc.
pub fn four_point_method(taxa: [NodeId; 4], d: &[[f64; 4]; 4]) -> Result<QuartetSplit> {
    for (i, row) in d.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite);
            }
            if i != j && x != d[j][i] {
                return Err(Error::Domain("dissimilarity matrix is not symmetric".into()));
            }
        }
    }
    let sums = [
        (Split::AbCd, d[0][1] + d[2][3]),
        (Split::AcBd, d[0][2] + d[1][3]),
        (Split::AdBc, d[0][3] + d[1][2]),
    ];
    let mut best = 0;
    for i in 1..3 {
        if sums[i].1 < sums[best].1 {
            best = i;
        }
    }
    let second = (0..3)
        .filter(|&i| i != best)
        .map(|i| sums[i].1)
        .fold(f64::INFINITY, f64::min);
    Ok(QuartetSplit {
        taxa,
        split: sums[best].0,
        margin: second - sums[best].1,
    })
}

/// Distance from `a` to the meeting point of the paths between `a`, `b`, `c`.
pub fn three_point(d_ab: f64, d_ac: f64, d_bc: f64) -> f64 {
    0.5 * (d_ab + d_ac - d_bc)
}

/// Nearest positive multiple of `lambda_min` (at least one), ties rounding up.
/// Returns the multiple.
pub fn round_to_multiple(x: f64, lambda_min: f64) -> u32 {
    let q = x / lambda_min;
    if !q.is_finite() {
        return if q > 0.0 { u32::MAX } else { 1 };
    }
    // tolerate representation error at exact half-way points such as 0.35/0.1
    let m = (q + 0.5 + 1e-9).floor();
    m.clamp(1.0, u32::MAX as f64) as u32
}

/// [`round_to_multiple`] expressed as a length.
pub fn round_to_grid(x: f64, lambda_min: f64) -> f64 {
    round_to_multiple(x, lambda_min) as f64 * lambda_min
}

/// Cherries implied by a set of short-quartet splits.
///
/// A pair qualifies when some split joins it and no split separates it.
/// Qualifying pairs are taken greedily in the order given by `rank` (lowest
/// first, then by position), skipping pairs that reuse a node. Returns pairs
/// of positions into `nodes`.
pub fn pick_cherries(
    nodes: &[NodeId],
    splits: &[QuartetSplit],
    rank: impl Fn(usize, usize) -> f64,
) -> Result<Vec<(usize, usize)>> {
    let m = nodes.len();
    let pos = |id: NodeId| -> Result<usize> {
        nodes
            .iter()
            .position(|&x| x == id)
            .ok_or(Error::UnknownNode(id))
    };
    let mut witnessed = vec![false; m * m];
    let mut separated = vec![false; m * m];
    for q in splits {
        let p = [pos(q.taxa[0])?, pos(q.taxa[1])?, pos(q.taxa[2])?, pos(q.taxa[3])?];
        mark_split(&p, q.split, &mut witnessed, &mut separated, m);
    }
    let mut cands = cherry_candidates(&witnessed, &separated, m);
    Ok(greedy_pairing(&mut cands, m, rank))
}

pub(crate) fn mark_split(p: &[usize; 4], split: Split, witnessed: &mut [bool], separated: &mut [bool], m: usize) {
    let [(a, b), (c, d)] = split.pairs();
    let (a, b, c, d) = (p[a], p[b], p[c], p[d]);
    let set = |v: &mut [bool], x: usize, y: usize| {
        v[x * m + y] = true;
        v[y * m + x] = true;
    };
    set(witnessed, a, b);
    set(witnessed, c, d);
    for (x, y) in [(a, c), (a, d), (b, c), (b, d)] {
        set(separated, x, y);
    }
}

pub(crate) fn cherry_candidates(witnessed: &[bool], separated: &[bool], m: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            if witnessed[i * m + j] && !separated[i * m + j] {
                out.push((i, j));
            }
        }
    }
    out
}

pub(crate) fn greedy_pairing(
    cands: &mut [(usize, usize)],
    m: usize,
    rank: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize)> {
    cands.sort_by(|&(a, b), &(c, d)| rank(a, b).total_cmp(&rank(c, d)).then((a, b).cmp(&(c, d))));
    let mut used = vec![false; m];
    let mut out = Vec::new();
    for &(i, j) in cands.iter() {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}
