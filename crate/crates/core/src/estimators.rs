//! Correlation and distance estimators built on block signatures.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::signature::{SigMode, SignatureVector};
use crate::tree::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigSource {
    TrueSig,
    LeafPseudoSig,
    ReconstructedSig,
}

impl SigSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SigSource::TrueSig => "true-sig",
            SigSource::LeafPseudoSig => "leaf-pseudo-sig",
            SigSource::ReconstructedSig => "reconstructed-sig",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub value: f64,
    pub source: SigSource,
    pub pair: (NodeId, NodeId),
}

/// Rooted hierarchy that estimators can walk.
pub trait Hierarchy {
    /// Descendants exactly `offset` levels below `node`, in BFS order. Leaves
    /// reached early stay in the frontier.
    fn descendants_at(&self, node: NodeId, offset: usize) -> Vec<NodeId>;
    fn leaves_below(&self, node: NodeId) -> Vec<NodeId>;
}

/// Distances from nodes to their descendants.
#[derive(Clone, Debug, Default)]
pub struct KnownDistances {
    map: HashMap<(NodeId, NodeId), f64>,
}

impl KnownDistances {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ancestor: NodeId, descendant: NodeId, d: f64) {
        self.map.insert((ancestor, descendant), d);
    }

    pub fn get(&self, ancestor: NodeId, descendant: NodeId) -> Result<f64> {
        if ancestor == descendant {
            return Ok(0.0);
        }
        self.map
            .get(&(ancestor, descendant))
            .copied()
            .ok_or(Error::MissingDistance {
                ancestor,
                descendant,
            })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// `(2/L) * sum over odd blocks of a_i * b_i`, i.e. the mean product over
/// blocks 1, 3, ..., L-1.
pub fn odd_block_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::MismatchedBlocks {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Domain("need at least two blocks".into()));
    }
    let sum: f64 = a.iter().step_by(2).zip(b.iter().step_by(2)).map(|(x, y)| x * y).sum();
    Ok(2.0 * sum / (a.len() & !1) as f64)
}

fn source_of(a: &SignatureVector, b: &SignatureVector) -> SigSource {
    let modes = [a.mode, b.mode];
    if modes.contains(&SigMode::Reconstructed) {
        SigSource::ReconstructedSig
    } else if modes.contains(&SigMode::PseudoBlock) {
        SigSource::LeafPseudoSig
    } else {
        SigSource::TrueSig
    }
}

pub fn shallow_correlation(sa: &SignatureVector, sb: &SignatureVector) -> Result<CorrelationEstimate> {
    Ok(CorrelationEstimate {
        value: odd_block_correlation(&sa.values, &sb.values)?,
        source: source_of(sa, sb),
        pair: (sa.node, sb.node),
    })
}

/// Same computation on reconstructed signatures.
pub fn deep_correlation(sa_hat: &SignatureVector, sb_hat: &SignatureVector) -> Result<CorrelationEstimate> {
    shallow_correlation(sa_hat, sb_hat)
}

/// `-ln(4 c)`; errors on a non-positive correlation.
pub fn shallow_distance(c: &CorrelationEstimate) -> Result<f64> {
    if c.value > 0.0 {
        Ok(-(4.0 * c.value).ln())
    } else {
        Err(Error::OutOfRange(c.value))
    }
}

/// `-ln(4 c)` with non-positive correlations mapped to `+inf`.
pub fn distance_or_inf(c: f64) -> f64 {
    if c > 0.0 {
        -(4.0 * c).ln()
    } else {
        f64::INFINITY
    }
}

/// `hat s_a = mean over x in A of e^{d(x, a)} s_x`.
pub fn reconstruct_signature(
    leaf_sigs: &HashMap<NodeId, SignatureVector>,
    leaves: &[NodeId],
    dists: &KnownDistances,
    a: NodeId,
) -> Result<SignatureVector> {
    let first = leaves
        .first()
        .ok_or_else(|| Error::Degenerate(format!("node {a} has no leaves")))?;
    let len = leaf_sigs.get(first).ok_or(Error::UnknownNode(*first))?.values.len();
    let mut acc = vec![0.0; len];
    for &x in leaves {
        let s = leaf_sigs.get(&x).ok_or(Error::UnknownNode(x))?;
        if s.values.len() != len {
            return Err(Error::MismatchedBlocks {
                left: len,
                right: s.values.len(),
            });
        }
        let w = dists.get(a, x)?.exp();
        for (t, v) in acc.iter_mut().zip(&s.values) {
            *t += w * v;
        }
    }
    let n = leaves.len() as f64;
    acc.iter_mut().for_each(|t| *t /= n);
    Ok(SignatureVector {
        node: a,
        values: acc,
        block_len: 0,
        mode: SigMode::Reconstructed,
    })
}

/// `-(d_a + d_b) - ln(4 c)`, or `+inf` for a non-positive correlation.
pub fn pair_estimate(chat: f64, d_aj_a: f64, d_bj_b: f64) -> f64 {
    if chat > 0.0 {
        -(d_aj_a + d_bj_b) - (4.0 * chat).ln()
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeepAggregate {
    pub winner: usize,
    pub estimate: f64,
    pub radii: Vec<f64>,
}

fn gap(x: f64, y: f64) -> f64 {
    match (x.is_finite(), y.is_finite()) {
        (true, true) => (x - y).abs(),
        (false, false) => 0.0,
        _ => f64::INFINITY,
    }
}

/// Number of other entries an interval around `e_j` must capture:
/// `ceil(2m/3)`, capped at `m - 1`.
pub fn radius_threshold(m: usize) -> usize {
    (2 * m).div_ceil(3).min(m.saturating_sub(1))
}

/// Median-radius aggregation. `r_j` is the smallest radius around entry `j`
/// that captures the threshold number of other entries; the entry with the
/// smallest radius wins (lowest index on ties). Infinite entries count toward
/// `m`.
pub fn aggregate_deep(entries: &[f64]) -> Result<DeepAggregate> {
    if entries.is_empty() {
        return Err(Error::Degenerate("no deep estimates".into()));
    }
    if entries.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite);
    }
    if entries.iter().all(|x| x.is_infinite()) {
        return Err(Error::AllInfinite);
    }
    let m = entries.len();
    let t = radius_threshold(m);
    let mut radii = Vec::with_capacity(m);
    let mut others = Vec::with_capacity(m);
    for (j, &e) in entries.iter().enumerate() {
        others.clear();
        others.extend(
            entries
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .map(|(_, &x)| gap(e, x)),
        );
        others.sort_by(f64::total_cmp);
        radii.push(if t == 0 { 0.0 } else { others[t - 1] });
    }
    let mut winner = 0;
    for j in 1..m {
        if radii[j] < radii[winner] {
            winner = j;
        }
    }
    Ok(DeepAggregate {
        winner,
        estimate: entries[winner],
        radii,
    })
}

/// `1` iff at least `ceil(m/2)` entries have `|e| <= r`.
pub fn diameter_test(entries: &[f64], r: f64) -> bool {
    let hits = entries.iter().filter(|e| e.abs() <= r).count();
    hits >= entries.len().div_ceil(2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeepEstimateSet {
    pub pair: (NodeId, NodeId),
    pub offset: usize,
    pub entries: Vec<f64>,
    pub radii: Vec<f64>,
    pub winner: usize,
    pub estimate: f64,
}

/// Descendants of `a` and `b` at `offset` levels, matched by BFS index.
pub fn matched_descendants<H: Hierarchy + ?Sized>(
    hier: &H,
    a: NodeId,
    b: NodeId,
    offset: usize,
) -> Result<Vec<(NodeId, NodeId)>> {
    let da = hier.descendants_at(a, offset);
    let db = hier.descendants_at(b, offset);
    if da.len() < (1 << offset) {
        return Err(Error::InsufficientDepth { node: a, offset });
    }
    if db.len() < (1 << offset) {
        return Err(Error::InsufficientDepth { node: b, offset });
    }
    Ok(da.into_iter().zip(db).collect())
}

/// Deep estimate from a correlation function over matched descendants.
pub fn deep_estimate_with<H, F>(
    hier: &H,
    dists: &KnownDistances,
    a: NodeId,
    b: NodeId,
    offset: usize,
    mut corr: F,
) -> Result<DeepEstimateSet>
where
    H: Hierarchy + ?Sized,
    F: FnMut(NodeId, NodeId) -> Result<f64>,
{
    let pairs = matched_descendants(hier, a, b, offset)?;
    let mut entries = Vec::with_capacity(pairs.len());
    for (aj, bj) in pairs {
        let c = corr(aj, bj)?;
        entries.push(pair_estimate(c, dists.get(a, aj)?, dists.get(b, bj)?));
    }
    let agg = aggregate_deep(&entries)?;
    Ok(DeepEstimateSet {
        pair: (a, b),
        offset,
        entries,
        radii: agg.radii,
        winner: agg.winner,
        estimate: agg.estimate,
    })
}

/// Deep distance between `a` and `b` from leaf signatures.
pub fn deep_distance<H: Hierarchy + ?Sized>(
    hier: &H,
    a: NodeId,
    b: NodeId,
    offset: usize,
    leaf_sigs: &HashMap<NodeId, SignatureVector>,
    dists: &KnownDistances,
) -> Result<DeepEstimateSet> {
    let mut cache: HashMap<NodeId, SignatureVector> = HashMap::new();
    let mut hat = |v: NodeId| -> Result<SignatureVector> {
        if let Some(s) = cache.get(&v) {
            return Ok(s.clone());
        }
        let s = reconstruct_signature(leaf_sigs, &hier.leaves_below(v), dists, v)?;
        cache.insert(v, s.clone());
        Ok(s)
    };
    deep_estimate_with(hier, dists, a, b, offset, |x, y| {
        Ok(deep_correlation(&hat(x)?, &hat(y)?)?.value)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(node: NodeId, values: Vec<f64>) -> SignatureVector {
        SignatureVector {
            node,
            values,
            block_len: 4,
            mode: SigMode::TrueBlock,
        }
    }

    #[test]
    fn shallow_examples() {
        let a = sv(0, vec![1.0, 9.0, -1.0, 9.0]);
        let b = sv(1, vec![1.0, -7.0, -1.0, 3.0]);
        let c = shallow_correlation(&a, &b).unwrap();
        assert_eq!(c.value, 1.0);
        assert_eq!(c.source, SigSource::TrueSig);
        let z = sv(2, vec![0.0; 4]);
        assert_eq!(shallow_correlation(&a, &z).unwrap().value, 0.0);
        assert!(matches!(
            shallow_correlation(&a, &sv(3, vec![0.0; 6])),
            Err(Error::MismatchedBlocks { left: 4, right: 6 })
        ));
    }

    #[test]
    fn distance_transform() {
        let c = |v| CorrelationEstimate {
            value: v,
            source: SigSource::TrueSig,
            pair: (0, 1),
        };
        assert_eq!(shallow_distance(&c(0.25)).unwrap(), 0.0);
        assert!((shallow_distance(&c(0.25 / std::f64::consts::E)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(shallow_distance(&c(0.0)), Err(Error::OutOfRange(_))));
        assert_eq!(distance_or_inf(-0.1), f64::INFINITY);
    }

    #[test]
    fn reconstruct_examples() {
        let mut sigs = HashMap::new();
        sigs.insert(1, sv(1, vec![0.6, 0.1]));
        sigs.insert(2, sv(2, vec![0.2, 0.3]));
        let mut kd = KnownDistances::new();
        let ln2 = std::f64::consts::LN_2;
        kd.insert(0, 1, ln2);
        kd.insert(0, 2, ln2);
        let s = reconstruct_signature(&sigs, &[1, 2], &kd, 0).unwrap();
        assert!((s.values[0] - 0.8).abs() < 1e-12);
        let same = reconstruct_signature(&sigs, &[1], &kd, 1).unwrap();
        assert_eq!(same.values, sigs[&1].values);
        assert!(matches!(
            reconstruct_signature(&sigs, &[1], &kd, 5),
            Err(Error::MissingDistance { ancestor: 5, descendant: 1 })
        ));
    }

    #[test]
    fn pair_estimate_examples() {
        let v = pair_estimate(0.05, 0.5, 0.5);
        // -ln(e * 0.2) = ln 5 - 1
        assert!((v - (5f64.ln() - 1.0)).abs() < 1e-12);
        assert!((v - 0.609_437_912_434_100_4).abs() < 1e-12);
        assert_eq!(pair_estimate(0.25, 0.0, 0.0), 0.0);
        assert_eq!(pair_estimate(0.0, 0.0, 0.0), f64::INFINITY);
        assert_eq!(pair_estimate(-1.0, 0.0, 0.0), f64::INFINITY);
    }

    fn brute_radius(entries: &[f64], j: usize) -> f64 {
        // smallest candidate radius (taken from the pairwise gaps) that
        // captures ceil(2m/3) others, capped at m-1
        let m = entries.len();
        let need = (2 * m).div_ceil(3).min(m - 1);
        let mut cands: Vec<f64> = vec![0.0];
        for i in 0..m {
            if i != j {
                cands.push(gap(entries[j], entries[i]));
            }
        }
        cands.sort_by(f64::total_cmp);
        for r in cands {
            let c = (0..m).filter(|&i| i != j && gap(entries[j], entries[i]) <= r).count();
            if c >= need {
                return r;
            }
        }
        f64::INFINITY
    }

    #[test]
    fn aggregate_examples() {
        let e = [1.00, 1.02, 0.98, 5.00];
        let a = aggregate_deep(&e).unwrap();
        assert_eq!(a.winner, 1);
        assert_eq!(a.estimate, 1.02);
        for j in 0..4 {
            assert!((a.radii[j] - brute_radius(&e, j)).abs() < 1e-12);
        }
        assert!((a.radii[0] - 4.0).abs() < 1e-12);
        assert!((a.radii[1] - 3.98).abs() < 1e-12);
        assert!((a.radii[2] - 4.02).abs() < 1e-12);
        assert!((a.radii[3] - 4.02).abs() < 1e-12);

        let a = aggregate_deep(&[0.7; 5]).unwrap();
        assert_eq!((a.winner, a.estimate), (0, 0.7));
        assert!(a.radii.iter().all(|&r| r == 0.0));

        let a = aggregate_deep(&[0.0, 0.0, 0.0, 9.0]).unwrap();
        assert_eq!((a.winner, a.estimate), (0, 0.0));
        assert_eq!(a.radii, vec![9.0, 9.0, 9.0, 9.0]);

        assert!(matches!(aggregate_deep(&[f64::INFINITY; 3]), Err(Error::AllInfinite)));
        let inf = f64::INFINITY;
        let a = aggregate_deep(&[inf, 1.0, 1.1, 1.05, 1.02, 0.99, 1.01, 1.03, inf]).unwrap();
        assert!(a.estimate.is_finite());
        assert_eq!(a.radii[0], inf);
        // too few finite entries to reach the threshold: everything ties at
        // +inf and the lowest index wins
        let a = aggregate_deep(&[inf, 1.0, 1.1, inf]).unwrap();
        assert_eq!((a.winner, a.estimate), (0, inf));
    }

    #[test]
    fn diameter_examples() {
        let e = [0.5, 0.7, 5.0, 6.0];
        assert!(diameter_test(&e, 1.0));
        assert!(!diameter_test(&e, 0.4));
        assert!(diameter_test(&[0.1], 0.2));
        assert!(!diameter_test(&[f64::INFINITY, f64::INFINITY, 0.1], 1.0));
    }

    #[test]
    fn threshold_values() {
        assert_eq!(radius_threshold(4), 3);
        assert_eq!(radius_threshold(3), 2);
        assert_eq!(radius_threshold(2), 1);
        assert_eq!(radius_threshold(1), 0);
        assert_eq!(radius_threshold(8), 6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aggregate_matches_brute_force(e in proptest::collection::vec(-3.0..3.0f64, 3..12)) {
                let a = aggregate_deep(&e).unwrap();
                for j in 0..e.len() {
                    prop_assert!((a.radii[j] - brute_radius(&e, j)).abs() < 1e-12);
                }
                let best = a.radii.iter().copied().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(a.radii[a.winner], best);
                prop_assert!(a.radii[..a.winner].iter().all(|&r| r > best));
            }

            #[test]
            fn aggregate_shift_equivariant(e in proptest::collection::vec(-3.0..3.0f64, 3..12), c in -2.0..2.0f64) {
                // use a dyadic shift so subtraction stays exact
                let c = (c * 64.0).round() / 64.0;
                let e: Vec<f64> = e.iter().map(|x| (x * 64.0).round() / 64.0).collect();
                let a = aggregate_deep(&e).unwrap();
                let shifted: Vec<f64> = e.iter().map(|x| x + c).collect();
                let b = aggregate_deep(&shifted).unwrap();
                prop_assert_eq!(b.winner, a.winner);
                prop_assert!((b.estimate - (a.estimate + c)).abs() < 1e-12);
            }

            #[test]
            fn aggregate_permutation_invariant(e in proptest::collection::vec(-3.0..3.0f64, 3..10), rot in 0usize..10) {
                let a = aggregate_deep(&e).unwrap();
                let mut p = e.clone();
                p.rotate_left(rot % e.len());
                let b = aggregate_deep(&p).unwrap();
                // the winning radius is permutation invariant; with distinct
                // values and no radius tie the estimate is too
                let best = |x: &DeepAggregate| x.radii[x.winner];
                prop_assert!((best(&a) - best(&b)).abs() < 1e-12);
                let ties = a.radii.iter().filter(|&&r| (r - best(&a)).abs() < 1e-12).count();
                if ties == 1 {
                    prop_assert_eq!(a.estimate, b.estimate);
                }
            }

            #[test]
            fn pair_estimate_identity(c in 1e-6..1.0f64, x in 0.0..3.0f64, y in 0.0..3.0f64) {
                let lhs = pair_estimate(c, x, y) + x + y;
                prop_assert!((lhs - pair_estimate(c, 0.0, 0.0)).abs() < 1e-12);
            }

            #[test]
            fn shallow_symmetric(v in proptest::collection::vec(-2.0..2.0f64, 8), w in proptest::collection::vec(-2.0..2.0f64, 8)) {
                let a = sv(0, v);
                let b = sv(1, w);
                prop_assert_eq!(
                    shallow_correlation(&a, &b).unwrap().value,
                    shallow_correlation(&b, &a).unwrap().value
                );
            }
        }
    }
}
