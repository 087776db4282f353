//! Block signatures.
//!
//! A bitstring is cut into `L` consecutive blocks; the signature of block `i`
//! is the excess of zeros over half the block length, scaled by the square
//! root of the block length. Block indices are 1-based throughout.

use std::fmt::Write as _;

use serde::Serialize;

use crate::bitstring::Bitstring;
use crate::error::{Error, Result};
use crate::tree::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockScheme {
    pub k: usize,
    pub zeta: f64,
    /// Block length `floor(k^(1/2 + zeta))`.
    pub l: usize,
    /// Block count `floor(k / l)`, rounded down to an even number.
    pub big_l: usize,
}

/// `floor(x)` that tolerates `powf` landing a hair below an exact integer.
fn robust_floor(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

impl BlockScheme {
    pub fn new(k: usize, zeta: f64) -> Result<Self> {
        if !(zeta > 0.0 && zeta < 0.5) {
            return Err(Error::Domain(format!("zeta = {zeta} not in (0, 1/2)")));
        }
        if k < 4 {
            return Err(Error::Domain(format!("k = {k} is too small for two blocks")));
        }
        let l = robust_floor((k as f64).powf(0.5 + zeta)).max(1);
        let big_l = (k / l) & !1;
        if big_l < 2 {
            return Err(Error::Domain(format!(
                "k = {k}, zeta = {zeta} gives fewer than two blocks"
            )));
        }
        Ok(Self { k, zeta, l, big_l })
    }

    /// Bits used by the scheme, `L * l`.
    pub fn span(&self) -> usize {
        self.l * self.big_l
    }

    pub fn odd_blocks(&self) -> usize {
        self.big_l / 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigMode {
    TrueBlock,
    ScaledBlock,
    PseudoBlock,
    Reconstructed,
}

impl SigMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SigMode::TrueBlock => "true-block",
            SigMode::ScaledBlock => "scaled-block",
            SigMode::PseudoBlock => "pseudo-block",
            SigMode::Reconstructed => "reconstructed",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignatureVector {
    pub node: NodeId,
    /// `values[i - 1]` is the signature of block `i`.
    pub values: Vec<f64>,
    pub block_len: usize,
    pub mode: SigMode,
}

impl SignatureVector {
    pub fn block_count(&self) -> usize {
        self.values.len()
    }

    /// Values at blocks 1, 3, ..., L-1.
    pub fn odd_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().step_by(2).copied()
    }

    /// One dump line: `node<TAB>mode<TAB>v1,v2,...`.
    pub fn dump_line(&self) -> String {
        let mut s = format!("{}\t{}\t", self.node, self.mode.as_str());
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s
    }
}

/// Signature of block `i` (1-based) with block length `block_len`.
pub fn block_signature(bits: &Bitstring, block_len: usize, i: usize) -> Result<f64> {
    if block_len == 0 || i == 0 {
        return Err(Error::Domain("block length and index must be positive".into()));
    }
    let end = i * block_len;
    if end > bits.len() {
        return Err(Error::InsufficientLength {
            needed: end,
            available: bits.len(),
        });
    }
    let zeros = bits.count_zeros_range(end - block_len, end) as f64;
    Ok((zeros - block_len as f64 / 2.0) / (block_len as f64).sqrt())
}

/// Signature of block `i` under `scheme`.
pub fn signature(bits: &Bitstring, scheme: &BlockScheme, i: usize) -> Result<f64> {
    block_signature(bits, scheme.l, i)
}

/// Pseudo-block length `floor(len / L)` for a leaf.
pub fn pseudo_block_len(len: usize, big_l: usize) -> Result<usize> {
    if big_l == 0 || big_l > len {
        return Err(Error::InsufficientLength {
            needed: big_l.max(1),
            available: len,
        });
    }
    Ok(len / big_l)
}

/// Signature of pseudo-block `i`, where the leaf is cut into `L` equal blocks.
pub fn leaf_pseudo_signature(bits: &Bitstring, big_l: usize, i: usize) -> Result<f64> {
    block_signature(bits, pseudo_block_len(bits.len(), big_l)?, i)
}

/// Signature of block `i` with a per-node block length, as used when the
/// expected drift of the node's length is known.
pub fn internal_block_signature(bits: &Bitstring, l_a: usize, i: usize) -> Result<f64> {
    block_signature(bits, l_a, i)
}

/// Per-node block length `floor(l_r * eta)`.
pub fn scaled_block_len(l_r: usize, eta: f64) -> usize {
    robust_floor(l_r as f64 * eta)
}

fn vector(node: NodeId, bits: &Bitstring, block_len: usize, big_l: usize, mode: SigMode) -> Result<SignatureVector> {
    let needed = block_len * big_l;
    if block_len == 0 || needed > bits.len() {
        return Err(Error::InsufficientLength {
            needed: needed.max(1),
            available: bits.len(),
        });
    }
    let values = (1..=big_l)
        .map(|i| block_signature(bits, block_len, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SignatureVector {
        node,
        values,
        block_len,
        mode,
    })
}

/// All `L` true-block signatures of a node.
pub fn signature_vector(node: NodeId, bits: &Bitstring, scheme: &BlockScheme) -> Result<SignatureVector> {
    vector(node, bits, scheme.l, scheme.big_l, SigMode::TrueBlock)
}

/// All `L` pseudo-block signatures of a leaf.
pub fn pseudo_signature_vector(node: NodeId, bits: &Bitstring, big_l: usize) -> Result<SignatureVector> {
    let lp = pseudo_block_len(bits.len(), big_l)?;
    vector(node, bits, lp, big_l, SigMode::PseudoBlock)
}

/// All `L` signatures with a per-node block length `l_a`.
pub fn scaled_signature_vector(node: NodeId, bits: &Bitstring, l_a: usize, big_l: usize) -> Result<SignatureVector> {
    vector(node, bits, l_a, big_l, SigMode::ScaledBlock)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> Bitstring {
        Bitstring::from_ascii(s).unwrap()
    }

    #[test]
    fn scheme_arithmetic() {
        let s = BlockScheme::new(10_000, 0.25).unwrap();
        assert_eq!((s.l, s.big_l), (1000, 10));
        let s = BlockScheme::new(16, 0.25).unwrap();
        assert_eq!((s.l, s.big_l), (8, 2));
        let s = BlockScheme::new(4, 0.25).unwrap();
        assert_eq!((s.l, s.big_l), (2, 2));
        // L = floor(100000 / 5623) = 17 becomes 16
        let s = BlockScheme::new(100_000, 0.25).unwrap();
        assert_eq!((s.l, s.big_l), (5623, 16));
        assert!(BlockScheme::new(3, 0.25).is_err());
        assert!(BlockScheme::new(100, 0.5).is_err());
        assert!(BlockScheme::new(5, 0.45).is_err());
    }

    #[test]
    fn block_examples() {
        assert_eq!(block_signature(&bits("0000"), 4, 1).unwrap(), 1.0);
        assert_eq!(block_signature(&bits("0110"), 4, 1).unwrap(), 0.0);
        assert_eq!(block_signature(&bits("0001"), 4, 1).unwrap(), 0.5);
        match block_signature(&bits("000"), 4, 1) {
            Err(Error::InsufficientLength { needed: 4, available: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pseudo_blocks() {
        // block 2 covers positions 5..8 (1-based)
        let b = bits("111100001111");
        assert_eq!(pseudo_block_len(12, 3).unwrap(), 4);
        assert_eq!(leaf_pseudo_signature(&b, 3, 2).unwrap(), 1.0);
        assert_eq!(leaf_pseudo_signature(&b, 3, 1).unwrap(), -1.0);
        let z = Bitstring::zeros(40);
        let v = pseudo_signature_vector(0, &z, 4).unwrap();
        assert!(v.values.iter().all(|&x| (x - (10f64).sqrt() / 2.0).abs() < 1e-12));
        assert!(leaf_pseudo_signature(&bits("01"), 3, 1).is_err());
    }

    #[test]
    fn pseudo_equals_true_at_nominal_length() {
        let scheme = BlockScheme::new(10_000, 0.25).unwrap();
        let mut rng = crate::rng::RngStream::new(1, 0);
        let b = Bitstring::random(scheme.span(), &mut rng);
        let t = signature_vector(0, &b, &scheme).unwrap();
        let p = pseudo_signature_vector(0, &b, scheme.big_l).unwrap();
        assert_eq!(t.values, p.values);
        assert_eq!(scaled_block_len(100, 1.21), 121);
        let s = scaled_signature_vector(0, &b, scheme.l, scheme.big_l).unwrap();
        assert_eq!(s.values, t.values);
    }

    #[test]
    fn dump_format() {
        let v = SignatureVector {
            node: 3,
            values: vec![0.5, -1.0],
            block_len: 4,
            mode: SigMode::PseudoBlock,
        };
        assert_eq!(v.dump_line(), "3\tpseudo-block\t0.5,-1");
        assert_eq!(v.odd_values().collect::<Vec<_>>(), vec![0.5]);
    }

    #[test]
    fn uniform_moments() {
        let mut rng = crate::rng::RngStream::new(2, 0);
        let l = 400;
        let n = 20_000;
        let b = Bitstring::random(l * n, &mut rng);
        let s: Vec<f64> = (1..=n).map(|i| block_signature(&b, l, i).unwrap()).collect();
        let mean = s.iter().sum::<f64>() / n as f64;
        let m2 = s.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // E[s] = 0, Var[s] = 1/4, Var[s^2] ~ 2/16
        assert!(mean.abs() < 5.0 * (0.25 / n as f64).sqrt());
        assert!((m2 - 0.25).abs() < 5.0 * (0.125 / n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn hard_bound_and_permutation_invariance(raw in proptest::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
            let l = raw.len();
            let b = Bitstring::from_bits(raw.iter().copied());
            let s = block_signature(&b, l, 1).unwrap();
            prop_assert!(s.abs() <= (l as f64).sqrt() / 2.0 + 1e-12);
            let mut shuffled = raw.clone();
            let mut x = seed;
            for i in (1..shuffled.len()).rev() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (x >> 33) as usize % (i + 1));
            }
            let p = Bitstring::from_bits(shuffled);
            prop_assert_eq!(block_signature(&p, l, 1).unwrap(), s);
        }
    }
}
