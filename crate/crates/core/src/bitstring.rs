//! Packed bitstrings.
//!
//! Bits are stored LSB-first in `u64` words; bit `i` lives in word `i / 64`
//! at position `i % 64`. Bits past `len` in the last word are always zero.

use std::fmt;

use rand::RngCore;

use crate::error::{Error, Result};

const WORD: usize = 64;

#[inline]
fn low_mask(n: usize) -> u64 {
    if n >= WORD {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Bitstring {
    words: Vec<u64>,
    len: usize,
}

impl Bitstring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            words: Vec::with_capacity(bits.div_ceil(WORD)),
            len: 0,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(WORD)],
            len,
        }
    }

    /// Uniformly random bitstring of the given length.
    pub fn random<R: RngCore + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut words: Vec<u64> = (0..len.div_ceil(WORD)).map(|_| rng.next_u64()).collect();
        if let Some(last) = words.last_mut() {
            let tail = len % WORD;
            if tail != 0 {
                *last &= low_mask(tail);
            }
        }
        Self { words, len }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = Self::new();
        for b in bits {
            out.push(b);
        }
        out
    }

    /// Parses an ASCII string of `0` and `1` characters.
    pub fn from_ascii(s: &str) -> Result<Self> {
        let mut out = Self::with_capacity(s.len());
        for (i, c) in s.bytes().enumerate() {
            match c {
                b'0' => out.push(false),
                b'1' => out.push(true),
                _ => {
                    return Err(Error::Parse {
                        line: 0,
                        msg: format!("invalid bit character {:?} at column {}", c as char, i + 1),
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn to_ascii(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let w = &mut self.words[i / WORD];
        let m = 1u64 << (i % WORD);
        if bit {
            *w |= m;
        } else {
            *w &= !m;
        }
    }

    #[inline]
    pub fn toggle(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    /// XORs `mask` into word `w`, keeping bits beyond `len` clear.
    #[inline]
    pub(crate) fn xor_word(&mut self, w: usize, mask: u64) {
        let last = self.words.len() - 1;
        let mask = if w == last && !self.len.is_multiple_of(WORD) {
            mask & low_mask(self.len % WORD)
        } else {
            mask
        };
        self.words[w] ^= mask;
    }

    #[inline]
    pub fn push(&mut self, bit: bool) {
        self.push_bits(bit as u64, 1);
    }

    /// Appends the low `n` bits of `bits` (`n <= 64`).
    #[inline]
    pub fn push_bits(&mut self, bits: u64, n: usize) {
        debug_assert!(n <= WORD);
        if n == 0 {
            return;
        }
        let bits = bits & low_mask(n);
        let off = self.len % WORD;
        if off == 0 {
            self.words.push(bits);
        } else {
            let last = self.words.len() - 1;
            self.words[last] |= bits << off;
            if off + n > WORD {
                self.words.push(bits >> (WORD - off));
            }
        }
        self.len += n;
    }

    /// Reads `n <= 64` bits starting at `start`, LSB-first.
    #[inline]
    pub fn read_bits(&self, start: usize, n: usize) -> u64 {
        debug_assert!(n <= WORD && start + n <= self.len);
        if n == 0 {
            return 0;
        }
        let w = start / WORD;
        let off = start % WORD;
        let mut v = self.words[w] >> off;
        if off + n > WORD {
            v |= self.words[w + 1] << (WORD - off);
        }
        v & low_mask(n)
    }

    /// Appends `other[start..start + len]`.
    pub fn extend_from_range(&mut self, other: &Bitstring, start: usize, len: usize) {
        assert!(start + len <= other.len, "range past end of source");
        self.words.reserve((len / WORD) + 1);
        let mut pos = start;
        let end = start + len;
        while pos + WORD <= end {
            self.push_bits(other.read_bits(pos, WORD), WORD);
            pos += WORD;
        }
        if pos < end {
            self.push_bits(other.read_bits(pos, end - pos), end - pos);
        }
    }

    /// Number of one bits in `[start, end)`.
    pub fn count_ones_range(&self, start: usize, end: usize) -> usize {
        assert!(start <= end && end <= self.len, "range out of bounds");
        if start == end {
            return 0;
        }
        let (ws, we) = (start / WORD, (end - 1) / WORD);
        let head = !low_mask(start % WORD);
        let tail = low_mask(end - we * WORD);
        if ws == we {
            return (self.words[ws] & head & tail).count_ones() as usize;
        }
        let mut ones = (self.words[ws] & head).count_ones() as usize;
        for w in &self.words[ws + 1..we] {
            ones += w.count_ones() as usize;
        }
        ones + (self.words[we] & tail).count_ones() as usize
    }

    /// Number of zero bits in `[start, end)`.
    pub fn count_zeros_range(&self, start: usize, end: usize) -> usize {
        (end - start) - self.count_ones_range(start, end)
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

impl fmt::Debug for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "Bitstring({})", self.to_ascii())
        } else {
            write!(f, "Bitstring(len={})", self.len)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascii_and_counts() {
        let b = Bitstring::from_ascii("0001").unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.count_zeros_range(0, 4), 3);
        assert_eq!(b.to_ascii(), "0001");
        assert!(Bitstring::from_ascii("01x").is_err());
    }

    #[test]
    fn push_bits_across_words() {
        let mut b = Bitstring::new();
        b.push_bits(0b101, 3);
        b.push_bits(u64::MAX, 64);
        assert_eq!(b.len(), 67);
        assert_eq!(b.count_ones_range(0, 67), 66);
        assert!(!b.get(1));
        assert_eq!(b.read_bits(3, 64), u64::MAX);
    }

    #[test]
    fn toggle_and_set() {
        let mut b = Bitstring::zeros(70);
        b.toggle(65);
        b.set(3, true);
        assert_eq!(b.count_ones_range(0, 70), 2);
        b.set(3, false);
        assert_eq!(b.count_ones_range(0, 70), 1);
    }

    proptest! {
        #[test]
        fn packed_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..300)) {
            let b = Bitstring::from_bits(bits.iter().copied());
            prop_assert_eq!(b.iter().collect::<Vec<_>>(), bits.clone());
            let s = b.to_ascii();
            prop_assert_eq!(Bitstring::from_ascii(&s).unwrap(), b);
        }

        #[test]
        fn range_copy_and_count(bits in proptest::collection::vec(any::<bool>(), 1..400),
                                a in 0usize..400, b in 0usize..400) {
            let src = Bitstring::from_bits(bits.iter().copied());
            let (mut lo, mut hi) = (a.min(b), a.max(b));
            lo = lo.min(bits.len());
            hi = hi.min(bits.len());
            let mut dst = Bitstring::from_ascii("1").unwrap();
            dst.extend_from_range(&src, lo, hi - lo);
            let mut expect = vec![true];
            expect.extend_from_slice(&bits[lo..hi]);
            prop_assert_eq!(dst.iter().collect::<Vec<_>>(), expect);
            let ones = bits[lo..hi].iter().filter(|&&x| x).count();
            prop_assert_eq!(src.count_ones_range(lo, hi), ones);
        }
    }
}
