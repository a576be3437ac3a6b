//! Fixed-width column bit masks (one bit per crossbar column / TG).

use std::fmt;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    len: usize,
    words: Vec<u64>,
}

impl Mask {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut m = Self::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.set(i);
            }
        }
        m
    }

    /// Sets bit `i` wherever `f(i)` holds.
    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut m = Self::empty(len);
        for (wi, w) in m.words.iter_mut().enumerate() {
            let base = wi * 64;
            for b in 0..(len - base).min(64) {
                *w |= u64::from(f(base + b)) << b;
            }
        }
        m
    }

    /// Wraps raw words, least significant column first; bits at or above
    /// `len` must be clear.
    pub(crate) fn from_words(len: usize, words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), len.div_ceil(64));
        Self { len, words }
    }

    /// Builds a mask from 0/1 values; any nonzero entry sets the bit.
    pub fn from_bits<T: Copy + Into<i64>>(bits: &[T]) -> Self {
        let mut m = Self::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b.into() != 0 {
                m.set(i);
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} outside mask of width {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_disjoint(&self, other: &Mask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    /// First column set in both masks.
    pub fn first_overlap(&self, other: &Mask) -> Option<usize> {
        self.words
            .iter()
            .zip(&other.words)
            .enumerate()
            .find(|(_, (a, b))| *a & *b != 0)
            .map(|(wi, (a, b))| wi * 64 + (a & b).trailing_zeros() as usize)
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    /// Hex string, most significant column first, `ceil(len/4)` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4).max(1);
        (0..digits)
            .rev()
            .map(|d| {
                let nibble =
                    (0..4).fold(0u32, |acc, b| acc | (u32::from(self.get(d * 4 + b)) << b));
                char::from_digit(nibble, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(hex: &str, len: usize) -> Option<Self> {
        let mut m = Self::empty(len);
        for (d, ch) in hex.chars().rev().enumerate() {
            let nibble = ch.to_digit(16)?;
            for b in 0..4 {
                if nibble >> b & 1 == 1 {
                    let i = d * 4 + b;
                    if i >= len {
                        return None;
                    }
                    m.set(i);
                }
            }
        }
        Some(m)
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mask({}:{})", self.len, self.to_hex())
    }
}
