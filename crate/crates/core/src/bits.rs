//! Fixed-width packed bit arrays.
//!
//! Bit `0` is the most significant bit of the first 64-bit storage word, so
//! the hex rendering of a hash reads bits in index order, four per nibble.
//! Storage bits past the declared width are always zero.

use std::fmt;

use crate::error::{Error, Result};

/// Largest supported hash width in bits.
pub const MAX_WIDTH: usize = 1024;

/// Number of 64-bit words needed to store `width` bits.
#[inline]
pub fn words_for(width: usize) -> usize {
    width.div_ceil(64)
}

/// Checks that `width` is a valid hash width: a positive multiple of 8 no
/// larger than [`MAX_WIDTH`]. Hex, trace and codebook formats require this.
pub fn check_width(width: usize) -> Result<()> {
    if width % 8 != 0 {
        return Err(Error::UnsupportedWidth(width));
    }
    check_len(width)
}

/// In-memory bit arrays accept any width in `1..=MAX_WIDTH`.
fn check_len(width: usize) -> Result<()> {
    if width == 0 || width > MAX_WIDTH {
        return Err(Error::UnsupportedWidth(width));
    }
    Ok(())
}

#[inline]
fn bit_of(words: &[u64], i: usize) -> bool {
    (words[i / 64] >> (63 - i % 64)) & 1 == 1
}

/// Hamming distance between two equal-length word slices.
#[inline]
pub fn xor_popcount(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Number of positions set in `a ^ b` that are also set in `mask`.
#[inline]
pub fn xor_masked_popcount(a: &[u64], b: &[u64], mask: &[u64]) -> u32 {
    a.iter()
        .zip(b)
        .zip(mask)
        .map(|((x, y), m)| ((x ^ y) & m).count_ones())
        .sum()
}

/// A binary hash of a fixed width `d`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitHash {
    width: usize,
    words: Box<[u64]>,
}

impl BitHash {
    /// All-zero hash of the given width.
    pub fn zeros(width: usize) -> Result<Self> {
        check_len(width)?;
        Ok(Self {
            width,
            words: vec![0; words_for(width)].into_boxed_slice(),
        })
    }

    /// All-one hash of the given width.
    pub fn ones(width: usize) -> Result<Self> {
        let mut h = Self::zeros(width)?;
        h.words.iter_mut().for_each(|w| *w = u64::MAX);
        h.clear_tail();
        Ok(h)
    }

    /// Builds a hash from storage words. Bits past `width` must be zero.
    pub fn from_words(width: usize, words: Vec<u64>) -> Result<Self> {
        check_len(width)?;
        if words.len() != words_for(width) {
            return Err(Error::WidthMismatch {
                left: width,
                right: words.len() * 64,
            });
        }
        let h = Self {
            width,
            words: words.into_boxed_slice(),
        };
        if h.tail_dirty() {
            return Err(Error::InvalidHex(format!(
                "bits set beyond width {}",
                width
            )));
        }
        Ok(h)
    }

    /// Builds a hash from one boolean per bit, index order.
    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let mut h = Self::zeros(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            h.set(i, b);
        }
        Ok(h)
    }

    /// Builds a hash from `width / 8` bytes, bit 0 being the MSB of byte 0.
    pub fn from_be_bytes(width: usize, bytes: &[u8]) -> Result<Self> {
        check_width(width)?;
        if bytes.len() != width / 8 {
            return Err(Error::WidthMismatch {
                left: width,
                right: bytes.len() * 8,
            });
        }
        let mut words = vec![0u64; words_for(width)];
        for (i, &b) in bytes.iter().enumerate() {
            words[i / 8] |= (b as u64) << (56 - 8 * (i % 8));
        }
        Ok(Self {
            width,
            words: words.into_boxed_slice(),
        })
    }

    /// Writes the `width / 8` big-endian bytes of this hash.
    pub fn write_be_bytes(&self, out: &mut Vec<u8>) {
        for i in 0..self.width / 8 {
            out.push((self.words[i / 8] >> (56 - 8 * (i % 8))) as u8);
        }
    }

    /// Parses a lowercase or uppercase hex string of exactly `width / 4` digits.
    pub fn from_hex(width: usize, s: &str) -> Result<Self> {
        check_width(width)?;
        if s.len() != width / 4 {
            return Err(Error::InvalidHex(format!(
                "expected {} hex digits for {} bits, got {}",
                width / 4,
                width,
                s.len()
            )));
        }
        let mut words = vec![0u64; words_for(width)];
        for (i, c) in s.bytes().enumerate() {
            let nibble = (c as char)
                .to_digit(16)
                .ok_or_else(|| Error::InvalidHex(format!("bad digit {:?}", c as char)))?;
            words[i / 16] |= (nibble as u64) << (60 - 4 * (i % 16));
        }
        Ok(Self {
            width,
            words: words.into_boxed_slice(),
        })
    }

    /// Lowercase hex, zero-padded to `width / 4` digits (rounded up).
    pub fn to_hex(&self) -> String {
        let digits = self.width.div_ceil(4);
        let mut s = String::with_capacity(digits);
        for i in 0..digits {
            let nibble = (self.words[i / 16] >> (60 - 4 * (i % 16))) & 0xf;
            s.push(char::from_digit(nibble as u32, 16).unwrap());
        }
        s
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.width, "bit {} out of range for width {}", i, self.width);
        bit_of(&self.words, i)
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.width, "bit {} out of range for width {}", i, self.width);
        let bit = 1u64 << (63 - i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.width, "bit {} out of range for width {}", i, self.width);
        self.words[i / 64] ^= 1u64 << (63 - i % 64);
    }

    pub fn iter_bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.width).map(move |i| bit_of(&self.words, i))
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &BitHash) -> Result<BitHash> {
        self.check_same_width(other.width)?;
        let words = self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| a ^ b)
            .collect();
        Ok(BitHash {
            width: self.width,
            words,
        })
    }

    pub fn complement(&self) -> BitHash {
        let mut h = BitHash {
            width: self.width,
            words: self.words.iter().map(|w| !w).collect(),
        };
        h.clear_tail();
        h
    }

    /// Number of positions where both this hash and `mask` are set.
    pub fn masked_popcount(&self, mask: &BitMask) -> Result<usize> {
        self.check_same_width(mask.width())?;
        Ok(self
            .words
            .iter()
            .zip(mask.words())
            .map(|(a, m)| (a & m).count_ones() as usize)
            .sum())
    }

    /// Hamming distance to `other`.
    pub fn hamming(&self, other: &BitHash) -> Result<usize> {
        self.check_same_width(other.width)?;
        Ok(xor_popcount(&self.words, &other.words) as usize)
    }

    pub(crate) fn check_same_width(&self, other: usize) -> Result<()> {
        if self.width != other {
            return Err(Error::WidthMismatch {
                left: self.width,
                right: other,
            });
        }
        Ok(())
    }

    fn tail_mask(&self) -> u64 {
        match self.width % 64 {
            0 => u64::MAX,
            r => !(u64::MAX >> r),
        }
    }

    fn tail_dirty(&self) -> bool {
        let last = self.words.len() - 1;
        self.words[last] & !self.tail_mask() != 0
    }

    fn clear_tail(&mut self) {
        let last = self.words.len() - 1;
        self.words[last] &= self.tail_mask();
    }
}

impl fmt::Debug for BitHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitHash({}:{})", self.width, self.to_hex())
    }
}

impl fmt::Display for BitHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Free-function form of [`BitHash::xor`].
pub fn xor(a: &BitHash, b: &BitHash) -> Result<BitHash> {
    a.xor(b)
}

/// Free-function form of [`BitHash::popcount`].
pub fn popcount(a: &BitHash) -> usize {
    a.popcount()
}

/// Free-function form of [`BitHash::masked_popcount`].
pub fn masked_popcount(a: &BitHash, m: &BitMask) -> Result<usize> {
    a.masked_popcount(m)
}

/// A bit pattern flagging positions, with a cached population count.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMask {
    bits: BitHash,
    ones: usize,
}

impl BitMask {
    pub fn zeros(width: usize) -> Result<Self> {
        Ok(Self {
            bits: BitHash::zeros(width)?,
            ones: 0,
        })
    }

    pub fn ones(width: usize) -> Result<Self> {
        Ok(Self {
            bits: BitHash::ones(width)?,
            ones: width,
        })
    }

    /// Mask with exactly the given positions set.
    pub fn from_positions(width: usize, positions: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut bits = BitHash::zeros(width)?;
        for p in positions {
            if p >= width {
                return Err(Error::KExceedsWidth { k: p, d: width });
            }
            bits.set(p, true);
        }
        Ok(Self::from(bits))
    }

    pub fn width(&self) -> usize {
        self.bits.width
    }

    pub fn ones_count(&self) -> usize {
        self.ones
    }

    pub fn words(&self) -> &[u64] {
        &self.bits.words
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits.get(i)
    }

    pub fn as_hash(&self) -> &BitHash {
        &self.bits
    }

    pub fn complement(&self) -> BitMask {
        BitMask {
            bits: self.bits.complement(),
            ones: self.width() - self.ones,
        }
    }

    /// Set positions in ascending order.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width()).filter(move |&i| self.bits.get(i))
    }

    /// Fails unless the mask has exactly `k` set bits.
    pub fn expect_ones(&self, k: usize) -> Result<()> {
        if self.ones != k {
            return Err(Error::MaskWeight {
                expected: k,
                found: self.ones,
            });
        }
        Ok(())
    }
}

impl From<BitHash> for BitMask {
    fn from(bits: BitHash) -> Self {
        let ones = bits.popcount();
        Self { bits, ones }
    }
}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitMask({}:{}, ones={})", self.width(), self.bits.to_hex(), self.ones)
    }
}
