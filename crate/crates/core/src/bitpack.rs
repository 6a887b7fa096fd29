//! MSB-first bit streams for contiguously packed fields.

use num_bigint::BigUint;

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: usize,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps an existing packed region of `bit_len` bits. Padding bits in
    /// the last byte must be zero.
    pub fn from_bytes(bytes: Vec<u8>, bit_len: usize) -> Result<Self> {
        if bytes.len() != bit_len.div_ceil(8) {
            return Err(Error::format("packed region length mismatch"));
        }
        if bit_len % 8 != 0 && bytes[bytes.len() - 1] & (0xff >> (bit_len % 8)) != 0 {
            return Err(Error::format("nonzero padding after packed region"));
        }
        Ok(Self { bytes, len: bit_len })
    }

    /// Number of bits written so far.
    pub fn bit_len(&self) -> usize {
        self.len
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let last = self.bytes.len() - 1;
            self.bytes[last] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_u128(&mut self, value: u128, width: usize) {
        debug_assert!(width <= 128);
        debug_assert!(width == 128 || value >> width == 0);
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    /// Appends `value` as exactly `width` bits, most significant first.
    pub fn push_biguint(&mut self, value: &BigUint, width: usize) {
        debug_assert!(value.bits() as usize <= width);
        for i in (0..width as u64).rev() {
            self.push_bit(value.bit(i));
        }
    }

    /// The packed bytes; the final byte is zero-padded.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// Reads fixed-width fields at arbitrary bit offsets.
#[derive(Debug, Clone, Copy)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes }
    }

    #[inline]
    fn bit(&self, pos: usize) -> bool {
        (self.bytes[pos / 8] >> (7 - pos % 8)) & 1 == 1
    }

    fn check(&self, offset: usize, width: usize) -> Result<()> {
        if offset + width > self.bytes.len() * 8 {
            return Err(Error::format("bit field past end of region"));
        }
        Ok(())
    }

    /// Reads `width <= 128` bits starting at `offset`.
    pub fn read_u128(&self, offset: usize, width: usize) -> Result<u128> {
        debug_assert!(width <= 128);
        self.check(offset, width)?;
        let mut v = 0u128;
        let mut pos = offset;
        let end = offset + width;
        // byte-at-a-time once aligned
        while pos < end && pos % 8 != 0 {
            v = (v << 1) | self.bit(pos) as u128;
            pos += 1;
        }
        while pos + 8 <= end {
            v = (v << 8) | self.bytes[pos / 8] as u128;
            pos += 8;
        }
        while pos < end {
            v = (v << 1) | self.bit(pos) as u128;
            pos += 1;
        }
        Ok(v)
    }

    pub fn read_biguint(&self, offset: usize, width: usize) -> Result<BigUint> {
        self.check(offset, width)?;
        let mut digits = vec![0u32; width.div_ceil(32)];
        for i in 0..width {
            if self.bit(offset + i) {
                let power = width - 1 - i;
                digits[power / 32] |= 1 << (power % 32);
            }
        }
        Ok(BigUint::new(digits))
    }
}
