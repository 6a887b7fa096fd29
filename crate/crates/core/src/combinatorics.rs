//! Exact binomial coefficients and lexicographic ranking of fixed-weight masks.
//!
//! A mask of width `d` with `k` set bits is ranked by its position among all
//! such masks, ordering bit strings lexicographically from bit 0 with
//! `0 < 1`. Rank 0 is therefore the mask with its `k` ones in the last
//! positions, and rank `C(d, k) - 1` the one with its ones in the first `k`.
//! A rank needs `ceil(log2 C(d, k))` bits, which is strictly fewer than `d`
//! for `0 < k < d`.

use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::bitpack::{BitReader, BitWriter};
use crate::bits::{BitHash, BitMask};
use crate::error::{Error, Result};

/// Bit budget below which [`MaskDecoder`] materializes a lookup table.
pub const DEFAULT_LUT_BUDGET_BITS: u64 = 1 << 20;

/// Widths up to this use the precomputed `u128` Pascal triangle.
const SMALL_MAX: usize = 128;

fn pascal() -> &'static [Vec<u128>] {
    static TABLE: OnceLock<Vec<Vec<u128>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows: Vec<Vec<u128>> = Vec::with_capacity(SMALL_MAX + 1);
        for n in 0..=SMALL_MAX {
            let mut row = vec![1u128; n + 1];
            for k in 1..n {
                row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
            }
            rows.push(row);
        }
        rows
    })
}

/// `C(n, k)` for `n <= 128`; zero when `k > n`.
#[inline]
fn small_binomial(n: usize, k: usize) -> u128 {
    if k > n {
        0
    } else {
        pascal()[n][k]
    }
}

/// Exact `C(d, k)`.
pub fn binomial(d: usize, k: usize) -> Result<BigUint> {
    if k > d {
        return Err(Error::KExceedsWidth { k, d });
    }
    if d <= SMALL_MAX {
        return Ok(BigUint::from(small_binomial(d, k)));
    }
    let k = k.min(d - k);
    let mut acc = BigUint::one();
    // multiply-then-divide keeps every intermediate an exact binomial
    for i in 0..k {
        acc *= (d - i) as u64;
        acc /= (i + 1) as u64;
    }
    Ok(acc)
}

/// `ceil(log2 n)`, with `ceil(log2 1) = 0`. `n` must be positive.
pub fn ceil_log2(n: &BigUint) -> usize {
    debug_assert!(!n.is_zero());
    if n <= &BigUint::one() {
        return 0;
    }
    (n - 1u32).bits() as usize
}

/// `log2 n` as a float, from the top 64 bits of `n`. `n` must be positive.
pub fn log2_big(n: &BigUint) -> f64 {
    let bits = n.bits();
    if bits <= 64 {
        return (n.to_u64().unwrap_or(0) as f64).log2();
    }
    let shift = bits - 64;
    let top = (n >> shift).to_u64().unwrap_or(u64::MAX) as f64;
    top.log2() + shift as f64
}

/// Width in bits of a compressed mask: `ceil(log2 C(d, k))`.
///
/// Panics if `k > d`.
pub fn compressed_width(d: usize, k: usize) -> usize {
    let c = binomial(d, k).expect("compressed_width requires k <= d");
    ceil_log2(&c)
}

/// Lower bound on the bits saved at `k = d / 2`: `0.5 * log2(pi * d / 2)`.
pub fn saving_lower_bound(d: usize) -> f64 {
    0.5 * (std::f64::consts::PI * d as f64 / 2.0).log2()
}

/// Exact bit cost `d * C(d, k)` of a rank-indexed lookup table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LutFeasibility {
    pub cost_bits: BigUint,
    pub budget_bits: u64,
    pub feasible: bool,
}

pub fn lut_feasibility(d: usize, k: usize, budget_bits: u64) -> Result<LutFeasibility> {
    let cost_bits = binomial(d, k)? * d as u64;
    let feasible = cost_bits < BigUint::from(budget_bits);
    Ok(LutFeasibility {
        cost_bits,
        budget_bits,
        feasible,
    })
}

/// Zero-based lexicographic index of a `k`-of-`d` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CombinationRank {
    value: BigUint,
    d: usize,
    k: usize,
}

impl CombinationRank {
    pub fn new(value: BigUint, d: usize, k: usize) -> Result<Self> {
        if value >= binomial(d, k)? {
            return Err(Error::RankOutOfRange { d, k });
        }
        Ok(Self { value, d, k })
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Rank of `mask` among all masks of the same width and weight.
pub fn rank_lex(mask: &BitMask) -> CombinationRank {
    let d = mask.width();
    let k = mask.ones_count();
    let value = if d <= SMALL_MAX {
        BigUint::from(rank_small(mask))
    } else {
        rank_big(mask)
    };
    CombinationRank { value, d, k }
}

fn rank_small(mask: &BitMask) -> u128 {
    let d = mask.width();
    let mut left = mask.ones_count();
    let mut rank = 0u128;
    for i in 0..d {
        if left == 0 {
            break;
        }
        if mask.get(i) {
            // every mask sharing the prefix with a 0 here sorts first
            rank += small_binomial(d - i - 1, left);
            left -= 1;
        }
    }
    rank
}

fn rank_big(mask: &BitMask) -> BigUint {
    let d = mask.width();
    let mut left = mask.ones_count();
    // c tracks C(n, left) for the n = d - i positions still unread
    let mut c = binomial(d, left).expect("weight never exceeds width");
    let mut rank = BigUint::zero();
    for i in 0..d {
        if left == 0 {
            break;
        }
        let n = (d - i) as u64;
        let zero_here = &c * (n - left as u64) / n;
        if mask.get(i) {
            c = &c * left as u64 / n;
            rank += zero_here;
            left -= 1;
        } else {
            c = zero_here;
        }
    }
    rank
}

/// Inverse of [`rank_lex`].
///
/// Walks the positions once, deciding each bit by comparing the residual
/// rank with the count of completions that place a 0 there. The binomial is
/// updated by one small multiply and one small exact divide per position, so
/// the cost is `O(d)` big-number operations on `O(d)`-bit values.
pub fn unrank(rank: &CombinationRank) -> BitMask {
    if rank.d <= SMALL_MAX {
        let r = rank.value.to_u128().expect("rank < C(d, k) fits for d <= 128");
        unrank_small(rank.d, rank.k, r)
    } else {
        unrank_big(rank.d, rank.k, rank.value.clone())
    }
}

fn unrank_small(d: usize, k: usize, mut r: u128) -> BitMask {
    let mut bits = BitHash::zeros(d).expect("validated width");
    let mut left = k;
    for i in 0..d {
        if left == 0 {
            break;
        }
        let remaining = d - i;
        if left == remaining {
            for j in i..d {
                bits.set(j, true);
            }
            break;
        }
        let zero_here = small_binomial(remaining - 1, left);
        if r >= zero_here {
            r -= zero_here;
            bits.set(i, true);
            left -= 1;
        }
    }
    BitMask::from(bits)
}

fn unrank_big(d: usize, k: usize, mut r: BigUint) -> BitMask {
    let mut bits = BitHash::zeros(d).expect("validated width");
    let mut left = k;
    let mut c = binomial(d, k).expect("validated k");
    for i in 0..d {
        if left == 0 {
            break;
        }
        let remaining = d - i;
        if left == remaining {
            for j in i..d {
                bits.set(j, true);
            }
            break;
        }
        let n = remaining as u64;
        let zero_here = &c * (n - left as u64) / n;
        if r >= zero_here {
            r -= &zero_here;
            c = &c * left as u64 / n;
            bits.set(i, true);
            left -= 1;
        } else {
            c = zero_here;
        }
    }
    BitMask::from(bits)
}

/// A fixed-weight mask stored as its rank in exactly `compressed_width(d, k)` bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompressedMask {
    rank: CombinationRank,
}

impl CompressedMask {
    /// Compresses `mask`, which must carry exactly `k` ones.
    pub fn encode(mask: &BitMask, k: usize) -> Result<Self> {
        mask.expect_ones(k)?;
        Ok(Self {
            rank: rank_lex(mask),
        })
    }

    pub fn from_rank(rank: CombinationRank) -> Self {
        Self { rank }
    }

    pub fn rank(&self) -> &CombinationRank {
        &self.rank
    }

    /// Stored size in bits.
    pub fn width(&self) -> usize {
        compressed_width(self.rank.d, self.rank.k)
    }

    pub fn decode(&self) -> BitMask {
        unrank(&self.rank)
    }

    pub fn write(&self, out: &mut BitWriter) {
        out.push_biguint(&self.rank.value, self.width());
    }

    /// Reads a rank of `compressed_width(d, k)` bits at `offset`.
    pub fn read(reader: &BitReader<'_>, offset: usize, d: usize, k: usize) -> Result<Self> {
        let width = compressed_width(d, k);
        let value = reader.read_biguint(offset, width)?;
        Ok(Self {
            rank: CombinationRank::new(value, d, k)?,
        })
    }
}

/// Turns stored ranks back into masks for one `(d, k)` pair.
///
/// Uses a rank-indexed table when `d * C(d, k)` fits the budget, otherwise
/// unranks each request. Built once and read-only afterwards.
#[derive(Debug, Clone)]
pub struct MaskDecoder {
    d: usize,
    k: usize,
    width: usize,
    bound: BigUint,
    table: Option<Vec<BitMask>>,
}

impl MaskDecoder {
    pub fn new(d: usize, k: usize) -> Result<Self> {
        Self::with_budget(d, k, DEFAULT_LUT_BUDGET_BITS)
    }

    pub fn with_budget(d: usize, k: usize, budget_bits: u64) -> Result<Self> {
        let plan = lut_feasibility(d, k, budget_bits)?;
        let bound = binomial(d, k)?;
        let table = if plan.feasible {
            let count = bound.to_usize().expect("feasible table is small");
            Some(
                (0..count)
                    .map(|r| unrank(&CombinationRank { value: BigUint::from(r), d, k }))
                    .collect(),
            )
        } else {
            None
        };
        Ok(Self {
            d,
            k,
            width: ceil_log2(&bound),
            bound,
            table,
        })
    }

    pub fn uses_table(&self) -> bool {
        self.table.is_some()
    }

    /// Compressed width `d_u` in bits.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Checks that the rank stored at `offset` is below `C(d, k)`.
    pub fn check_at(&self, reader: &BitReader<'_>, offset: usize) -> Result<()> {
        let in_range = if self.width <= 128 {
            BigUint::from(reader.read_u128(offset, self.width)?) < self.bound
        } else {
            reader.read_biguint(offset, self.width)? < self.bound
        };
        if !in_range {
            return Err(Error::RankOutOfRange { d: self.d, k: self.k });
        }
        Ok(())
    }

    /// Decodes the rank stored at `offset` in a packed mask region.
    pub fn decode_at(&self, reader: &BitReader<'_>, offset: usize) -> Result<BitMask> {
        if let Some(table) = &self.table {
            let r = reader.read_u128(offset, self.width)?;
            return table
                .get(r as usize)
                .cloned()
                .ok_or(Error::RankOutOfRange { d: self.d, k: self.k });
        }
        if self.d <= SMALL_MAX {
            let r = reader.read_u128(offset, self.width)?;
            if BigUint::from(r) >= self.bound {
                return Err(Error::RankOutOfRange { d: self.d, k: self.k });
            }
            return Ok(unrank_small(self.d, self.k, r));
        }
        let value = reader.read_biguint(offset, self.width)?;
        if value >= self.bound {
            return Err(Error::RankOutOfRange { d: self.d, k: self.k });
        }
        Ok(unrank_big(self.d, self.k, value))
    }
}
