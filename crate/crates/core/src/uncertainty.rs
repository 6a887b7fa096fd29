//! Per-bit uncertainty from hash time series.
//!
//! The primary score of a bit is the fraction of earlier primary hashes that
//! disagree with the final (stored) primary hash; the secondary score is the
//! fraction of secondary hashes that disagree with it. Both are kept as exact
//! fractions so that ranking bits by their blend never depends on float
//! rounding.

use crate::bits::{BitHash, BitMask};
use crate::error::{Error, Result};
use crate::weight::Weight;

/// Hash history of one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipTrace {
    clip_id: String,
    labels: Vec<String>,
    primary: Vec<BitHash>,
    secondary: Vec<BitHash>,
}

impl ClipTrace {
    /// Both sequences must be non-empty, of equal length and of one width.
    pub fn new(
        clip_id: impl Into<String>,
        labels: Vec<String>,
        primary: Vec<BitHash>,
        secondary: Vec<BitHash>,
    ) -> Result<Self> {
        let clip_id = clip_id.into();
        if primary.is_empty() {
            return Err(Error::InvalidTrace(format!("clip `{}` has no timesteps", clip_id)));
        }
        if primary.len() != secondary.len() {
            return Err(Error::InvalidTrace(format!(
                "clip `{}`: {} primary vs {} secondary hashes",
                clip_id,
                primary.len(),
                secondary.len()
            )));
        }
        let d = primary[0].width();
        for h in primary.iter().chain(&secondary) {
            h.check_same_width(d)?;
        }
        Ok(Self {
            clip_id,
            labels,
            primary,
            secondary,
        })
    }

    pub fn clip_id(&self) -> &str {
        &self.clip_id
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.primary.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.primary[0].width()
    }

    pub fn primary(&self) -> &[BitHash] {
        &self.primary
    }

    pub fn secondary(&self) -> &[BitHash] {
        &self.secondary
    }

    /// The last primary hash, which is what the codebook stores.
    pub fn final_hash(&self) -> &BitHash {
        self.primary.last().expect("non-empty by construction")
    }
}

/// One exact fraction `numer[i] / denom` per bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFractions {
    numer: Vec<u128>,
    denom: u128,
}

impl BitFractions {
    pub fn new(numer: Vec<u128>, denom: u128) -> Result<Self> {
        if denom == 0 || numer.iter().any(|&n| n > denom) {
            return Err(Error::InvalidWeight("fractions must lie in [0, 1]".into()));
        }
        Ok(Self { numer, denom })
    }

    pub fn width(&self) -> usize {
        self.numer.len()
    }

    pub fn numerators(&self) -> &[u128] {
        &self.numer
    }

    pub fn denominator(&self) -> u128 {
        self.denom
    }

    pub fn get(&self, i: usize) -> f64 {
        self.numer[i] as f64 / self.denom as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.width()).map(|i| self.get(i)).collect()
    }
}

fn count_disagreements(reference: &BitHash, history: &[BitHash]) -> Vec<u128> {
    let mut counts = vec![0u128; reference.width()];
    for h in history {
        let x = reference.xor(h).expect("trace widths validated");
        for (i, bit) in x.iter_bits().enumerate() {
            counts[i] += bit as u128;
        }
    }
    counts
}

/// Fraction of the first `T - 1` primary hashes disagreeing with the final one.
///
/// A single-timestep trace has no history and yields all zeros.
pub fn primary_uncertainty(trace: &ClipTrace) -> BitFractions {
    let t = trace.len();
    let history = &trace.primary[..t - 1];
    BitFractions {
        numer: count_disagreements(trace.final_hash(), history),
        denom: (t as u128 - 1).max(1),
    }
}

/// Fraction of the `T` secondary hashes disagreeing with the final primary hash.
pub fn secondary_uncertainty(trace: &ClipTrace) -> BitFractions {
    BitFractions {
        numer: count_disagreements(trace.final_hash(), &trace.secondary),
        denom: trace.len() as u128,
    }
}

/// `theta * p + (1 - theta) * s`, over the common denominator.
pub fn blend(p: &BitFractions, s: &BitFractions, theta: Weight) -> Result<BitFractions> {
    if p.width() != s.width() {
        return Err(Error::WidthMismatch {
            left: p.width(),
            right: s.width(),
        });
    }
    let a = theta.num() as u128;
    let b = theta.complement().num() as u128;
    let numer = p
        .numer
        .iter()
        .zip(&s.numer)
        .map(|(&pn, &sn)| a * pn * s.denom + b * sn * p.denom)
        .collect();
    Ok(BitFractions {
        numer,
        denom: theta.den() as u128 * p.denom * s.denom,
    })
}

/// Flags the `k_bs` largest values; ties go to the lower bit index.
pub fn top_k_mask(mu: &BitFractions, k_bs: usize) -> Result<BitMask> {
    let d = mu.width();
    if k_bs > d {
        return Err(Error::KExceedsWidth { k: k_bs, d });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| mu.numer[j].cmp(&mu.numer[i]).then(i.cmp(&j)));
    BitMask::from_positions(d, order.into_iter().take(k_bs))
}

/// Primary, secondary and blended scores of one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UncertaintyScores {
    pub p: BitFractions,
    pub s: BitFractions,
    pub mu: BitFractions,
    pub theta: Weight,
}

impl UncertaintyScores {
    pub fn compute(trace: &ClipTrace, theta: Weight) -> Self {
        let p = primary_uncertainty(trace);
        let s = secondary_uncertainty(trace);
        let mu = blend(&p, &s, theta).expect("same trace, same width");
        Self { p, s, mu, theta }
    }

    pub fn mask(&self, k_bs: usize) -> Result<BitMask> {
        top_k_mask(&self.mu, k_bs)
    }
}
