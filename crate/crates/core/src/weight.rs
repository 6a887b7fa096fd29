//! Exact rational weights in `[0, 1]`, used for the blend and discount factors.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;

use crate::error::{Error, Result};

/// Denominator used when approximating a float weight.
const FLOAT_DENOMINATOR: u32 = 1 << 20;

/// A reduced fraction `num / den` with `0 <= num <= den`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Weight {
    num: u32,
    den: u32,
}

impl Weight {
    pub const ZERO: Weight = Weight { num: 0, den: 1 };
    pub const ONE: Weight = Weight { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::InvalidWeight(format!("{}/{} is not in [0, 1]", num, den)));
        }
        let g = num.gcd(&den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    /// Nearest fraction with denominator 2^20; exact for dyadic inputs such as 0.25.
    pub fn from_f64(x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidWeight(format!("{} is not in [0, 1]", x)));
        }
        Self::new((x * FLOAT_DENOMINATOR as f64).round() as u32, FLOAT_DENOMINATOR)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    /// `1 - self`.
    pub fn complement(self) -> Self {
        Self {
            num: self.den - self.num,
            den: self.den,
        }
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Parses decimals (`0.75`, `.5`, `1`) exactly, or fractions (`3/4`).
impl FromStr for Weight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidWeight(format!("cannot parse `{}`", s));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: u32 = n.trim().parse().map_err(|_| bad())?;
            let d: u32 = d.trim().parse().map_err(|_| bad())?;
            return Self::new(n, d);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let frac = frac.trim_end_matches('0');
        // 10^38 is the largest power of ten in u128
        if frac.len() > 38 {
            return Err(bad());
        }
        let int: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u128.pow(frac.len() as u32);
        let frac_val: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        let num = int.checked_mul(den).and_then(|v| v.checked_add(frac_val)).ok_or_else(bad)?;
        if num > den {
            return Err(Error::InvalidWeight(format!("{} is not in [0, 1]", s)));
        }
        let g = num.gcd(&den);
        let (num, den) = (num / g, den / g);
        if den > u32::MAX as u128 {
            return Err(Error::InvalidWeight(format!("{} needs a denominator above 2^32", s)));
        }
        Self::new(num as u32, den as u32)
    }
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Shortest decimal when the denominator is a product of 2s and 5s, else `num/den`.
impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = self.den;
        while d % 2 == 0 {
            d /= 2;
        }
        while d % 5 == 0 {
            d /= 5;
        }
        if d != 1 {
            return write!(f, "{}/{}", self.num, self.den);
        }
        let mut digits = 0;
        while 10u128.pow(digits) % self.den as u128 != 0 {
            digits += 1;
        }
        let num = self.num as u128 * (10u128.pow(digits) / self.den as u128);
        if digits == 0 {
            return write!(f, "{}", num);
        }
        let p = 10u128.pow(digits);
        write!(f, "{}.{:0width$}", num / p, num % p, width = digits as usize)
    }
}
