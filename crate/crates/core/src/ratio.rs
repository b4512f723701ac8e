//! Exact non-negative rationals for channel proportions.

use core::fmt;
use core::str::FromStr;

use crate::error::Error;

/// A reduced fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };
    pub const HALF: Ratio = Ratio { num: 1, den: 2 };
    pub const QUARTER: Ratio = Ratio { num: 1, den: 4 };
    pub const EIGHTH: Ratio = Ratio { num: 1, den: 8 };

    pub fn new(num: u64, den: u64) -> Result<Self, Error> {
        if den == 0 {
            return Err(Error::InvalidConfig("ratio denominator is zero".into()));
        }
        let g = gcd(num, den).max(1);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `round(self * n)`, halves rounded up.
    pub fn round_mul(&self, n: usize) -> usize {
        let n = n as u64;
        ((2 * self.num * n + self.den) / (2 * self.den)) as usize
    }

    /// `self * n` when it is an integer.
    pub fn exact_mul(&self, n: usize) -> Option<usize> {
        let p = self.num * n as u64;
        (p % self.den == 0).then(|| (p / self.den) as usize)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// Accepts `"1/4"`, `"0.25"` and `"1"`.
impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::InvalidConfig(alloc::format!("cannot parse ratio {s:?}"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let num = a.trim().parse::<u64>().map_err(|_| bad())?;
            let den = b.trim().parse::<u64>().map_err(|_| bad())?;
            return Ratio::new(num, den).map_err(|_| bad());
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if (int.is_empty() && frac.is_empty()) || frac.len() > 18 {
            return Err(bad());
        }
        let digits = |d: &str| -> Result<u64, Error> {
            if d.is_empty() {
                Ok(0)
            } else if d.bytes().all(|b| b.is_ascii_digit()) {
                d.parse::<u64>().map_err(|_| bad())
            } else {
                Err(bad())
            }
        };
        let den = 10u64.pow(frac.len() as u32);
        let num = digits(int)?
            .checked_mul(den)
            .and_then(|v| v.checked_add(digits(frac).ok()?))
            .ok_or_else(bad)?;
        Ratio::new(num, den)
    }
}
