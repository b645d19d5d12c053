//! Exact dyadic times `j/2^n` on the horizon `[0, 1]`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Largest supported grid level. Keeps `j << level` inside `u64`.
pub const MAX_LEVEL: u32 = 40;

/// A dyadic time `num / 2^exp`, always stored in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DyadicTime {
    num: u64,
    exp: u32,
}

impl DyadicTime {
    pub const ZERO: DyadicTime = DyadicTime { num: 0, exp: 0 };
    pub const ONE: DyadicTime = DyadicTime { num: 1, exp: 0 };

    /// `j / 2^level`. Panics if the time lies outside `[0, 1]` or the level is unsupported.
    pub fn new(j: u64, level: u32) -> Self {
        assert!(level <= MAX_LEVEL, "dyadic level {level} exceeds {MAX_LEVEL}");
        assert!(j <= 1u64 << level, "dyadic time {j}/2^{level} exceeds 1");
        let (mut num, mut exp) = (j, level);
        if num == 0 {
            return Self::ZERO;
        }
        while exp > 0 && num % 2 == 0 {
            num /= 2;
            exp -= 1;
        }
        DyadicTime { num, exp }
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    /// Smallest level whose grid contains this time.
    pub fn level(self) -> u32 {
        self.exp
    }

    pub fn is_on(self, level: u32) -> bool {
        self.exp <= level
    }

    /// Grid index `j` with `self = j / 2^level`, if the time lies on that grid.
    pub fn index_at(self, level: u32) -> Option<u64> {
        self.is_on(level).then(|| self.num << (level - self.exp))
    }

    /// Smallest point of the level-`level` grid that is `>= self`.
    pub fn ceil_to_level(self, level: u32) -> DyadicTime {
        if self.is_on(level) {
            return self;
        }
        let shift = self.exp - level;
        let j = self.num.div_ceil(1u64 << shift);
        DyadicTime::new(j, level)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / (1u64 << self.exp) as f64
    }
}

/// Smallest point `j/2^level` with `j/2^level >= x`, clamped to `[0, 1]`.
pub fn ceil_to_level(x: f64, level: u32) -> DyadicTime {
    assert!(x.is_finite(), "time must be finite");
    let scale = (1u64 << level) as f64;
    let j = (x * scale).ceil().clamp(0.0, scale) as u64;
    // guard against x·2^n rounding below an exact grid point
    let mut t = DyadicTime::new(j, level);
    if t.to_f64() < x && j < 1u64 << level {
        t = DyadicTime::new(j + 1, level);
    }
    t
}

impl Ord for DyadicTime {
    fn cmp(&self, other: &Self) -> Ordering {
        let level = self.exp.max(other.exp);
        let a = self.num << (level - self.exp);
        let b = other.num << (level - other.exp);
        a.cmp(&b)
    }
}

impl PartialOrd for DyadicTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for DyadicTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/2^{}", self.num, self.exp)
    }
}

impl FromStr for DyadicTime {
    type Err = Error;

    /// Accepts `j/2^n`, `j/m` with `m` a power of two, and the literals `0` and `1`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || Error::ParseTime(s.to_string());
        let s = s.trim();
        let (j, level) = match s.split_once('/') {
            None => (s.parse::<u64>().map_err(|_| err())?, 0),
            Some((num, den)) => {
                let j = num.trim().parse::<u64>().map_err(|_| err())?;
                let den = den.trim();
                let level = if let Some(exp) = den.strip_prefix("2^") {
                    exp.parse::<u32>().map_err(|_| err())?
                } else {
                    let m = den.parse::<u64>().map_err(|_| err())?;
                    if m == 0 || !m.is_power_of_two() {
                        return Err(err());
                    }
                    m.trailing_zeros()
                };
                (j, level)
            }
        };
        if level > MAX_LEVEL || j > 1u64 << level {
            return Err(err());
        }
        Ok(DyadicTime::new(j, level))
    }
}

impl Serialize for DyadicTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DyadicTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The grid `{ j/2^n : j = 0..=2^n }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicGrid {
    level: u32,
}

impl DyadicGrid {
    pub fn new(level: u32) -> Self {
        assert!(level <= MAX_LEVEL);
        DyadicGrid { level }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Number of grid points, `2^n + 1`.
    pub fn len(&self) -> usize {
        (1usize << self.level) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> DyadicTime {
        DyadicTime::new(1, self.level)
    }

    pub fn time(&self, j: usize) -> DyadicTime {
        DyadicTime::new(j as u64, self.level)
    }

    pub fn times(&self) -> impl Iterator<Item = DyadicTime> + '_ {
        (0..self.len()).map(move |j| self.time(j))
    }
}
