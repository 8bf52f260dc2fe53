//! Fixed-point prices with four fractional digits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fractional decimal digits carried by a [`Price`].
pub const PRICE_DECIMALS: u32 = 4;
/// Ticks per unit of quote currency.
pub const TICKS_PER_UNIT: i64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PriceParseError {
    #[error("empty price field")]
    Empty,
    #[error("invalid decimal {0:?}")]
    Invalid(String),
    #[error("{0:?} has more than 4 fractional digits")]
    ExcessPrecision(String),
    #[error("{0:?} is out of range")]
    OutOfRange(String),
}

/// An exact decimal price stored as an integer count of 0.0001 ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(i64);

impl Price {
    pub const ZERO: Price = Price(0);

    pub const fn from_ticks(ticks: i64) -> Self {
        Price(ticks)
    }

    pub const fn ticks(self) -> i64 {
        self.0
    }

    /// Whole currency units, e.g. `Price::from_units(10)` is `10.0000`.
    pub const fn from_units(units: i64) -> Self {
        Price(units * TICKS_PER_UNIT)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_UNIT as f64
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn checked_add(self, other: Price) -> Option<Price> {
        self.0.checked_add(other.0).map(Price)
    }

    pub fn checked_mul(self, factor: i64) -> Option<Price> {
        self.0.checked_mul(factor).map(Price)
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let unit = TICKS_PER_UNIT as u64;
        write!(f, "{sign}{}.{:04}", abs / unit, abs % unit)
    }
}

impl FromStr for Price {
    type Err = PriceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(PriceParseError::Empty);
        }
        let invalid = || PriceParseError::Invalid(s.to_string());
        let (negative, body) = match s.as_bytes()[0] {
            b'-' => (true, &s[1..]),
            b'+' => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(invalid());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(invalid());
        }
        // Trailing zeros beyond the fourth digit carry no information.
        let frac_trimmed = frac_part.trim_end_matches('0');
        if frac_trimmed.len() > PRICE_DECIMALS as usize {
            return Err(PriceParseError::ExcessPrecision(s.to_string()));
        }
        let out_of_range = || PriceParseError::OutOfRange(s.to_string());
        let units: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| out_of_range())?
        };
        let mut frac_ticks: i64 = 0;
        for (i, b) in frac_trimmed.bytes().enumerate() {
            frac_ticks += i64::from(b - b'0') * 10_i64.pow(PRICE_DECIMALS - 1 - i as u32);
        }
        let ticks = units
            .checked_mul(TICKS_PER_UNIT)
            .and_then(|t| t.checked_add(frac_ticks))
            .ok_or_else(out_of_range)?;
        Ok(Price(if negative { -ticks } else { ticks }))
    }
}

impl Serialize for Price {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
