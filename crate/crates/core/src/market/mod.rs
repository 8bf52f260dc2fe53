//! Daily OHLCV bars, per-symbol series, ingestion and ticker anonymization.

mod anonymize;
mod ingest;
mod price;

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anonymize::{Anonymizer, RawSeries, TickerMap, DEFAULT_SALT};
pub use ingest::{
    load_many, load_series, parse_ingest_row, IngestError, IngestOptions, LoadReport, MalformedRow,
    RowRejection, INGEST_HEADER,
};
pub use price::{Price, PriceParseError, PRICE_DECIMALS, TICKS_PER_UNIT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BarError {
    #[error("{field} must be positive, got {value}")]
    NonPositivePrice { field: &'static str, value: Price },
    #[error("OHLC invariant violated: {0}")]
    OhlcInvariant(String),
}

/// One trading day of open/high/low/close prices and share volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: Price,
    pub high: Price,
    pub low: Price,
    pub close: Price,
    pub volume: u64,
}

impl OhlcvBar {
    /// Builds a bar, enforcing `low <= min(open, close) <= max(open, close) <= high`
    /// and strictly positive prices.
    pub fn new(
        date: NaiveDate,
        open: Price,
        high: Price,
        low: Price,
        close: Price,
        volume: u64,
    ) -> Result<Self, BarError> {
        let bar = OhlcvBar {
            date,
            open,
            high,
            low,
            close,
            volume,
        };
        bar.validate()?;
        Ok(bar)
    }

    pub fn validate(&self) -> Result<(), BarError> {
        for (field, value) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !value.is_positive() {
                return Err(BarError::NonPositivePrice { field, value });
            }
        }
        if self.low > self.high {
            return Err(BarError::OhlcInvariant(format!(
                "low {} > high {}",
                self.low, self.high
            )));
        }
        if self.high < self.open.max(self.close) {
            return Err(BarError::OhlcInvariant(format!(
                "high {} < max(open {}, close {})",
                self.high, self.open, self.close
            )));
        }
        if self.low > self.open.min(self.close) {
            return Err(BarError::OhlcInvariant(format!(
                "low {} > min(open {}, close {})",
                self.low, self.open, self.close
            )));
        }
        Ok(())
    }

    pub fn is_up(&self) -> bool {
        self.close >= self.open
    }
}

/// Opaque, ticker-free identifier of a symbol.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolId(String);

impl SymbolId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an already-opaque identifier. Callers must not pass raw tickers.
    pub fn from_opaque(id: impl Into<String>) -> Self {
        SymbolId(id.into())
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeriesError {
    #[error("series has no bars")]
    Empty,
    #[error("dates not strictly increasing at index {index}: {prev} then {next}")]
    DatesNotIncreasing {
        index: usize,
        prev: NaiveDate,
        next: NaiveDate,
    },
    #[error("bar {index}: {source}")]
    InvalidBar { index: usize, source: BarError },
}

/// An ordered, anonymized daily history for one symbol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Series {
    symbol_id: SymbolId,
    bars: Vec<OhlcvBar>,
}

impl Series {
    pub fn new(symbol_id: SymbolId, bars: Vec<OhlcvBar>) -> Result<Self, SeriesError> {
        check_bars(&bars)?;
        Ok(Series { symbol_id, bars })
    }

    pub fn symbol_id(&self) -> &SymbolId {
        &self.symbol_id
    }

    pub fn bars(&self) -> &[OhlcvBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }
}

pub(crate) fn check_bars(bars: &[OhlcvBar]) -> Result<(), SeriesError> {
    if bars.is_empty() {
        return Err(SeriesError::Empty);
    }
    for (index, bar) in bars.iter().enumerate() {
        bar.validate()
            .map_err(|source| SeriesError::InvalidBar { index, source })?;
    }
    for (i, pair) in bars.windows(2).enumerate() {
        if pair[1].date <= pair[0].date {
            return Err(SeriesError::DatesNotIncreasing {
                index: i + 1,
                prev: pair[0].date,
                next: pair[1].date,
            });
        }
    }
    Ok(())
}
