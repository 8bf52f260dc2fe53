//! Delimited-text ingestion: `symbol,date,open,high,low,close,volume`, one row per
//! symbol-day, header required.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;
use thiserror::Error;

use super::anonymize::{Anonymizer, RawSeries, TickerMap};
use super::{BarError, OhlcvBar, Price, PriceParseError, Series, SeriesError};

pub const INGEST_HEADER: [&str; 7] = ["symbol", "date", "open", "high", "low", "close", "volume"];

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Fraction of data rows that may be rejected before the whole file is refused.
    pub max_reject_rate: f64,
    pub anonymizer: Anonymizer,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b',',
            max_reject_rate: 0.10,
            anonymizer: Anonymizer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowRejection {
    FieldCount(usize),
    EmptySymbol,
    BadDate(String),
    BadPrice {
        field: &'static str,
        error: PriceParseError,
    },
    BadVolume(String),
    Bar(BarError),
    DuplicateDate(NaiveDate),
}

impl fmt::Display for RowRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowRejection::FieldCount(n) => write!(f, "expected 7 fields, found {n}"),
            RowRejection::EmptySymbol => f.write_str("empty symbol"),
            RowRejection::BadDate(s) => write!(f, "invalid date {s:?} (want YYYY-MM-DD)"),
            RowRejection::BadPrice { field, error } => write!(f, "{field}: {error}"),
            RowRejection::BadVolume(s) => write!(f, "invalid volume {s:?}"),
            RowRejection::Bar(e) => write!(f, "{e}"),
            RowRejection::DuplicateDate(d) => write!(f, "duplicate date {d} for symbol"),
        }
    }
}

/// A rejected input row. Rows are skipped, not fatal, unless too many are rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}:{line}: malformed row: {reason}")]
pub struct MalformedRow {
    pub path: PathBuf,
    pub line: u64,
    pub reason: RowRejection,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header must be {expected}, found {found:?}")]
    BadHeader {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("no valid bars in input")]
    EmptySeries,
    #[error("{path}: {rejected} of {total} rows rejected, above the {limit:.0}% limit (format mismatch?)")]
    TooManyRejections {
        path: PathBuf,
        rejected: usize,
        total: usize,
        limit: f64,
    },
    #[error("series {ticker_hint}: {source}")]
    Series {
        ticker_hint: String,
        #[source]
        source: SeriesError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    /// One series per symbol, ordered by opaque id.
    pub series: Vec<Series>,
    pub rejected: Vec<MalformedRow>,
    pub rows_read: usize,
    pub ticker_map: TickerMap,
}

/// Parses one data row (already split into fields) into `(ticker, bar)`.
pub fn parse_ingest_row(fields: &[&str]) -> Result<(String, OhlcvBar), RowRejection> {
    if fields.len() != INGEST_HEADER.len() {
        return Err(RowRejection::FieldCount(fields.len()));
    }
    let ticker = fields[0].trim();
    if ticker.is_empty() {
        return Err(RowRejection::EmptySymbol);
    }
    let date_str = fields[1].trim();
    let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
        .map_err(|_| RowRejection::BadDate(date_str.to_string()))?;
    let price = |idx: usize| -> Result<Price, RowRejection> {
        fields[idx]
            .parse::<Price>()
            .map_err(|error| RowRejection::BadPrice {
                field: INGEST_HEADER[idx],
                error,
            })
    };
    let (open, high, low, close) = (price(2)?, price(3)?, price(4)?, price(5)?);
    let vol_str = fields[6].trim();
    let volume = vol_str
        .parse::<u64>()
        .map_err(|_| RowRejection::BadVolume(vol_str.to_string()))?;
    let bar = OhlcvBar::new(date, open, high, low, close, volume).map_err(RowRejection::Bar)?;
    Ok((ticker.to_string(), bar))
}

struct ParsedRow {
    path_idx: usize,
    line: u64,
    bar: OhlcvBar,
}

/// Loads one file. See [`load_many`].
pub fn load_series(path: &Path, options: &IngestOptions) -> Result<LoadReport, IngestError> {
    load_many(&[path.to_path_buf()], options)
}

/// Loads and merges several files. Rows for the same ticker across files are
/// combined; bars are sorted by date and later duplicates of a date are rejected.
pub fn load_many(paths: &[PathBuf], options: &IngestOptions) -> Result<LoadReport, IngestError> {
    let mut by_ticker: BTreeMap<String, Vec<ParsedRow>> = BTreeMap::new();
    let mut rejected = Vec::new();
    let mut rows_read = 0;

    for (path_idx, path) in paths.iter().enumerate() {
        let (rows, file_rejects, n) = read_file(path, path_idx, options)?;
        rows_read += n;
        rejected.extend(file_rejects);
        for (ticker, row) in rows {
            by_ticker.entry(ticker).or_default().push(row);
        }
    }

    let mut series = Vec::with_capacity(by_ticker.len());
    let mut ticker_map = TickerMap::default();
    for (ticker, mut rows) in by_ticker {
        rows.sort_by_key(|r| (r.bar.date, r.path_idx, r.line));
        let mut bars: Vec<OhlcvBar> = Vec::with_capacity(rows.len());
        for row in rows {
            if bars.last().is_some_and(|b| b.date == row.bar.date) {
                let reject = MalformedRow {
                    path: paths[row.path_idx].clone(),
                    line: row.line,
                    reason: RowRejection::DuplicateDate(row.bar.date),
                };
                warn!("{reject}");
                rejected.push(reject);
                continue;
            }
            bars.push(row.bar);
        }
        let id = options.anonymizer.opaque_id(&ticker);
        let s = options
            .anonymizer
            .anonymize(RawSeries { ticker: ticker.clone(), bars })
            .map_err(|source| IngestError::Series {
                ticker_hint: id.to_string(),
                source,
            })?;
        ticker_map.insert(ticker, id);
        series.push(s);
    }

    if series.is_empty() {
        return Err(IngestError::EmptySeries);
    }
    series.sort_by(|a, b| a.symbol_id().cmp(b.symbol_id()));
    rejected.sort_by(|a, b| (&a.path, a.line).cmp(&(&b.path, b.line)));

    Ok(LoadReport {
        series,
        rejected,
        rows_read,
        ticker_map,
    })
}

type FileRows = (Vec<(String, ParsedRow)>, Vec<MalformedRow>, usize);

fn read_file(path: &Path, path_idx: usize, options: &IngestOptions) -> Result<FileRows, IngestError> {
    let unreadable = |source| IngestError::FileUnreadable {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(unreadable)?;

    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(unreadable)?,
        None => return Err(IngestError::EmptySeries),
    };
    let header_ok = header.len() == INGEST_HEADER.len()
        && header
            .iter()
            .zip(INGEST_HEADER)
            .all(|(got, want)| got.trim().eq_ignore_ascii_case(want));
    if !header_ok {
        return Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            expected: INGEST_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0usize;
    for record in records {
        let record = record.map_err(unreadable)?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        total += 1;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = record.iter().collect();
        match parse_ingest_row(&fields) {
            Ok((ticker, bar)) => rows.push((
                ticker,
                ParsedRow {
                    path_idx,
                    line,
                    bar,
                },
            )),
            Err(reason) => {
                let reject = MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    reason,
                };
                warn!("{reject}");
                rejected.push(reject);
            }
        }
    }

    if total > 0 && rejected.len() as f64 / total as f64 > options.max_reject_rate {
        return Err(IngestError::TooManyRejections {
            path: path.to_path_buf(),
            rejected: rejected.len(),
            total,
            limit: options.max_reject_rate * 100.0,
        });
    }
    Ok((rows, rejected, total))
}
