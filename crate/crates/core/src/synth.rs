//! Seeded synthetic OHLCV histories for fixtures, demos and smoke tests.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::Rng;

use crate::market::{OhlcvBar, Price, Series, SymbolId};
use crate::sampler::seeded_rng;

fn next_trading_day(d: NaiveDate) -> NaiveDate {
    let mut d = d.succ_opt().expect("date overflow");
    while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
        d = d.succ_opt().expect("date overflow");
    }
    d
}

/// A geometric-ish random walk of `len` weekday bars starting 2006-01-04.
/// Volumes are in the millions of shares, as for liquid A-share names.
pub fn random_walk_bars(len: usize, seed: u64) -> Vec<OhlcvBar> {
    let mut rng = seeded_rng(seed);
    let mut date = NaiveDate::from_ymd_opt(2006, 1, 3).unwrap();
    let mut prev_close: i64 = rng.random_range(50_000..=1_000_000);
    let mut bars = Vec::with_capacity(len);
    for _ in 0..len {
        date = next_trading_day(date);
        let gap_bps: i64 = rng.random_range(-80..=80);
        let open = (prev_close * (10_000 + gap_bps) / 10_000).max(100);
        let move_bps: i64 = rng.random_range(-400..=420);
        let close = (open * (10_000 + move_bps) / 10_000).max(100);
        let upper_bps: i64 = rng.random_range(0..=250);
        let lower_bps: i64 = rng.random_range(0..=250);
        let high = open.max(close) * (10_000 + upper_bps) / 10_000;
        let low = (open.min(close) * (10_000 - lower_bps) / 10_000).max(1);
        let volume = rng.random_range(1_000_000..=90_000_000u64);
        bars.push(
            OhlcvBar::new(
                date,
                Price::from_ticks(open),
                Price::from_ticks(high),
                Price::from_ticks(low),
                Price::from_ticks(close),
                volume,
            )
            .expect("random walk produces valid bars"),
        );
        prev_close = close;
    }
    bars
}

pub fn random_walk_series(symbol_id: &str, len: usize, seed: u64) -> Series {
    Series::new(SymbolId::from_opaque(symbol_id), random_walk_bars(len, seed))
        .expect("random walk series is valid")
}

/// Renders an ingest-format CSV with one random walk per ticker, rows
/// interleaved by date the way exchange dumps usually are.
pub fn synthetic_csv(tickers: &[&str], days: usize, seed: u64) -> String {
    let per_ticker: Vec<Vec<OhlcvBar>> = tickers
        .iter()
        .enumerate()
        .map(|(i, _)| random_walk_bars(days, seed.wrapping_add(i as u64 * 7919)))
        .collect();
    let mut out = String::from("symbol,date,open,high,low,close,volume\n");
    for day in 0..days {
        for (ticker, bars) in tickers.iter().zip(&per_ticker) {
            let b = &bars[day];
            let _ = writeln!(
                out,
                "{ticker},{},{},{},{},{},{}",
                b.date, b.open, b.high, b.low, b.close, b.volume
            );
        }
    }
    out
}
