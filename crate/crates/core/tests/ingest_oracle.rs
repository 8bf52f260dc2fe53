use std::collections::BTreeMap;
use std::fs;

use proptest::prelude::*;

use kline_corpus::market::{load_many, Anonymizer, IngestOptions};

/// A row as written to the CSV, prices in ticks.
#[derive(Debug, Clone)]
struct Row {
    ticker: String,
    day: u32,
    open: i64,
    high: i64,
    low: i64,
    close: i64,
    volume: u64,
}

fn fmt_ticks(t: i64) -> String {
    format!("{}.{:04}", t / 10_000, t % 10_000)
}

fn date(day: u32) -> String {
    (chrono::NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Days::new(day as u64))
        .format("%Y-%m-%d")
        .to_string()
}

fn row_strategy() -> impl Strategy<Value = Row> {
    (0usize..4, 0u32..40, 10_000i64..2_000_000, 0i64..5_000, 0i64..5_000, 0u8..=100, 1u64..1_000_000_000).prop_map(
        |(t, day, open, up, down, pos, volume)| {
            let low = (open - down).max(1);
            let high = open + up;
            let close = low + (high - low) * pos as i64 / 100;
            Row {
                ticker: ["600000", "000001", "300750", "688981"][t].to_string(),
                day,
                open,
                high,
                low,
                close,
                volume,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Interleaved multi-symbol input equals grouping by ticker, then sorting
    /// by date with the first occurrence of a duplicate date winning.
    #[test]
    fn interleaved_rows_match_group_then_sort(rows in proptest::collection::vec(row_strategy(), 1..200)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.csv");
        let mut text = String::from("symbol,date,open,high,low,close,volume\n");
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.ticker, date(r.day), fmt_ticks(r.open), fmt_ticks(r.high), fmt_ticks(r.low), fmt_ticks(r.close), r.volume
            ));
        }
        fs::write(&path, text).unwrap();
        let report = load_many(&[path], &IngestOptions { max_reject_rate: 1.0, ..IngestOptions::default() }).unwrap();

        let mut groups: BTreeMap<String, BTreeMap<u32, Row>> = BTreeMap::new();
        let mut dupes = 0;
        for r in &rows {
            match groups.entry(r.ticker.clone()).or_default().entry(r.day) {
                std::collections::btree_map::Entry::Occupied(_) => dupes += 1,
                std::collections::btree_map::Entry::Vacant(v) => {
                    v.insert(r.clone());
                }
            }
        }
        prop_assert_eq!(report.rejected.len(), dupes);
        prop_assert_eq!(report.rows_read, rows.len());
        prop_assert_eq!(report.series.len(), groups.len());

        let anon = Anonymizer::default();
        let mut expected: Vec<(String, Vec<Row>)> = groups
            .into_iter()
            .map(|(t, g)| (anon.opaque_id(&t).to_string(), g.into_values().collect()))
            .collect();
        expected.sort_by(|a, b| a.0.cmp(&b.0));
        for (series, (id, want)) in report.series.iter().zip(&expected) {
            prop_assert_eq!(series.symbol_id().as_str(), id.as_str());
            let got: Vec<(String, i64, i64, i64, i64, u64)> = series
                .bars()
                .iter()
                .map(|b| (b.date.to_string(), b.open.ticks(), b.high.ticks(), b.low.ticks(), b.close.ticks(), b.volume))
                .collect();
            let want: Vec<(String, i64, i64, i64, i64, u64)> = want
                .iter()
                .map(|r| (date(r.day), r.open, r.high, r.low, r.close, r.volume))
                .collect();
            prop_assert_eq!(got, want);
        }
        for t in report.ticker_map.tickers() {
            prop_assert!(report.series.iter().all(|s| !s.symbol_id().as_str().contains(t)));
        }
    }
}

#[test]
fn rows_split_across_files_merge() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "symbol,date,open,high,low,close,volume\n600000,2020-01-03,10,11,9,10.5,100\n").unwrap();
    fs::write(
        &b,
        "symbol,date,open,high,low,close,volume\n600000,2020-01-02,10,10,10,10,100\n600000,2020-01-03,1,1,1,1,1\n",
    )
    .unwrap();
    let report = load_many(&[a, b], &IngestOptions { max_reject_rate: 0.5, ..IngestOptions::default() }).unwrap();
    let bars = report.series[0].bars();
    assert_eq!(bars.len(), 2);
    assert_eq!(bars[0].date.to_string(), "2020-01-02");
    assert_eq!(bars[1].close.to_string(), "10.5000");
    assert_eq!(report.rejected.len(), 1);
}
