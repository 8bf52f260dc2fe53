//! Fixtures shared by the integration tests. Not every test uses every helper.
#![allow(dead_code)]

pub mod fake_server;

use kline_corpus::market::SymbolId;
use kline_corpus::render::{render, RenderedChart};
use kline_corpus::sampler::{ChartSpec, ChartStyle, ChartType, MaPeriod, Window};
use kline_corpus::synth::random_walk_series;

pub struct GoldenFixture {
    pub name: &'static str,
    pub series_seed: u64,
    pub start: usize,
    pub total_len: usize,
    pub prompt_len: usize,
    pub chart_type: ChartType,
    pub style: ChartStyle,
    pub ma: &'static [MaPeriod],
    pub volume: bool,
    /// SHA-256 of the encoded PNG.
    pub sha256: &'static str,
}

use ChartStyle::*;
use ChartType::*;
use MaPeriod::*;

pub const GOLDEN: [GoldenFixture; 5] = [
    GoldenFixture {
        name: "candle-light-all-ma-volume",
        series_seed: 11,
        start: 10,
        total_len: 70,
        prompt_len: 50,
        chart_type: Candlestick,
        style: Light,
        ma: &[Three, Six, Nine],
        volume: true,
        sha256: "63574e164c0cc2e0200a55a0c19e5a976aab1dce3fac5658490859595bf44283",
    },
    GoldenFixture {
        name: "line-dark-plain",
        series_seed: 12,
        start: 0,
        total_len: 60,
        prompt_len: 36,
        chart_type: Line,
        style: Dark,
        ma: &[],
        volume: false,
        sha256: "e37d42ca9636f1fe65ea801f6078e08e1a5754eb59e865d1b91b63f0dc83ebbd",
    },
    GoldenFixture {
        name: "candle-print-ma6",
        series_seed: 13,
        start: 100,
        total_len: 80,
        prompt_len: 64,
        chart_type: Candlestick,
        style: Print,
        ma: &[Six],
        volume: false,
        sha256: "f5d3ae8e63591f1200c14f210c692985f78caab2daae6f8a5a10621f5e16883b",
    },
    GoldenFixture {
        name: "line-high-contrast-ma3-ma9-volume",
        series_seed: 14,
        start: 33,
        total_len: 65,
        prompt_len: 45,
        chart_type: Line,
        style: HighContrast,
        ma: &[Three, Nine],
        volume: true,
        sha256: "f2cc2f31d1a6c9db6730c4dcec9340e4c7b3fa5c05c7c6d97836cb9d1f22cfc6",
    },
    GoldenFixture {
        name: "candle-muted-volume",
        series_seed: 15,
        start: 7,
        total_len: 78,
        prompt_len: 55,
        chart_type: Candlestick,
        style: Muted,
        ma: &[],
        volume: true,
        sha256: "0c68839513179868ac8779c61d7371f516234cde16c4a6d41cca06f86957ffa2",
    },
];

impl GoldenFixture {
    pub fn render(&self) -> RenderedChart {
        let series = random_walk_series("sym_golden", 200, self.series_seed);
        let window = Window {
            symbol_id: SymbolId::from_opaque("sym_golden"),
            start: self.start,
            total_len: self.total_len,
            prompt_len: self.prompt_len,
        };
        let spec = ChartSpec {
            chart_type: self.chart_type,
            style: self.style,
            ma_periods: self.ma.to_vec(),
            show_volume: self.volume,
            width_px: 640,
            height_px: 480,
            seed: self.series_seed,
        };
        render(&window, window.prompt_bars(&series), &spec).expect("fixture renders")
    }
}
