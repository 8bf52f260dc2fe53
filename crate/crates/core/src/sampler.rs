//! Seeded sampling of prompt/predict windows and randomized chart specifications.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::market::{OhlcvBar, Series, SymbolId};

/// The random stream every sampler draws from. ChaCha output is stable across
/// platforms and crate releases, which the determinism guarantees rely on.
pub type SampleRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleError {
    #[error("series has {len} bars, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("no series has at least {min} bars")]
    NoEligibleSeries { min: usize },
    #[error("record id collision: {0}")]
    DuplicateRecordId(RecordId),
    #[error("invalid sampler setting {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartType {
    Candlestick,
    Line,
}

/// The fixed palette set charts are drawn in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartStyle {
    Light,
    Dark,
    HighContrast,
    Muted,
    Print,
}

impl ChartStyle {
    pub const ALL: [ChartStyle; 5] = [
        ChartStyle::Light,
        ChartStyle::Dark,
        ChartStyle::HighContrast,
        ChartStyle::Muted,
        ChartStyle::Print,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ChartStyle::Light => "light",
            ChartStyle::Dark => "dark",
            ChartStyle::HighContrast => "high-contrast",
            ChartStyle::Muted => "muted",
            ChartStyle::Print => "print",
        }
    }
}

/// Moving-average overlay period. Only 3, 6 and 9 days are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum MaPeriod {
    Three,
    Six,
    Nine,
}

impl MaPeriod {
    pub const ALL: [MaPeriod; 3] = [MaPeriod::Three, MaPeriod::Six, MaPeriod::Nine];

    pub fn days(self) -> usize {
        match self {
            MaPeriod::Three => 3,
            MaPeriod::Six => 6,
            MaPeriod::Nine => 9,
        }
    }
}

impl TryFrom<u32> for MaPeriod {
    type Error = String;

    fn try_from(days: u32) -> Result<Self, Self::Error> {
        match days {
            3 => Ok(MaPeriod::Three),
            6 => Ok(MaPeriod::Six),
            9 => Ok(MaPeriod::Nine),
            other => Err(format!("unsupported moving-average period {other}; use 3, 6 or 9")),
        }
    }
}

impl From<MaPeriod> for u32 {
    fn from(p: MaPeriod) -> u32 {
        p.days() as u32
    }
}

/// Knobs for window and chart sampling. Defaults follow the dataset recipe:
/// 60-80 bar windows, 60-80% prompt share, 80/20 candlestick/line mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub min_total_len: usize,
    pub max_total_len: usize,
    pub min_prompt_fraction: f64,
    pub max_prompt_fraction: f64,
    pub candlestick_probability: f64,
    pub ma_periods: Vec<MaPeriod>,
    pub ma_probability: f64,
    pub volume_probability: f64,
    pub styles: Vec<ChartStyle>,
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            min_total_len: 60,
            max_total_len: 80,
            min_prompt_fraction: 0.6,
            max_prompt_fraction: 0.8,
            candlestick_probability: 0.8,
            ma_periods: MaPeriod::ALL.to_vec(),
            ma_probability: 0.5,
            volume_probability: 0.5,
            styles: ChartStyle::ALL.to_vec(),
            width_px: 640,
            height_px: 480,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        let bad = |field, reason: String| Err(SampleError::InvalidConfig { field, reason });
        for (field, p) in [
            ("min_prompt_fraction", self.min_prompt_fraction),
            ("max_prompt_fraction", self.max_prompt_fraction),
            ("candlestick_probability", self.candlestick_probability),
            ("ma_probability", self.ma_probability),
            ("volume_probability", self.volume_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(field, format!("{p} is outside [0, 1]"));
            }
        }
        if self.min_total_len < 2 || self.min_total_len > self.max_total_len {
            return bad(
                "min_total_len",
                format!(
                    "need 2 <= min_total_len <= max_total_len, got {}..{}",
                    self.min_total_len, self.max_total_len
                ),
            );
        }
        if self.min_prompt_fraction > self.max_prompt_fraction {
            return bad("min_prompt_fraction", "exceeds max_prompt_fraction".into());
        }
        for len in self.min_total_len..=self.max_total_len {
            if self.prompt_len_bounds(len).is_none() {
                return bad(
                    "max_prompt_fraction",
                    format!("no prompt length leaves a non-empty predict segment at total length {len}"),
                );
            }
        }
        if self.styles.is_empty() {
            return bad("styles", "at least one style is required".into());
        }
        if self.width_px < 64 || self.height_px < 64 {
            return bad("width_px", "images must be at least 64x64".into());
        }
        Ok(())
    }

    /// Inclusive range of prompt lengths whose fraction of `total_len` lies in the
    /// configured band and leaves at least one predict bar.
    pub fn prompt_len_bounds(&self, total_len: usize) -> Option<(usize, usize)> {
        let frac = |p: usize| p as f64 / total_len as f64;
        let lo = (1..total_len).find(|&p| frac(p) >= self.min_prompt_fraction)?;
        let hi = (1..total_len).rev().find(|&p| frac(p) <= self.max_prompt_fraction)?;
        (lo <= hi).then_some((lo, hi))
    }
}

/// A prompt/predict slice of one series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub symbol_id: SymbolId,
    pub start: usize,
    pub total_len: usize,
    pub prompt_len: usize,
}

impl Window {
    pub fn predict_len(&self) -> usize {
        self.total_len - self.prompt_len
    }

    pub fn prompt_fraction(&self) -> f64 {
        self.prompt_len as f64 / self.total_len as f64
    }

    pub fn prompt_range(&self) -> Range<usize> {
        self.start..self.start + self.prompt_len
    }

    pub fn predict_range(&self) -> Range<usize> {
        self.start + self.prompt_len..self.start + self.total_len
    }

    pub fn prompt_bars<'a>(&self, series: &'a Series) -> &'a [OhlcvBar] {
        &series.bars()[self.prompt_range()]
    }

    pub fn predict_bars<'a>(&self, series: &'a Series) -> &'a [OhlcvBar] {
        &series.bars()[self.predict_range()]
    }

    /// Checks the window law against `config` for a series of `series_len` bars.
    pub fn check(&self, series_len: usize, config: &SamplerConfig) -> Result<(), String> {
        if !(config.min_total_len..=config.max_total_len).contains(&self.total_len) {
            return Err(format!("total_len {} out of range", self.total_len));
        }
        let frac = self.prompt_fraction();
        if frac < config.min_prompt_fraction || frac > config.max_prompt_fraction {
            return Err(format!("prompt fraction {frac} out of range"));
        }
        if self.prompt_len >= self.total_len {
            return Err("empty predict segment".into());
        }
        if self.start + self.total_len > series_len {
            return Err("window runs past end of series".into());
        }
        Ok(())
    }
}

/// Draws a window: length uniform on the configured range (clamped to the series),
/// start uniform over feasible offsets, prompt share uniform on the fraction band.
pub fn sample_window<R: Rng + ?Sized>(
    series: &Series,
    rng: &mut R,
    config: &SamplerConfig,
) -> Result<Window, SampleError> {
    let n = series.len();
    if n < config.min_total_len {
        return Err(SampleError::SeriesTooShort {
            len: n,
            min: config.min_total_len,
        });
    }
    let total_len = rng
        .random_range(config.min_total_len..=config.max_total_len)
        .min(n);
    let start = rng.random_range(0..=n - total_len);
    let fraction = rng.random_range(config.min_prompt_fraction..=config.max_prompt_fraction);
    let (lo, hi) = config
        .prompt_len_bounds(total_len)
        .ok_or(SampleError::InvalidConfig {
            field: "max_prompt_fraction",
            reason: format!("no feasible prompt length at {total_len}"),
        })?;
    // Rounding can push the realized share just outside the band; clamp it back.
    let prompt_len = ((fraction * total_len as f64).round() as usize).clamp(lo, hi);
    Ok(Window {
        symbol_id: series.symbol_id().clone(),
        start,
        total_len,
        prompt_len,
    })
}

/// Randomized rendering configuration for one chart.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChartSpec {
    pub chart_type: ChartType,
    pub style: ChartStyle,
    pub ma_periods: Vec<MaPeriod>,
    pub show_volume: bool,
    pub width_px: u32,
    pub height_px: u32,
    pub seed: u64,
}

impl ChartSpec {
    /// Compact description used in record metadata, e.g. `candlestick/dark/ma3+ma9/vol`.
    pub fn summary(&self) -> String {
        let kind = match self.chart_type {
            ChartType::Candlestick => "candlestick",
            ChartType::Line => "line",
        };
        let ma = if self.ma_periods.is_empty() {
            "no-ma".to_string()
        } else {
            self.ma_periods
                .iter()
                .map(|p| format!("ma{}", p.days()))
                .collect::<Vec<_>>()
                .join("+")
        };
        let vol = if self.show_volume { "vol" } else { "no-vol" };
        format!("{kind}/{}/{ma}/{vol}", self.style.name())
    }
}

pub fn sample_chart_spec<R: Rng + ?Sized>(rng: &mut R, config: &SamplerConfig) -> ChartSpec {
    let chart_type = if rng.random_bool(config.candlestick_probability) {
        ChartType::Candlestick
    } else {
        ChartType::Line
    };
    let mut ma_periods: Vec<MaPeriod> = MaPeriod::ALL
        .into_iter()
        .filter(|_| rng.random_bool(config.ma_probability))
        .filter(|p| config.ma_periods.contains(p))
        .collect();
    ma_periods.sort();
    let show_volume = rng.random_bool(config.volume_probability);
    let style = config.styles[rng.random_range(0..config.styles.len())];
    let seed = rng.random::<u64>();
    ChartSpec {
        chart_type,
        style,
        ma_periods,
        show_volume,
        width_px: config.width_px,
        height_px: config.height_px,
        seed,
    }
}

/// Content-derived record identifier (16 hex digits).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecordId(String);

impl RecordId {
    pub fn derive(window: &Window, spec_seed: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(window.symbol_id.as_str().as_bytes());
        hasher.update([0u8]);
        for v in [
            window.start as u64,
            window.total_len as u64,
            window.prompt_len as u64,
            spec_seed,
        ] {
            hasher.update(v.to_le_bytes());
        }
        RecordId(hex::encode(&hasher.finalize()[..8]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_string(s: impl Into<String>) -> Self {
        RecordId(s.into())
    }
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPlan {
    pub id: RecordId,
    pub window: Window,
    pub spec: ChartSpec,
}

/// Produces `target_count` plans, cycling over eligible series in order.
pub fn plan_corpus<R: Rng + ?Sized>(
    series_list: &[Series],
    target_count: usize,
    rng: &mut R,
    config: &SamplerConfig,
) -> Result<Vec<CorpusPlan>, SampleError> {
    if target_count == 0 {
        return Ok(Vec::new());
    }
    let eligible: Vec<&Series> = series_list
        .iter()
        .filter(|s| s.len() >= config.min_total_len)
        .collect();
    if eligible.is_empty() {
        return Err(SampleError::NoEligibleSeries {
            min: config.min_total_len,
        });
    }
    let mut seen = HashSet::with_capacity(target_count);
    let mut plans = Vec::with_capacity(target_count);
    for i in 0..target_count {
        let series = eligible[i % eligible.len()];
        let window = sample_window(series, rng, config)?;
        let spec = sample_chart_spec(rng, config);
        let id = RecordId::derive(&window, spec.seed);
        if !seen.insert(id.clone()) {
            return Err(SampleError::DuplicateRecordId(id));
        }
        plans.push(CorpusPlan { id, window, spec });
    }
    Ok(plans)
}
