//! Deterministic PNG rendering of a window's prompt segment.
//!
//! Charts are drawn with in-crate raster primitives and an embedded bitmap font,
//! so the PNG bytes depend only on the bars and the [`ChartSpec`].

mod canvas;
mod font;
mod indicator;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use canvas::{Canvas, Rgb};
pub use indicator::{average_to_f64, moving_average, Average};

use crate::market::OhlcvBar;
use crate::sampler::{ChartSpec, ChartStyle, ChartType, MaPeriod, Window};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("prompt segment is empty")]
    EmptyPromptSegment,
    #[error("window prompt_len is {expected} but {actual} bars were supplied")]
    SegmentMismatch { expected: usize, actual: usize },
    #[error("PNG encoding failed: {0}")]
    RenderBackendFailure(#[from] png::EncodingError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedChart {
    pub png_bytes: Vec<u8>,
    /// Lowercase hex SHA-256 of `png_bytes`.
    pub content_hash: String,
    pub spec: ChartSpec,
    pub bar_count: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridTreatment {
    Solid,
    Dotted,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Palette {
    pub background: Rgb,
    pub grid: Rgb,
    pub grid_treatment: GridTreatment,
    pub axis: Rgb,
    pub text: Rgb,
    pub up: Rgb,
    pub down: Rgb,
    pub line: Rgb,
    pub ma: [Rgb; 3],
}

impl Palette {
    pub fn for_style(style: ChartStyle) -> Palette {
        match style {
            ChartStyle::Light => Palette {
                background: [255, 255, 255],
                grid: [228, 228, 228],
                grid_treatment: GridTreatment::Solid,
                axis: [110, 110, 110],
                text: [60, 60, 60],
                up: [214, 39, 40],
                down: [44, 160, 44],
                line: [31, 119, 180],
                ma: [[255, 127, 14], [148, 103, 189], [23, 190, 207]],
            },
            ChartStyle::Dark => Palette {
                background: [22, 26, 30],
                grid: [52, 58, 64],
                grid_treatment: GridTreatment::Solid,
                axis: [140, 140, 140],
                text: [200, 200, 200],
                up: [255, 82, 82],
                down: [0, 200, 120],
                line: [90, 170, 255],
                ma: [[255, 200, 0], [255, 105, 180], [0, 220, 220]],
            },
            ChartStyle::HighContrast => Palette {
                background: [0, 0, 0],
                grid: [0, 0, 0],
                grid_treatment: GridTreatment::None,
                axis: [255, 255, 255],
                text: [255, 255, 255],
                up: [0, 255, 0],
                down: [255, 0, 0],
                line: [255, 255, 0],
                ma: [[0, 255, 255], [255, 0, 255], [255, 128, 0]],
            },
            ChartStyle::Muted => Palette {
                background: [245, 241, 232],
                grid: [218, 210, 196],
                grid_treatment: GridTreatment::Dotted,
                axis: [150, 140, 120],
                text: [90, 80, 70],
                up: [190, 110, 100],
                down: [110, 150, 115],
                line: [95, 115, 150],
                ma: [[200, 160, 90], [140, 120, 170], [110, 160, 170]],
            },
            ChartStyle::Print => Palette {
                background: [255, 255, 255],
                grid: [200, 200, 200],
                grid_treatment: GridTreatment::Dotted,
                axis: [0, 0, 0],
                text: [0, 0, 0],
                up: [170, 170, 170],
                down: [40, 40, 40],
                line: [30, 30, 30],
                ma: [[90, 90, 90], [130, 130, 130], [60, 60, 60]],
            },
        }
    }

    pub fn ma_color(&self, period: MaPeriod) -> Rgb {
        match period {
            MaPeriod::Three => self.ma[0],
            MaPeriod::Six => self.ma[1],
            MaPeriod::Nine => self.ma[2],
        }
    }
}

/// Pixel regions of a chart. All bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChartLayout {
    pub plot_left: i32,
    pub plot_right: i32,
    pub price_top: i32,
    pub price_bottom: i32,
    /// `(top, bottom)` of the volume bars when the panel is shown.
    pub volume: Option<(i32, i32)>,
    pub date_label_y: i32,
}

const MARGIN_LEFT: i32 = 6;
const MARGIN_RIGHT: i32 = 52;
const MARGIN_TOP: i32 = 8;
const DATE_STRIP: i32 = 14;

impl ChartLayout {
    /// The volume panel, when shown, takes the bottom fifth of the canvas
    /// (date labels included).
    pub fn for_spec(spec: &ChartSpec) -> ChartLayout {
        let w = spec.width_px as i32;
        let h = spec.height_px as i32;
        let date_label_y = h - DATE_STRIP + 4;
        let (price_bottom, volume) = if spec.show_volume {
            let panel_top = h - h / 5;
            (panel_top - 4, Some((panel_top + 3, h - DATE_STRIP - 2)))
        } else {
            (h - DATE_STRIP - 3, None)
        };
        ChartLayout {
            plot_left: MARGIN_LEFT,
            plot_right: w - MARGIN_RIGHT,
            price_top: MARGIN_TOP,
            price_bottom,
            volume,
            date_label_y,
        }
    }

    pub fn slot_center(&self, index: usize, count: usize) -> i32 {
        let width = (self.plot_right - self.plot_left) as f64;
        let slot = width / count as f64;
        (self.plot_left as f64 + (index as f64 + 0.5) * slot).round() as i32
    }

    fn slot_width(&self, count: usize) -> f64 {
        (self.plot_right - self.plot_left) as f64 / count as f64
    }
}

struct PriceScale {
    lo: f64,
    hi: f64,
    top: i32,
    bottom: i32,
}

impl PriceScale {
    fn new(min: f64, max: f64, top: i32, bottom: i32) -> Self {
        let (mut lo, mut hi) = (min, max);
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            let pad = (hi.abs() * 0.01).max(0.01);
            lo -= pad;
            hi += pad;
        }
        let pad = (hi - lo) * 0.05;
        PriceScale {
            lo: lo - pad,
            hi: hi + pad,
            top,
            bottom,
        }
    }

    fn y(&self, price: f64) -> i32 {
        let t = (self.hi - price) / (self.hi - self.lo);
        (self.top as f64 + t * (self.bottom - self.top) as f64).round() as i32
    }
}

/// Renders the prompt segment of `window` according to `spec`.
pub fn render(
    window: &Window,
    prompt_bars: &[OhlcvBar],
    spec: &ChartSpec,
) -> Result<RenderedChart, RenderError> {
    if prompt_bars.is_empty() {
        return Err(RenderError::EmptyPromptSegment);
    }
    if prompt_bars.len() != window.prompt_len {
        return Err(RenderError::SegmentMismatch {
            expected: window.prompt_len,
            actual: prompt_bars.len(),
        });
    }
    let canvas = draw_chart(prompt_bars, spec);
    let png_bytes = canvas.encode_png()?;
    Ok(RenderedChart {
        content_hash: sha256_hex(&png_bytes),
        png_bytes,
        spec: spec.clone(),
        bar_count: prompt_bars.len(),
    })
}

/// Rasterizes the chart without encoding. Exposed for pixel-level probes.
pub fn draw_chart(bars: &[OhlcvBar], spec: &ChartSpec) -> Canvas {
    let palette = Palette::for_style(spec.style);
    let layout = ChartLayout::for_spec(spec);
    let mut canvas = Canvas::new(spec.width_px, spec.height_px, palette.background);
    let n = bars.len();
    let closes: Vec<_> = bars.iter().map(|b| b.close).collect();

    let (min, max) = match spec.chart_type {
        ChartType::Candlestick => (
            bars.iter().map(|b| b.low).min().unwrap().to_f64(),
            bars.iter().map(|b| b.high).max().unwrap().to_f64(),
        ),
        ChartType::Line => (
            closes.iter().min().unwrap().to_f64(),
            closes.iter().max().unwrap().to_f64(),
        ),
    };
    let scale = PriceScale::new(min, max, layout.price_top, layout.price_bottom);

    draw_grid(&mut canvas, &layout, &scale, &palette, bars);

    match spec.chart_type {
        ChartType::Candlestick => {
            let half_body = ((layout.slot_width(n) * 0.35).floor() as i32).max(1);
            for (i, bar) in bars.iter().enumerate() {
                let x = layout.slot_center(i, n);
                let color = if bar.is_up() { palette.up } else { palette.down };
                canvas.vline(x, scale.y(bar.high.to_f64()), scale.y(bar.low.to_f64()), color);
                let y_open = scale.y(bar.open.to_f64());
                let y_close = scale.y(bar.close.to_f64());
                canvas.fill_rect(x - half_body, y_open, x + half_body, y_close, color);
            }
        }
        ChartType::Line => {
            let points: Vec<(i32, i32)> = closes
                .iter()
                .enumerate()
                .map(|(i, c)| (layout.slot_center(i, n), scale.y(c.to_f64())))
                .collect();
            canvas.polyline(&points, 2, palette.line);
        }
    }

    for &period in &spec.ma_periods {
        let points: Vec<(i32, i32)> = moving_average(&closes, period.days())
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                v.as_ref()
                    .map(|avg| (layout.slot_center(i, n), scale.y(average_to_f64(avg))))
            })
            .collect();
        canvas.polyline(&points, 1, palette.ma_color(period));
    }

    if let Some((top, bottom)) = layout.volume {
        let max_vol = bars.iter().map(|b| b.volume).max().unwrap_or(0).max(1);
        let half = ((layout.slot_width(n) * 0.35).floor() as i32).max(1);
        for (i, bar) in bars.iter().enumerate() {
            let x = layout.slot_center(i, n);
            let h = ((bar.volume as f64 / max_vol as f64) * (bottom - top) as f64).round() as i32;
            if h > 0 {
                let color = if bar.is_up() { palette.up } else { palette.down };
                canvas.fill_rect(x - half, bottom - h + 1, x + half, bottom, color);
            }
        }
        canvas.stroke_rect(
            layout.plot_left - 2,
            top - 2,
            layout.plot_right + 2,
            bottom + 1,
            palette.axis,
        );
    }

    canvas.stroke_rect(
        layout.plot_left - 2,
        layout.price_top - 2,
        layout.plot_right + 2,
        layout.price_bottom + 2,
        palette.axis,
    );
    canvas
}

fn draw_grid(
    canvas: &mut Canvas,
    layout: &ChartLayout,
    scale: &PriceScale,
    palette: &Palette,
    bars: &[OhlcvBar],
) {
    const TICKS: usize = 5;
    let label_x = layout.plot_right + 6;
    for k in 0..TICKS {
        let price = scale.lo + (scale.hi - scale.lo) * (k as f64 + 0.5) / TICKS as f64;
        let y = scale.y(price);
        match palette.grid_treatment {
            GridTreatment::Solid => canvas.hline(layout.plot_left, layout.plot_right, y, palette.grid),
            GridTreatment::Dotted => {
                canvas.dotted_hline(layout.plot_left, layout.plot_right, y, palette.grid)
            }
            GridTreatment::None => {}
        }
        canvas.hline(layout.plot_right + 2, layout.plot_right + 4, y, palette.axis);
        canvas.text(label_x, y - font::GLYPH_HEIGHT / 2, &format!("{price:.2}"), palette.text);
    }

    let n = bars.len();
    let mut label_idx = vec![0, n / 2, n - 1];
    label_idx.dedup();
    let bottom = layout.volume.map_or(layout.price_bottom, |(_, b)| b);
    let canvas_w = canvas.width() as i32;
    for i in label_idx {
        let x = layout.slot_center(i, n);
        match palette.grid_treatment {
            GridTreatment::Solid => canvas.vline(x, layout.price_top, bottom, palette.grid),
            GridTreatment::Dotted => canvas.dotted_vline(x, layout.price_top, bottom, palette.grid),
            GridTreatment::None => {}
        }
        let label = bars[i].date.format("%Y-%m-%d").to_string();
        let w = font::text_width(&label);
        let lx = (x - w / 2).clamp(1, canvas_w - w - 1);
        canvas.text(lx, layout.date_label_y, &label, palette.text);
    }
}

/// Reads the dimensions of a PNG without trusting its extension or size.
pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), png::DecodingError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    Ok((info.width, info.height))
}
