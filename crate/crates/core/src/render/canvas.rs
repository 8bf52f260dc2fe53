use super::font;

pub type Rgb = [u8; 3];

/// A plain RGB raster with integer-coordinate drawing primitives. Everything is
/// aliased on purpose so output bytes depend only on the inputs.
pub struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&background);
        }
        Canvas {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn put(&mut self, x: i32, y: i32, color: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            return;
        }
        let idx = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[idx..idx + 3].copy_from_slice(&color);
    }

    pub fn get(&self, x: i32, y: i32) -> Option<Rgb> {
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            return None;
        }
        let idx = (y as usize * self.width as usize + x as usize) * 3;
        Some([self.pixels[idx], self.pixels[idx + 1], self.pixels[idx + 2]])
    }

    /// Fills the inclusive rectangle spanned by the two corners.
    pub fn fill_rect(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb) {
        let (xa, xb) = (x0.min(x1), x0.max(x1));
        let (ya, yb) = (y0.min(y1), y0.max(y1));
        for y in ya..=yb {
            for x in xa..=xb {
                self.put(x, y, color);
            }
        }
    }

    pub fn stroke_rect(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb) {
        self.hline(x0, x1, y0, color);
        self.hline(x0, x1, y1, color);
        self.vline(x0, y0, y1, color);
        self.vline(x1, y0, y1, color);
    }

    pub fn hline(&mut self, x0: i32, x1: i32, y: i32, color: Rgb) {
        self.fill_rect(x0, y, x1, y, color);
    }

    pub fn vline(&mut self, x: i32, y0: i32, y1: i32, color: Rgb) {
        self.fill_rect(x, y0, x, y1, color);
    }

    /// Horizontal line drawn as 2-on/2-off dashes.
    pub fn dotted_hline(&mut self, x0: i32, x1: i32, y: i32, color: Rgb) {
        for x in x0.min(x1)..=x0.max(x1) {
            if (x - x0) % 4 < 2 {
                self.put(x, y, color);
            }
        }
    }

    pub fn dotted_vline(&mut self, x: i32, y0: i32, y1: i32, color: Rgb) {
        for y in y0.min(y1)..=y0.max(y1) {
            if (y - y0) % 4 < 2 {
                self.put(x, y, color);
            }
        }
    }

    /// Bresenham segment, thickened downward by `thickness - 1` pixels.
    pub fn line(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, thickness: i32, color: Rgb) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y) = (x0, y0);
        let mut err = dx + dy;
        loop {
            for t in 0..thickness.max(1) {
                self.put(x, y + t, color);
            }
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn polyline(&mut self, points: &[(i32, i32)], thickness: i32, color: Rgb) {
        match points {
            [] => {}
            [(x, y)] => self.line(*x, *y, *x, *y, thickness, color),
            _ => {
                for seg in points.windows(2) {
                    self.line(seg[0].0, seg[0].1, seg[1].0, seg[1].1, thickness, color);
                }
            }
        }
    }

    /// Draws `text` with its top-left corner at `(x, y)`.
    pub fn text(&mut self, x: i32, y: i32, text: &str, color: Rgb) {
        for (i, c) in text.chars().enumerate() {
            let rows = font::glyph(c);
            let gx = x + i as i32 * font::ADVANCE;
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..font::GLYPH_WIDTH {
                    if bits & (1 << (font::GLYPH_WIDTH - 1 - rx)) != 0 {
                        self.put(gx + rx, y + ry as i32, color);
                    }
                }
            }
        }
    }

    /// Encodes as an 8-bit RGB PNG with fixed filter and deflate level and no
    /// ancillary chunks, so identical pixels always produce identical bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>, png::EncodingError> {
        let mut out = Vec::new();
        {
            let mut encoder = png::Encoder::new(&mut out, self.width, self.height);
            encoder.set_color(png::ColorType::Rgb);
            encoder.set_depth(png::BitDepth::Eight);
            encoder.set_deflate_compression(png::DeflateCompression::Level(6));
            encoder.set_filter(png::Filter::Up);
            let mut writer = encoder.write_header()?;
            writer.write_image_data(&self.pixels)?;
            writer.finish()?;
        }
        Ok(out)
    }
}
