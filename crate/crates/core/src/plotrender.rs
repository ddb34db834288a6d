//! Line-plot rendering of windows and zoomed regions.
//!
//! Rendering uses a small built-in rasterizer and bitmap font so output
//! bytes depend only on the input values and the [`PlotConfig`]. The x axis
//! is labeled with indices local to whatever slice is plotted; when grid
//! lines are enabled they are vertical and sit on the x ticks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Window;
use crate::types::{AnomalyInterval, TimeSeries};

pub const MAX_WIDTH_PX: u32 = 2000;
pub const MAX_HEIGHT_PX: u32 = 768;

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotConfig {
    pub width_px: u32,
    pub height_px: u32,
    /// Vertical auxiliary lines at every x tick.
    pub grid: bool,
    pub x_tick_count: u32,
    pub y_tick_count: u32,
    pub line_color: Rgb,
    pub background: Rgb,
    pub axis_color: Rgb,
    pub grid_color: Rgb,
    /// Multiplier for text size and stroke widths.
    pub scale: f64,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            width_px: 1600,
            height_px: 600,
            grid: true,
            x_tick_count: 11,
            y_tick_count: 5,
            line_color: [31, 119, 180],
            background: [255, 255, 255],
            axis_color: [0, 0, 0],
            grid_color: [200, 200, 200],
            scale: 1.0,
        }
    }
}

impl PlotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Config("plot dimensions must be positive".into()));
        }
        if self.width_px > MAX_WIDTH_PX || self.height_px > MAX_HEIGHT_PX {
            return Err(Error::Config(format!(
                "plot size {}x{} exceeds the {MAX_WIDTH_PX}x{MAX_HEIGHT_PX} cap",
                self.width_px, self.height_px
            )));
        }
        if self.x_tick_count == 0 || self.y_tick_count == 0 {
            return Err(Error::Config("tick counts must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("invalid scale {}", self.scale)));
        }
        let layout = Layout::new(self, "0", "-0.00");
        if layout.plot_x1 <= layout.plot_x0 + 1 || layout.plot_y1 <= layout.plot_y0 + 1 {
            return Err(Error::Config(format!(
                "plot size {}x{} is too small for scale {}",
                self.width_px, self.height_px, self.scale
            )));
        }
        Ok(())
    }
}

/// A rendered PNG with the metadata needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub png: Vec<u8>,
    /// Inclusive index range shown on the x axis.
    pub domain: (usize, usize),
    pub config: PlotConfig,
    /// Pixel rectangle of the data area, `(x0, y0, x1, y1)` inclusive.
    pub plot_area: (u32, u32, u32, u32),
    /// Pixel columns covered by grid lines (empty when grid is off).
    pub grid_columns: Vec<u32>,
}

/// Plots a window with local indices `0..width` on the x axis.
pub fn render_window(w: &Window, cfg: &PlotConfig) -> Result<RenderedImage> {
    if w.values.is_empty() {
        return Err(Error::Render("window is empty".into()));
    }
    render_values(&w.values, 0, cfg)
}

/// Index range shown by a zoom on `region` with a margin of
/// `ceil(margin_frac * len(region))` on each side, clamped to the series.
pub fn zoom_domain(series_len: usize, region: AnomalyInterval, margin_frac: f64) -> Result<(usize, usize)> {
    if region.end() >= series_len {
        return Err(Error::InvalidInput(format!(
            "zoom region {region} outside series of length {series_len}"
        )));
    }
    if !(margin_frac >= 0.0 && margin_frac.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid margin fraction {margin_frac}")));
    }
    let m = (margin_frac * region.len() as f64).ceil() as usize;
    Ok((region.start().saturating_sub(m), (region.end() + m).min(series_len - 1)))
}

/// Plots the neighborhood of `region`, labeling the x axis with indices
/// of `series`.
pub fn render_zoom(
    series: &TimeSeries,
    region: AnomalyInterval,
    margin_frac: f64,
    cfg: &PlotConfig,
) -> Result<RenderedImage> {
    let (lo, hi) = zoom_domain(series.len(), region, margin_frac)?;
    render_values(&series.values()[lo..=hi], lo, cfg)
}

/// Plots `values` with the first value at x label `offset`.
pub fn render_values(values: &[f64], offset: usize, cfg: &PlotConfig) -> Result<RenderedImage> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(Error::Render("nothing to plot".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Render("non-finite value".into()));
    }
    let d0 = offset;
    let d1 = offset + values.len() - 1;
    // the axis runs one step past the last point so ticks divide the
    // window length evenly (0, 30, ..., 300 for a 300-point window)
    let axis_end = if values.len() > 1 { d1 + 1 } else { d1 };
    let x_ticks: Vec<usize> = x_tick_values(d0, axis_end, cfg.x_tick_count);

    let (mut vmin, mut vmax) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if vmax - vmin < 1e-12 {
        vmin -= 1.0;
        vmax += 1.0;
    } else {
        let pad = 0.05 * (vmax - vmin);
        vmin -= pad;
        vmax += pad;
    }
    let y_ticks: Vec<f64> = if cfg.y_tick_count == 1 {
        vec![(vmin + vmax) / 2.0]
    } else {
        (0..cfg.y_tick_count)
            .map(|k| vmin + (vmax - vmin) * k as f64 / (cfg.y_tick_count - 1) as f64)
            .collect()
    };
    let y_labels: Vec<String> = y_ticks.iter().map(|&v| format_value(v, vmax - vmin)).collect();
    let widest_y = y_labels.iter().max_by_key(|s| s.len()).cloned().unwrap_or_default();
    let widest_x = axis_end.to_string();
    let layout = Layout::new(cfg, &widest_x, &widest_y);

    let mut canvas = Canvas::new(cfg.width_px, cfg.height_px, cfg.background);
    let x_px = |i: f64| -> i64 {
        if axis_end == d0 {
            ((layout.plot_x0 + layout.plot_x1) / 2) as i64
        } else {
            let f = (i - d0 as f64) / (axis_end - d0) as f64;
            (layout.plot_x0 as f64 + f * (layout.plot_x1 - layout.plot_x0) as f64).round() as i64
        }
    };
    let y_px = |v: f64| -> i64 {
        let f = (v - vmin) / (vmax - vmin);
        (layout.plot_y1 as f64 - f * (layout.plot_y1 - layout.plot_y0) as f64).round() as i64
    };

    let mut grid_columns = Vec::new();
    if cfg.grid {
        for &t in &x_ticks {
            let x = x_px(t as f64);
            for dx in 0..layout.grid_width as i64 {
                let col = x + dx - layout.grid_width as i64 / 2;
                canvas.fill_rect(col, layout.plot_y0 as i64, col, layout.plot_y1 as i64, cfg.grid_color);
                if col >= 0 {
                    grid_columns.push(col as u32);
                }
            }
        }
        grid_columns.sort_unstable();
        grid_columns.dedup();
    }

    // axes
    let aw = layout.axis_width as i64;
    let (px0, py0, px1, py1) = (
        layout.plot_x0 as i64,
        layout.plot_y0 as i64,
        layout.plot_x1 as i64,
        layout.plot_y1 as i64,
    );
    canvas.fill_rect(px0 - aw, py0, px0 - 1, py1 + aw, cfg.axis_color);
    canvas.fill_rect(px0 - aw, py1 + 1, px1, py1 + aw, cfg.axis_color);

    let g = layout.glyph as i64;
    for &t in &x_ticks {
        let x = x_px(t as f64);
        canvas.fill_rect(x, py1 + aw + 1, x + aw - 1, py1 + aw + layout.tick_len as i64, cfg.axis_color);
        let label = t.to_string();
        let w = text_width(&label, layout.glyph) as i64;
        let ty = py1 + aw + layout.tick_len as i64 + 2 * g;
        canvas.text(x - w / 2, ty, &label, layout.glyph, cfg.axis_color);
    }
    for (v, label) in y_ticks.iter().zip(&y_labels) {
        let y = y_px(*v);
        canvas.fill_rect(px0 - aw - layout.tick_len as i64, y, px0 - aw - 1, y + aw - 1, cfg.axis_color);
        let w = text_width(label, layout.glyph) as i64;
        let tx = px0 - aw - layout.tick_len as i64 - 2 * g - w;
        canvas.text(tx, y - 3 * g, label, layout.glyph, cfg.axis_color);
    }

    // series
    let clip = (px0, py0, px1, py1);
    let points: Vec<(i64, i64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (x_px((d0 + i) as f64), y_px(v)))
        .collect();
    if points.len() == 1 {
        canvas.stamp(points[0].0, points[0].1, layout.line_width, cfg.line_color, clip);
    }
    for seg in points.windows(2) {
        canvas.line(seg[0], seg[1], layout.line_width, cfg.line_color, clip);
    }

    Ok(RenderedImage {
        png: canvas.encode_png()?,
        domain: (d0, d1),
        config: cfg.clone(),
        plot_area: (layout.plot_x0, layout.plot_y0, layout.plot_x1, layout.plot_y1),
        grid_columns,
    })
}

/// `count` evenly spaced integer tick positions over `[d0, d1]`.
fn x_tick_values(d0: usize, d1: usize, count: u32) -> Vec<usize> {
    if count == 1 || d0 == d1 {
        return vec![d0];
    }
    let span = (d1 - d0) as f64;
    let mut ticks: Vec<usize> = (0..count)
        .map(|k| d0 + (span * k as f64 / (count - 1) as f64).round() as usize)
        .collect();
    ticks.dedup();
    ticks
}

fn format_value(v: f64, range: f64) -> String {
    let s = if range >= 1e4 || v.abs() >= 1e5 {
        format!("{v:.0}")
    } else if range >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    };
    // avoid "-0.00"
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

struct Layout {
    glyph: u32,
    line_width: u32,
    axis_width: u32,
    grid_width: u32,
    tick_len: u32,
    plot_x0: u32,
    plot_y0: u32,
    plot_x1: u32,
    plot_y1: u32,
}

impl Layout {
    fn new(cfg: &PlotConfig, widest_x: &str, widest_y: &str) -> Self {
        let s = cfg.scale;
        let glyph = ((2.0 * s).round() as u32).max(1);
        let line_width = ((2.0 * s).round() as u32).max(1);
        let axis_width = ((1.5 * s).round() as u32).max(1);
        let grid_width = (s.round() as u32).max(1);
        let tick_len = ((6.0 * s).round() as u32).max(2);
        let left = axis_width + tick_len + 2 * glyph + text_width(widest_y, glyph) + 4 * glyph;
        let half_x = text_width(widest_x, glyph) / 2 + 4 * glyph;
        let right = half_x.max(8 * glyph);
        let top = 8 * glyph;
        let bottom = axis_width + tick_len + 2 * glyph + 7 * glyph + 4 * glyph;
        Self {
            glyph,
            line_width,
            axis_width,
            grid_width,
            tick_len,
            plot_x0: left.min(cfg.width_px.saturating_sub(1)),
            plot_y0: top.min(cfg.height_px.saturating_sub(1)),
            plot_x1: cfg.width_px.saturating_sub(right + 1),
            plot_y1: cfg.height_px.saturating_sub(bottom + 1),
        }
    }
}

struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    fn new(width: u32, height: u32, bg: Rgb) -> Self {
        let mut pixels = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            pixels.extend_from_slice(&bg);
        }
        Self { width, height, pixels }
    }

    fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = ((y as u32 * self.width + x as u32) * 3) as usize;
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.set(x, y, c);
            }
        }
    }

    fn stamp(&mut self, x: i64, y: i64, width: u32, c: Rgb, clip: (i64, i64, i64, i64)) {
        let half = width as i64 / 2;
        for dy in 0..width as i64 {
            for dx in 0..width as i64 {
                let (px, py) = (x + dx - half, y + dy - half);
                if px >= clip.0 && px <= clip.2 && py >= clip.1 && py <= clip.3 {
                    self.set(px, py, c);
                }
            }
        }
    }

    /// Bresenham line drawn with a square brush.
    fn line(&mut self, a: (i64, i64), b: (i64, i64), width: u32, c: Rgb, clip: (i64, i64, i64, i64)) {
        let (mut x, mut y) = a;
        let dx = (b.0 - a.0).abs();
        let dy = -(b.1 - a.1).abs();
        let sx = if a.0 < b.0 { 1 } else { -1 };
        let sy = if a.1 < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.stamp(x, y, width, c, clip);
            if x == b.0 && y == b.1 {
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

    fn text(&mut self, x: i64, y: i64, s: &str, px: u32, c: Rgb) {
        let mut cx = x;
        for ch in s.chars() {
            if let Some(rows) = glyph(ch) {
                for (r, bits) in rows.iter().enumerate() {
                    for col in 0..5 {
                        if bits & (0b10000 >> col) != 0 {
                            let gx = cx + (col * px) as i64;
                            let gy = y + (r as u32 * px) as i64;
                            self.fill_rect(gx, gy, gx + px as i64 - 1, gy + px as i64 - 1, c);
                        }
                    }
                }
            }
            cx += (6 * px) as i64;
        }
    }

    fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Render(e.to_string()))?;
            writer
                .write_image_data(&self.pixels)
                .map_err(|e| Error::Render(e.to_string()))?;
        }
        Ok(out)
    }
}

fn text_width(s: &str, px: u32) -> u32 {
    let n = s.chars().count() as u32;
    if n == 0 {
        0
    } else {
        n * 6 * px - px
    }
}

/// 5x7 glyphs, one row per byte, most significant of the low five bits
/// on the left.
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        _ => return None,
    })
}

/// Decodes a PNG into `(width, height, rgb bytes)`.
pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::Render(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Render(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Render(format!(
            "unexpected PNG format {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}
