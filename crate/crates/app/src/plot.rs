//! PNG rendering of confusion heatmaps and per-class accuracy bars.
//!
//! Text uses a built-in 3x5 bitmap font so output does not depend on
//! system fonts. Layout and colour functions are public so tests can check
//! rendered images structurally.

use image::{Rgb, RgbImage};
use lesionbench_core::metrics::ConfusionMatrix;

pub const GLYPH_W: u32 = 3;
pub const GLYPH_H: u32 = 5;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
pub const BAR_COLOUR: Rgb<u8> = Rgb([49, 110, 170]);

/// Rows of a glyph, most significant of the low three bits leftmost.
pub fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '%' => [0b101, 0b001, 0b010, 0b100, 0b101],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        ' ' => [0; 5],
        _ => return None,
    })
}

/// Width of `text` at `scale`, with one scaled pixel between glyphs.
pub fn text_width(text: &str, scale: u32) -> u32 {
    let n = text.chars().count() as u32;
    if n == 0 {
        return 0;
    }
    n * GLYPH_W * scale + (n - 1) * scale
}

/// Whether the pixel at `(dx, dy)` from the text origin is set.
pub fn text_pixel(text: &str, scale: u32, dx: u32, dy: u32) -> bool {
    let advance = (GLYPH_W + 1) * scale;
    let (i, gx, gy) = (dx / advance, (dx % advance) / scale, dy / scale);
    if gx >= GLYPH_W || gy >= GLYPH_H {
        return false;
    }
    text.chars()
        .nth(i as usize)
        .and_then(glyph)
        .is_some_and(|rows| rows[gy as usize] >> (GLYPH_W - 1 - gx) & 1 == 1)
}

pub fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32, colour: Rgb<u8>) {
    for dy in 0..GLYPH_H * scale {
        for dx in 0..text_width(text, scale) {
            if text_pixel(text, scale, dx, dy) && x + dx < img.width() && y + dy < img.height() {
                img.put_pixel(x + dx, y + dy, colour);
            }
        }
    }
}

fn fill(img: &mut RgbImage, x: u32, y: u32, w: u32, h: u32, colour: Rgb<u8>) {
    for yy in y..(y + h).min(img.height()) {
        for xx in x..(x + w).min(img.width()) {
            img.put_pixel(xx, yy, colour);
        }
    }
}

/// Linear ramp from white (0) to dark blue (`max`).
pub fn cell_colour(count: u64, max: u64) -> Rgb<u8> {
    let t = if max == 0 { 0.0 } else { count as f64 / max as f64 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    Rgb([lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0)])
}

pub fn text_colour(background: Rgb<u8>) -> Rgb<u8> {
    let [r, g, b] = background.0.map(f64::from);
    if 0.299 * r + 0.587 * g + 0.114 * b < 128.0 {
        WHITE
    } else {
        BLACK
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeatmapLayout {
    pub num_classes: u32,
    pub cell: u32,
    pub scale: u32,
    /// Space left of and above the grid for class indices.
    pub margin: u32,
}

impl HeatmapLayout {
    pub fn for_matrix(cm: &ConfusionMatrix) -> Self {
        let scale = 2;
        let c = cm.num_classes() as u32;
        let widest = cm.max_count().to_string().len().max(c.saturating_sub(1).to_string().len());
        let cell = (text_width(&"8".repeat(widest), scale) + 4 * scale).max(28);
        HeatmapLayout {
            num_classes: c,
            cell,
            scale,
            margin: text_width(&c.saturating_sub(1).to_string(), scale) + 6 * scale,
        }
    }

    /// (width, height) of the image.
    pub fn size(&self) -> (u32, u32) {
        let side = self.margin + self.num_classes * self.cell + self.scale;
        (side, side)
    }

    /// Top-left corner of the cell for true class `row`, predicted `col`.
    pub fn cell_origin(&self, row: usize, col: usize) -> (u32, u32) {
        (self.margin + col as u32 * self.cell, self.margin + row as u32 * self.cell)
    }

    /// Top-left corner of `text` centred in a cell.
    pub fn text_origin(&self, row: usize, col: usize, text: &str) -> (u32, u32) {
        let (x, y) = self.cell_origin(row, col);
        (
            x + (self.cell - text_width(text, self.scale)) / 2,
            y + (self.cell - GLYPH_H * self.scale) / 2,
        )
    }
}

/// Rows are true classes, columns predictions; each cell shows its count.
pub fn render_confusion(cm: &ConfusionMatrix) -> RgbImage {
    let layout = HeatmapLayout::for_matrix(cm);
    let (w, h) = layout.size();
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let max = cm.max_count();
    for (r, row) in cm.counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let (x, y) = layout.cell_origin(r, c);
            let bg = cell_colour(count, max);
            fill(&mut img, x, y, layout.cell, layout.cell, bg);
            let text = count.to_string();
            let (tx, ty) = layout.text_origin(r, c, &text);
            draw_text(&mut img, tx, ty, &text, layout.scale, text_colour(bg));
        }
    }
    for i in 0..cm.num_classes() {
        let label = i.to_string();
        let (x, y) = layout.cell_origin(0, i);
        let lx = x + (layout.cell - text_width(&label, layout.scale)) / 2;
        draw_text(&mut img, lx, y - (GLYPH_H + 2) * layout.scale, &label, layout.scale, AXIS);
        let (x, y) = layout.cell_origin(i, 0);
        let ly = y + (layout.cell - GLYPH_H * layout.scale) / 2;
        draw_text(&mut img, x - text_width(&label, layout.scale) - 2 * layout.scale, ly, &label, layout.scale, AXIS);
    }
    img
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BarLayout {
    pub num_classes: u32,
    pub bar_width: u32,
    pub gap: u32,
    pub plot_height: u32,
    pub left: u32,
    pub top: u32,
    pub bottom: u32,
    pub scale: u32,
}

impl BarLayout {
    pub fn new(num_classes: usize) -> Self {
        let scale = 2;
        BarLayout {
            num_classes: num_classes as u32,
            bar_width: 24,
            gap: 10,
            plot_height: 200,
            left: text_width("100", scale) + 6 * scale,
            top: 4 * scale,
            bottom: (GLYPH_H + 4) * scale,
            scale,
        }
    }

    pub fn size(&self) -> (u32, u32) {
        (
            self.left + self.gap + self.num_classes * (self.bar_width + self.gap),
            self.top + self.plot_height + 1 + self.bottom,
        )
    }

    /// y of the x-axis line; bars end just above it.
    pub fn baseline(&self) -> u32 {
        self.top + self.plot_height
    }

    /// (x, y, width, height) of the bar for `accuracy` in [0, 1].
    pub fn bar_rect(&self, class: usize, accuracy: f64) -> (u32, u32, u32, u32) {
        let h = (accuracy.clamp(0.0, 1.0) * self.plot_height as f64).round() as u32;
        let x = self.left + self.gap + class as u32 * (self.bar_width + self.gap);
        (x, self.baseline() - h, self.bar_width, h)
    }
}

/// One bar per class; classes without test samples get no bar.
pub fn render_per_class(per_class: &[Option<f64>]) -> RgbImage {
    let layout = BarLayout::new(per_class.len());
    let (w, h) = layout.size();
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let s = layout.scale;
    fill(&mut img, layout.left - 1, layout.top, 1, layout.plot_height + 1, AXIS);
    fill(&mut img, layout.left - 1, layout.baseline(), w - layout.left + 1, 1, AXIS);
    for (tick, label) in [(0.0, "0"), (0.5, "50"), (1.0, "100")] {
        let y = layout.baseline() - (tick * layout.plot_height as f64).round() as u32;
        fill(&mut img, layout.left - 2 * s, y, 2 * s - 1, 1, AXIS);
        let ty = y.saturating_sub(GLYPH_H * s / 2);
        draw_text(&mut img, layout.left - 3 * s - text_width(label, s), ty, label, s, AXIS);
    }
    for (i, acc) in per_class.iter().enumerate() {
        let (x, y, bw, bh) = layout.bar_rect(i, acc.unwrap_or(0.0));
        if acc.is_some() {
            fill(&mut img, x, y, bw, bh, BAR_COLOUR);
        }
        let label = i.to_string();
        let lx = x + (bw.saturating_sub(text_width(&label, s))) / 2;
        draw_text(&mut img, lx, layout.baseline() + 3 * s, &label, s, AXIS);
    }
    img
}
