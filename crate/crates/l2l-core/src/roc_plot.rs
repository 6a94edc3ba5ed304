//! Minimal ROC curve renderer: curve, chance diagonal and an AUC label on a
//! fixed-size RGB canvas, written as an 8-bit PNG. No plotting dependency;
//! lines are Bresenham segments and the label uses a small built-in 5x7
//! bitmap font.

use std::path::Path;

use crate::anomaly::RocCurve;
use crate::error::{Error, Result};

const SIZE: usize = 512;
const MARGIN: usize = 48;

const BG: [u8; 3] = [255, 255, 255];
const AXIS: [u8; 3] = [30, 30, 30];
const GRID: [u8; 3] = [220, 220, 220];
const DIAGONAL: [u8; 3] = [160, 160, 160];
const CURVE: [u8; 3] = [20, 90, 200];

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        let mut px = vec![0u8; SIZE * SIZE * 3];
        for p in px.chunks_exact_mut(3) {
            p.copy_from_slice(&BG);
        }
        Canvas { px }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
            let i = (y as usize * SIZE + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3], dash: bool) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y) = (x0, y0);
        let mut err = dx + dy;
        let mut step = 0i64;
        loop {
            if !dash || (step / 4) % 2 == 0 {
                self.set(x, y, c);
            }
            if x == x1 && y == y1 {
                break;
            }
            step += 1;
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
}

/// 5x7 glyphs for the AUC annotation, one bit per pixel, row-major.
fn glyph(ch: char) -> Option<[u8; 7]> {
    // Each byte holds 5 bits (MSB-first) of one glyph row.
    let g: [u8; 7] = match ch {
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
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        ' ' => [0; 7],
        _ => return None,
    };
    Some(g)
}

fn draw_text(canvas: &mut Canvas, text: &str, x: usize, y: usize, c: [u8; 3]) {
    let scale = 2usize;
    let mut cx = x;
    for ch in text.chars() {
        if let Some(rows) = glyph(ch) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if row & (0x10 >> rx) != 0 {
                        for oy in 0..scale {
                            for ox in 0..scale {
                                canvas.set(
                                    (cx + rx * scale + ox) as i64,
                                    (y + ry * scale + oy) as i64,
                                    c,
                                );
                            }
                        }
                    }
                }
            }
        }
        cx += 6 * scale;
    }
}

fn to_pixel(fpr: f64, tpr: f64) -> (i64, i64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    let x = MARGIN as f64 + fpr * span;
    let y = (SIZE - MARGIN) as f64 - tpr * span;
    (x.round() as i64, y.round() as i64)
}

/// Render the curve with its chance diagonal and AUC annotation to `path`.
pub fn render_roc_plot(curve: &RocCurve, auc: f64, path: &Path) -> Result<()> {
    if curve.points.len() < 2 {
        return Err(Error::InvalidArgument("ROC curve needs at least two points".into()));
    }
    let mut canvas = Canvas::new();

    // Grid every 0.25, then axes.
    for i in 1..4 {
        let f = i as f64 * 0.25;
        let (gx, _) = to_pixel(f, 0.0);
        let (_, gy) = to_pixel(0.0, f);
        canvas.line(gx, MARGIN as i64, gx, (SIZE - MARGIN) as i64, GRID, false);
        canvas.line(MARGIN as i64, gy, (SIZE - MARGIN) as i64, gy, GRID, false);
    }
    let (ox, oy) = to_pixel(0.0, 0.0);
    let (mx, _) = to_pixel(1.0, 0.0);
    let (_, my) = to_pixel(0.0, 1.0);
    canvas.line(ox, oy, mx, oy, AXIS, false);
    canvas.line(ox, oy, ox, my, AXIS, false);

    // Chance diagonal, dashed.
    let (dx0, dy0) = to_pixel(0.0, 0.0);
    let (dx1, dy1) = to_pixel(1.0, 1.0);
    canvas.line(dx0, dy0, dx1, dy1, DIAGONAL, true);

    // Curve segments.
    for w in curve.points.windows(2) {
        let (x0, y0) = to_pixel(w[0].0, w[0].1);
        let (x1, y1) = to_pixel(w[1].0, w[1].1);
        canvas.line(x0, y0, x1, y1, CURVE, false);
    }

    draw_text(&mut canvas, &format!("AUC={auc:.3}"), MARGIN + 8, MARGIN / 2, AXIS);

    let buf = image::RgbImage::from_raw(SIZE as u32, SIZE as u32, canvas.px)
        .expect("canvas buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::InvalidArgument(format!("png encode failed for {}: {e}", path.display())))
}

/// CSV of `(threshold, fpr, tpr)` rows matching the curve's points.
pub fn roc_to_csv(curve: &RocCurve) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for (t, (fpr, tpr)) in curve.thresholds.iter().zip(curve.points.iter()) {
        s.push_str(&format!("{t},{fpr},{tpr}\n"));
    }
    s
}
