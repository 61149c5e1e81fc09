//! Minimal static chart rendering to PNG: line/step charts and bar charts
//! with numeric tick labels from a built-in 5x7 digit font. Enough to read a
//! loss curve; not a plotting library.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const WIDTH: u32 = 900;
const HEIGHT: u32 = 560;
const MARGIN_L: u32 = 70;
const MARGIN_R: u32 = 20;
const MARGIN_T: u32 = 20;
const MARGIN_B: u32 = 45;

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [127, 127, 127],
];

/// One named polyline.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// 5x7 glyphs for the characters tick labels need.
fn glyph(c: char) -> Option<[u8; 7]> {
    // Each byte is one row, low 5 bits used, MSB-left.
    let g = match c {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        '-' => [0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00],
        'e' => [0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e],
        ' ' => [0; 7],
        _ => return None,
    };
    Some(g)
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, row) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if row & (0x10 >> rx) != 0 {
                        let px = cx + rx as i64;
                        let py = y + ry as i64;
                        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height()
                        {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
        cx += 6;
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 0.01 && a < 10000.0 {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() {
            "0".into()
        } else {
            s
        }
    } else {
        format!("{v:.1e}")
    }
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let w = (WIDTH - MARGIN_L - MARGIN_R) as f64;
        let h = (HEIGHT - MARGIN_T - MARGIN_B) as f64;
        let fx = MARGIN_L as f64 + (x - self.x_min) / (self.x_max - self.x_min).max(1e-12) * w;
        let fy = (HEIGHT - MARGIN_B) as f64
            - (y - self.y_min) / (self.y_max - self.y_min).max(1e-12) * h;
        (fx, fy)
    }
}

fn chart_canvas(frame: &Frame) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let grid = Rgb([225, 225, 225]);
    let label = Rgb([60, 60, 60]);

    for i in 0..=5 {
        let ty = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 5.0;
        let (_, py) = frame.map(frame.x_min, ty);
        draw_line(
            &mut img,
            MARGIN_L as f64,
            py,
            (WIDTH - MARGIN_R) as f64,
            py,
            grid,
        );
        draw_text(&mut img, 4, py as i64 - 3, &format_tick(ty), label);
    }
    for i in 0..=5 {
        let tx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 5.0;
        let (px, _) = frame.map(tx, frame.y_min);
        draw_text(
            &mut img,
            px as i64 - 8,
            (HEIGHT - MARGIN_B + 10) as i64,
            &format_tick(tx),
            label,
        );
    }
    // Axes on top of the grid.
    draw_line(
        &mut img,
        MARGIN_L as f64,
        MARGIN_T as f64,
        MARGIN_L as f64,
        (HEIGHT - MARGIN_B) as f64,
        axis,
    );
    draw_line(
        &mut img,
        MARGIN_L as f64,
        (HEIGHT - MARGIN_B) as f64,
        (WIDTH - MARGIN_R) as f64,
        (HEIGHT - MARGIN_B) as f64,
        axis,
    );
    img
}

fn bounds(series: &[Series]) -> Result<Frame> {
    let mut pts = series.iter().flat_map(|s| s.points.iter());
    let first = pts
        .next()
        .ok_or_else(|| Error::invalid("nothing to plot"))?;
    let mut frame = Frame {
        x_min: first.0,
        x_max: first.0,
        y_min: first.1,
        y_max: first.1,
    };
    for (x, y) in series.iter().flat_map(|s| s.points.iter()) {
        frame.x_min = frame.x_min.min(*x);
        frame.x_max = frame.x_max.max(*x);
        frame.y_min = frame.y_min.min(*y);
        frame.y_max = frame.y_max.max(*y);
    }
    if frame.x_max == frame.x_min {
        frame.x_max += 1.0;
        frame.x_min -= 1.0;
    }
    if frame.y_max == frame.y_min {
        frame.y_max += 1.0;
        frame.y_min -= 1.0;
    }
    Ok(frame)
}

/// Render polylines with shared axes. Colors follow series order.
pub fn render_line_chart(series: &[Series], path: &Path) -> Result<()> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::invalid("nothing to plot"));
    }
    let frame = bounds(series)?;
    let mut img = chart_canvas(&frame);
    for (si, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        for w in s.points.windows(2) {
            let (x0, y0) = frame.map(w[0].0, w[0].1);
            let (x1, y1) = frame.map(w[1].0, w[1].1);
            draw_line(&mut img, x0, y0, x1, y1, color);
        }
        // Mark the points so single-point series stay visible.
        for (x, y) in &s.points {
            let (px, py) = frame.map(*x, *y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (qx, qy) = (px as i64 + dx, py as i64 + dy);
                    if qx >= 0 && qy >= 0 && (qx as u32) < WIDTH && (qy as u32) < HEIGHT {
                        img.put_pixel(qx as u32, qy as u32, color);
                    }
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::io(path, e))
}

/// Render labelled vertical bars (labels must be numeric-renderable).
pub fn render_bar_chart(bars: &[(String, f64)], path: &Path) -> Result<()> {
    if bars.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let y_max = bars.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);
    let frame = Frame {
        x_min: 0.0,
        x_max: bars.len() as f64,
        y_min: 0.0,
        y_max: if y_max > 0.0 { y_max * 1.05 } else { 1.0 },
    };
    let mut img = chart_canvas(&frame);
    let slot = (WIDTH - MARGIN_L - MARGIN_R) as f64 / bars.len() as f64;
    for (i, (label, value)) in bars.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        let x0 = MARGIN_L as f64 + slot * (i as f64 + 0.2);
        let x1 = MARGIN_L as f64 + slot * (i as f64 + 0.8);
        let (_, y_top) = frame.map(0.0, *value);
        for x in (x0 as u32)..(x1 as u32) {
            draw_line(&mut img, x as f64, y_top, x as f64, (HEIGHT - MARGIN_B) as f64, color);
        }
        draw_text(
            &mut img,
            ((x0 + x1) / 2.0) as i64 - (3 * label.len() as i64),
            (HEIGHT - MARGIN_B + 22) as i64,
            label,
            Rgb([60, 60, 60]),
        );
    }
    img.save(path).map_err(|e| Error::io(path, e))
}
