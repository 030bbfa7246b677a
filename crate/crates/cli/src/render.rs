use image::{Rgb, RgbImage};

use setseg_core::Segmentation;

const GAP: u32 = 4;

/// Evenly spaced hues; the golden-ratio step keeps neighbouring ids apart.
fn class_color(class: usize) -> Rgb<u8> {
    let h = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let (s, v) = (0.65, 0.92);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |u: f64| ((u + m) * 255.0).round() as u8;
    Rgb([to(r), to(g), to(b)])
}

fn paint(img: &mut RgbImage, seg: &Segmentation, top: u32, scale: u32, height: u32) {
    for (class, start, end) in seg.intervals() {
        let color = class_color(class);
        for x in start as u32 * scale..end as u32 * scale {
            for y in top..top + height {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Prediction on top, ground truth below when given.
pub fn strip(
    pred: &Segmentation,
    truth: Option<&Segmentation>,
    scale: u32,
    row_height: u32,
) -> RgbImage {
    let width = (pred.total_len() as u32 * scale).max(1);
    let rows = if truth.is_some() { 2 } else { 1 };
    let height = rows * row_height + (rows - 1) * GAP;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    paint(&mut img, pred, 0, scale, row_height);
    if let Some(t) = truth {
        paint(&mut img, t, row_height + GAP, scale, row_height);
    }
    img
}
