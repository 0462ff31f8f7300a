use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::{HandPoseSequence, SINGLE_HAND_DIM};
use crate::error::{Error, Result};

const PANEL_W: u32 = 640;
const PANEL_H: u32 = 160;
const MARGIN: u32 = 8;
/// Axis-angle components drawn, one panel each: both wrists' three axes.
const CHANNELS: [usize; 6] = [0, 1, 2, SINGLE_HAND_DIM, SINGLE_HAND_DIM + 1, SINGLE_HAND_DIM + 2];
const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
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

/// Renders the wrist joint-angle time series of every sample as a PNG,
/// one panel per component and one color per sample.
pub fn plot_samples(samples: &[HandPoseSequence], path: &Path) -> Result<()> {
    let frames = samples.first().map(HandPoseSequence::len).unwrap_or(0);
    if frames == 0 {
        return Err(Error::validation("samples", "nothing to plot"));
    }
    let height = CHANNELS.len() as u32 * PANEL_H;
    let mut img = RgbImage::from_pixel(PANEL_W, height, Rgb([255, 255, 255]));
    for (p, &c) in CHANNELS.iter().enumerate() {
        let top = p as u32 * PANEL_H;
        for x in 0..PANEL_W {
            img.put_pixel(x, top, Rgb([200, 200, 200]));
        }
        let values = samples.iter().flat_map(|s| s.frames().column(c).to_vec());
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let span = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
        let inner_w = f64::from(PANEL_W - 2 * MARGIN);
        let inner_h = f64::from(PANEL_H - 2 * MARGIN);
        let to_px = |t: usize, v: f64| -> (i64, i64) {
            let x = f64::from(MARGIN) + inner_w * t as f64 / (frames.max(2) - 1) as f64;
            let y = f64::from(top + MARGIN) + inner_h * (1.0 - (v - lo) / span);
            (x.round() as i64, y.round() as i64)
        };
        for (k, s) in samples.iter().enumerate() {
            let color = Rgb(PALETTE[k % PALETTE.len()]);
            let col = s.frames().column(c);
            for t in 1..col.len() {
                draw_line(&mut img, to_px(t - 1, col[t - 1]), to_px(t, col[t]), color);
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path)?;
    Ok(())
}
