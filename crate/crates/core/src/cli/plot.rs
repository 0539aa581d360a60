use std::path::Path;

use image::{Rgb, RgbImage};

use crate::{Error, Result};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: f64 = 32.0;

/// One polyline of a plot.
#[derive(Clone, Debug)]
pub struct Series {
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(color: [u8; 3], points: Vec<(f64, f64)>) -> Self {
        Self { color, points }
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

/// Writes a line plot of `series` on shared axes, optionally with a
/// logarithmic y axis. Non-finite (or, in log mode, non-positive) values
/// are dropped.
pub fn line_plot(path: &Path, series: &[Series], log_y: bool) -> Result<()> {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_y || *y > 0.0))
                .map(|&(x, y)| (x, tf(y)))
                .collect()
        })
        .collect();
    let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::InvalidArgument(format!("nothing to plot in {}", path.display())));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &&(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let (w, h) = (WIDTH as f64, HEIGHT as f64);
    let to_px = |(x, y): (f64, f64)| {
        (
            MARGIN + (x - x0) / (x1 - x0) * (w - 2.0 * MARGIN),
            h - MARGIN - (y - y0) / (y1 - y0) * (h - 2.0 * MARGIN),
        )
    };
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([90, 90, 90]);
    let (l, r, t, b) = (MARGIN, w - MARGIN, MARGIN, h - MARGIN);
    for (a, c) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
        draw_line(&mut img, a, c, axis);
    }
    for (s, p) in series.iter().zip(&pts) {
        let c = Rgb(s.color);
        if p.len() == 1 {
            let q = to_px(p[0]);
            draw_line(&mut img, (q.0 - 2.0, q.1), (q.0 + 2.0, q.1), c);
        }
        for pair in p.windows(2) {
            draw_line(&mut img, to_px(pair[0]), to_px(pair[1]), c);
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
