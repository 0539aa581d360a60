use crate::render::Image;
use crate::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for values in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    Ok(if mse <= 0.0 { PSNR_CAP } else { (-10.0 * mse.log10()).min(PSNR_CAP) })
}

fn gaussian_window() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable 11x11 Gaussian filter over the fully covered positions only.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and fully covered window positions, Gaussian
/// window of 11 taps with sigma 1.5, data range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "SSIM needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let k = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..a.channels {
        let plane = |img: &Image, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            (0..w * h).map(|p| f(img.data[p * a.channels + ch], b.data[p * a.channels + ch])).collect()
        };
        let mx = filter_valid(&plane(a, &|x, _| x), w, h, &k);
        let my = filter_valid(&plane(a, &|_, y| y), w, h, &k);
        let mxx = filter_valid(&plane(a, &|x, _| x * x), w, h, &k);
        let myy = filter_valid(&plane(a, &|_, y| y * y), w, h, &k);
        let mxy = filter_valid(&plane(a, &|x, y| x * y), w, h, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean PSNR and mean SSIM over paired images.
pub fn psnr_ssim(pred: &[&Image], truth: &[&Image]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} predictions vs {} references", pred.len(), truth.len())));
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        p += psnr(a, b)?;
        s += ssim(a, b)?;
    }
    let n = pred.len() as f64;
    Ok((p / n, s / n))
}
