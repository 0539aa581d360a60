use super::{render_mask, Image, Observation, Rendered};
use crate::{Error, Result};

/// Color and mask mean squared errors; `total = color + w_bg * mask`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelLoss {
    pub color: f64,
    pub mask: f64,
    pub total: f64,
}

/// Loss gradient with respect to one rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrad {
    pub color: Image,
    pub mask: Image,
}

fn check(rendered: &[Rendered], observed: &[&Observation]) -> Result<usize> {
    if rendered.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} renders vs {} observations",
            rendered.len(),
            observed.len()
        )));
    }
    let mut rays = 0;
    for (r, o) in rendered.iter().zip(observed) {
        if !r.color.same_shape(&o.color) || !r.transmittance.same_shape(&o.mask) {
            return Err(Error::DimensionMismatch(format!(
                "render {}x{} vs observation {}x{} (frame {}, camera {})",
                r.color.width, r.color.height, o.color.width, o.color.height, o.frame, o.camera
            )));
        }
        rays += r.color.width * r.color.height;
    }
    Ok(rays)
}

/// Per-ray squared color error (averaged over channels) plus `w_bg` times the
/// squared coverage error, both averaged over every ray of every view.
pub fn pixel_loss(rendered: &[Rendered], observed: &[&Observation], w_bg: f64) -> Result<PixelLoss> {
    let rays = check(rendered, observed)?;
    if rays == 0 {
        return Ok(PixelLoss::default());
    }
    let mut color = 0.0;
    let mut mask = 0.0;
    for (r, o) in rendered.iter().zip(observed) {
        for (a, b) in r.color.data.iter().zip(&o.color.data) {
            color += (a - b) * (a - b);
        }
        for (t, b) in r.transmittance.data.iter().zip(&o.mask.data) {
            let e = 1.0 - t - b;
            mask += e * e;
        }
    }
    let color = color / (3 * rays) as f64;
    let mask = mask / rays as f64;
    Ok(PixelLoss {
        color,
        mask,
        total: color + w_bg * mask,
    })
}

/// [`pixel_loss`] together with its gradient per view, scaled by `weight`.
pub fn pixel_loss_grad(rendered: &[Rendered], observed: &[&Observation], w_bg: f64, weight: f64) -> Result<(PixelLoss, Vec<ImageGrad>)> {
    let loss = pixel_loss(rendered, observed, w_bg)?;
    let rays = check(rendered, observed)?.max(1) as f64;
    let grads = rendered
        .iter()
        .zip(observed)
        .map(|(r, o)| {
            let cov = render_mask(&r.transmittance);
            let kc = weight * 2.0 / (3.0 * rays);
            let km = weight * w_bg * 2.0 / rays;
            ImageGrad {
                color: Image {
                    data: r.color.data.iter().zip(&o.color.data).map(|(a, b)| kc * (a - b)).collect(),
                    ..r.color.clone()
                },
                mask: Image {
                    data: cov.data.iter().zip(&o.mask.data).map(|(a, b)| km * (a - b)).collect(),
                    ..cov.clone()
                },
            }
        })
        .collect();
    Ok((loss, grads))
}

fn diffs(z: &Image, zr: &Image, mut visit: impl FnMut(usize, usize, bool, f64)) {
    for y in 0..z.height {
        for x in 0..z.width {
            if x + 1 < z.width {
                let e = (z.at(x + 1, y, 0) - z.at(x, y, 0)) - (zr.at(x + 1, y, 0) - zr.at(x, y, 0));
                visit(x, y, true, e);
            }
            if y + 1 < z.height {
                let e = (z.at(x, y + 1, 0) - z.at(x, y, 0)) - (zr.at(x, y + 1, 0) - zr.at(x, y, 0));
                visit(x, y, false, e);
            }
        }
    }
}

fn pair_counts(z: &Image) -> (f64, f64) {
    let h = (z.width.saturating_sub(1) * z.height).max(1) as f64;
    let v = (z.width * z.height.saturating_sub(1)).max(1) as f64;
    (h, v)
}

/// Mean squared difference of horizontal neighbour differences, plus the
/// same for vertical neighbours.
pub fn depth_grad_loss(z: &Image, z_ref: &Image) -> Result<f64> {
    if !z.same_shape(z_ref) {
        return Err(Error::DimensionMismatch("depth maps differ in shape".into()));
    }
    let (nh, nv) = pair_counts(z);
    let (mut lh, mut lv) = (0.0, 0.0);
    diffs(z, z_ref, |_, _, horizontal, e| {
        if horizontal {
            lh += e * e;
        } else {
            lv += e * e;
        }
    });
    Ok(lh / nh + lv / nv)
}

/// Gradient of `weight * depth_grad_loss` with respect to `z`.
pub fn depth_grad_loss_grad(z: &Image, z_ref: &Image, weight: f64) -> Result<Image> {
    if !z.same_shape(z_ref) {
        return Err(Error::DimensionMismatch("depth maps differ in shape".into()));
    }
    let (nh, nv) = pair_counts(z);
    let mut g = Image::new(z.width, z.height, 1, 0.0);
    diffs(z, z_ref, |x, y, horizontal, e| {
        if horizontal {
            let k = weight * 2.0 * e / nh;
            *g.at_mut(x + 1, y, 0) += k;
            *g.at_mut(x, y, 0) -= k;
        } else {
            let k = weight * 2.0 * e / nv;
            *g.at_mut(x, y + 1, 0) += k;
            *g.at_mut(x, y, 0) -= k;
        }
    });
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(color: f64, t: f64) -> Rendered {
        Rendered {
            color: Image::new(4, 3, 3, color),
            transmittance: Image::new(4, 3, 1, t),
            depth: Image::new(4, 3, 1, 0.0),
        }
    }

    fn obs(color: f64, mask: f64) -> Observation {
        Observation {
            frame: 0,
            camera: 0,
            color: Image::new(4, 3, 3, color),
            mask: Image::new(4, 3, 1, mask),
        }
    }

    #[test]
    fn pixel_loss_examples() {
        let o = obs(0.4, 0.5);
        assert_eq!(pixel_loss(&[view(0.4, 0.5)], &[&o], 0.2).unwrap().total, 0.0);
        let l = pixel_loss(&[view(0.5, 0.5)], &[&o], 0.0).unwrap();
        assert!((l.total - 0.01).abs() < 1e-15);
        // coverage 0.75 against mask 0.5: error 0.25 everywhere
        let l = pixel_loss(&[view(0.4, 0.25)], &[&o], 0.2).unwrap();
        assert!((l.total - 0.0125).abs() < 1e-15, "{}", l.total);
        let small = Observation {
            color: Image::new(2, 2, 3, 0.0),
            ..obs(0.0, 0.0)
        };
        assert!(pixel_loss(&[view(0.4, 0.5)], &[&small], 0.2).is_err());
    }

    #[test]
    fn pixel_loss_gradient_matches_differences() {
        let o = obs(0.3, 0.6);
        let mut r = view(0.5, 0.2);
        r.color.data[7] = 0.9;
        r.transmittance.data[3] = 0.7;
        let (_, g) = pixel_loss_grad(std::slice::from_ref(&r), &[&o], 0.2, 1.5).unwrap();
        let h = 1e-6;
        let f = |r: &Rendered| 1.5 * pixel_loss(std::slice::from_ref(r), &[&o], 0.2).unwrap().total;
        let mut a = r.clone();
        a.color.data[7] += h;
        let mut b = r.clone();
        b.color.data[7] -= h;
        assert!(((f(&a) - f(&b)) / (2.0 * h) - g[0].color.data[7]).abs() < 1e-8);
        let mut a = r.clone();
        a.transmittance.data[3] -= h;
        let mut b = r.clone();
        b.transmittance.data[3] += h;
        assert!(((f(&a) - f(&b)) / (2.0 * h) - g[0].mask.data[3]).abs() < 1e-8);
    }

    fn ramp(w: usize, h: usize, sx: f64, sy: f64, c: f64) -> Image {
        let mut z = Image::new(w, h, 1, 0.0);
        for y in 0..h {
            for x in 0..w {
                *z.at_mut(x, y, 0) = sx * x as f64 + sy * y as f64 + c;
            }
        }
        z
    }

    #[test]
    fn depth_loss_examples() {
        let z = ramp(5, 4, 0.25, -0.5, 1.0);
        assert_eq!(depth_grad_loss(&z, &z).unwrap(), 0.0);
        assert_eq!(depth_grad_loss(&ramp(5, 4, 0.25, -0.5, 7.5), &z).unwrap(), 0.0);
        let flat = ramp(5, 4, 0.0, 0.0, 2.0);
        assert_eq!(depth_grad_loss(&ramp(5, 4, 1.0, 0.0, 0.0), &flat).unwrap(), 1.0);
    }

    #[test]
    fn depth_loss_gradient_matches_differences() {
        let z = ramp(4, 3, 0.1, 0.7, 0.0);
        let mut zr = ramp(4, 3, -0.4, 0.2, 1.0);
        *zr.at_mut(2, 1, 0) = 3.0;
        let g = depth_grad_loss_grad(&z, &zr, 2.0).unwrap();
        for i in 0..12 {
            let h = 1e-6;
            let mut a = z.clone();
            a.data[i] += h;
            let mut b = z.clone();
            b.data[i] -= h;
            let fd = 2.0 * (depth_grad_loss(&a, &zr).unwrap() - depth_grad_loss(&b, &zr).unwrap()) / (2.0 * h);
            assert!((fd - g.data[i]).abs() < 1e-7);
        }
    }
}
