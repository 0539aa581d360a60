use super::{Camera, Image, BACKGROUND};
use crate::field::{sigmoid, softplus, trilinear, Aabb, GridField, Stencil8};
use crate::Vec3;

/// Rays stop once transmittance falls below this.
const MIN_TRANSMITTANCE: f64 = 1e-7;

/// Color over the white background, final transmittance and expected depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub color: Image,
    pub transmittance: Image,
    pub depth: Image,
}

/// Node-space gradient produced by [`render_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrad {
    pub sigma: Vec<f64>,
    pub color: Vec<Vec3>,
}

impl RenderGrad {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            sigma: vec![0.0; nodes],
            color: vec![Vec3::zeros(); nodes],
        }
    }

    pub fn add(&mut self, other: &RenderGrad) {
        for (a, b) in self.sigma.iter_mut().zip(&other.sigma) {
            *a += b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            *a += b;
        }
    }
}

struct Sample {
    stencil: Stencil8,
    sigma: f64,
    opacity: f64,
    color: Vec3,
    s: f64,
    transmittance: f64,
}

struct RayResult {
    color: Vec3,
    transmittance: f64,
    depth: f64,
}

/// Parameter interval where the ray lies inside `b`.
fn clip(o: &Vec3, d: &Vec3, b: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < b.min[a] || o[a] > b.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[a];
        let (mut lo, mut hi) = ((b.min[a] - o[a]) * inv, (b.max[a] - o[a]) * inv);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 <= t1).then_some((t0, t1))
}

fn march(field: &GridField, cam: &Camera, px: usize, py: usize, samples: &mut Vec<Sample>) -> RayResult {
    samples.clear();
    let geom = &field.geometry;
    let step = 0.5 * geom.spacing;
    let scale = step / geom.spacing;
    let bg = Vec3::from(BACKGROUND);
    let o = cam.position;
    let d = cam.ray_direction(px, py);
    let mut color = Vec3::zeros();
    let mut t = 1.0;
    let mut depth = 0.0;
    if let Some((t0, t1)) = clip(&o, &d, &geom.bounds()) {
        let lo = t0.max(cam.near);
        let hi = t1.min(cam.far);
        if lo <= hi {
            let j0 = ((lo - cam.near) / step - 0.5).ceil().max(0.0) as usize;
            let j1 = ((hi - cam.near) / step - 0.5).floor();
            let mut j = j0;
            while (j as f64) <= j1 && t >= MIN_TRANSMITTANCE {
                let s = cam.near + (j as f64 + 0.5) * step;
                j += 1;
                let st = trilinear(geom, &(o + s * d));
                let mut sigma = 0.0;
                let mut c = Vec3::zeros();
                for k in 0..8 {
                    sigma += st.weights[k] * field.sigma[st.nodes[k]];
                    c += st.weights[k] * field.color[st.nodes[k]];
                }
                let a = -(-softplus(sigma) * scale).exp_m1();
                color += (t * a) * c;
                depth += t * a * s;
                samples.push(Sample {
                    stencil: st,
                    sigma,
                    opacity: a,
                    color: c,
                    s,
                    transmittance: t,
                });
                t *= 1.0 - a;
            }
        }
    }
    RayResult {
        color: color + t * bg,
        transmittance: t,
        depth,
    }
}

pub fn render(field: &GridField, cam: &Camera) -> Rendered {
    let (w, h) = (cam.width, cam.height);
    let mut out = Rendered {
        color: Image::new(w, h, 3, 0.0),
        transmittance: Image::new(w, h, 1, 1.0),
        depth: Image::new(w, h, 1, 0.0),
    };
    let mut samples = Vec::new();
    for py in 0..h {
        for px in 0..w {
            let r = march(field, cam, px, py, &mut samples);
            for c in 0..3 {
                *out.color.at_mut(px, py, c) = r.color[c];
            }
            *out.transmittance.at_mut(px, py, 0) = r.transmittance;
            *out.depth.at_mut(px, py, 0) = r.depth;
        }
    }
    out
}

/// Color image and final transmittance map.
pub fn render_color(field: &GridField, cam: &Camera) -> (Image, Image) {
    let r = render(field, cam);
    (r.color, r.transmittance)
}

pub fn render_depth(field: &GridField, cam: &Camera) -> Image {
    render(field, cam).depth
}

/// Foreground coverage `1 - T(s_f)`.
pub fn render_mask(transmittance: &Image) -> Image {
    Image {
        data: transmittance.data.iter().map(|t| 1.0 - t).collect(),
        ..transmittance.clone()
    }
}

/// Accumulates into `grad` the node gradient of a loss whose derivatives
/// with respect to the rendered color, coverage mask and depth are given.
pub fn render_backward(
    field: &GridField,
    cam: &Camera,
    d_color: Option<&Image>,
    d_mask: Option<&Image>,
    d_depth: Option<&Image>,
    grad: &mut RenderGrad,
) {
    let geom = &field.geometry;
    let scale = 0.5;
    let bg = Vec3::from(BACKGROUND);
    let mut samples = Vec::new();
    for py in 0..cam.height {
        for px in 0..cam.width {
            let gc = d_color
                .map(|g| Vec3::new(g.at(px, py, 0), g.at(px, py, 1), g.at(px, py, 2)))
                .unwrap_or_else(Vec3::zeros);
            let gm = d_mask.map(|g| g.at(px, py, 0)).unwrap_or(0.0);
            let gz = d_depth.map(|g| g.at(px, py, 0)).unwrap_or(0.0);
            if gc == Vec3::zeros() && gm == 0.0 && gz == 0.0 {
                continue;
            }
            march(field, cam, px, py, &mut samples);
            let mut u = bg;
            let mut v = 0.0;
            let mut tail = 1.0;
            for smp in samples.iter().rev() {
                let (t, a) = (smp.transmittance, smp.opacity);
                let da = t * (gc.dot(&(smp.color - u)) + gm * tail + gz * (smp.s - v));
                let dc = (t * a) * gc;
                u = a * smp.color + (1.0 - a) * u;
                v = a * smp.s + (1.0 - a) * v;
                tail *= 1.0 - a;
                let ds = da * scale * (1.0 - a) * sigmoid(smp.sigma);
                let st = &smp.stencil;
                for k in 0..8 {
                    let w = st.weights[k];
                    if w != 0.0 {
                        grad.sigma[st.nodes[k]] += w * ds;
                        grad.color[st.nodes[k]] += w * dc;
                    }
                }
            }
        }
    }
    debug_assert_eq!(grad.sigma.len(), geom.node_count());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GridGeometry, EMPTY_SIGMA};
    use crate::util;
    use rand::Rng;

    fn grid(n: usize) -> GridGeometry {
        GridGeometry::new([n, n, n], 1.0 / (n - 1) as f64, Vec3::zeros()).unwrap()
    }

    fn front_camera(w: usize) -> Camera {
        Camera::look_at(Vec3::new(0.5, 0.5, 3.0), Vec3::new(0.5, 0.5, 0.5), Vec3::y(), 12.0, w, w, 0.5, 5.0).unwrap()
    }

    #[test]
    fn empty_field_renders_background() {
        let f = GridField::empty(grid(8));
        let r = render(&f, &front_camera(6));
        assert!(r.color.data.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert!(r.transmittance.data.iter().all(|&t| (t - 1.0).abs() < 1e-12));
        assert!(r.depth.data.iter().all(|&z| z.abs() < 1e-12));
    }

    #[test]
    fn opaque_red_slab_saturates() {
        let g = grid(16);
        let mut f = GridField::empty(g.clone());
        for idx in 0..g.node_count() {
            if g.coords(idx)[2] >= 12 {
                f.sigma[idx] = 30.0;
                f.color[idx] = Vec3::new(1.0, 0.0, 0.0);
            }
        }
        let r = render(&f, &front_camera(4));
        for py in 0..4 {
            for px in 0..4 {
                assert!((r.color.at(px, py, 0) - 1.0).abs() < 1e-6);
                assert!(r.color.at(px, py, 1) < 1e-6);
                assert!(r.transmittance.at(px, py, 0) < 1e-6);
            }
        }
    }

    #[test]
    fn mask_is_affine_in_transmittance() {
        let t = Image {
            width: 3,
            height: 1,
            channels: 1,
            data: vec![1.0, 0.0, 0.25],
        };
        assert_eq!(render_mask(&t).data, vec![0.0, 1.0, 0.75]);
    }

    fn centre_ray_density<'a>(f: &'a GridField, cam: &'a Camera) -> impl Fn(f64) -> f64 + 'a {
        let o = cam.position;
        let d = cam.ray_direction(1, 1);
        let g = &f.geometry;
        move |s: f64| {
            let p = o + s * d;
            if !g.bounds().contains(&p) {
                return 0.0;
            }
            let st = trilinear(g, &p);
            let sig: f64 = (0..8).map(|k| st.weights[k] * f.sigma[st.nodes[k]]).sum();
            softplus(sig) / g.spacing
        }
    }

    #[test]
    fn single_voxel_matches_scalar_quadrature() {
        let g = grid(9);
        let mut f = GridField::empty(g.clone());
        f.sigma[g.index(4, 4, 4)] = 2.0;
        let cam = front_camera(3);
        let alpha = 1.0 - render(&f, &cam).transmittance.at(1, 1, 0);
        let density = centre_ray_density(&f, &cam);
        let step = 0.5 * g.spacing;
        let mut tau = 0.0;
        let mut j = 0;
        loop {
            let s = cam.near + (j as f64 + 0.5) * step;
            if s > cam.far {
                break;
            }
            tau += density(s) * step;
            j += 1;
        }
        let oracle = -(-tau).exp_m1();
        assert!(oracle > 0.0);
        assert!((alpha - oracle).abs() < 1e-4, "{alpha} vs {oracle}");
    }

    #[test]
    fn smooth_field_converges_to_fine_integral() {
        let g = grid(9);
        let mut f = GridField::filled(g.clone(), -3.0, Vec3::zeros());
        f.sigma[g.index(4, 4, 4)] = 0.5;
        let cam = front_camera(3);
        let alpha = 1.0 - render(&f, &cam).transmittance.at(1, 1, 0);
        let density = centre_ray_density(&f, &cam);
        let n = 200_000;
        let h = (cam.far - cam.near) / n as f64;
        let tau: f64 = (0..n).map(|i| density(cam.near + (i as f64 + 0.5) * h) * h).sum();
        let oracle = -(-tau).exp_m1();
        assert!((alpha - oracle).abs() < 0.05 * oracle, "{alpha} vs {oracle}");
    }

    #[test]
    fn thin_shell_depth() {
        let g = grid(21);
        let mut f = GridField::empty(g.clone());
        for idx in 0..g.node_count() {
            if g.coords(idx)[2] == 14 {
                f.sigma[idx] = 40.0;
            }
        }
        let cam = front_camera(2);
        let r = render(&f, &cam);
        let d = cam.ray_direction(0, 0);
        let s_star = (0.7 - cam.position.z) / d.z;
        assert!((r.depth.at(0, 0, 0) - s_star).abs() < 0.5 * g.spacing, "{} vs {s_star}", r.depth.at(0, 0, 0));
    }

    #[test]
    fn weights_sum_to_coverage_and_density_is_monotone() {
        let g = grid(8);
        let mut rng = util::rng(5);
        let mut f = GridField::empty(g.clone());
        for s in f.sigma.iter_mut() {
            *s = rng.gen_range(-6.0..2.0);
        }
        let cam = front_camera(5);
        let mut samples = Vec::new();
        for py in 0..5 {
            for px in 0..5 {
                let r = march(&f, &cam, px, py, &mut samples);
                let wsum: f64 = samples.iter().map(|s| s.transmittance * s.opacity).sum();
                assert!((wsum - (1.0 - r.transmittance)).abs() < 1e-6);
            }
        }
        let before = render(&f, &cam);
        for s in f.sigma.iter_mut() {
            *s += 0.3;
        }
        let after = render(&f, &cam);
        for (a, b) in after.transmittance.data.iter().zip(&before.transmittance.data) {
            assert!(a <= b);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let g = grid(8);
        let mut rng = util::rng(11);
        let mut f = GridField::empty(g.clone());
        for idx in 0..g.node_count() {
            let c = g.coords(idx);
            if c.iter().all(|&v| (2..6).contains(&v)) {
                f.sigma[idx] = rng.gen_range(-3.0..1.0);
                f.color[idx] = Vec3::from_fn(|_, _| rng.gen_range(0.0..1.0));
            } else {
                f.sigma[idx] = EMPTY_SIGMA;
            }
        }
        let cam = front_camera(4);
        let wc = Image {
            data: (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ..Image::new(4, 4, 3, 0.0)
        };
        let wm = Image {
            data: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ..Image::new(4, 4, 1, 0.0)
        };
        let wz = Image {
            data: (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ..Image::new(4, 4, 1, 0.0)
        };
        let loss = |f: &GridField| {
            let r = render(f, &cam);
            let m = render_mask(&r.transmittance);
            let dot = |a: &Image, b: &Image| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
            dot(&r.color, &wc) + dot(&m, &wm) + dot(&r.depth, &wz)
        };
        let mut grad = RenderGrad::zeros(g.node_count());
        render_backward(&f, &cam, Some(&wc), Some(&wm), Some(&wz), &mut grad);
        let mut checked = 0;
        for idx in 0..g.node_count() {
            if f.sigma[idx] == EMPTY_SIGMA {
                continue;
            }
            let h = 1e-5;
            let mut a = f.clone();
            a.sigma[idx] += h;
            let mut b = f.clone();
            b.sigma[idx] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let an = grad.sigma[idx];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()) || (fd - an).abs() < 1e-6, "node {idx}: {an} vs {fd}");
            let mut a = f.clone();
            a.color[idx].y += h;
            let mut b = f.clone();
            b.color[idx].y -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - grad.color[idx].y).abs() < 1e-6 + 1e-3 * fd.abs());
            checked += 1;
        }
        assert_eq!(checked, 64);
    }
}
