use rayon::prelude::*;

use crate::{Error, Result, Vec3};

/// Uniform cell index over a fixed box. Nearest-neighbour queries scan
/// Chebyshev rings of cells until no unvisited cell can hold a closer point.
struct CellIndex<'a> {
    points: &'a [Vec3],
    min: Vec3,
    cell: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> CellIndex<'a> {
    fn new(points: &'a [Vec3], min: Vec3, max: Vec3) -> Self {
        let ext = (max - min).map(|e| e.max(1e-12));
        let target = (points.len() as f64 / 2.0).max(1.0);
        let cell = (ext.x * ext.y * ext.z / target).cbrt().max(ext.max() / 64.0);
        let dims = [0, 1, 2].map(|a| (ext[a] / cell).floor() as usize + 1);
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut idx = Self {
            points,
            min,
            cell,
            dims,
            start: vec![0; n_cells + 1],
            order: Vec::with_capacity(points.len()),
        };
        let cells: Vec<usize> = points.iter().map(|p| idx.flat(idx.cell_of(p))).collect();
        for &c in &cells {
            idx.start[c + 1] += 1;
        }
        for c in 0..n_cells {
            idx.start[c + 1] += idx.start[c];
        }
        let mut fill = idx.start.clone();
        idx.order = vec![0; points.len()];
        for (p, &c) in cells.iter().enumerate() {
            idx.order[fill[c]] = p;
            fill[c] += 1;
        }
        idx
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| (((p[a] - self.min[a]) / self.cell).floor().max(0.0) as usize).min(self.dims[a] - 1))
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan(&self, c: [usize; 3], best: &mut f64, q: &Vec3) {
        let f = self.flat(c);
        for &p in &self.order[self.start[f]..self.start[f + 1]] {
            let d = (self.points[p] - q).norm_squared();
            if d < *best {
                *best = d;
            }
        }
    }

    /// Squared distance to the nearest indexed point. `q` must lie in the
    /// indexed box.
    fn nearest(&self, q: &Vec3) -> f64 {
        let c = self.cell_of(q);
        let max_ring = *self.dims.iter().max().unwrap();
        let mut best = f64::INFINITY;
        for ring in 0..=max_ring {
            let lo = c.map(|v| v as isize - ring as isize);
            let hi = c.map(|v| v as isize + ring as isize);
            for k in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for j in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    let on_shell_jk = k == lo[2] || k == hi[2] || j == lo[1] || j == hi[1];
                    if on_shell_jk {
                        for i in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                            self.scan([i as usize, j as usize, k as usize], &mut best, q);
                        }
                    } else {
                        for i in [lo[0], hi[0]] {
                            if i >= 0 && i < self.dims[0] as isize {
                                self.scan([i as usize, j as usize, k as usize], &mut best, q);
                            }
                        }
                    }
                }
            }
            // anything outside this ring is at least ring * cell away
            let reach = ring as f64 * self.cell * (1.0 - 1e-9);
            if best <= reach * reach {
                break;
            }
        }
        best
    }
}

fn bounds(a: &[Vec3], b: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in a.iter().chain(b) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

fn check(p: &[Vec3], q: &[Vec3]) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if p.iter().chain(q).any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidArgument("point set contains non-finite coordinates".into()));
    }
    Ok(())
}

fn combine(dp: &[f64], dq: &[f64]) -> f64 {
    let mp = dp.iter().sum::<f64>() / dp.len() as f64;
    let mq = dq.iter().sum::<f64>() / dq.len() as f64;
    0.5 * (mp + mq)
}

/// Symmetric chamfer distance: the mean squared nearest-neighbour distance
/// from each set to the other, averaged over both directions.
pub fn chamfer(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    check(p, q)?;
    let (lo, hi) = bounds(p, q);
    let ip = CellIndex::new(p, lo, hi);
    let iq = CellIndex::new(q, lo, hi);
    let dp: Vec<f64> = p.par_iter().map(|x| iq.nearest(x)).collect();
    let dq: Vec<f64> = q.par_iter().map(|x| ip.nearest(x)).collect();
    Ok(combine(&dp, &dq))
}

/// O(|P||Q|) reference for [`chamfer`].
pub fn chamfer_brute_force(p: &[Vec3], q: &[Vec3]) -> Result<f64> {
    check(p, q)?;
    let nearest = |x: &Vec3, set: &[Vec3]| set.iter().map(|y| (y - x).norm_squared()).fold(f64::INFINITY, f64::min);
    let dp: Vec<f64> = p.iter().map(|x| nearest(x, q)).collect();
    let dq: Vec<f64> = q.iter().map(|x| nearest(x, p)).collect();
    Ok(combine(&dp, &dq))
}

/// Chamfer distance against the ground truth with its cavity mirrored.
pub fn anti_chamfer(p: &[Vec3], q_mirror: &[Vec3]) -> Result<f64> {
    chamfer(p, q_mirror)
}

/// Mean per-frame chamfer distance.
pub fn cd_over_video(pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let per: Result<Vec<f64>> = pred.iter().zip(gt).map(|(p, q)| chamfer(p, q)).collect();
    Ok(per?.iter().sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(seed: u64, n: usize, scale: f64) -> Vec<Vec3> {
        let mut r = crate::util::rng(seed);
        (0..n)
            .map(|_| Vec3::new(r.gen::<f64>(), r.gen::<f64>() * 0.3, r.gen::<f64>()) * scale)
            .collect()
    }

    #[test]
    fn chamfer_examples() {
        let p = cloud(1, 30, 1.0);
        assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
        let a = [Vec3::zeros()];
        let b = [Vec3::x()];
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        assert!(matches!(chamfer(&[], &b), Err(Error::EmptyPointSet)));
        assert_eq!(anti_chamfer(&p, &p).unwrap(), 0.0);
        assert!(anti_chamfer(&p, &cloud(2, 30, 1.0)).unwrap() > 0.0);
    }

    #[test]
    fn indexed_equals_brute_force_bitwise() {
        for s in 0..20 {
            let p = cloud(100 + s, 100, 1.0 + s as f64);
            let q = cloud(200 + s, 50 + 7 * s as usize, 0.5 + s as f64);
            let a = chamfer(&p, &q).unwrap();
            let b = chamfer_brute_force(&p, &q).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "set {s}");
        }
        // clustered sets: one far outlier stretches the cell grid
        let mut p = cloud(7, 200, 0.01);
        p.push(Vec3::repeat(50.0));
        let q = cloud(8, 150, 0.01);
        assert_eq!(chamfer(&p, &q).unwrap().to_bits(), chamfer_brute_force(&p, &q).unwrap().to_bits());
    }

    #[test]
    fn video_average() {
        let a = cloud(3, 20, 1.0);
        let b = cloud(4, 20, 1.0);
        let c = chamfer(&a, &b).unwrap();
        assert_eq!(cd_over_video(&[a.clone()], &[b.clone()]).unwrap(), c);
        assert!((cd_over_video(&[a.clone(), a.clone()], &[b.clone(), b.clone()]).unwrap() - c).abs() < 1e-18);
        assert_eq!(cd_over_video(&[a.clone(), b.clone()], &[a.clone(), b.clone()]).unwrap(), 0.0);
        assert!(cd_over_video(&[a.clone()], &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetric_and_rigid_invariant(s1 in 0u64..1000, s2 in 0u64..1000, angle in 0.0f64..6.28, t in -5.0f64..5.0) {
            let p = cloud(s1, 40, 1.0);
            let q = cloud(s2 + 5000, 25, 1.0);
            let a = chamfer(&p, &q).unwrap();
            prop_assert_eq!(a, chamfer(&q, &p).unwrap());
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::y_axis(), angle);
            let tr = |v: &Vec3| rot * v + Vec3::new(t, 2.0 * t, -t);
            let pt: Vec<Vec3> = p.iter().map(tr).collect();
            let qt: Vec<Vec3> = q.iter().map(tr).collect();
            prop_assert!((chamfer(&pt, &qt).unwrap() - a).abs() < 1e-9);
        }
    }
}
