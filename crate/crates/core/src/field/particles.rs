use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{alpha_from_sigma, g2p, p2g, Aabb, GridField, ALPHA_EPSILON};
use crate::{util, Mat3, Vec3};

/// Lagrangian particle set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub position: Vec<Vec3>,
    pub velocity: Vec<Vec3>,
    pub deformation_gradient: Vec<Mat3>,
    /// APIC affine velocity matrix.
    pub affine_velocity: Vec<Mat3>,
    pub sigma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub color: Vec<Vec3>,
    /// Rest volume, (dx/2)^3.
    pub volume0: Vec<f64>,
}

impl ParticleState {
    /// Particles at rest (identity deformation, zero affine term).
    pub fn at_rest(position: Vec<Vec3>, sigma: Vec<f64>, color: Vec<Vec3>, volume0: f64) -> Self {
        let n = position.len();
        let alpha = sigma.iter().map(|&s| alpha_from_sigma(s)).collect();
        Self {
            position,
            velocity: vec![Vec3::zeros(); n],
            deformation_gradient: vec![Mat3::identity(); n],
            affine_velocity: vec![Mat3::zeros(); n],
            sigma,
            alpha,
            color,
            volume0: vec![volume0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn set_velocity(&mut self, v: Vec3) {
        self.velocity.iter_mut().for_each(|x| *x = v);
    }

    pub fn center_of_mass(&self, density: f64) -> Vec3 {
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for p in 0..self.len() {
            let m = density * self.volume0[p] * self.alpha[p];
            num += m * self.position[p];
            den += m;
        }
        num / den
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            position: keep.iter().map(|&i| self.position[i]).collect(),
            velocity: keep.iter().map(|&i| self.velocity[i]).collect(),
            deformation_gradient: keep.iter().map(|&i| self.deformation_gradient[i]).collect(),
            affine_velocity: keep.iter().map(|&i| self.affine_velocity[i]).collect(),
            sigma: keep.iter().map(|&i| self.sigma[i]).collect(),
            alpha: keep.iter().map(|&i| self.alpha[i]).collect(),
            color: keep.iter().map(|&i| self.color[i]).collect(),
            volume0: keep.iter().map(|&i| self.volume0[i]).collect(),
        }
    }
}

/// Jittered lattice at spacing `dx / 2` filling `bounds`. Three uniform draws
/// per candidate, in lattice order, so the positions never depend on the
/// field.
pub fn jittered_lattice(bounds: &Aabb, dx: f64, seed: u64) -> Vec<Vec3> {
    let h = dx / 2.0;
    let ext = bounds.extent();
    let counts: Vec<usize> = (0..3)
        .map(|a| ((ext[a] / h) + 1e-9).floor().max(0.0) as usize)
        .collect();
    let mut rng = util::rng(seed);
    let mut out = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let jitter = Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ) * h;
                let cell = Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
                out.push(bounds.min + cell + jitter);
            }
        }
    }
    out
}

/// Samples particles from a field on a jittered half-spacing lattice and
/// prunes those with alpha below [`ALPHA_EPSILON`]. An all-pruned result is
/// an empty set.
pub fn sample_particles(field: &GridField, bounds: &Aabb, seed: u64) -> ParticleState {
    let dx = field.geometry.spacing;
    let candidates = jittered_lattice(bounds, dx, seed);
    let g = g2p(field, &candidates);
    let keep: Vec<usize> = (0..candidates.len())
        .filter(|&p| alpha_from_sigma(g.sigma[p]) >= ALPHA_EPSILON)
        .collect();
    let volume0 = (dx / 2.0).powi(3);
    ParticleState::at_rest(
        keep.iter().map(|&p| candidates[p]).collect(),
        keep.iter().map(|&p| g.sigma[p]).collect(),
        keep.iter().map(|&p| g.color[p]).collect(),
        volume0,
    )
}

/// Mass of a particle set: sum of `rho * (dx/2)^3 * alpha`.
pub fn estimate_mass(particles: &ParticleState, rho: f64, dx: f64) -> f64 {
    let unit = rho * (dx / 2.0).powi(3);
    particles.alpha.iter().map(|&a| unit * a).sum()
}

/// Volume expansion: gather to particles over the whole domain, then
/// scatter back onto the same lattice.
pub fn anneal_expand(field: &GridField, seed: u64) -> GridField {
    let particles = sample_particles(field, &field.geometry.bounds(), seed);
    p2g(&particles, &field.geometry)
}
