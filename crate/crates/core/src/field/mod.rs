//! Eulerian voxel fields, Lagrangian particle sets and the transfers between
//! them.
//!
//! Density is stored raw (pre-activation). A particle's opacity is
//! `alpha = 1 - exp(-softplus(sigma))`, which is algebraically the logistic
//! sigmoid; we evaluate it through `exp_m1` so tiny alphas keep full relative
//! precision.

mod io;
mod particles;
mod transfer;

pub use io::{read_field, read_point_cloud, write_field, write_point_cloud, PointCloud};
pub use particles::{anneal_expand, estimate_mass, jittered_lattice, sample_particles, ParticleState};
pub use transfer::{g2p, p2g, p2g_backward, p2g_points, trilinear, G2pResult, P2gOutput, ParticleCotangent, Stencil8};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Particles with alpha below this are pruned.
pub const ALPHA_EPSILON: f64 = 1e-3;

/// Raw density given to grid nodes no particle touches. Its alpha rounds to
/// zero in any downstream product.
pub const EMPTY_SIGMA: f64 = -40.0;

/// Total trilinear weight below which a node counts as untouched.
pub const MIN_NODE_WEIGHT: f64 = 1e-12;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `1 - exp(-softplus(sigma))`.
pub fn alpha_from_sigma(sigma: f64) -> f64 {
    -(-softplus(sigma)).exp_m1()
}

/// d alpha / d sigma, equal to `alpha * (1 - alpha)`.
pub fn alpha_derivative(sigma: f64) -> f64 {
    let s = sigmoid(sigma);
    s * (1.0 - s)
}

/// Raw density whose alpha equals `alpha`.
pub fn sigma_for_alpha(alpha: f64) -> f64 {
    logit(alpha)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(&other.min) && self.contains(&other.max)
    }
}

/// Node layout shared by the appearance field and the simulation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    /// Nodes per axis.
    pub resolution: [usize; 3],
    /// Node spacing (dx), world units.
    pub spacing: f64,
    /// World position of node (0, 0, 0).
    pub origin: Vec3,
}

impl GridGeometry {
    pub fn new(resolution: [usize; 3], spacing: f64, origin: Vec3) -> Result<Self> {
        let g = Self {
            resolution,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be >= 2 per axis, got {:?}",
                self.resolution
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.resolution.iter().product()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.resolution;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn node_position(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            (self.resolution[0] - 1) as f64,
            (self.resolution[1] - 1) as f64,
            (self.resolution[2] - 1) as f64,
        ) * self.spacing;
        Aabb::new(self.origin, self.origin + ext)
    }
}

/// Voxel density and color on a lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub geometry: GridGeometry,
    /// Raw (pre-activation) density per node.
    pub sigma: Vec<f64>,
    /// Activated linear RGB per node, in [0, 1].
    pub color: Vec<Vec3>,
}

impl GridField {
    pub fn filled(geometry: GridGeometry, sigma: f64, color: Vec3) -> Self {
        let n = geometry.node_count();
        Self {
            geometry,
            sigma: vec![sigma; n],
            color: vec![color; n],
        }
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        Self::filled(geometry, EMPTY_SIGMA, Vec3::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let n = self.geometry.node_count();
        if self.sigma.len() != n || self.color.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "field has {} sigma / {} color values for {} nodes",
                self.sigma.len(),
                self.color.len(),
                n
            )));
        }
        if let Some(i) = self.sigma.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sigma at node {i}"
            )));
        }
        Ok(())
    }

    /// Number of nodes whose alpha exceeds the pruning threshold.
    pub fn occupied_nodes(&self) -> usize {
        self.sigma
            .iter()
            .filter(|&&s| alpha_from_sigma(s) > ALPHA_EPSILON)
            .count()
    }
}
