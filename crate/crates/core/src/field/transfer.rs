use super::{GridField, GridGeometry, ParticleState, EMPTY_SIGMA, MIN_NODE_WEIGHT};
use crate::Vec3;

/// Trilinear shape functions of the 8 nodes enclosing a point.
#[derive(Clone, Copy, Debug)]
pub struct Stencil8 {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
    /// d weight / d position.
    pub grads: [Vec3; 8],
    /// The query point was outside the domain and got clamped.
    pub clamped: bool,
}

pub fn trilinear(geom: &GridGeometry, p: &Vec3) -> Stencil8 {
    let inv_dx = 1.0 / geom.spacing;
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    let mut live = [true; 3];
    let mut clamped = false;
    for a in 0..3 {
        let n = geom.resolution[a];
        let mut u = (p[a] - geom.origin[a]) * inv_dx;
        let hi = (n - 1) as f64;
        if u < 0.0 || u > hi {
            // tolerate rounding right at the faces
            if u < -1e-9 || u > hi + 1e-9 {
                clamped = true;
            }
            live[a] = false;
            u = u.clamp(0.0, hi);
        }
        let i0 = (u.floor() as usize).min(n - 2);
        base[a] = i0;
        frac[a] = u - i0 as f64;
    }

    let mut out = Stencil8 {
        nodes: [0; 8],
        weights: [0.0; 8],
        grads: [Vec3::zeros(); 8],
        clamped,
    };
    for c in 0..8 {
        let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
        let mut f = [0.0; 3];
        let mut df = [0.0; 3];
        for a in 0..3 {
            if o[a] == 1 {
                f[a] = frac[a];
                df[a] = inv_dx;
            } else {
                f[a] = 1.0 - frac[a];
                df[a] = -inv_dx;
            }
            if !live[a] {
                df[a] = 0.0;
            }
        }
        out.nodes[c] = geom.index(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
        out.weights[c] = f[0] * f[1] * f[2];
        out.grads[c] = Vec3::new(df[0] * f[1] * f[2], f[0] * df[1] * f[2], f[0] * f[1] * df[2]);
    }
    out
}

#[derive(Clone, Debug)]
pub struct G2pResult {
    pub sigma: Vec<f64>,
    pub color: Vec<Vec3>,
    /// Number of query points that fell outside the domain.
    pub clamped: usize,
}

/// Grid-to-particle gather by trilinear interpolation.
pub fn g2p(field: &GridField, positions: &[Vec3]) -> G2pResult {
    let mut sigma = Vec::with_capacity(positions.len());
    let mut color = Vec::with_capacity(positions.len());
    let mut clamped = 0;
    for p in positions {
        let st = trilinear(&field.geometry, p);
        if st.clamped {
            clamped += 1;
        }
        let mut s = 0.0;
        let mut c = Vec3::zeros();
        for n in 0..8 {
            s += st.weights[n] * field.sigma[st.nodes[n]];
            c += st.weights[n] * field.color[st.nodes[n]];
        }
        sigma.push(s);
        color.push(c);
    }
    if clamped > 0 {
        log::debug!("g2p: {clamped} query points clamped to the grid domain");
    }
    G2pResult {
        sigma,
        color,
        clamped,
    }
}

/// Result of a weighted-mean scatter, kept for the adjoint.
#[derive(Clone, Debug)]
pub struct P2gOutput {
    pub field: GridField,
    /// Total trilinear weight per node.
    pub weight: Vec<f64>,
}

pub fn p2g(particles: &ParticleState, template: &GridGeometry) -> GridField {
    p2g_points(&particles.position, &particles.sigma, &particles.color, template).field
}

/// Particle-to-grid weighted mean. Untouched nodes get [`EMPTY_SIGMA`] and
/// black.
pub fn p2g_points(
    positions: &[Vec3],
    sigma: &[f64],
    color: &[Vec3],
    template: &GridGeometry,
) -> P2gOutput {
    let n = template.node_count();
    let mut wsum = vec![0.0; n];
    let mut ssum = vec![0.0; n];
    let mut csum = vec![Vec3::zeros(); n];
    for (p, x) in positions.iter().enumerate() {
        let st = trilinear(template, x);
        for c in 0..8 {
            let w = st.weights[c];
            let i = st.nodes[c];
            wsum[i] += w;
            ssum[i] += w * sigma[p];
            csum[i] += w * color[p];
        }
    }
    let mut field = GridField::empty(template.clone());
    for i in 0..n {
        if wsum[i] >= MIN_NODE_WEIGHT {
            field.sigma[i] = ssum[i] / wsum[i];
            field.color[i] = csum[i] / wsum[i];
        } else {
            field.sigma[i] = EMPTY_SIGMA;
            field.color[i] = Vec3::zeros();
        }
    }
    P2gOutput {
        field,
        weight: wsum,
    }
}

/// Per-particle cotangents produced by [`p2g_backward`].
#[derive(Clone, Debug, Default)]
pub struct ParticleCotangent {
    pub position: Vec<Vec3>,
    pub sigma: Vec<f64>,
    pub color: Vec<Vec3>,
}

/// Pulls node gradients of a weighted-mean scatter back to the particles.
pub fn p2g_backward(
    positions: &[Vec3],
    sigma: &[f64],
    color: &[Vec3],
    out: &P2gOutput,
    d_sigma: &[f64],
    d_color: &[Vec3],
) -> ParticleCotangent {
    let geom = &out.field.geometry;
    let np = positions.len();
    let mut ct = ParticleCotangent {
        position: vec![Vec3::zeros(); np],
        sigma: vec![0.0; np],
        color: vec![Vec3::zeros(); np],
    };
    for (p, x) in positions.iter().enumerate() {
        let st = trilinear(geom, x);
        for c in 0..8 {
            let i = st.nodes[c];
            let wi = out.weight[i];
            if wi < MIN_NODE_WEIGHT {
                continue;
            }
            let r = st.weights[c] / wi;
            ct.sigma[p] += r * d_sigma[i];
            ct.color[p] += r * d_color[i];
            let coeff = (sigma[p] - out.field.sigma[i]) * d_sigma[i]
                + (color[p] - out.field.color[i]).dot(&d_color[i]);
            ct.position[p] += st.grads[c] * (coeff / wi);
        }
    }
    ct
}
