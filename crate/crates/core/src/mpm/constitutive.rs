//! Constitutive models and their vector-Jacobian products.
//!
//! Stresses are Kirchhoff (`tau = P F^T`), which is what the MLS-MPM affine
//! update consumes. The elastic family uses fixed-corotated elasticity with a
//! hand-written adjoint. Plasticine, sand and the viscoplastic fluid work on
//! the Hencky strain of `b = F F^T`; their derivatives go through the
//! eigenbasis of `b` (Daleckii-Krein divided differences), with the principal
//! scalar maps differentiated by dual numbers.

use nalgebra::SymmetricEigen;
use num_dual::{Dual64, DualNum};

use super::{MaterialFamily, MaterialSpec};
use crate::{Error, Mat3, Result, Vec3};

/// Material constants in the form the stress routines use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolved {
    pub family: MaterialFamily,
    /// Shear modulus (Lame mu).
    pub mu: f64,
    /// Lame lambda for solids, bulk modulus for fluids.
    pub lambda: f64,
    pub viscosity: f64,
    pub yield_stress: f64,
    pub plastic_viscosity: f64,
    /// Drucker-Prager cone coefficient.
    pub friction_alpha: f64,
}

pub fn lame(e: f64, nu: f64) -> (f64, f64) {
    (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
}

/// d(mu, lambda) / d(E, nu) as `[[dmu/dE, dmu/dnu], [dla/dE, dla/dnu]]`.
pub fn lame_jacobian(e: f64, nu: f64) -> [[f64; 2]; 2] {
    let d = (1.0 + nu) * (1.0 - 2.0 * nu);
    [
        [1.0 / (2.0 * (1.0 + nu)), -e / (2.0 * (1.0 + nu) * (1.0 + nu))],
        [nu / d, e * (1.0 + 2.0 * nu * nu) / (d * d)],
    ]
}

impl Resolved {
    pub fn from_spec(m: &MaterialSpec) -> Result<Self> {
        m.validate()?;
        let get = |v: Option<f64>| v.unwrap_or(0.0);
        let (mu, lambda) = match m.family {
            MaterialFamily::Elastic | MaterialFamily::Plasticine | MaterialFamily::Sand => {
                lame(get(m.youngs_modulus), get(m.poissons_ratio))
            }
            MaterialFamily::NewtonianFluid => (0.0, get(m.bulk_modulus)),
            MaterialFamily::NonNewtonianFluid => (get(m.shear_modulus), get(m.bulk_modulus)),
        };
        let friction_alpha = m
            .friction_angle
            .map(|deg| {
                let s = deg.to_radians().sin();
                (2.0f64 / 3.0).sqrt() * 2.0 * s / (3.0 - s)
            })
            .unwrap_or(0.0);
        Ok(Self {
            family: m.family,
            mu,
            lambda,
            viscosity: get(m.viscosity),
            yield_stress: get(m.yield_stress),
            plastic_viscosity: get(m.plastic_viscosity),
            friction_alpha,
        })
    }
}

/// Gradient of a scalar loss with respect to the Lame parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LameGrad {
    pub mu: f64,
    pub lambda: f64,
}

/// Rotation factor of the polar decomposition `F = R S` (Newton iteration on
/// `R <- (R + R^-T) / 2`). Requires `det F > 0`.
pub fn polar_rotation(f: &Mat3) -> Mat3 {
    let mut r = *f;
    for _ in 0..100 {
        let inv_t = match r.try_inverse() {
            Some(m) => m.transpose(),
            None => return Mat3::identity(),
        };
        let next = 0.5 * (r + inv_t);
        let delta = (next - r).abs().max();
        r = next;
        if delta < 1e-15 {
            break;
        }
    }
    r
}

fn axial_diff(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

fn skew(b: &Vec3) -> Mat3 {
    Mat3::new(0.0, -b.z, b.y, b.z, 0.0, -b.x, -b.y, b.x, 0.0)
}

/// Kirchhoff stress. `c` is the particle's velocity gradient (used by the
/// viscous fluids only).
pub fn kirchhoff(m: &Resolved, f: &Mat3, c: &Mat3) -> Result<Mat3> {
    let j = f.determinant();
    if !(j > 0.0) || !j.is_finite() {
        return Err(Error::InvalidArgument(format!("det(F) = {j}")));
    }
    Ok(match m.family {
        MaterialFamily::Elastic => {
            let r = polar_rotation(f);
            2.0 * m.mu * (f - r) * f.transpose() + Mat3::identity() * (m.lambda * (j - 1.0) * j)
        }
        MaterialFamily::NewtonianFluid => {
            Mat3::identity() * (m.lambda * j * (j - 1.0)) + (c + c.transpose()) * (m.viscosity * j)
        }
        _ => {
            let eig = SymmetricEigen::new(f * f.transpose());
            let lam = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
            let t = hencky_stress(m, lam.map(|l| l));
            spectral_compose(&eig.eigenvectors, &t)
        }
    })
}

/// Vector-Jacobian product of [`kirchhoff`]: returns `(dL/dF, dL/dC, dL/dLame)`
/// for `g = dL/dtau`.
pub fn kirchhoff_vjp(m: &Resolved, f: &Mat3, c: &Mat3, g: &Mat3) -> (Mat3, Mat3, LameGrad) {
    let j = f.determinant();
    match m.family {
        MaterialFamily::Elastic => {
            let r = polar_rotation(f);
            let s = r.transpose() * f;
            let k = Mat3::identity() * s.trace() - s;
            let h = g * f;
            let b = k
                .try_inverse()
                .map(|ki| ki * axial_diff(&(r.transpose() * h)))
                .unwrap_or_else(Vec3::zeros);
            let f_inv_t = f.try_inverse().map(|x| x.transpose()).unwrap_or_else(Mat3::zeros);
            let fbar = 2.0 * m.mu * (g + g.transpose()) * f
                - 2.0 * m.mu * g.transpose() * r
                - 2.0 * m.mu * r * skew(&b)
                + f_inv_t * (m.lambda * (2.0 * j - 1.0) * j * g.trace());
            let lg = LameGrad {
                mu: g.dot(&(2.0 * (f - r) * f.transpose())),
                lambda: g.trace() * (j - 1.0) * j,
            };
            (fbar, Mat3::zeros(), lg)
        }
        MaterialFamily::NewtonianFluid => {
            let f_inv_t = f.try_inverse().map(|x| x.transpose()).unwrap_or_else(Mat3::zeros);
            let sym = c + c.transpose();
            let dj = m.lambda * (2.0 * j - 1.0) * g.trace() + m.viscosity * g.dot(&sym);
            let fbar = f_inv_t * (dj * j);
            let cbar = (g + g.transpose()) * (m.viscosity * j);
            (fbar, cbar, LameGrad::default())
        }
        _ => {
            let b = f * f.transpose();
            let bbar = spectral_vjp(&b, g, |lam| hencky_stress(m, lam));
            ((bbar + bbar.transpose()) * f, Mat3::zeros(), LameGrad::default())
        }
    }
}

/// Plastic projection of a trial deformation gradient.
pub fn project(m: &Resolved, f_trial: &Mat3, dt: f64) -> Mat3 {
    match m.family {
        MaterialFamily::Elastic => *f_trial,
        MaterialFamily::NewtonianFluid => {
            let j = f_trial.determinant();
            Mat3::identity() * j.cbrt()
        }
        _ => {
            let eig = SymmetricEigen::new(f_trial * f_trial.transpose());
            let lam = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
            let r = return_map(m, lam, dt);
            spectral_compose(&eig.eigenvectors, &r) * f_trial
        }
    }
}

/// Vector-Jacobian product of [`project`].
pub fn project_vjp(m: &Resolved, f_trial: &Mat3, dt: f64, g: &Mat3) -> Mat3 {
    match m.family {
        MaterialFamily::Elastic => *g,
        MaterialFamily::NewtonianFluid => {
            let j = f_trial.determinant();
            let f_inv_t = f_trial
                .try_inverse()
                .map(|x| x.transpose())
                .unwrap_or_else(Mat3::zeros);
            // d cbrt(J) = cbrt(J) / 3 * tr(F^-1 dF)
            f_inv_t * (g.trace() * j.cbrt() / 3.0)
        }
        _ => {
            let b = f_trial * f_trial.transpose();
            let eig = SymmetricEigen::new(b);
            let lam = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
            let r = return_map(m, lam, dt);
            let mmat = spectral_compose(&eig.eigenvectors, &r);
            let mbar = g * f_trial.transpose();
            let bbar = spectral_vjp(&b, &mbar, |l| return_map(m, l, dt));
            mmat.transpose() * g + (bbar + bbar.transpose()) * f_trial
        }
    }
}

fn spectral_compose(q: &Mat3, h: &[f64; 3]) -> Mat3 {
    q * Mat3::from_diagonal(&Vec3::new(h[0], h[1], h[2])) * q.transpose()
}

/// Pulls `mbar = dL/dM` back through `M(b) = Q diag(h(lambda)) Q^T` for an
/// isotropic principal map `h`, returning `dL/db`.
fn spectral_vjp<H>(b: &Mat3, mbar: &Mat3, h: H) -> Mat3
where
    H: Fn([Dual64; 3]) -> [Dual64; 3],
{
    let eig = SymmetricEigen::new(*b);
    let q = eig.eigenvectors;
    let lam = [eig.eigenvalues[0], eig.eigenvalues[1], eig.eigenvalues[2]];
    // dh_i / dlam_j by forward-mode duals, one seed per eigenvalue
    let mut hv = [0.0; 3];
    let mut jac = [[0.0; 3]; 3];
    for j in 0..3 {
        let arg = [0, 1, 2].map(|k| {
            if k == j {
                Dual64::from(lam[k]).derivative()
            } else {
                Dual64::from(lam[k])
            }
        });
        let out = h(arg);
        for i in 0..3 {
            hv[i] = out[i].re;
            jac[i][j] = out[i].eps;
        }
    }
    let mb = q.transpose() * mbar * q;
    let scale = lam.iter().fold(0.0f64, |a, &l| a.max(l.abs())).max(1e-300);
    let mut bb = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                for k in 0..3 {
                    bb[(j, j)] += mb[(k, k)] * jac[k][j];
                }
            } else {
                let diff = lam[i] - lam[j];
                let cij = if diff.abs() > 1e-8 * scale {
                    (hv[i] - hv[j]) / diff
                } else {
                    jac[i][i] - jac[i][j]
                };
                bb[(i, j)] += mb[(i, j)] * cij;
            }
        }
    }
    q * bb * q.transpose()
}

/// Principal Kirchhoff stresses of the Hencky models, from eigenvalues of `b`.
fn hencky_stress<D: DualNum<Primitive = f64> + Copy>(m: &Resolved, lam: [D; 3]) -> [D; 3] {
    let eps = lam.map(|l| l.ln() * 0.5);
    let tr = eps[0] + eps[1] + eps[2];
    match m.family {
        MaterialFamily::NonNewtonianFluid => {
            eps.map(|e| (e - tr / 3.0) * (2.0 * m.mu) + tr * m.lambda)
        }
        _ => eps.map(|e| e * (2.0 * m.mu) + tr * m.lambda),
    }
}

/// Principal stretch ratios `exp(eps_new - eps)` of the return mapping.
fn return_map<D: DualNum<Primitive = f64> + Copy>(m: &Resolved, lam: [D; 3], dt: f64) -> [D; 3] {
    let one = [D::from(1.0); 3];
    let eps = lam.map(|l| l.ln() * 0.5);
    let tr = eps[0] + eps[1] + eps[2];
    let dev = eps.map(|e| e - tr / 3.0);
    let norm2 = dev[0] * dev[0] + dev[1] * dev[1] + dev[2] * dev[2];
    let norm_re = norm2.re().sqrt();
    let shrink = |dgamma: D| -> [D; 3] {
        let norm = norm2.sqrt();
        [0, 1, 2].map(|i| (-(dev[i] * dgamma / norm)).exp())
    };
    match m.family {
        MaterialFamily::Plasticine => {
            let dg_re = norm_re - m.yield_stress / (2.0 * m.mu);
            if dg_re <= 0.0 {
                return one;
            }
            shrink(norm2.sqrt() - m.yield_stress / (2.0 * m.mu))
        }
        MaterialFamily::NonNewtonianFluid => {
            let dg_re = norm_re - m.yield_stress / (2.0 * m.mu);
            if dg_re <= 0.0 {
                return one;
            }
            let relax = 1.0 + m.plastic_viscosity / (2.0 * m.mu * dt);
            shrink((norm2.sqrt() - m.yield_stress / (2.0 * m.mu)) / relax)
        }
        MaterialFamily::Sand => {
            if tr.re() >= 0.0 {
                // tension: project to the cone tip
                return eps.map(|e| (-e).exp());
            }
            let k = (3.0 * m.lambda + 2.0 * m.mu) / (2.0 * m.mu) * m.friction_alpha;
            let dg_re = norm_re + k * tr.re();
            if dg_re <= 0.0 {
                return one;
            }
            shrink(norm2.sqrt() + tr * k)
        }
        _ => one,
    }
}
