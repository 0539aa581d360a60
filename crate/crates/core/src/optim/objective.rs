use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mass_loss;
use crate::field::{
    alpha_derivative, alpha_from_sigma, g2p, jittered_lattice, logit, p2g_backward, p2g_points, sigmoid, trilinear, Aabb, GridField,
    GridGeometry, ParticleState, ALPHA_EPSILON, EMPTY_SIGMA,
};
use crate::mpm::{backward, simulate, FrameCotangent, MaterialSpec, SimConfig};
use crate::render::{
    depth_grad_loss, depth_grad_loss_grad, pixel_loss_grad, render, render_backward, Camera, Image, Observation, RenderGrad,
    Rendered,
};
use crate::scene::Dataset;
use crate::{Error, Result, Vec3};

/// Optimized grid parameters: raw density and color logits per node. Only
/// nodes flagged `active` ever change; the rest stay empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub geometry: GridGeometry,
    pub sigma: Vec<f64>,
    pub color_logit: Vec<Vec3>,
    pub active: Vec<bool>,
}

impl FieldParams {
    /// Nodes inside `region` start at `sigma0` and mid gray.
    pub fn new(geometry: GridGeometry, region: &Aabb, sigma0: f64) -> Self {
        let n = geometry.node_count();
        let active: Vec<bool> = (0..n).map(|i| region.contains(&geometry.node_position(i))).collect();
        Self {
            sigma: active.iter().map(|&a| if a { sigma0 } else { EMPTY_SIGMA }).collect(),
            color_logit: vec![Vec3::zeros(); n],
            active,
            geometry,
        }
    }

    /// Parameters reproducing `field`; every node is active.
    pub fn from_field(field: &GridField) -> Self {
        let clamp = |c: f64| logit(c.clamp(1e-4, 1.0 - 1e-4));
        Self {
            geometry: field.geometry.clone(),
            sigma: field.sigma.clone(),
            color_logit: field.color.iter().map(|c| c.map(clamp)).collect(),
            active: vec![true; field.sigma.len()],
        }
    }

    pub fn to_field(&self) -> GridField {
        GridField {
            geometry: self.geometry.clone(),
            sigma: self.sigma.clone(),
            color: self.color_logit.iter().map(|l| l.map(sigmoid)).collect(),
        }
    }

    pub fn check_finite(&self, iteration: usize) -> Result<()> {
        if self.sigma.iter().all(|s| s.is_finite()) && self.color_logit.iter().all(|c| c.iter().all(|v| v.is_finite())) {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss {
                iteration,
                term: "field parameters".into(),
            })
        }
    }
}

/// Node-space gradient of an objective.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeGrad {
    pub sigma: Vec<f64>,
    /// With respect to the color logits.
    pub color_logit: Vec<Vec3>,
}

/// Fixed inputs of a fit: cameras, observations, known material and the
/// simulation set-up.
#[derive(Clone, Debug)]
pub struct Problem {
    pub cameras: Vec<Camera>,
    /// Indexed `[frame][camera]`.
    pub observations: Vec<Vec<Observation>>,
    /// Known material; `mass` holds the target mass.
    pub material: MaterialSpec,
    pub sim: SimConfig,
    /// Box the fitted field may occupy at t0.
    pub region: Aabb,
}

impl Problem {
    /// Uses the first `n_frames` frames of a dataset.
    pub fn from_dataset(data: &Dataset, n_frames: usize) -> Result<Self> {
        if n_frames < 1 || n_frames > data.observations.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot fit {n_frames} frames of a {}-frame dataset",
                data.observations.len()
            )));
        }
        let dx = data.sim.grid.spacing;
        let b = data.layout.object_bounds;
        Ok(Self {
            cameras: data.cameras.clone(),
            observations: data.observations[..n_frames].to_vec(),
            material: data.material.clone(),
            sim: data.sim.clone(),
            region: Aabb::new(b.min - Vec3::repeat(dx), b.max + Vec3::repeat(dx)),
        })
    }

    pub fn n_frames(&self) -> usize {
        self.observations.len()
    }

    pub fn target_mass(&self) -> Result<f64> {
        match self.material.mass {
            Some(m) if m > 0.0 => Ok(m),
            Some(m) => Err(Error::NonPositiveMass(m)),
            None => Err(Error::InvalidArgument("material has no target mass".into())),
        }
    }

    /// Candidate particle positions: the jittered half-cell lattice over the
    /// fit region.
    pub fn candidates(&self, seed: u64) -> Vec<Vec3> {
        jittered_lattice(&self.region, self.sim.grid.spacing, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.observations.is_empty() || self.cameras.is_empty() {
            return Err(Error::InvalidArgument("a fit needs at least one frame and one camera".into()));
        }
        for frame in &self.observations {
            if frame.len() != self.cameras.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} observations for {} cameras",
                    frame.len(),
                    self.cameras.len()
                )));
            }
            for o in frame {
                o.validate(&self.cameras[o.camera])?;
            }
        }
        if !self.sim.grid.bounds().contains_box(&self.region) {
            return Err(Error::InvalidArgument("fit region leaves the grid".into()));
        }
        self.sim.validate()?;
        self.material.validate()
    }
}

/// Particles drawn from the field at the candidate positions, keeping those
/// with alpha at least [`ALPHA_EPSILON`].
pub fn sample(field: &GridField, candidates: &[Vec3]) -> ParticleState {
    let g = g2p(field, candidates);
    let keep: Vec<usize> = (0..candidates.len())
        .filter(|&p| alpha_from_sigma(g.sigma[p]) >= ALPHA_EPSILON)
        .collect();
    let h = field.geometry.spacing / 2.0;
    ParticleState::at_rest(
        keep.iter().map(|&p| candidates[p]).collect(),
        keep.iter().map(|&p| g.sigma[p]).collect(),
        keep.iter().map(|&p| g.color[p]).collect(),
        h * h * h,
    )
}

/// Pulls particle gradients of [`sample`] back to the nodes, and from
/// colors to color logits.
fn sample_backward(params: &FieldParams, field: &GridField, particles: &ParticleState, d_sigma: &[f64], d_color: &[Vec3]) -> NodeGrad {
    let n = params.sigma.len();
    let mut g = NodeGrad {
        sigma: vec![0.0; n],
        color_logit: vec![Vec3::zeros(); n],
    };
    for p in 0..particles.len() {
        let st = trilinear(&params.geometry, &particles.position[p]);
        for k in 0..8 {
            let w = st.weights[k];
            g.sigma[st.nodes[k]] += w * d_sigma[p];
            g.color_logit[st.nodes[k]] += w * d_color[p];
        }
    }
    for i in 0..n {
        let c = field.color[i];
        g.color_logit[i] = g.color_logit[i].component_mul(&c.map(|v| v * (1.0 - v)));
        if !params.active[i] {
            g.sigma[i] = 0.0;
            g.color_logit[i] = Vec3::zeros();
        }
    }
    g
}

/// Mass of a particle set with density `rho`.
pub fn particle_mass(particles: &ParticleState, rho: f64) -> f64 {
    particles
        .alpha
        .iter()
        .zip(&particles.volume0)
        .map(|(a, v)| rho * v * a)
        .sum()
}

/// Loss weights after ablation flags are applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub lambda_mass: f64,
    pub lambda_pres: f64,
    pub w_depth: f64,
    pub lambda_key: f64,
    pub w_bg: f64,
    pub keyframe: usize,
}

impl Weights {
    /// Per-frame weight of the pixel-type losses: the video mean plus the
    /// preserving and keyframe terms.
    fn frame(&self, t: usize, n: usize) -> f64 {
        let mut w = 1.0 / n as f64;
        if t == 0 {
            w += self.lambda_pres;
        }
        if t == self.keyframe {
            w += self.lambda_key;
        }
        w
    }
}

/// Values of the terms of the full objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub pixel: f64,
    pub mass_loss: f64,
    pub pixel0: f64,
    pub depth0: f64,
    pub key: f64,
    pub total: f64,
    /// Estimated mass of the sampled particles.
    pub mass: f64,
    pub n_particles: usize,
}

/// One evaluation of an objective.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub terms: LossTerms,
    pub grad: Option<NodeGrad>,
    pub d_youngs_modulus: f64,
    pub d_poissons_ratio: f64,
    pub particles: ParticleState,
}

fn render_all(field: &GridField, cameras: &[Camera]) -> Vec<Rendered> {
    cameras.par_iter().map(|c| render(field, c)).collect()
}

/// Depth maps of the t0 particle-path field, one per camera.
pub fn depth_snapshot(problem: &Problem, params: &FieldParams, candidates: &[Vec3]) -> Vec<Image> {
    let field = params.to_field();
    let particles = sample(&field, candidates);
    let out = p2g_points(&particles.position, &particles.sigma, &particles.color, &params.geometry);
    render_all(&out.field, &problem.cameras).into_iter().map(|r| r.depth).collect()
}

struct FrameResult {
    pixel: f64,
    depth: f64,
    cot: FrameCotangent,
}

/// Loss and particle cotangent of one frame.
fn frame_term(
    problem: &Problem,
    particles: &ParticleState,
    t: usize,
    pixel_weight: f64,
    depth: Option<(&[Image], f64)>,
    w_bg: f64,
    need_grad: bool,
) -> Result<FrameResult> {
    let geom = &problem.sim.grid;
    let out = p2g_points(&particles.position, &particles.sigma, &particles.color, geom);
    let renders = render_all(&out.field, &problem.cameras);
    let obs: Vec<&Observation> = problem.observations[t].iter().collect();
    let (loss, grads) = pixel_loss_grad(&renders, &obs, w_bg, pixel_weight)?;
    let n_cam = problem.cameras.len() as f64;
    let mut depth_value = 0.0;
    let mut depth_grads: Vec<Option<Image>> = vec![None; renders.len()];
    if let Some((zref, w)) = depth {
        for (c, r) in renders.iter().enumerate() {
            depth_value += depth_grad_loss(&r.depth, &zref[c])? / n_cam;
            if need_grad && w != 0.0 {
                depth_grads[c] = Some(depth_grad_loss_grad(&r.depth, &zref[c], w / n_cam)?);
            }
        }
    }
    let mut cot = FrameCotangent::default();
    if need_grad {
        let field = &out.field;
        let parts: Vec<RenderGrad> = problem
            .cameras
            .par_iter()
            .enumerate()
            .map(|(c, cam)| {
                let mut g = RenderGrad::zeros(geom.node_count());
                render_backward(field, cam, Some(&grads[c].color), Some(&grads[c].mask), depth_grads[c].as_ref(), &mut g);
                g
            })
            .collect();
        let mut total = RenderGrad::zeros(geom.node_count());
        for g in &parts {
            total.add(g);
        }
        let pc = p2g_backward(&particles.position, &particles.sigma, &particles.color, &out, &total.sigma, &total.color);
        cot = FrameCotangent {
            position: pc.position,
            sigma: pc.sigma,
            color: pc.color,
        };
    }
    Ok(FrameResult {
        pixel: loss.total,
        depth: depth_value,
        cot,
    })
}

/// First-frame objective used by the static fit and by appearance-preserving
/// training: pixel plus background loss of the particle-path render.
pub fn static_objective(problem: &Problem, params: &FieldParams, candidates: &[Vec3], w_bg: f64, need_grad: bool) -> Result<Evaluation> {
    let field = params.to_field();
    let particles = sample(&field, candidates);
    let fr = frame_term(problem, &particles, 0, 1.0, None, w_bg, need_grad)?;
    let grad = need_grad.then(|| {
        let d_sigma: Vec<f64> = if fr.cot.sigma.is_empty() { vec![0.0; particles.len()] } else { fr.cot.sigma.clone() };
        let d_color: Vec<Vec3> = if fr.cot.color.is_empty() { vec![Vec3::zeros(); particles.len()] } else { fr.cot.color.clone() };
        sample_backward(params, &field, &particles, &d_sigma, &d_color)
    });
    Ok(Evaluation {
        terms: LossTerms {
            pixel: fr.pixel,
            pixel0: fr.pixel,
            total: fr.pixel,
            mass: particle_mass(&particles, problem.material.density),
            n_particles: particles.len(),
            ..Default::default()
        },
        grad,
        d_youngs_modulus: 0.0,
        d_poissons_ratio: 0.0,
        particles,
    })
}

/// Full video objective: pixel loss over all frames plus the mass,
/// preserving and keyframe terms, with its gradient through rendering,
/// simulation and particle sampling.
pub fn full_objective(
    problem: &Problem,
    params: &FieldParams,
    candidates: &[Vec3],
    weights: &Weights,
    depth_ref: Option<&[Image]>,
    need_grad: bool,
) -> Result<Evaluation> {
    let n = problem.n_frames();
    if weights.keyframe >= n && weights.lambda_key != 0.0 {
        return Err(Error::InvalidArgument(format!("keyframe {} outside {n} frames", weights.keyframe)));
    }
    let field = params.to_field();
    let particles = sample(&field, candidates);
    if particles.is_empty() {
        return Err(Error::DegenerateSolid("every particle was pruned".into()));
    }
    let rho = problem.material.density;
    let m_hat = problem.target_mass()?;
    let mass = particle_mass(&particles, rho);
    let (l_mass, dl_dm) = mass_loss_grad(mass, m_hat)?;

    let traj = simulate(&particles, &problem.material, &problem.sim, n)?;
    let depth_w = weights.lambda_pres * weights.w_depth;
    let frames: Vec<FrameResult> = (0..n)
        .map(|t| {
            let depth = if t == 0 { depth_ref.map(|z| (z, depth_w)) } else { None };
            frame_term(problem, &traj.states[t], t, weights.frame(t, n), depth, weights.w_bg, need_grad)
        })
        .collect::<Result<_>>()?;

    let pixel = frames.iter().map(|f| f.pixel).sum::<f64>() / n as f64;
    let pixel0 = frames[0].pixel;
    let key = frames.get(weights.keyframe).map_or(0.0, |f| f.pixel);
    let depth0 = frames[0].depth;
    let total = pixel
        + weights.lambda_mass * l_mass
        + weights.lambda_pres * (pixel0 + weights.w_depth * depth0)
        + weights.lambda_key * key;
    let terms = LossTerms {
        pixel,
        mass_loss: l_mass,
        pixel0,
        depth0,
        key,
        total,
        mass,
        n_particles: particles.len(),
    };
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            term: format!("{terms:?}"),
        });
    }
    if !need_grad {
        return Ok(Evaluation {
            terms,
            grad: None,
            d_youngs_modulus: 0.0,
            d_poissons_ratio: 0.0,
            particles,
        });
    }
    let cots: Vec<FrameCotangent> = frames.into_iter().map(|f| f.cot).collect();
    let init = backward(&traj, &cots)?;
    let mut d_sigma = init.sigma;
    let k = weights.lambda_mass * dl_dm * rho;
    for p in 0..particles.len() {
        d_sigma[p] += k * particles.volume0[p] * alpha_derivative(particles.sigma[p]);
    }
    let grad = sample_backward(params, &field, &particles, &d_sigma, &init.color);
    Ok(Evaluation {
        terms,
        grad: Some(grad),
        d_youngs_modulus: init.youngs_modulus,
        d_poissons_ratio: init.poissons_ratio,
        particles,
    })
}

fn mass_loss_grad(m: f64, m_hat: f64) -> Result<(f64, f64)> {
    let l = mass_loss(m, m_hat)?;
    let d = 2.0 * (m.log10() - m_hat.log10()) / (m * std::f64::consts::LN_10);
    Ok((l, d))
}
