use serde::{Deserialize, Serialize};

use super::objective::{depth_snapshot, full_objective, static_objective, FieldParams, LossTerms, Problem};
use super::{anneal_due, lr_update, Adam, OptimConfig};
use crate::field::anneal_expand;
use crate::render::Image;
use crate::{util, Error, Result, Vec3};

/// One row of the loss history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub stage: String,
    pub iteration: usize,
    pub total: f64,
    pub pixel: f64,
    pub mass_loss: f64,
    pub pixel0: f64,
    pub depth0: f64,
    pub key: f64,
    pub mass: f64,
    pub n_particles: usize,
    pub lr: f64,
    pub annealed: bool,
}

impl IterRecord {
    fn new(stage: &str, iteration: usize, t: &LossTerms, lr: f64) -> Self {
        Self {
            stage: stage.into(),
            iteration,
            total: t.total,
            pixel: t.pixel,
            mass_loss: t.mass_loss,
            pixel0: t.pixel0,
            depth0: t.depth0,
            key: t.key,
            mass: t.mass,
            n_particles: t.n_particles,
            lr,
            annealed: false,
        }
    }
}

/// Everything a fit carries between iterations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitState {
    pub params: FieldParams,
    /// Fixed candidate lattice particles are drawn from.
    pub candidates: Vec<Vec3>,
    /// Moments of the dynamic density steps.
    pub dynamic_sigma: Adam,
    /// Moments of the first-frame steps (static fit and APT).
    pub static_sigma: Adam,
    pub static_color: Adam,
    pub lr: f64,
    pub iteration: usize,
    pub history: Vec<IterRecord>,
    /// t0 depth maps of the static result, one per camera.
    pub depth_ref: Vec<Image>,
}

impl FitState {
    pub fn new(problem: &Problem, params: FieldParams, cfg: &OptimConfig) -> Self {
        let n = params.sigma.len();
        let adam = |len| Adam::new(len, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Self {
            candidates: problem.candidates(util::derive_seed(cfg.seed, "sample", 0)),
            params,
            dynamic_sigma: adam(n),
            static_sigma: adam(n),
            static_color: adam(3 * n),
            lr: cfg.lr_dynamic_default,
            iteration: 0,
            history: Vec::new(),
            depth_ref: Vec::new(),
        }
    }

    /// Mass the current field would have when sampled.
    pub fn mass(&self, problem: &Problem) -> f64 {
        let p = super::sample(&self.params.to_field(), &self.candidates);
        super::particle_mass(&p, problem.material.density)
    }
}

fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|c| [c.x, c.y, c.z]).collect()
}

/// One Adam step of the first-frame objective on density and color.
fn static_step(state: &mut FitState, problem: &Problem, cfg: &OptimConfig) -> Result<LossTerms> {
    let eval = static_objective(problem, &state.params, &state.candidates, cfg.w_bg, true)?;
    if !eval.terms.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: state.iteration,
            term: "first-frame pixel loss".into(),
        });
    }
    let g = eval.grad.expect("gradient requested");
    let mask = state.params.active.clone();
    state.static_sigma.step(&mut state.params.sigma, &g.sigma, cfg.lr_static_grid, Some(&mask));
    let mut logits = flat(&state.params.color_logit);
    let mask3: Vec<bool> = mask.iter().flat_map(|&a| [a; 3]).collect();
    state.static_color.step(&mut logits, &flat(&g.color_logit), cfg.lr_static_color, Some(&mask3));
    for (i, c) in state.params.color_logit.iter_mut().enumerate() {
        *c = Vec3::new(logits[3 * i], logits[3 * i + 1], logits[3 * i + 2]);
    }
    state.params.check_finite(state.iteration)?;
    Ok(eval.terms)
}

/// Fits density and color to the first frame, starting from a uniform
/// density over the fit region, and records the depth snapshot used by the
/// depth-preserving loss.
pub fn fit_static(problem: &Problem, cfg: &OptimConfig) -> Result<FitState> {
    problem.validate()?;
    cfg.validate()?;
    let params = FieldParams::new(problem.sim.grid.clone(), &problem.region, cfg.init_sigma);
    let mut state = FitState::new(problem, params, cfg);
    for it in 1..=cfg.static_iters {
        state.iteration = it;
        let terms = static_step(&mut state, problem, cfg)?;
        state.history.push(IterRecord::new("static", it, &terms, cfg.lr_static_grid));
        if it % 100 == 0 {
            log::info!("static {it}: loss {:.4e}, mass {:.4e}", terms.total, terms.mass);
        }
    }
    state.iteration = 0;
    state.depth_ref = depth_snapshot(problem, &state.params, &state.candidates);
    Ok(state)
}

/// Runs `apt_iters` first-frame steps when enabled.
pub fn appearance_preserving_training(state: &mut FitState, problem: &Problem, cfg: &OptimConfig) -> Result<()> {
    if !cfg.use_apt {
        return Ok(());
    }
    for _ in 0..cfg.apt_iters {
        static_step(state, problem, cfg)?;
    }
    Ok(())
}

/// Volume expansion on the annealing cadence. Returns whether it ran.
pub fn maybe_anneal(state: &mut FitState, iteration: usize, m: f64, m_hat: f64, cfg: &OptimConfig) -> bool {
    if !anneal_due(iteration, m, m_hat, cfg) {
        return false;
    }
    let expanded = anneal_expand(&state.params.to_field(), util::derive_seed(cfg.seed, "anneal", iteration as u64));
    for i in 0..state.params.sigma.len() {
        if state.params.active[i] {
            state.params.sigma[i] = expanded.sigma[i];
        }
    }
    state.dynamic_sigma.reset();
    state.static_sigma.reset();
    true
}

/// Optimizes the t0 density through the whole video. Color only moves
/// inside appearance-preserving training.
pub fn fit_dynamic(mut state: FitState, problem: &Problem, cfg: &OptimConfig) -> Result<FitState> {
    problem.validate()?;
    cfg.validate()?;
    let m_hat = problem.target_mass()?;
    let weights = cfg.weights();
    state.lr = cfg.lr_dynamic_default;
    if state.depth_ref.is_empty() {
        state.depth_ref = depth_snapshot(problem, &state.params, &state.candidates);
    }
    for it in 1..=cfg.dynamic_iters {
        state.iteration = it;
        let eval = full_objective(problem, &state.params, &state.candidates, &weights, Some(&state.depth_ref), true).map_err(|e| match e {
            Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss { iteration: it, term },
            other => other,
        })?;
        let g = eval.grad.expect("gradient requested");
        let mask = state.params.active.clone();
        let lr = state.lr;
        state.dynamic_sigma.step(&mut state.params.sigma, &g.sigma, lr, Some(&mask));
        state.params.check_finite(it)?;
        let m = eval.terms.mass;
        if cfg.use_mass {
            state.lr = lr_update(state.lr, m, m_hat, cfg.lr_min, cfg.lr_max);
        }
        // an expansion on the last iteration would never be carved back
        let annealed = it < cfg.dynamic_iters && maybe_anneal(&mut state, it, m, m_hat, cfg);
        appearance_preserving_training(&mut state, problem, cfg)?;
        let mut rec = IterRecord::new("dynamic", it, &eval.terms, lr);
        rec.annealed = annealed;
        log::info!(
            "dynamic {it}: loss {:.4e} (pixel {:.3e}, mass {:.3e} vs {:.3e}), lr {lr}",
            rec.total,
            rec.pixel,
            m,
            m_hat
        );
        state.history.push(rec);
    }
    Ok(state)
}
