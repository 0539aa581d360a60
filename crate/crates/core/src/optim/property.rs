use serde::{Deserialize, Serialize};

use super::objective::{full_objective, sample, FieldParams, Problem, Weights};
use super::{Adam, OptimConfig};
use crate::field::ParticleState;
use crate::mpm::MaterialSpec;
use crate::{util, Error, Result};

const NU_RANGE: (f64, f64) = (0.05, 0.45);

/// Result of fitting material parameters with the geometry held fixed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyFit {
    pub material: MaterialSpec,
    /// `(pixel loss, E, nu)` before each step.
    pub history: Vec<(f64, f64, f64)>,
    #[serde(skip)]
    pub particles: Option<ParticleState>,
}

/// Fits Young's modulus (in log space) and Poisson's ratio to the video by
/// plain pixel loss, keeping `params` fixed.
pub fn property_fit(problem: &Problem, params: &FieldParams, initial: &MaterialSpec, cfg: &OptimConfig) -> Result<PropertyFit> {
    let (Some(e0), Some(nu0)) = (initial.youngs_modulus, initial.poissons_ratio) else {
        return Err(Error::Unsupported("property fitting needs a material with E and nu".into()));
    };
    let weights = Weights {
        lambda_mass: 0.0,
        lambda_pres: 0.0,
        w_depth: 0.0,
        lambda_key: 0.0,
        w_bg: cfg.w_bg,
        keyframe: 0,
    };
    let candidates = problem.candidates(util::derive_seed(cfg.seed, "sample", 0));
    let mut p = problem.clone();
    p.material = initial.clone();
    p.material.mass = problem.material.mass;
    let mut x = vec![e0.ln(), nu0.clamp(NU_RANGE.0, NU_RANGE.1)];
    let mut adam = Adam::new(2, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut history = Vec::with_capacity(cfg.property_iters);
    for it in 0..cfg.property_iters {
        p.material.youngs_modulus = Some(x[0].exp());
        p.material.poissons_ratio = Some(x[1]);
        let eval = full_objective(&p, params, &candidates, &weights, None, true)?;
        if !eval.terms.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                term: "property pixel loss".into(),
            });
        }
        history.push((eval.terms.pixel, x[0].exp(), x[1]));
        let g = [eval.d_youngs_modulus * x[0].exp(), eval.d_poissons_ratio];
        adam.step(&mut x, &g, cfg.property_lr, None);
        x[1] = x[1].clamp(NU_RANGE.0, NU_RANGE.1);
        log::info!("property {it}: loss {:.4e}, E {:.4e}, nu {:.3}", eval.terms.pixel, x[0].exp(), x[1]);
    }
    p.material.youngs_modulus = Some(x[0].exp());
    p.material.poissons_ratio = Some(x[1]);
    Ok(PropertyFit {
        particles: Some(sample(&params.to_field(), &candidates)),
        material: p.material,
        history,
    })
}
