//! Two-stage fitting of the t0 field: a static fit to the first frame,
//! then a dynamic fit of the density through the whole video under mass,
//! appearance-preserving and keyframe constraints with volume annealing.

mod adam;
mod fit;
mod objective;
mod property;

pub use adam::Adam;
pub use fit::{appearance_preserving_training, fit_dynamic, fit_static, maybe_anneal, FitState, IterRecord};
pub use objective::{
    depth_snapshot, full_objective, particle_mass, sample, static_objective, Evaluation, FieldParams, LossTerms, NodeGrad, Problem,
    Weights,
};
pub use property::{property_fit, PropertyFit};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn d_lambda_mass() -> f64 {
    1.0
}
fn d_lambda_pres() -> f64 {
    100.0
}
fn d_w_depth() -> f64 {
    0.01
}
fn d_lambda_key() -> f64 {
    10.0
}
fn d_w_bg() -> f64 {
    0.2
}
fn d_keyframe() -> usize {
    6
}
fn d_static_iters() -> usize {
    1500
}
fn d_dynamic_iters() -> usize {
    200
}
fn d_apt_iters() -> usize {
    10
}
fn d_lr_static() -> f64 {
    0.1
}
fn d_lr_dynamic() -> f64 {
    6.4
}
fn d_lr_min() -> f64 {
    0.1
}
fn d_anneal_period() -> usize {
    100
}
fn d_anneal_gap() -> f64 {
    10.0
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_true() -> bool {
    true
}
fn d_init_sigma() -> f64 {
    2.0
}
fn d_property_iters() -> usize {
    20
}
fn d_property_lr() -> f64 {
    0.05
}

/// Loss weights, schedules and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default = "d_lambda_mass")]
    pub lambda_mass: f64,
    #[serde(default = "d_lambda_pres")]
    pub lambda_pres: f64,
    #[serde(default = "d_w_depth")]
    pub w_depth: f64,
    #[serde(default = "d_lambda_key")]
    pub lambda_key: f64,
    #[serde(default = "d_w_bg")]
    pub w_bg: f64,
    #[serde(default = "d_keyframe")]
    pub keyframe: usize,
    #[serde(default = "d_static_iters")]
    pub static_iters: usize,
    #[serde(default = "d_dynamic_iters")]
    pub dynamic_iters: usize,
    #[serde(default = "d_apt_iters")]
    pub apt_iters: usize,
    #[serde(default = "d_lr_static")]
    pub lr_static_grid: f64,
    #[serde(default = "d_lr_static")]
    pub lr_static_color: f64,
    #[serde(default = "d_lr_dynamic")]
    pub lr_dynamic_default: f64,
    #[serde(default = "d_lr_min")]
    pub lr_min: f64,
    #[serde(default = "d_lr_dynamic")]
    pub lr_max: f64,
    #[serde(default = "d_anneal_period")]
    pub anneal_period: usize,
    /// Expansion is skipped while the estimate exceeds the target mass by
    /// more than this, in simulation mass units.
    #[serde(default = "d_anneal_gap")]
    pub anneal_skip_mass_gap: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default = "d_true")]
    pub use_mass: bool,
    #[serde(default = "d_true")]
    pub use_apl: bool,
    #[serde(default = "d_true")]
    pub use_apt: bool,
    #[serde(default = "d_true")]
    pub use_key: bool,
    #[serde(default = "d_true")]
    pub use_va: bool,
    #[serde(default)]
    pub seed: u64,
    /// Raw density the static fit starts from inside the fit region.
    #[serde(default = "d_init_sigma")]
    pub init_sigma: f64,
    #[serde(default = "d_property_iters")]
    pub property_iters: usize,
    #[serde(default = "d_property_lr")]
    pub property_lr: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_mass, self.lambda_pres, self.w_depth, self.lambda_key, self.w_bg];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("loss weights must be finite and non-negative".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_dynamic_default && self.lr_dynamic_default <= self.lr_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lr_min <= lr_dynamic_default <= lr_max, got {} {} {}",
                self.lr_min, self.lr_dynamic_default, self.lr_max
            )));
        }
        if self.anneal_period < 1 {
            return Err(Error::InvalidArgument("anneal_period must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            return Err(Error::InvalidArgument("invalid Adam constants".into()));
        }
        Ok(())
    }

    /// Weights of the full objective with disabled components zeroed.
    pub fn weights(&self) -> Weights {
        Weights {
            lambda_mass: if self.use_mass { self.lambda_mass } else { 0.0 },
            lambda_pres: if self.use_apl { self.lambda_pres } else { 0.0 },
            w_depth: self.w_depth,
            lambda_key: if self.use_key { self.lambda_key } else { 0.0 },
            w_bg: self.w_bg,
            keyframe: self.keyframe,
        }
    }
}

/// Fitting variants compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// The full method.
    Sfc,
    /// First-frame fit only.
    Static,
    /// Plain pixel loss through the video.
    Go,
    /// Plain pixel loss plus the mass loss.
    GoMass,
    SfcNoMass,
    SfcNoApl,
    SfcNoApt,
    SfcNoKey,
    SfcNoVa,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Sfc,
        Method::Static,
        Method::Go,
        Method::GoMass,
        Method::SfcNoMass,
        Method::SfcNoApl,
        Method::SfcNoApt,
        Method::SfcNoKey,
        Method::SfcNoVa,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sfc => "sfc",
            Method::Static => "static",
            Method::Go => "go",
            Method::GoMass => "go-mass",
            Method::SfcNoMass => "sfc-no-mass",
            Method::SfcNoApl => "sfc-no-apl",
            Method::SfcNoApt => "sfc-no-apt",
            Method::SfcNoKey => "sfc-no-key",
            Method::SfcNoVa => "sfc-no-va",
        }
    }

    /// Sets the switches (and, for the static baseline, the iteration
    /// count) of `cfg`; weights and schedules are untouched.
    pub fn configure(&self, cfg: &mut OptimConfig) {
        let all = |cfg: &mut OptimConfig, on: bool| {
            cfg.use_mass = on;
            cfg.use_apl = on;
            cfg.use_apt = on;
            cfg.use_key = on;
            cfg.use_va = on;
        };
        match self {
            Method::Sfc => all(cfg, true),
            Method::Static => {
                all(cfg, true);
                cfg.dynamic_iters = 0;
            }
            Method::Go => all(cfg, false),
            Method::GoMass => {
                all(cfg, false);
                cfg.use_mass = true;
            }
            Method::SfcNoMass => {
                all(cfg, true);
                cfg.use_mass = false;
            }
            Method::SfcNoApl => {
                all(cfg, true);
                cfg.use_apl = false;
            }
            Method::SfcNoApt => {
                all(cfg, true);
                cfg.use_apt = false;
            }
            Method::SfcNoKey => {
                all(cfg, true);
                cfg.use_key = false;
            }
            Method::SfcNoVa => {
                all(cfg, true);
                cfg.use_va = false;
            }
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Squared difference of base-10 logarithms of the estimated and target
/// masses.
pub fn mass_loss(m: f64, m_hat: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::NonPositiveMass(m));
    }
    if !(m_hat > 0.0) {
        return Err(Error::NonPositiveMass(m_hat));
    }
    let d = m.log10() - m_hat.log10();
    Ok(d * d)
}

/// Halves the learning rate while the estimate is too light and doubles it
/// while too heavy, within `[lr_min, lr_max]`.
pub fn lr_update(lr: f64, m: f64, m_hat: f64, lr_min: f64, lr_max: f64) -> f64 {
    if m < m_hat {
        (lr / 2.0).max(lr_min)
    } else if m > m_hat {
        (lr * 2.0).min(lr_max)
    } else {
        lr
    }
}

/// Whether volume expansion runs at this (1-based) iteration.
pub fn anneal_due(iteration: usize, m: f64, m_hat: f64, cfg: &OptimConfig) -> bool {
    cfg.use_va && iteration > 0 && iteration % cfg.anneal_period == 0 && m - m_hat <= cfg.anneal_skip_mass_gap
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_hyperparameters() {
        let c = OptimConfig::default();
        assert_eq!((c.lambda_mass, c.lambda_pres, c.w_depth, c.lambda_key, c.w_bg), (1.0, 100.0, 0.01, 10.0, 0.2));
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.9, 0.999));
        assert_eq!((c.keyframe, c.apt_iters, c.anneal_period), (6, 10, 100));
        assert_eq!((c.lr_dynamic_default, c.lr_min, c.lr_max), (6.4, 0.1, 6.4));
        c.validate().unwrap();
        assert!(toml::from_str::<OptimConfig>("bogus = 1").is_err());
        let k9: OptimConfig = toml::from_str("keyframe = 9").unwrap();
        assert_eq!(k9.keyframe, 9);
    }

    #[test]
    fn mass_loss_examples() {
        assert_eq!(mass_loss(3.0, 3.0).unwrap(), 0.0);
        assert!((mass_loss(10.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((mass_loss(2.0, 1.0).unwrap() - 0.090619058289456).abs() < 1e-12);
        assert_eq!(mass_loss(2.0, 7.0).unwrap(), mass_loss(7.0, 2.0).unwrap());
        assert!(matches!(mass_loss(0.0, 1.0), Err(Error::NonPositiveMass(_))));
    }

    #[test]
    fn lr_update_examples() {
        assert_eq!(lr_update(6.4, 1.0, 2.0, 0.1, 6.4), 3.2);
        assert_eq!(lr_update(0.1, 1.0, 2.0, 0.1, 6.4), 0.1);
        assert_eq!(lr_update(6.4, 3.0, 2.0, 0.1, 6.4), 6.4);
        assert_eq!(lr_update(0.8, 2.0, 2.0, 0.1, 6.4), 0.8);
    }

    #[test]
    fn anneal_cadence() {
        let c = OptimConfig::default();
        assert!(anneal_due(100, 5.0, 5.0, &c));
        assert!(!anneal_due(100, 55.0, 5.0, &c));
        assert!(!anneal_due(137, 5.0, 5.0, &c));
        assert!(!anneal_due(0, 5.0, 5.0, &c));
        let off = OptimConfig { use_va: false, ..c };
        assert!(!anneal_due(100, 5.0, 5.0, &off));
    }

    #[test]
    fn methods_round_trip_and_configure() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("nope".parse::<Method>().is_err());
        let mut c = OptimConfig::default();
        Method::Go.configure(&mut c);
        let w = c.weights();
        assert_eq!((w.lambda_mass, w.lambda_pres, w.lambda_key), (0.0, 0.0, 0.0));
        assert!(!c.use_apt && !c.use_va);
        Method::Static.configure(&mut c);
        assert_eq!(c.dynamic_iters, 0);
    }

    proptest! {
        #[test]
        fn lr_stays_in_bounds(steps in proptest::collection::vec((0.1f64..10.0, 0.1f64..10.0), 1..200)) {
            let mut lr = 6.4;
            for (m, mh) in steps {
                lr = lr_update(lr, m, mh, 0.1, 6.4);
                prop_assert!((0.1..=6.4).contains(&lr));
            }
        }
    }
}
