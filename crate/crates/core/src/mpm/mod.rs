//! MLS-MPM simulator (APIC transfer, quadratic B-splines) with a
//! replay-based reverse mode.

pub mod constitutive;
mod sim;

pub use sim::{backward, simulate, step, FrameCotangent, InitialGradient, Trajectory};

use serde::{Deserialize, Serialize};

use crate::field::GridGeometry;
use crate::{Error, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterialFamily {
    Elastic,
    NewtonianFluid,
    NonNewtonianFluid,
    Plasticine,
    Sand,
}

/// Constitutive family and physical properties. Parameters a family does not
/// use are left `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub family: MaterialFamily,
    /// kg / m^3
    pub density: f64,
    /// Ground-truth mass, consumed by losses only.
    #[serde(default)]
    pub mass: Option<f64>,
    #[serde(default)]
    pub youngs_modulus: Option<f64>,
    #[serde(default)]
    pub poissons_ratio: Option<f64>,
    #[serde(default)]
    pub viscosity: Option<f64>,
    #[serde(default)]
    pub bulk_modulus: Option<f64>,
    #[serde(default)]
    pub shear_modulus: Option<f64>,
    #[serde(default)]
    pub yield_stress: Option<f64>,
    #[serde(default)]
    pub plastic_viscosity: Option<f64>,
    /// Degrees.
    #[serde(default)]
    pub friction_angle: Option<f64>,
}

impl MaterialSpec {
    fn bare(family: MaterialFamily, density: f64) -> Self {
        Self {
            family,
            density,
            mass: None,
            youngs_modulus: None,
            poissons_ratio: None,
            viscosity: None,
            bulk_modulus: None,
            shear_modulus: None,
            yield_stress: None,
            plastic_viscosity: None,
            friction_angle: None,
        }
    }

    pub fn elastic(e: f64, nu: f64, density: f64) -> Self {
        Self {
            youngs_modulus: Some(e),
            poissons_ratio: Some(nu),
            ..Self::bare(MaterialFamily::Elastic, density)
        }
    }

    pub fn newtonian_fluid(viscosity: f64, bulk: f64, density: f64) -> Self {
        Self {
            viscosity: Some(viscosity),
            bulk_modulus: Some(bulk),
            ..Self::bare(MaterialFamily::NewtonianFluid, density)
        }
    }

    pub fn non_newtonian_fluid(shear: f64, bulk: f64, yield_stress: f64, plastic_viscosity: f64, density: f64) -> Self {
        Self {
            shear_modulus: Some(shear),
            bulk_modulus: Some(bulk),
            yield_stress: Some(yield_stress),
            plastic_viscosity: Some(plastic_viscosity),
            ..Self::bare(MaterialFamily::NonNewtonianFluid, density)
        }
    }

    pub fn plasticine(e: f64, nu: f64, yield_stress: f64, density: f64) -> Self {
        Self {
            youngs_modulus: Some(e),
            poissons_ratio: Some(nu),
            yield_stress: Some(yield_stress),
            ..Self::bare(MaterialFamily::Plasticine, density)
        }
    }

    pub fn sand(e: f64, nu: f64, friction_angle: f64, density: f64) -> Self {
        Self {
            youngs_modulus: Some(e),
            poissons_ratio: Some(nu),
            friction_angle: Some(friction_angle),
            ..Self::bare(MaterialFamily::Sand, density)
        }
    }

    /// Named parameter sets of the synthetic corpus.
    pub fn preset(name: &str, density: f64) -> Result<Self> {
        Ok(match name {
            "elastic" => Self::elastic(1e6, 0.3, density),
            "elastic_soft" => Self::elastic(1e5, 0.3, density),
            "droplet" => Self::newtonian_fluid(200.0, 1e5, density),
            "letter" => Self::newtonian_fluid(100.0, 1e5, density),
            "cream" => Self::non_newtonian_fluid(1e4, 1e6, 3e3, 10.0, density),
            "toothpaste" => Self::non_newtonian_fluid(5e3, 1e5, 200.0, 10.0, density),
            "playdoh" => Self::plasticine(2e6, 0.3, 1.54e4, density),
            "cat" => Self::plasticine(1e6, 0.3, 3.85e3, density),
            "trophy" => Self::sand(1e6, 0.3, 40.0, density),
            other => return Err(Error::InvalidArgument(format!("unknown material preset {other:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let need = |name: &str, v: Option<f64>| -> Result<()> {
            match v {
                Some(x) if x > 0.0 && x.is_finite() => Ok(()),
                Some(x) => Err(Error::InvalidArgument(format!("{name} must be positive, got {x}"))),
                None => Err(Error::InvalidArgument(format!("{:?} material requires {name}", self.family))),
            }
        };
        need("density", Some(self.density))?;
        if let Some(m) = self.mass {
            need("mass", Some(m))?;
        }
        match self.family {
            MaterialFamily::Elastic => {
                need("youngs_modulus", self.youngs_modulus)?;
            }
            MaterialFamily::Plasticine => {
                need("youngs_modulus", self.youngs_modulus)?;
                need("yield_stress", self.yield_stress)?;
            }
            MaterialFamily::Sand => {
                need("youngs_modulus", self.youngs_modulus)?;
                need("friction_angle", self.friction_angle)?;
                if self.friction_angle.unwrap_or(0.0) >= 90.0 {
                    return Err(Error::InvalidArgument("friction_angle must be below 90 degrees".into()));
                }
            }
            MaterialFamily::NewtonianFluid => {
                need("viscosity", self.viscosity)?;
                need("bulk_modulus", self.bulk_modulus)?;
            }
            MaterialFamily::NonNewtonianFluid => {
                need("shear_modulus", self.shear_modulus)?;
                need("bulk_modulus", self.bulk_modulus)?;
                need("yield_stress", self.yield_stress)?;
                need("plastic_viscosity", self.plastic_viscosity)?;
            }
        }
        if matches!(
            self.family,
            MaterialFamily::Elastic | MaterialFamily::Plasticine | MaterialFamily::Sand
        ) {
            match self.poissons_ratio {
                Some(nu) if nu > 0.0 && nu < 0.5 => {}
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "poissons_ratio must lie in (0, 0.5), got {other:?}"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn default_friction() -> f64 {
    0.2
}

fn default_boundary_cells() -> usize {
    3
}

/// Time stepping, forces and the simulation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Seconds between rendered frames.
    pub frame_dt: f64,
    pub substeps: usize,
    pub gravity: Vec3,
    pub ground_height: f64,
    #[serde(default = "default_friction")]
    pub ground_friction: f64,
    pub grid: GridGeometry,
    pub initial_velocity: Vec3,
    /// Rotation of the object about the depth axis, degrees.
    #[serde(default)]
    pub collision_angle: f64,
    /// Width of the wall layer that blocks outward grid velocity.
    #[serde(default = "default_boundary_cells")]
    pub boundary_cells: usize,
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        self.frame_dt / self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.substeps < 1 {
            return Err(Error::InvalidArgument("substeps must be >= 1".into()));
        }
        if !(self.frame_dt > 0.0 && self.frame_dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("frame_dt must be positive, got {}", self.frame_dt)));
        }
        if !(0.0..=1.0).contains(&self.ground_friction) {
            return Err(Error::InvalidArgument(format!(
                "ground_friction must lie in [0, 1], got {}",
                self.ground_friction
            )));
        }
        if self.grid.resolution.iter().any(|&n| n < 2 * self.boundary_cells + 4) {
            return Err(Error::InvalidArgument(format!(
                "grid {:?} too small for {} boundary cells",
                self.grid.resolution, self.boundary_cells
            )));
        }
        Ok(())
    }
}
