//! Structure from collision: recover the hidden interior of an object from
//! multiview videos of it hitting the ground.
//!
//! The pipeline couples a voxel density/color field with a differentiable
//! material-point simulator. A static fit learns the visible shape from the
//! first frame; a dynamic fit then reshapes the interior density so that the
//! simulated collision reproduces every observed frame.
//!
//! Modules:
//! - [`field`]: voxel fields, particle sampling and particle/grid transfers.
//! - [`mpm`]: MLS-MPM simulator with a replay-based adjoint.
//! - [`render`]: ray-marched volume rendering, masks, depth and image losses.
//! - [`optim`]: static and dynamic fitting, schedules and ablations.
//! - [`scene`]: synthetic dataset generation.
//! - [`eval`]: chamfer metrics and image metrics.
//! - [`cli`]: command-line stages.

pub mod cli;
pub mod error;
pub mod eval;
pub mod field;
pub mod mpm;
pub mod optim;
pub mod render;
pub mod scene;
pub mod util;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
