//! Fixed-step volume rendering of a [`GridField`](crate::field::GridField),
//! foreground masks, depth, and the image-space losses.
//!
//! Opacity per sample is `1 - exp(-softplus(sigma) * step / dx)`: density is
//! measured per voxel length, so one voxel of particle alpha `a` occludes
//! exactly `a` of the light crossing it.

mod camera;
mod image;
mod loss;
mod march;

pub use camera::Camera;
pub use image::{read_png, read_sidecar, write_png, write_sidecar, Image};
pub use loss::{depth_grad_loss, depth_grad_loss_grad, pixel_loss, pixel_loss_grad, ImageGrad, PixelLoss};
pub use march::{render, render_backward, render_color, render_depth, render_mask, RenderGrad, Rendered};

use serde::{Deserialize, Serialize};

/// Background color composited behind every ray.
pub const BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];

/// One camera's view of one frame. `mask` holds foreground coverage
/// (`1 - T(s_f)`): 1 on the object, 0 on background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub camera: usize,
    pub color: Image,
    pub mask: Image,
}

impl Observation {
    pub fn validate(&self, cam: &Camera) -> crate::Result<()> {
        let (w, h) = (cam.width, cam.height);
        if self.color.width != w || self.color.height != h || self.color.channels != 3 {
            return Err(crate::Error::DimensionMismatch(format!(
                "color image {}x{}x{} for a {w}x{h} camera",
                self.color.width, self.color.height, self.color.channels
            )));
        }
        if self.mask.width != w || self.mask.height != h || self.mask.channels != 1 {
            return Err(crate::Error::DimensionMismatch(format!(
                "mask {}x{}x{} for a {w}x{h} camera",
                self.mask.width, self.mask.height, self.mask.channels
            )));
        }
        if self.color.data.iter().chain(&self.mask.data).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(crate::Error::InvalidArgument("observation values outside [0, 1]".into()));
        }
        Ok(())
    }
}
