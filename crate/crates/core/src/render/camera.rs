use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Pinhole camera. Camera axes: x right, y down, z forward; `rotation`
/// holds them as world-space columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub position: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    /// Camera at `eye` aimed at `target` with a vertical field of view in
    /// degrees.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize, near: f64, far: f64) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("camera eye coincides with target".into()))?;
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // looking along `up`: fall back to another reference direction
            right = forward.cross(&Vec3::new(0.0, 0.0, -1.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let f = 0.5 * height as f64 / (0.5 * fov_y.to_radians()).tan();
        let cam = Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation: Mat3::from_columns(&[right, down, forward]),
            position: eye,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near < self.far) || self.near < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "camera needs 0 <= near < far, got {} and {}",
                self.near, self.far
            )));
        }
        let err = (self.rotation.transpose() * self.rotation - Mat3::identity()).abs().max();
        if err > 1e-9 || self.rotation.determinant() < 0.0 {
            return Err(Error::InvalidArgument(format!("camera rotation is not orthonormal ({err:.2e})")));
        }
        if self.width == 0 || self.height == 0 || !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("camera has empty image or non-positive focal length".into()));
        }
        Ok(())
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into()
    }

    /// Unit world-space direction through the center of pixel (`px`, `py`).
    pub fn ray_direction(&self, px: usize, py: usize) -> Vec3 {
        let d = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        (self.rotation * d).normalize()
    }

    /// Pixel coordinates of a world point, if it lies in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation.transpose() * (p - self.position);
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centre_ray_hits_target() {
        let target = Vec3::new(0.3, 0.2, -0.1);
        let cam = Camera::look_at(Vec3::new(2.0, 1.5, 3.0), target, Vec3::y(), 40.0, 8, 8, 0.1, 10.0).unwrap();
        let (u, v) = cam.project(&target).unwrap();
        assert!((u - 4.0).abs() < 1e-9 && (v - 4.0).abs() < 1e-9);
        let d = cam.ray_direction(3, 3);
        assert!((d.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zenith_camera_is_valid() {
        let cam = Camera::look_at(Vec3::new(0.0, 5.0, 0.0), Vec3::zeros(), Vec3::y(), 30.0, 4, 4, 0.1, 10.0).unwrap();
        assert!((cam.forward() - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn bad_near_far_rejected() {
        assert!(Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), 30.0, 4, 4, 2.0, 1.0).is_err());
    }
}
