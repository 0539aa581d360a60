use serde::{Deserialize, Serialize};

use crate::{Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Sphere,
    Cube,
    Bicone,
    Cylinder,
    Diamond,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Sphere, Shape::Cube, Shape::Bicone, Shape::Cylinder, Shape::Diamond];

    /// Whether `p` (relative to the shape centre) lies inside the shape with
    /// half-extent `r`.
    pub fn contains(&self, p: &Vec3, r: f64) -> bool {
        let radial = (p.x * p.x + p.z * p.z).sqrt();
        match self {
            Shape::Sphere => p.norm_squared() <= r * r,
            Shape::Cube => p.amax() <= r,
            Shape::Bicone => radial <= r - p.y.abs(),
            Shape::Cylinder => radial <= r && p.y.abs() <= r,
            Shape::Diamond => p.x.abs() + p.y.abs() + p.z.abs() <= r,
        }
    }

    /// Two-tone palette of the shape's checker texture.
    pub fn palette(&self) -> [Vec3; 2] {
        match self {
            Shape::Sphere => [Vec3::new(0.85, 0.25, 0.2), Vec3::new(0.95, 0.75, 0.2)],
            Shape::Cube => [Vec3::new(0.2, 0.45, 0.85), Vec3::new(0.6, 0.85, 0.95)],
            Shape::Bicone => [Vec3::new(0.25, 0.7, 0.3), Vec3::new(0.8, 0.9, 0.35)],
            Shape::Cylinder => [Vec3::new(0.6, 0.3, 0.75), Vec3::new(0.95, 0.6, 0.8)],
            Shape::Diamond => [Vec3::new(0.15, 0.6, 0.65), Vec3::new(0.9, 0.5, 0.3)],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CavityLocation {
    #[default]
    Center,
    Up,
    Down,
    Left,
    Right,
}

impl CavityLocation {
    pub fn direction(&self) -> Vec3 {
        match self {
            CavityLocation::Center => Vec3::zeros(),
            CavityLocation::Up => Vec3::y(),
            CavityLocation::Down => -Vec3::y(),
            CavityLocation::Left => -Vec3::x(),
            CavityLocation::Right => Vec3::x(),
        }
    }

    /// The opposite placement used by the anti-chamfer ground truth.
    pub fn mirrored(&self) -> Self {
        match self {
            CavityLocation::Center => CavityLocation::Center,
            CavityLocation::Up => CavityLocation::Down,
            CavityLocation::Down => CavityLocation::Up,
            CavityLocation::Left => CavityLocation::Right,
            CavityLocation::Right => CavityLocation::Left,
        }
    }
}

/// Outer shape minus a scaled, shifted copy of itself, rotated about the z
/// axis. Points are tested in the object frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Solid {
    pub shape: Shape,
    pub half_extent: f64,
    pub centre: Vec3,
    /// Linear scale of the cavity; 0 means no cavity.
    pub cavity_scale: f64,
    pub cavity_offset: Vec3,
    pub rotation: Mat3,
}

impl Solid {
    pub fn new(shape: Shape, half_extent: f64, centre: Vec3, cavity_size_rate: f64, location: CavityLocation, offset_fraction: f64, angle_deg: f64) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        Self {
            shape,
            half_extent,
            centre,
            cavity_scale: cavity_size_rate.cbrt(),
            cavity_offset: location.direction() * (offset_fraction * half_extent),
            rotation: Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.centre)
    }

    pub fn in_outer(&self, p: &Vec3) -> bool {
        self.shape.contains(&self.to_local(p), self.half_extent)
    }

    pub fn in_cavity(&self, p: &Vec3) -> bool {
        if self.cavity_scale <= 0.0 {
            return false;
        }
        let q = self.to_local(p) - self.cavity_offset;
        self.shape.contains(&q, self.cavity_scale * self.half_extent)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.in_outer(p) && !self.in_cavity(p)
    }

    /// Checker texture fixed to the object frame, two cells per half-extent.
    pub fn color(&self, p: &Vec3) -> Vec3 {
        let q = self.to_local(p) / (0.5 * self.half_extent);
        let parity = (q.x.floor() as i64 + q.y.floor() as i64 + q.z.floor() as i64).rem_euclid(2);
        self.shape.palette()[parity as usize]
    }

    /// Radius of a ball around the centre enclosing the outer shape.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Cube => 3f64.sqrt() * self.half_extent,
            Shape::Cylinder => 2f64.sqrt() * self.half_extent,
            _ => self.half_extent,
        }
    }
}
