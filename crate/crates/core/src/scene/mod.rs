//! Synthetic collision scenes: shapes with hidden cavities, the camera rig,
//! ground-truth simulation and rendered observations.

mod dataset;
mod shapes;

pub use dataset::{load_dataset, read_manifest, write_dataset, SceneManifest, MANIFEST};
pub use shapes::{CavityLocation, Shape, Solid};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{estimate_mass, jittered_lattice, p2g, Aabb, GridGeometry, ParticleState};
use crate::mpm::{simulate, MaterialSpec, SimConfig};
use crate::render::{render, render_mask, Camera, Image, Observation};
use crate::{util, Error, Result, Vec3};

/// Raw density of ground-truth particles; its alpha is exactly 1.
pub const SOLID_SIGMA: f64 = 40.0;

/// Wall layer width of generated scenes, in cells.
pub const WALL_CELLS: usize = 3;

fn d_name() -> String {
    "scene".into()
}
fn d_offset() -> f64 {
    0.25
}
fn d_frames() -> usize {
    14
}
fn d_impact() -> usize {
    6
}
fn d_half_extent() -> f64 {
    0.12
}
fn d_cells() -> f64 {
    4.0
}
fn d_margin() -> usize {
    6
}
fn d_image() -> usize {
    32
}
fn d_frame_dt() -> f64 {
    1.0 / 24.0
}
fn d_substeps() -> usize {
    64
}
fn d_gravity() -> f64 {
    9.8
}
fn d_friction() -> f64 {
    0.2
}
fn d_fov() -> f64 {
    30.0
}

/// Everything needed to regenerate a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "d_name")]
    pub name: String,
    pub shape: Shape,
    /// Cavity volume as a fraction of the shape volume.
    #[serde(default)]
    pub cavity_size_rate: f64,
    #[serde(default)]
    pub cavity_location: CavityLocation,
    /// Cavity shift as a fraction of the half-extent.
    #[serde(default = "d_offset")]
    pub cavity_offset: f64,
    /// Degrees about the depth (z) axis.
    #[serde(default)]
    pub collision_angle: f64,
    pub material: MaterialSpec,
    /// Gap between ground and the object's lowest point at t0. Derived from
    /// `impact_frame` when absent.
    #[serde(default)]
    pub drop_height: Option<f64>,
    #[serde(default = "d_frames")]
    pub n_frames: usize,
    #[serde(default = "d_impact")]
    pub impact_frame: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_half_extent")]
    pub half_extent: f64,
    #[serde(default = "d_cells")]
    pub cells_per_half_extent: f64,
    #[serde(default = "d_margin")]
    pub side_margin_cells: usize,
    #[serde(default = "d_image")]
    pub image_size: usize,
    #[serde(default = "d_frame_dt")]
    pub frame_dt: f64,
    #[serde(default = "d_substeps")]
    pub substeps: usize,
    #[serde(default = "d_gravity")]
    pub gravity: f64,
    #[serde(default = "d_friction")]
    pub ground_friction: f64,
    #[serde(default)]
    pub initial_velocity: Vec3,
    #[serde(default = "d_fov")]
    pub fov: f64,
}

impl SceneSpec {
    pub fn new(shape: Shape, material: MaterialSpec) -> Self {
        Self {
            name: d_name(),
            shape,
            cavity_size_rate: 0.0,
            cavity_location: CavityLocation::Center,
            cavity_offset: d_offset(),
            collision_angle: 0.0,
            material,
            drop_height: None,
            n_frames: d_frames(),
            impact_frame: d_impact(),
            seed: 0,
            half_extent: d_half_extent(),
            cells_per_half_extent: d_cells(),
            side_margin_cells: d_margin(),
            image_size: d_image(),
            frame_dt: d_frame_dt(),
            substeps: d_substeps(),
            gravity: d_gravity(),
            ground_friction: d_friction(),
            initial_velocity: Vec3::zeros(),
            fov: d_fov(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cavity_size_rate) {
            return Err(Error::InvalidArgument(format!(
                "cavity_size_rate must lie in [0, 1), got {}",
                self.cavity_size_rate
            )));
        }
        if self.n_frames < 2 {
            return Err(Error::InvalidArgument("n_frames must be >= 2".into()));
        }
        if !(self.half_extent > 0.0 && self.cells_per_half_extent >= 1.0) {
            return Err(Error::InvalidArgument("half_extent and cells_per_half_extent must be positive".into()));
        }
        if self.image_size == 0 || self.substeps == 0 || !(self.frame_dt > 0.0) {
            return Err(Error::InvalidArgument("image_size, substeps and frame_dt must be positive".into()));
        }
        if self.cavity_offset < 0.0 || self.cavity_offset + self.cavity_size_rate.cbrt() > 1.0 {
            return Err(Error::InvalidArgument("cavity would leave the outer shape".into()));
        }
        self.material.validate()
    }

    pub fn spacing(&self) -> f64 {
        self.half_extent / self.cells_per_half_extent
    }

    /// Gap that makes a body released with `initial_velocity` touch the
    /// ground half a frame before `impact_frame`, so that frame already shows
    /// the collision.
    pub fn derived_drop_height(&self) -> f64 {
        let t = (self.impact_frame as f64 - 0.5) * self.frame_dt;
        (-self.initial_velocity.y * t + 0.5 * self.gravity * t * t).max(0.0)
    }
}

/// World placement derived from a spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub grid: GridGeometry,
    pub ground_height: f64,
    pub drop_height: f64,
    pub centre: Vec3,
    /// Box around the t0 object, padded by one cell.
    pub object_bounds: Aabb,
    pub camera_target: Vec3,
    pub camera_distance: f64,
}

/// Extent of the rotated outer shape relative to its centre, found by
/// scanning a fixed fine lattice.
fn rotated_extent(solid: &Solid) -> (Vec3, Vec3) {
    let r = solid.bounding_radius();
    let n = 64;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                let q = Vec3::new(i as f64, j as f64, k as f64) * (2.0 * r / n as f64) - Vec3::repeat(r);
                if solid.shape.contains(&q, solid.half_extent) {
                    let p = solid.rotation * q;
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
    }
    (lo, hi)
}

pub fn layout(spec: &SceneSpec) -> Result<Layout> {
    spec.validate()?;
    let dx = spec.spacing();
    let probe = solid_at(spec, Vec3::zeros(), spec.cavity_location);
    let (lo, hi) = rotated_extent(&probe);
    let drop = spec.drop_height.unwrap_or_else(|| spec.derived_drop_height());
    let ground = WALL_CELLS as f64 * dx;
    let horiz = lo.x.abs().max(hi.x).max(lo.z.abs()).max(hi.z);
    let nxz = (2.0 * horiz / dx).ceil() as usize + 2 * spec.side_margin_cells + 1;
    let top = ground + drop + (hi.y - lo.y);
    let ny = (top / dx).ceil() as usize + WALL_CELLS + 2;
    let grid = GridGeometry::new([nxz, ny, nxz], dx, Vec3::zeros())?;
    let mid = 0.5 * (nxz - 1) as f64 * dx;
    let centre = Vec3::new(mid, ground + drop - lo.y, mid);
    let pad = Vec3::repeat(dx);
    let object_bounds = Aabb::new(centre + lo - pad, centre + hi + pad);
    let half_h = 0.5 * (top - ground) + dx;
    let camera_target = Vec3::new(mid, ground + 0.5 * (top - ground), mid);
    let reach = (half_h * half_h + (horiz + dx) * (horiz + dx)).sqrt();
    let camera_distance = reach / (0.5 * spec.fov.to_radians()).sin();
    Ok(Layout {
        grid,
        ground_height: ground,
        drop_height: drop,
        centre,
        object_bounds,
        camera_target,
        camera_distance,
    })
}

fn solid_at(spec: &SceneSpec, centre: Vec3, location: CavityLocation) -> Solid {
    Solid::new(
        spec.shape,
        spec.half_extent,
        centre,
        spec.cavity_size_rate,
        location,
        spec.cavity_offset,
        spec.collision_angle,
    )
}

/// Ground-truth particle sets of one scene, all drawn from one lattice.
#[derive(Clone, Debug)]
pub struct SolidParticles {
    /// Object with its cavity.
    pub solid: ParticleState,
    /// Cavity placed at the opposite location.
    pub mirror: ParticleState,
    /// Outer shape without any cavity.
    pub filled: ParticleState,
    pub outer: Solid,
}

pub fn build_solid(spec: &SceneSpec) -> Result<SolidParticles> {
    let lay = layout(spec)?;
    let dx = lay.grid.spacing;
    let solid = solid_at(spec, lay.centre, spec.cavity_location);
    let mirror = solid_at(spec, lay.centre, spec.cavity_location.mirrored());
    let lattice = jittered_lattice(&lay.object_bounds, dx, util::derive_seed(spec.seed, "solid", 0));
    let vol0 = (dx / 2.0).powi(3);
    let make = |keep: &dyn Fn(&Vec3) -> bool| {
        let pos: Vec<Vec3> = lattice.iter().filter(|p| keep(p)).cloned().collect();
        let n = pos.len();
        let colors = pos.iter().map(|p| solid.color(p)).collect();
        let mut st = ParticleState::at_rest(pos, vec![SOLID_SIGMA; n], colors, vol0);
        st.set_velocity(spec.initial_velocity);
        st
    };
    let out = SolidParticles {
        solid: make(&|p| solid.contains(p)),
        mirror: make(&|p| mirror.contains(p)),
        filled: make(&|p| solid.in_outer(p)),
        outer: solid,
    };
    if out.solid.is_empty() {
        return Err(Error::DegenerateSolid("no particles remain after removing the cavity".into()));
    }
    Ok(out)
}

/// Eleven cameras on the upper hemisphere around the drop zone: two rings
/// of five at golden-section azimuths plus one overhead.
pub fn camera_rig(spec: &SceneSpec) -> Result<Vec<Camera>> {
    let lay = layout(spec)?;
    let golden = 180.0 * (3.0 - 5f64.sqrt());
    let reach = lay.camera_distance * (0.5 * spec.fov.to_radians()).sin();
    let near = (lay.camera_distance - 1.5 * reach).max(1e-3);
    let far = lay.camera_distance + 1.5 * reach;
    let mut cams = Vec::with_capacity(11);
    for i in 0..11 {
        let (az, el): (f64, f64) = if i == 10 {
            (0.0, 90.0)
        } else {
            ((i as f64 * golden) % 360.0, if i < 5 { 20.0 } else { 50.0 })
        };
        let (az, el) = (az.to_radians(), el.to_radians());
        let dir = Vec3::new(el.cos() * az.cos(), el.sin(), el.cos() * az.sin());
        let eye = lay.camera_target + lay.camera_distance * dir;
        cams.push(Camera::look_at(eye, lay.camera_target, Vec3::y(), spec.fov, spec.image_size, spec.image_size, near, far)?);
    }
    Ok(cams)
}

/// Renders one particle state from every camera. Values are rounded to
/// single precision, the storage format of datasets, so in-memory and
/// reloaded observations agree.
pub fn render_particles(state: &ParticleState, grid: &GridGeometry, cameras: &[Camera], frame: usize) -> Vec<Observation> {
    let field = p2g(state, grid);
    let single = |mut img: Image| {
        img.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        img
    };
    cameras
        .par_iter()
        .enumerate()
        .map(|(c, cam)| {
            let r = render(&field, cam);
            Observation {
                frame,
                camera: c,
                mask: single(render_mask(&r.transmittance)),
                color: single(r.color),
            }
        })
        .collect()
}

/// A generated scene held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: SceneSpec,
    /// Material with the ground-truth mass filled in.
    pub material: MaterialSpec,
    pub sim: SimConfig,
    pub layout: Layout,
    pub cameras: Vec<Camera>,
    /// Indexed `[frame][camera]`.
    pub observations: Vec<Vec<Observation>>,
    /// Ground-truth positions per frame.
    pub gt: Vec<Vec<Vec3>>,
    pub gt_mirror: Vec<Vec<Vec3>>,
}

impl Dataset {
    pub fn mass(&self) -> f64 {
        self.material.mass.unwrap_or(0.0)
    }

    pub fn frame(&self, f: usize) -> Vec<&Observation> {
        self.observations[f].iter().collect()
    }
}

pub fn sim_config(spec: &SceneSpec, lay: &Layout) -> SimConfig {
    SimConfig {
        frame_dt: spec.frame_dt,
        substeps: spec.substeps,
        gravity: Vec3::new(0.0, -spec.gravity, 0.0),
        ground_height: lay.ground_height,
        ground_friction: spec.ground_friction,
        grid: lay.grid.clone(),
        initial_velocity: spec.initial_velocity,
        collision_angle: spec.collision_angle,
        boundary_cells: WALL_CELLS,
    }
}

/// Simulates the ground truth and renders every frame from every camera.
/// Frame t0 is rendered from the outer shape: the object is opaque and at
/// rest, so its first image cannot depend on what is inside.
pub fn generate_dataset(spec: &SceneSpec) -> Result<Dataset> {
    let lay = layout(spec)?;
    let parts = build_solid(spec)?;
    let mut material = spec.material.clone();
    material.mass = Some(estimate_mass(&parts.solid, material.density, lay.grid.spacing));
    let sim = sim_config(spec, &lay);
    let cameras = camera_rig(spec)?;
    let traj = simulate(&parts.solid, &material, &sim, spec.n_frames)?;
    let mirror = simulate(&parts.mirror, &material, &sim, spec.n_frames)?;
    let observations = (0..spec.n_frames)
        .map(|f| {
            let st = if f == 0 { &parts.filled } else { &traj.states[f] };
            render_particles(st, &lay.grid, &cameras, f)
        })
        .collect();
    Ok(Dataset {
        spec: spec.clone(),
        material,
        sim,
        layout: lay,
        cameras,
        observations,
        gt: traj.states.iter().map(|s| s.position.clone()).collect(),
        gt_mirror: mirror.states.iter().map(|s| s.position.clone()).collect(),
    })
}
