#![allow(dead_code)]

use rand::Rng;
use sfc::field::{Aabb, GridGeometry, ParticleState};
use sfc::mpm::{simulate, step, MaterialSpec, SimConfig};
use sfc::optim::{depth_snapshot, full_objective, FieldParams, Problem, Weights};
use sfc::render::{render_mask, Camera, Image, Observation};
use sfc::scene::{SceneSpec, Shape};
use sfc::{util, Vec3};

/// Two frames, two 4x4 cameras and an 8^3 grid with 64 candidate particles
/// whose densities stay clear of the pruning threshold.
pub fn toy_problem(seed: u64) -> (Problem, FieldParams, Vec<Vec3>) {
    let dx = 0.1;
    let grid = GridGeometry::new([8, 8, 8], dx, Vec3::zeros()).unwrap();
    let mut rng = util::rng(seed);
    let target = Vec3::repeat(0.35);
    let cameras: Vec<Camera> = (0..2)
        .map(|c| {
            let a = c as f64 * 1.3 + rng.gen_range(0.0..0.5);
            let eye = target + Vec3::new(0.6 * a.cos(), 0.35, 0.6 * a.sin());
            Camera::look_at(eye, target, Vec3::y(), 25.0, 4, 4, 0.2, 1.5).unwrap()
        })
        .collect();
    let observations = (0..2)
        .map(|f| {
            (0..2)
                .map(|c| {
                    let mut color = Image::new(4, 4, 3, 0.0);
                    color.data.iter_mut().for_each(|v| *v = rng.gen_range(0.2..1.0));
                    let mut t = Image::new(4, 4, 1, 0.0);
                    t.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
                    Observation {
                        frame: f,
                        camera: c,
                        color,
                        mask: render_mask(&t),
                    }
                })
                .collect()
        })
        .collect();
    let mut material = MaterialSpec::elastic(2e3, 0.3, 100.0);
    material.mass = Some(0.4);
    let sim = SimConfig {
        frame_dt: 0.01,
        substeps: 4,
        gravity: Vec3::new(0.0, -9.8, 0.0),
        ground_height: 0.27,
        ground_friction: 0.2,
        grid: grid.clone(),
        initial_velocity: Vec3::new(0.0, -2.0, 0.0),
        collision_angle: 0.0,
        boundary_cells: 2,
    };
    let problem = Problem {
        cameras,
        observations,
        material,
        sim,
        region: Aabb::new(Vec3::repeat(0.25), Vec3::repeat(0.45)),
    };
    let mut params = FieldParams::new(grid, &Aabb::new(Vec3::repeat(0.19), Vec3::repeat(0.51)), 0.0);
    for i in 0..params.sigma.len() {
        if params.active[i] {
            params.sigma[i] = rng.gen_range(-1.0..2.5);
            params.color_logit[i] = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    let candidates = problem.candidates(util::derive_seed(seed, "toy", 0));
    (problem, params, candidates)
}

pub fn pixel_weights() -> Weights {
    Weights {
        lambda_mass: 0.0,
        lambda_pres: 0.0,
        w_depth: 0.0,
        lambda_key: 0.0,
        w_bg: 0.2,
        keyframe: 1,
    }
}

pub fn full_weights() -> Weights {
    Weights {
        lambda_mass: 1.0,
        lambda_pres: 100.0,
        w_depth: 0.01,
        lambda_key: 10.0,
        w_bg: 0.2,
        keyframe: 1,
    }
}

/// Outcome of a finite-difference sweep over every active node.
#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub failures: Vec<String>,
    pub max_abs_grad: f64,
}

/// Compares the adjoint density gradient of the full objective with central
/// differences: |fd - adjoint| <= max(1e-3 |fd|, 1e-6).
pub fn fd_check(problem: &Problem, params: &FieldParams, cand: &[Vec3], w: &Weights, zref: Option<&[Image]>) -> FdReport {
    let grad = full_objective(problem, params, cand, w, zref, true).unwrap().grad.unwrap();
    let h = 1e-5;
    let mut rep = FdReport {
        checked: 0,
        failures: Vec::new(),
        max_abs_grad: grad.sigma.iter().fold(0.0, |m: f64, g| m.max(g.abs())),
    };
    for i in (0..params.sigma.len()).filter(|&i| params.active[i]) {
        let mut p = params.clone();
        p.sigma[i] += h;
        let up = full_objective(problem, &p, cand, w, zref, false).unwrap().terms.total;
        p.sigma[i] -= 2.0 * h;
        let down = full_objective(problem, &p, cand, w, zref, false).unwrap().terms.total;
        let fd = (up - down) / (2.0 * h);
        rep.checked += 1;
        if (fd - grad.sigma[i]).abs() > (1e-3 * fd.abs()).max(1e-6) {
            rep.failures.push(format!("node {i}: fd {fd:.6e} adjoint {:.6e}", grad.sigma[i]));
        }
    }
    rep
}

/// Pixel-only and full-objective sweeps on one toy scene.
pub fn fd_sweeps(seed: u64) -> (FdReport, FdReport) {
    let (problem, params, cand) = toy_problem(seed);
    let a = fd_check(&problem, &params, &cand, &pixel_weights(), None);
    let mut shifted = params.clone();
    shifted.sigma.iter_mut().for_each(|s| *s += 0.5);
    let zref = depth_snapshot(&problem, &shifted, &cand);
    let b = fd_check(&problem, &params, &cand, &full_weights(), Some(&zref));
    (a, b)
}

/// Block of particles well inside a 16^3 grid, far from walls and ground.
pub fn free_fall_setup(frame_dt: f64, substeps: usize) -> (ParticleState, MaterialSpec, SimConfig) {
    let dx = 0.05;
    let grid = GridGeometry::new([16, 16, 16], dx, Vec3::zeros()).unwrap();
    let mut rng = util::rng(5);
    let n = 200;
    let pos: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.gen_range(0.3..0.45), rng.gen_range(0.3..0.45), rng.gen_range(0.3..0.45)))
        .collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..6.0)).collect();
    let color: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let mut p = ParticleState::at_rest(pos, sigma, color, (dx / 2.0f64).powi(3));
    p.set_velocity(Vec3::new(0.3, 0.5, -0.2));
    let sim = SimConfig {
        frame_dt,
        substeps,
        gravity: Vec3::new(0.0, -9.8, 0.0),
        ground_height: 0.0,
        ground_friction: 0.0,
        grid,
        initial_velocity: Vec3::zeros(),
        collision_angle: 0.0,
        boundary_cells: 2,
    };
    (p, MaterialSpec::elastic(1e4, 0.3, 500.0), sim)
}

/// Physics checks of a free-falling block.
#[derive(Debug)]
pub struct FreeFall {
    /// Largest center-of-mass deviation from x0 + v0 t + g t^2 / 2 over 0.1 s.
    pub com_error: f64,
    /// Largest relative deviation of one substep's momentum change from m g dt.
    pub momentum_error: f64,
    /// Densities and colors bitwise unchanged along the trajectory.
    pub carried_exact: bool,
}

pub fn free_fall() -> FreeFall {
    let (p0, mat, sim) = free_fall_setup(0.01, 64);
    let traj = simulate(&p0, &mat, &sim, 11).unwrap();
    let rho = mat.density;
    let c0 = p0.center_of_mass(rho);
    let v0 = p0.velocity[0];
    let mut com_error: f64 = 0.0;
    for (f, s) in traj.states.iter().enumerate() {
        let t = f as f64 * sim.frame_dt;
        let exact = c0 + v0 * t + 0.5 * sim.gravity * t * t;
        com_error = com_error.max((s.center_of_mass(rho) - exact).norm());
    }
    let carried_exact = traj.states.iter().all(|s| {
        s.sigma.iter().zip(&p0.sigma).all(|(a, b)| a.to_bits() == b.to_bits())
            && s.color.iter().zip(&p0.color).all(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()))
    });
    let mass: Vec<f64> = p0.alpha.iter().zip(&p0.volume0).map(|(a, v)| rho * v * a).collect();
    let total: f64 = mass.iter().sum();
    let momentum = |s: &ParticleState| s.velocity.iter().zip(&mass).fold(Vec3::zeros(), |acc, (v, m)| acc + *m * v);
    let dt = sim.dt();
    let expected = total * sim.gravity * dt;
    let mut state = p0.clone();
    let mut momentum_error: f64 = 0.0;
    for _ in 0..20 {
        let next = step(&state, &mat, &sim).unwrap();
        let d = momentum(&next) - momentum(&state);
        momentum_error = momentum_error.max((d - expected).norm() / expected.norm());
        state = next;
    }
    FreeFall {
        com_error,
        momentum_error,
        carried_exact,
    }
}

/// Small, fast scene for pipeline tests.
pub fn tiny_spec(shape: Shape) -> SceneSpec {
    let mut s = SceneSpec::new(shape, MaterialSpec::elastic(5e4, 0.3, 1000.0));
    s.cells_per_half_extent = 2.0;
    s.image_size = 12;
    s.n_frames = 4;
    s.impact_frame = 2;
    s.substeps = 16;
    s
}

/// Transfer-operator checks: (largest partition-of-unity error, largest g2p
/// error on a constant field, number of chamfer pairs that differ from brute
/// force).
pub fn transfer_suite() -> (f64, f64, usize) {
    use sfc::eval::{chamfer, chamfer_brute_force};
    use sfc::field::{g2p, trilinear, GridField};
    let geom = GridGeometry::new([9, 7, 11], 0.07, Vec3::new(-0.2, 0.1, 0.3)).unwrap();
    let b = geom.bounds();
    let mut rng = util::rng(17);
    let pts: Vec<Vec3> = (0..2000)
        .map(|_| Vec3::new(rng.gen_range(b.min.x..b.max.x), rng.gen_range(b.min.y..b.max.y), rng.gen_range(b.min.z..b.max.z)))
        .collect();
    let pou = pts
        .iter()
        .map(|p| (trilinear(&geom, p).weights.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let field = GridField::filled(geom, 1.7, Vec3::new(0.2, 0.5, 0.9));
    let g = g2p(&field, &pts);
    let g2p_err = (0..pts.len())
        .map(|p| (g.sigma[p] - 1.7).abs().max((g.color[p] - Vec3::new(0.2, 0.5, 0.9)).abs().max()))
        .fold(0.0, f64::max);
    let mut mismatches = 0;
    for s in 0..20u64 {
        let mut r = util::rng(1000 + s);
        let np = 50 + r.gen_range(0..150);
        let nq = 50 + r.gen_range(0..150);
        let scale = r.gen_range(0.01..10.0);
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-0.2..0.2), r.gen_range(-1.0..1.0)) * scale)
                .collect()
        };
        let p = cloud(np);
        let q = cloud(nq);
        if chamfer(&p, &q).unwrap().to_bits() != chamfer_brute_force(&p, &q).unwrap().to_bits() {
            mismatches += 1;
        }
    }
    (pou, g2p_err, mismatches)
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn dir_bytes(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Dataset invariants: (t0 images identical across cavity variants, mass
/// estimate of the ground truth equals the stored target, regeneration from
/// the written manifest is byte-identical).
pub fn dataset_invariants(shape: Shape) -> (bool, bool, bool) {
    use sfc::field::estimate_mass;
    use sfc::scene::{build_solid, generate_dataset, read_manifest, write_dataset, CavityLocation};
    let base = tiny_spec(shape);
    let variants: Vec<SceneSpec> = [(0.0, CavityLocation::Center), (8.0 / 27.0, CavityLocation::Center), (0.1, CavityLocation::Left), (0.1, CavityLocation::Up)]
        .into_iter()
        .map(|(s, l)| SceneSpec {
            cavity_size_rate: s,
            cavity_location: l,
            ..base.clone()
        })
        .collect();
    let datasets: Vec<_> = variants.iter().map(|s| generate_dataset(s).unwrap()).collect();
    let bits = |d: &sfc::scene::Dataset| -> Vec<u64> {
        d.observations[0].iter().flat_map(|o| o.color.data.iter().chain(&o.mask.data).map(|v| v.to_bits())).collect()
    };
    let t0_identical = datasets.iter().all(|d| bits(d) == bits(&datasets[0]));
    let mass_exact = variants.iter().zip(&datasets).all(|(s, d)| {
        let solid = build_solid(s).unwrap().solid;
        estimate_mass(&solid, d.material.density, d.sim.grid.spacing) == d.mass()
    });
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    write_dataset(&a, &datasets[1]).unwrap();
    let spec = read_manifest(&a).unwrap().spec;
    write_dataset(&b, &generate_dataset(&spec).unwrap()).unwrap();
    let regenerated = dir_bytes(&a) == dir_bytes(&b);
    (t0_identical, mass_exact, regenerated)
}
