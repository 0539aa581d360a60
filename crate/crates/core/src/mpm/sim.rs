use log::warn;

use super::constitutive::{self, LameGrad, Resolved};
use super::{MaterialFamily, MaterialSpec, SimConfig};
use crate::field::{alpha_derivative, GridGeometry, ParticleState};
use crate::{Error, Mat3, Result, Vec3};

/// Per-frame particle states plus what the reverse sweep needs to replay
/// the substeps between them.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<ParticleState>,
    pub material: MaterialSpec,
    pub config: SimConfig,
    /// False when the trajectory was recorded without replay support.
    pub checkpointed: bool,
}

/// Loss gradient with respect to one frame's particle positions, densities
/// and colors. Empty vectors stand for zero.
#[derive(Clone, Debug, Default)]
pub struct FrameCotangent {
    pub position: Vec<Vec3>,
    pub sigma: Vec<f64>,
    pub color: Vec<Vec3>,
}

/// Loss gradient with respect to the initial particle state and the elastic
/// moduli.
#[derive(Clone, Debug, Default)]
pub struct InitialGradient {
    pub position: Vec<Vec3>,
    pub velocity: Vec<Vec3>,
    pub affine_velocity: Vec<Mat3>,
    pub deformation_gradient: Vec<Mat3>,
    pub sigma: Vec<f64>,
    pub color: Vec<Vec3>,
    pub youngs_modulus: f64,
    pub poissons_ratio: f64,
}

#[derive(Clone, Debug)]
struct Kin {
    x: Vec<Vec3>,
    v: Vec<Vec3>,
    c: Vec<Mat3>,
    f: Vec<Mat3>,
}

impl Kin {
    fn of(s: &ParticleState) -> Self {
        Self {
            x: s.position.clone(),
            v: s.velocity.clone(),
            c: s.affine_velocity.clone(),
            f: s.deformation_gradient.clone(),
        }
    }

    fn zeros(n: usize) -> Self {
        Self {
            x: vec![Vec3::zeros(); n],
            v: vec![Vec3::zeros(); n],
            c: vec![Mat3::zeros(); n],
            f: vec![Mat3::zeros(); n],
        }
    }

    fn apply(self, template: &ParticleState) -> ParticleState {
        ParticleState {
            position: self.x,
            velocity: self.v,
            affine_velocity: self.c,
            deformation_gradient: self.f,
            ..template.clone()
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Kernel {
    base: [usize; 3],
    w: [[f64; 3]; 3],
    dw: [[f64; 3]; 3],
    fx: Vec3,
}

impl Kernel {
    #[inline]
    fn weight(&self, o: [usize; 3]) -> f64 {
        self.w[0][o[0]] * self.w[1][o[1]] * self.w[2][o[2]]
    }

    #[inline]
    fn weight_grad(&self, o: [usize; 3]) -> Vec3 {
        Vec3::new(
            self.dw[0][o[0]] * self.w[1][o[1]] * self.w[2][o[2]],
            self.w[0][o[0]] * self.dw[1][o[1]] * self.w[2][o[2]],
            self.w[0][o[0]] * self.w[1][o[1]] * self.dw[2][o[2]],
        )
    }
}

const OFFSETS: [[usize; 3]; 27] = {
    let mut out = [[0usize; 3]; 27];
    let mut n = 0;
    while n < 27 {
        out[n] = [n % 3, (n / 3) % 3, n / 9];
        n += 1;
    }
    out
};

/// Substep intermediates kept for the reverse pass.
struct Work {
    kern: Vec<Kernel>,
    tau: Vec<Mat3>,
    affine: Vec<Mat3>,
    f_trial: Vec<Mat3>,
    grid_mass: Vec<f64>,
    grid_mom: Vec<Vec3>,
    grid_vel: Vec<Vec3>,
    bc_scale: Vec<Vec3>,
    active: Vec<usize>,
}

impl Work {
    fn new(n: usize, nodes: usize) -> Self {
        Self {
            kern: Vec::with_capacity(n),
            tau: Vec::with_capacity(n),
            affine: Vec::with_capacity(n),
            f_trial: Vec::with_capacity(n),
            grid_mass: vec![0.0; nodes],
            grid_mom: vec![Vec3::zeros(); nodes],
            grid_vel: vec![Vec3::zeros(); nodes],
            bc_scale: vec![Vec3::zeros(); nodes],
            active: Vec::new(),
        }
    }
}

struct Sim<'a> {
    mat: Resolved,
    density: f64,
    dt: f64,
    gravity: Vec3,
    geom: &'a GridGeometry,
    dx: f64,
    inv_dx: f64,
    ground: f64,
    friction: f64,
    walls: usize,
    alpha: &'a [f64],
    vol0: &'a [f64],
}

impl<'a> Sim<'a> {
    fn new(material: &MaterialSpec, cfg: &'a SimConfig, state: &'a ParticleState) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mat: Resolved::from_spec(material)?,
            density: material.density,
            dt: cfg.dt(),
            gravity: cfg.gravity,
            geom: &cfg.grid,
            dx: cfg.grid.spacing,
            inv_dx: 1.0 / cfg.grid.spacing,
            ground: cfg.ground_height,
            friction: cfg.ground_friction,
            walls: cfg.boundary_cells,
            alpha: &state.alpha,
            vol0: &state.volume0,
        })
    }

    fn kernel(&self, x: &Vec3) -> Option<Kernel> {
        let local = (x - self.geom.origin) * self.inv_dx;
        let mut base = [0usize; 3];
        let mut w = [[0.0; 3]; 3];
        let mut dw = [[0.0; 3]; 3];
        let mut fx = Vec3::zeros();
        for a in 0..3 {
            let b = (local[a] - 0.5).floor();
            if !(b >= 0.0) || b as usize + 2 >= self.geom.resolution[a] {
                return None;
            }
            base[a] = b as usize;
            let f = local[a] - b;
            fx[a] = f;
            w[a] = [0.5 * (1.5 - f).powi(2), 0.75 - (f - 1.0).powi(2), 0.5 * (f - 0.5).powi(2)];
            dw[a] = [f - 1.5, -2.0 * (f - 1.0), f - 0.5];
        }
        Some(Kernel { base, w, dw, fx })
    }

    #[inline]
    fn node(&self, k: &Kernel, o: [usize; 3]) -> usize {
        self.geom.index(k.base[0] + o[0], k.base[1] + o[1], k.base[2] + o[2])
    }

    #[inline]
    fn dpos(&self, k: &Kernel, o: [usize; 3]) -> Vec3 {
        (Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64) - k.fx) * self.dx
    }

    fn boundary_scale(&self, idx: usize, u: &Vec3) -> Vec3 {
        let c = self.geom.coords(idx);
        let mut s = Vec3::new(1.0, 1.0, 1.0);
        let y = self.geom.origin.y + c[1] as f64 * self.dx;
        if y <= self.ground && u.y < 0.0 {
            s = Vec3::new(1.0 - self.friction, 0.0, 1.0 - self.friction);
        }
        for a in 0..3 {
            let n = self.geom.resolution[a];
            if (c[a] < self.walls && u[a] < 0.0) || (c[a] + self.walls >= n && u[a] > 0.0) {
                s[a] = 0.0;
            }
        }
        s
    }

    fn diverged(frame: usize, substep: usize, particle: usize, reason: impl Into<String>) -> Error {
        Error::SimulationDiverged {
            frame,
            substep,
            particle,
            reason: reason.into(),
        }
    }

    fn forward(&self, k: &Kin, ws: &mut Work, frame: usize, sub: usize) -> Result<Kin> {
        let n = k.x.len();
        let dt = self.dt;
        let stress_scale = -dt * 4.0 * self.inv_dx * self.inv_dx;
        for &idx in &ws.active {
            ws.grid_mass[idx] = 0.0;
            ws.grid_mom[idx] = Vec3::zeros();
        }
        ws.active.clear();
        ws.kern.clear();
        ws.tau.clear();
        ws.affine.clear();
        ws.f_trial.clear();
        for p in 0..n {
            let kern = self
                .kernel(&k.x[p])
                .ok_or_else(|| Self::diverged(frame, sub, p, "particle left the simulation domain"))?;
            let mass = self.density * self.vol0[p] * self.alpha[p];
            let vol = self.vol0[p] * self.alpha[p];
            let tau = constitutive::kirchhoff(&self.mat, &k.f[p], &k.c[p])
                .map_err(|e| Self::diverged(frame, sub, p, e.to_string()))?;
            let affine = stress_scale * vol * tau + mass * k.c[p];
            let mv = mass * k.v[p];
            for o in OFFSETS {
                let idx = self.node(&kern, o);
                let w = kern.weight(o);
                if ws.grid_mass[idx] == 0.0 && ws.grid_mom[idx] == Vec3::zeros() {
                    ws.active.push(idx);
                }
                ws.grid_mass[idx] += w * mass;
                ws.grid_mom[idx] += w * (mv + affine * self.dpos(&kern, o));
            }
            ws.kern.push(kern);
            ws.tau.push(tau);
            ws.affine.push(affine);
        }
        ws.active.sort_unstable();
        ws.active.dedup();
        for &idx in &ws.active {
            let m = ws.grid_mass[idx];
            if m > 0.0 {
                let u = ws.grid_mom[idx] / m + dt * self.gravity;
                let s = self.boundary_scale(idx, &u);
                ws.bc_scale[idx] = s;
                ws.grid_vel[idx] = s.component_mul(&u);
            } else {
                ws.bc_scale[idx] = Vec3::zeros();
                ws.grid_vel[idx] = Vec3::zeros();
            }
        }
        let mut out = Kin::zeros(n);
        let apic = 4.0 * self.inv_dx * self.inv_dx;
        for p in 0..n {
            let kern = &ws.kern[p];
            let mut v = Vec3::zeros();
            let mut c = Mat3::zeros();
            for o in OFFSETS {
                let idx = self.node(kern, o);
                let w = kern.weight(o);
                let u = ws.grid_vel[idx];
                v += w * u;
                c += (apic * w) * u * self.dpos(kern, o).transpose();
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Self::diverged(frame, sub, p, "non-finite velocity"));
            }
            let f_trial = (Mat3::identity() + dt * c) * k.f[p];
            out.x[p] = k.x[p] + dt * v;
            out.v[p] = v;
            out.c[p] = c;
            out.f[p] = constitutive::project(&self.mat, &f_trial, dt);
            ws.f_trial.push(f_trial);
        }
        Ok(out)
    }

    /// Pulls `adj` (gradient w.r.t. the substep output) back to the substep
    /// input. `ws` must hold the intermediates of `forward(k)`.
    fn reverse(&self, k: &Kin, out: &Kin, ws: &Work, adj: &mut Kin, alpha_bar: &mut [f64], lame: &mut LameGrad) {
        let n = k.x.len();
        let dt = self.dt;
        let apic = 4.0 * self.inv_dx * self.inv_dx;
        let stress_scale = -dt * apic;
        let nodes = ws.grid_mass.len();
        let mut vel_bar = vec![Vec3::zeros(); nodes];
        let mut fx_bar = vec![Vec3::zeros(); n];
        let mut f_bar_in = vec![Mat3::zeros(); n];
        for p in 0..n {
            let kern = &ws.kern[p];
            let ft_bar = constitutive::project_vjp(&self.mat, &ws.f_trial[p], dt, &adj.f[p]);
            let c_new_bar = adj.c[p] + dt * ft_bar * k.f[p].transpose();
            f_bar_in[p] = (Mat3::identity() + dt * out.c[p]).transpose() * ft_bar;
            let v_new_bar = adj.v[p] + dt * adj.x[p];
            let mut fxb = Vec3::zeros();
            for o in OFFSETS {
                let idx = self.node(kern, o);
                let w = kern.weight(o);
                let u = ws.grid_vel[idx];
                let dpos = self.dpos(kern, o);
                let cd = c_new_bar * dpos;
                vel_bar[idx] += w * v_new_bar + (apic * w) * cd;
                let w_bar = v_new_bar.dot(&u) + apic * u.dot(&cd);
                let dpos_bar = (apic * w) * c_new_bar.transpose() * u;
                fxb += w_bar * kern.weight_grad(o) - self.dx * dpos_bar;
            }
            fx_bar[p] = fxb;
        }
        let mut mom_bar = vec![Vec3::zeros(); nodes];
        let mut mass_bar = vec![0.0; nodes];
        for &idx in &ws.active {
            let m = ws.grid_mass[idx];
            if m > 0.0 {
                let u_bar = ws.bc_scale[idx].component_mul(&vel_bar[idx]);
                mom_bar[idx] = u_bar / m;
                mass_bar[idx] = -u_bar.dot(&ws.grid_mom[idx]) / (m * m);
            }
        }
        for p in 0..n {
            let kern = &ws.kern[p];
            let mass = self.density * self.vol0[p] * self.alpha[p];
            let vol = self.vol0[p] * self.alpha[p];
            let affine = &ws.affine[p];
            let v = k.v[p];
            let mut a_bar = Mat3::zeros();
            let mut m_bar = 0.0;
            let mut v_bar = Vec3::zeros();
            let mut fxb = fx_bar[p];
            for o in OFFSETS {
                let idx = self.node(kern, o);
                let w = kern.weight(o);
                let dpos = self.dpos(kern, o);
                let pb = mom_bar[idx];
                let mb = mass_bar[idx];
                let contrib = mass * v + affine * dpos;
                let w_bar = pb.dot(&contrib) + mb * mass;
                m_bar += w * (pb.dot(&v) + mb);
                v_bar += (w * mass) * pb;
                a_bar += w * pb * dpos.transpose();
                let dpos_bar = w * affine.transpose() * pb;
                fxb += w_bar * kern.weight_grad(o) - self.dx * dpos_bar;
            }
            let tau_bar = (stress_scale * vol) * a_bar;
            let vol_bar = stress_scale * a_bar.dot(&ws.tau[p]);
            m_bar += a_bar.dot(&k.c[p]);
            let (fs, cs, lg) = constitutive::kirchhoff_vjp(&self.mat, &k.f[p], &k.c[p], &tau_bar);
            lame.mu += lg.mu;
            lame.lambda += lg.lambda;
            alpha_bar[p] += self.density * self.vol0[p] * m_bar + self.vol0[p] * vol_bar;
            adj.x[p] += self.inv_dx * fxb;
            adj.v[p] = v_bar;
            adj.c[p] = mass * a_bar + cs;
            adj.f[p] = f_bar_in[p] + fs;
        }
    }
}

fn check_cfl(k: &Kin, dt: f64, dx: f64, frame: usize, sub: usize, warned: &mut bool) -> Result<()> {
    let vmax = k.v.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let disp = vmax * dt;
    if !(disp < dx) {
        return Err(Error::Cfl {
            frame,
            substep: sub,
            displacement: disp,
            dx,
        });
    }
    if disp > 0.5 * dx && !*warned {
        warn!("frame {frame} substep {sub}: particle moves {disp:.3e} per substep, above half a cell ({dx:.3e})");
        *warned = true;
    }
    Ok(())
}

/// One substep of the simulator.
pub fn step(state: &ParticleState, material: &MaterialSpec, cfg: &SimConfig) -> Result<ParticleState> {
    let sim = Sim::new(material, cfg, state)?;
    let kin = Kin::of(state);
    check_cfl(&kin, sim.dt, sim.dx, 0, 0, &mut true)?;
    let mut ws = Work::new(state.len(), cfg.grid.node_count());
    Ok(sim.forward(&kin, &mut ws, 0, 0)?.apply(state))
}

/// Runs `substeps * (n_frames - 1)` substeps and records one state per frame.
pub fn simulate(initial: &ParticleState, material: &MaterialSpec, cfg: &SimConfig, n_frames: usize) -> Result<Trajectory> {
    if n_frames < 1 {
        return Err(Error::InvalidArgument("n_frames must be >= 1".into()));
    }
    let sim = Sim::new(material, cfg, initial)?;
    let mut ws = Work::new(initial.len(), cfg.grid.node_count());
    let mut states = Vec::with_capacity(n_frames);
    states.push(initial.clone());
    let mut kin = Kin::of(initial);
    let mut warned = false;
    for frame in 1..n_frames {
        for sub in 0..cfg.substeps {
            check_cfl(&kin, sim.dt, sim.dx, frame - 1, sub, &mut warned)?;
            kin = sim.forward(&kin, &mut ws, frame - 1, sub)?;
        }
        states.push(kin.clone().apply(initial));
    }
    Ok(Trajectory {
        states,
        material: material.clone(),
        config: cfg.clone(),
        checkpointed: true,
    })
}

/// Reverse sweep over a recorded trajectory. Each frame interval is replayed
/// forward from its stored state, then walked backwards substep by substep.
pub fn backward(traj: &Trajectory, cotangents: &[FrameCotangent]) -> Result<InitialGradient> {
    if !traj.checkpointed {
        return Err(Error::MissingCheckpoints);
    }
    let n_frames = traj.states.len();
    if cotangents.len() != n_frames {
        return Err(Error::DimensionMismatch(format!(
            "{} frame cotangents for {} frames",
            cotangents.len(),
            n_frames
        )));
    }
    let init = &traj.states[0];
    let n = init.len();
    let cfg = &traj.config;
    let sim = Sim::new(&traj.material, cfg, init)?;
    let mut adj = Kin::zeros(n);
    let mut alpha_bar = vec![0.0; n];
    let mut sigma_bar = vec![0.0; n];
    let mut color_bar = vec![Vec3::zeros(); n];
    let mut lame = LameGrad::default();
    let mut ws = Work::new(n, cfg.grid.node_count());
    for frame in (0..n_frames).rev() {
        let cot = &cotangents[frame];
        for (name, len) in [("position", cot.position.len()), ("sigma", cot.sigma.len()), ("color", cot.color.len())] {
            if len != 0 && len != n {
                return Err(Error::DimensionMismatch(format!(
                    "frame {frame} {name} cotangent has {len} entries for {n} particles"
                )));
            }
        }
        for (a, g) in adj.x.iter_mut().zip(&cot.position) {
            *a += g;
        }
        for (a, g) in sigma_bar.iter_mut().zip(&cot.sigma) {
            *a += g;
        }
        for (a, g) in color_bar.iter_mut().zip(&cot.color) {
            *a += g;
        }
        if frame == 0 {
            break;
        }
        let mut tape = Vec::with_capacity(cfg.substeps + 1);
        tape.push(Kin::of(&traj.states[frame - 1]));
        for sub in 0..cfg.substeps {
            let next = sim.forward(&tape[sub], &mut ws, frame - 1, sub)?;
            tape.push(next);
        }
        for sub in (0..cfg.substeps).rev() {
            sim.forward(&tape[sub], &mut ws, frame - 1, sub)?;
            sim.reverse(&tape[sub], &tape[sub + 1], &ws, &mut adj, &mut alpha_bar, &mut lame);
        }
    }
    for p in 0..n {
        sigma_bar[p] += alpha_bar[p] * alpha_derivative(init.sigma[p]);
    }
    let (mut de, mut dnu) = (0.0, 0.0);
    if matches!(
        traj.material.family,
        MaterialFamily::Elastic | MaterialFamily::Plasticine | MaterialFamily::Sand
    ) {
        let j = constitutive::lame_jacobian(
            traj.material.youngs_modulus.unwrap_or(0.0),
            traj.material.poissons_ratio.unwrap_or(0.0),
        );
        de = lame.mu * j[0][0] + lame.lambda * j[1][0];
        dnu = lame.mu * j[0][1] + lame.lambda * j[1][1];
    }
    Ok(InitialGradient {
        position: adj.x,
        velocity: adj.v,
        affine_velocity: adj.c,
        deformation_gradient: adj.f,
        sigma: sigma_bar,
        color: color_bar,
        youngs_modulus: de,
        poissons_ratio: dnu,
    })
}
