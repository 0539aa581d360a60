//! Acceptance criteria, one line each. The desk-scale criteria (4 to 7) run
//! complete fits through the command line and take a few hours on one core;
//! their run directories stay under the cargo target tmpdir for inspection.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use sfc::cli::main_with_args;
use sfc::eval::MetricReport;
use sfc::optim::{anneal_due, fit_dynamic, lr_update, FitState, Method, OptimConfig};
use sfc::scene::{CavityLocation, SceneSpec, Shape};
use sfc::mpm::MaterialSpec;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn report(id: usize, name: &str, o: &Outcome, secs: f64) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{tag}] {name}: {} ({secs:.1} s)", o.detail);
}

fn gradients() -> Outcome {
    let mut worst = Vec::new();
    let mut checked = 0;
    for seed in 1..=5 {
        let (pixel, full) = common::fd_sweeps(seed);
        for (name, rep) in [("pixel", pixel), ("full", full)] {
            checked += rep.checked;
            if rep.max_abs_grad <= 1e-4 {
                worst.push(format!("seed {seed} {name}: vanishing gradient"));
            }
            worst.extend(rep.failures.into_iter().map(|f| format!("seed {seed} {name} {f}")));
        }
    }
    let detail = format!("{checked} node derivatives over 5 scenes, {} mismatches {:?}", worst.len(), worst.iter().take(3).collect::<Vec<_>>());
    outcome(worst.is_empty(), detail)
}

fn physics() -> Outcome {
    let ff = common::free_fall();
    outcome(
        ff.com_error <= 1e-4 && ff.momentum_error <= 1e-9 && ff.carried_exact,
        format!(
            "COM error {:.2e} m, momentum increment error {:.2e} (relative), carried values exact: {}",
            ff.com_error, ff.momentum_error, ff.carried_exact
        ),
    )
}

fn transfers() -> Outcome {
    let (pou, g2p, mismatches) = common::transfer_suite();
    outcome(
        pou <= 1e-12 && g2p <= 1e-12 && mismatches == 0,
        format!("partition of unity {pou:.1e}, constant g2p {g2p:.1e}, chamfer mismatches {mismatches}/20"),
    )
}

fn schedules() -> Outcome {
    let mut rng = sfc::util::rng(8);
    let cfg = OptimConfig::default();
    let mut lr = cfg.lr_dynamic_default;
    let mut ok = true;
    for _ in 0..2000 {
        use rand::Rng;
        let m_hat = 5.0;
        let m = match rng.gen_range(0..3) {
            0 => m_hat,
            1 => rng.gen_range(0.1..m_hat),
            _ => rng.gen_range(m_hat + 1e-9..50.0),
        };
        let next = lr_update(lr, m, m_hat, cfg.lr_min, cfg.lr_max);
        let expected = if m < m_hat {
            (lr / 2.0).max(0.1)
        } else if m > m_hat {
            (lr * 2.0).min(6.4)
        } else {
            lr
        };
        ok &= next == expected && (0.1..=6.4).contains(&next);
        lr = next;
    }
    let fired: Vec<usize> = (0..=1000).filter(|&i| anneal_due(i, 15.0, 5.0, &cfg)).collect();
    let cadence = fired == (1..=10).map(|k| 100 * k).collect::<Vec<_>>();
    let skipped = (0..=1000).all(|i| !anneal_due(i, 15.0 + 1e-9, 5.0, &cfg));
    outcome(
        ok && cadence && skipped,
        format!("lr trace exact: {ok}, anneal at every 100th iteration: {cadence}, skipped when m - m_hat > 10: {skipped}"),
    )
}

fn dataset() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for shape in [Shape::Sphere, Shape::Cube] {
        let (t0, mass, regen) = common::dataset_invariants(shape);
        pass &= t0 && mass && regen;
        parts.push(format!("{shape:?}: t0 identical {t0}, mass exact {mass}, regeneration identical {regen}"));
    }
    outcome(pass, parts.join("; "))
}

fn go_bit_identity() -> (bool, String) {
    let (problem, params, _) = common::toy_problem(4);
    let base = OptimConfig {
        static_iters: 0,
        dynamic_iters: 6,
        apt_iters: 2,
        anneal_period: 2,
        keyframe: 1,
        lr_dynamic_default: 0.4,
        seed: 3,
        ..OptimConfig::default()
    };
    let mut off = base.clone();
    off.use_mass = false;
    off.use_apl = false;
    off.use_apt = false;
    off.use_key = false;
    off.use_va = false;
    let mut go = base.clone();
    Method::Go.configure(&mut go);
    let a = fit_dynamic(FitState::new(&problem, params.clone(), &off), &problem, &off).unwrap();
    let b = fit_dynamic(FitState::new(&problem, params, &go), &problem, &go).unwrap();
    let bits = |s: &FitState| s.params.sigma.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same = a.history == b.history && bits(&a) == bits(&b);
    (same, format!("all-ablated vs GO over {} iterations bit-identical: {same}", a.history.len()))
}

// ---------------------------------------------------------------------------
// desk-scale fits

fn cli(args: &[&str]) -> Result<(), String> {
    let mut v = vec!["sfc"];
    v.extend_from_slice(args);
    match main_with_args(v) {
        0 => Ok(()),
        code => Err(format!("`sfc {}` exited with {code}", args.join(" "))),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Desk {
    root: PathBuf,
}

impl Desk {
    fn new() -> Self {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        if root.exists() {
            std::fs::remove_dir_all(&root).unwrap();
        }
        std::fs::create_dir_all(&root).unwrap();
        Self { root }
    }

    fn scene(&self, name: &str, size: f64, loc: CavityLocation, frames: usize) -> Result<PathBuf, String> {
        let mut spec = SceneSpec::new(Shape::Sphere, MaterialSpec::elastic(5e4, 0.3, 1000.0));
        spec.name = name.into();
        spec.cavity_size_rate = size;
        spec.cavity_location = loc;
        spec.n_frames = frames;
        let toml_path = self.root.join(format!("{name}.toml"));
        std::fs::write(&toml_path, toml::to_string(&spec).unwrap()).unwrap();
        let data = self.root.join("data").join(name);
        cli(&["generate", "--scene", p(&toml_path), "--out", p(&data)])?;
        Ok(data)
    }

    fn run_dir(&self, scene: &str, method: &str) -> PathBuf {
        self.root.join("runs").join(scene).join(method)
    }

    /// Static fit plus the listed dynamic methods, all evaluated.
    fn fit(&self, scene: &str, data: &Path, methods: &[Method]) -> Result<Vec<MetricReport>, String> {
        let t = Instant::now();
        let stat = self.run_dir(scene, "static");
        cli(&["fit-static", "--data", p(data), "--out", p(&stat)])?;
        cli(&["eval", "--data", p(data), "--run", p(&stat)])?;
        let mut out = vec![MetricReport::read_json(&stat.join("metrics.json")).map_err(|e| e.to_string())?];
        eprintln!("  {scene} static: {:.0} s", t.elapsed().as_secs_f64());
        for m in methods {
            let t = Instant::now();
            let dir = self.run_dir(scene, m.name());
            cli(&["fit-dynamic", "--data", p(data), "--out", p(&dir), "--from", p(&stat), "--method", m.name()])?;
            cli(&["eval", "--data", p(data), "--run", p(&dir)])?;
            cli(&["export", "--run", p(&dir)])?;
            out.push(MetricReport::read_json(&dir.join("metrics.json")).map_err(|e| e.to_string())?);
            eprintln!("  {scene} {}: {:.0} s", m.name(), t.elapsed().as_secs_f64());
        }
        Ok(out)
    }
}

fn by_method<'a>(reps: &'a [MetricReport], m: &str) -> &'a MetricReport {
    reps.iter().find(|r| r.method == m).unwrap()
}

struct DeskResults {
    size: Result<(Outcome, f64), String>,
    location: Result<Outcome, String>,
    ablation: Result<Outcome, String>,
    future: Result<Outcome, String>,
}

fn desk() -> DeskResults {
    let d = Desk::new();
    let hollow = (2.0f64 / 3.0).powi(3);
    let mut worst_scene_time: f64 = 0.0;

    // cavity size: filled and (2/3)^3 spheres, with the ablations on the latter
    let size_and_ablation = (|| -> Result<(Vec<MetricReport>, Vec<MetricReport>), String> {
        let t = Instant::now();
        let c0 = d.scene("sphere-c0", 0.0, CavityLocation::Center, 14)?;
        let r0 = d.fit("sphere-c0", &c0, &[Method::Sfc])?;
        worst_scene_time = worst_scene_time.max(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let c23 = d.scene("sphere-c23", hollow, CavityLocation::Center, 28)?;
        let r23 = d.fit("sphere-c23", &c23, &[Method::Sfc])?;
        worst_scene_time = worst_scene_time.max(t.elapsed().as_secs_f64());
        let more = d.fit_more("sphere-c23", &c23, &[Method::SfcNoApl, Method::SfcNoVa, Method::Go])?;
        Ok((r0, r23.into_iter().chain(more).collect()))
    })();

    let size = size_and_ablation.as_ref().map_err(Clone::clone).map(|(r0, r23)| {
        let (s0, f0) = (by_method(r0, "static").cd_static, by_method(r0, "sfc").cd_static);
        let (s23, f23) = (by_method(r23, "static").cd_static, by_method(r23, "sfc").cd_static);
        let pass = f23 <= 0.5 * s23 && f0 <= 1.2 * s0;
        (
            outcome(
                pass,
                format!(
                    "CD x1e3 hollow: static {:.3} sfc {:.3} (ratio {:.2}, need <= 0.5); filled: static {:.3} sfc {:.3} (ratio {:.2}, need <= 1.2)",
                    1e3 * s23,
                    1e3 * f23,
                    f23 / s23,
                    1e3 * s0,
                    1e3 * f0,
                    f0 / s0
                ),
            ),
            worst_scene_time,
        )
    });

    let ablation = size_and_ablation.as_ref().map_err(Clone::clone).map(|(_, r23)| {
        let full = by_method(r23, "sfc").cd_static;
        let others: Vec<(&str, f64)> = ["sfc-no-apl", "sfc-no-va", "go", "static"]
            .iter()
            .map(|m| (*m, by_method(r23, m).cd_static))
            .collect();
        let ordered = others.iter().all(|(_, cd)| full <= *cd);
        let (same, bit_detail) = go_bit_identity();
        let listed: Vec<String> = others.iter().map(|(m, cd)| format!("{m} {:.3}", 1e3 * cd)).collect();
        outcome(
            ordered && same,
            format!("CD x1e3 sfc {:.3} vs {}; {bit_detail}", 1e3 * full, listed.join(", ")),
        )
    });

    let location = (|| -> Result<Outcome, String> {
        let mut parts = Vec::new();
        let mut pass = true;
        for (name, loc) in [("sphere-left", CavityLocation::Left), ("sphere-up", CavityLocation::Up)] {
            let data = d.scene(name, hollow, loc, 14)?;
            let reps = d.fit(name, &data, &[Method::Sfc])?;
            let r = by_method(&reps, "sfc");
            let ratio = r.acd_static / r.cd_static;
            pass &= r.cd_static < r.acd_static && ratio >= 1.1;
            parts.push(format!("{name}: CD {:.3} ACD {:.3} ratio {ratio:.2}", 1e3 * r.cd_static, 1e3 * r.acd_static));
        }
        Ok(outcome(pass, format!("{} (x1e3, need ratio >= 1.1)", parts.join("; "))))
    })();

    let future = size_and_ablation.as_ref().map_err(Clone::clone).and_then(|_| {
        let data = d.root.join("data/sphere-c23");
        let sfc_run = d.run_dir("sphere-c23", "sfc");
        let stat = d.run_dir("sphere-c23", "static");
        let ours_dir = d.root.join("future/sfc");
        let theirs_dir = d.root.join("future/filled-property");
        cli(&["eval", "--data", p(&data), "--run", p(&sfc_run), "--future", "--out", p(&ours_dir)])?;
        cli(&["eval", "--data", p(&data), "--run", p(&stat), "--future", "--property-fit", "--out", p(&theirs_dir)])?;
        let ours = MetricReport::read_json(&ours_dir.join("metrics.json")).map_err(|e| e.to_string())?;
        let theirs = MetricReport::read_json(&theirs_dir.join("metrics.json")).map_err(|e| e.to_string())?;
        let (po, pt) = (ours.psnr.unwrap(), theirs.psnr.unwrap());
        let (so, st) = (ours.ssim.unwrap(), theirs.ssim.unwrap());
        Ok(outcome(
            po >= pt + 0.5 && so > st,
            format!("held-out PSNR {po:.2} vs {pt:.2} dB (need +0.5), SSIM {so:.4} vs {st:.4}"),
        ))
    });

    for by in ["size", "location"] {
        let _ = cli(&["tables", "--in", p(&d.root.join("runs")), "--out", p(&d.root.join(format!("table-{by}.csv"))), "--by", by]);
    }
    DeskResults {
        size,
        location,
        ablation,
        future,
    }
}

impl Desk {
    /// Dynamic methods on a scene whose static fit already exists.
    fn fit_more(&self, scene: &str, data: &Path, methods: &[Method]) -> Result<Vec<MetricReport>, String> {
        let stat = self.run_dir(scene, "static");
        let mut out = Vec::new();
        for m in methods {
            let t = Instant::now();
            let dir = self.run_dir(scene, m.name());
            cli(&["fit-dynamic", "--data", p(data), "--out", p(&dir), "--from", p(&stat), "--method", m.name()])?;
            cli(&["eval", "--data", p(data), "--run", p(&dir)])?;
            out.push(MetricReport::read_json(&dir.join("metrics.json")).map_err(|e| e.to_string())?);
            eprintln!("  {scene} {}: {:.0} s", m.name(), t.elapsed().as_secs_f64());
        }
        Ok(out)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut all_pass = true;
    let mut emit = |id: usize, name: &str, o: Outcome, secs: f64| {
        all_pass &= o.pass;
        report(id, name, &o, secs);
    };
    let timed = |f: fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed().as_secs_f64())
    };

    let (o, s) = timed(gradients);
    let o = Outcome {
        pass: o.pass && s <= 300.0,
        detail: format!("{}; runtime {s:.0} s of 300", o.detail),
    };
    emit(1, "gradient correctness", o, s);
    let (o, s) = timed(physics);
    emit(2, "physics conservation", o, s);
    let (o, s) = timed(transfers);
    emit(3, "transfer operators", o, s);

    let t = Instant::now();
    let desk = desk();
    let desk_secs = t.elapsed().as_secs_f64();
    let failed = |e: String| outcome(false, format!("run failed: {e}"));
    let size = match desk.size {
        Ok((o, worst)) => Outcome {
            pass: o.pass && worst <= 3600.0,
            detail: format!("{}; slowest scene {worst:.0} s of 3600", o.detail),
        },
        Err(e) => failed(e),
    };
    emit(4, "cavity-size recovery", size, desk_secs);
    emit(5, "cavity-location recovery", desk.location.unwrap_or_else(failed), desk_secs);
    emit(6, "ablation ordering", desk.ablation.unwrap_or_else(failed), desk_secs);
    emit(7, "future prediction", desk.future.unwrap_or_else(failed), desk_secs);

    let (o, s) = timed(schedules);
    emit(8, "schedule conformance", o, s);
    let (o, s) = timed(dataset);
    emit(9, "dataset invariants", o, s);

    if !all_pass {
        std::process::exit(1);
    }
}
