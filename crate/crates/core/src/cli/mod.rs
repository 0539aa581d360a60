//! Command-line stages. Each invocation runs one stage and leaves a
//! self-describing directory behind, so tables can be rebuilt from disk.

mod plot;
mod tables;

pub use plot::{line_plot, Series};
pub use tables::{find_metric_files, write_table, TableKind};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::eval::{cd_over_video, future_prediction_eval, MetricReport};
use crate::field::write_point_cloud;
use crate::mpm::simulate;
use crate::optim::{fit_dynamic, fit_static, property_fit, sample, FitState, IterRecord, Method, OptimConfig, Problem};
use crate::scene::{generate_dataset, load_dataset, write_dataset, SceneSpec};
use crate::{Error, Result};

pub const RUN_MANIFEST: &str = "run.manifest";
pub const ERROR_RECORD: &str = "error.json";
const DEFAULT_TRAIN_FRAMES: usize = 14;

#[derive(Debug, Parser)]
#[command(name = "sfc", version, about = "Recover hidden structure from collision videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene into a dataset directory.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the first frame only.
    FitStatic(FitArgs),
    /// Static fit (or a previous one) followed by the dynamic fit.
    FitDynamic {
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long, default_value = "sfc")]
        method: Method,
        /// Run directory of a finished static fit to start from.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Score a run against the dataset's ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Also score held-out frames after the training frames.
        #[arg(long)]
        future: bool,
        /// Refit Young's modulus and Poisson's ratio on the run's structure
        /// before scoring.
        #[arg(long)]
        property_fit: bool,
        /// Output directory; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics.csv files into a table.
    Tables {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "size")]
        by: TableKind,
    },
    /// Loss, mass and learning-rate plots of a run.
    Export {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optimizer settings (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of leading frames to fit.
    #[arg(long)]
    pub frames: Option<usize>,
}

/// `run.manifest` of a fit directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub stage: String,
    pub method: String,
    pub status: String,
    pub data: PathBuf,
    pub scene: String,
    pub n_frames: usize,
    pub target_mass: f64,
    pub final_mass: f64,
    pub n_particles: usize,
    pub runtime_s: f64,
    pub config: OptimConfig,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path,
            message: e.to_string(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RUN_MANIFEST);
        let text = toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Machine-readable failure record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub command: String,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_config(args: &FitArgs) -> Result<OptimConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_toml(p)?,
        None => OptimConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_history(path: &Path, history: &[IterRecord]) -> Result<()> {
    let err = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in history {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<IterRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Final field state of a run.
pub fn read_state(run: &Path) -> Result<FitState> {
    read_json(&run.join("state.json"))
}

fn save_run(dir: &Path, state: &FitState, problem: &Problem, manifest: &mut RunManifest, started: Instant) -> Result<()> {
    let particles = sample(&state.params.to_field(), &state.candidates);
    write_json(&dir.join("state.json"), state)?;
    write_history(&dir.join("history.csv"), &state.history)?;
    write_point_cloud(&dir.join("particles_t0.txt"), &particles.position, &particles.alpha, problem.sim.grid.spacing)?;
    manifest.final_mass = state.mass(problem);
    manifest.n_particles = particles.len();
    manifest.runtime_s = started.elapsed().as_secs_f64();
    manifest.status = "done".into();
    manifest.write(dir)
}

fn start_run(args: &FitArgs, stage: &str, method: Method) -> Result<(crate::scene::Dataset, Problem, OptimConfig, RunManifest)> {
    let mut cfg = load_config(args)?;
    method.configure(&mut cfg);
    let data = load_dataset(&args.data)?;
    let n = args.frames.unwrap_or(data.observations.len().min(DEFAULT_TRAIN_FRAMES));
    let problem = Problem::from_dataset(&data, n)?;
    create_dir(&args.out)?;
    let manifest = RunManifest {
        format: "sfc-run v1".into(),
        stage: stage.into(),
        method: method.name().into(),
        status: "running".into(),
        data: args.data.clone(),
        scene: data.spec.name.clone(),
        n_frames: n,
        target_mass: problem.target_mass()?,
        final_mass: 0.0,
        n_particles: 0,
        runtime_s: 0.0,
        config: cfg.clone(),
    };
    manifest.write(&args.out)?;
    Ok((data, problem, cfg, manifest))
}

fn cmd_generate(scene: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SceneSpec = read_toml(scene)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let data = generate_dataset(&spec)?;
    write_dataset(out, &data)?;
    log::info!("wrote {} frames x {} cameras to {}", data.observations.len(), data.cameras.len(), out.display());
    Ok(())
}

fn cmd_fit_static(args: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let (_, problem, cfg, mut manifest) = start_run(args, "fit-static", Method::Static)?;
    let state = fit_static(&problem, &cfg)?;
    save_run(&args.out, &state, &problem, &mut manifest, started)
}

fn cmd_fit_dynamic(args: &FitArgs, method: Method, from: Option<&Path>) -> Result<()> {
    let started = Instant::now();
    let (_, problem, cfg, mut manifest) = start_run(args, "fit-dynamic", method)?;
    let state = match from {
        Some(dir) => {
            let prior = RunManifest::read(dir)?;
            if prior.status != "done" {
                return Err(Error::InvalidArgument(format!("{} did not finish", dir.display())));
            }
            read_state(dir)?
        }
        None => fit_static(&problem, &cfg)?,
    };
    let state = fit_dynamic(state, &problem, &cfg)?;
    save_run(&args.out, &state, &problem, &mut manifest, started)
}

fn cmd_eval(data_dir: &Path, run: &Path, future: bool, refit: bool, out: Option<&Path>) -> Result<MetricReport> {
    let data = load_dataset(data_dir)?;
    let manifest = RunManifest::read(run)?;
    let state = read_state(run)?;
    let n = manifest.n_frames;
    let problem = Problem::from_dataset(&data, n)?;
    let particles = sample(&state.params.to_field(), &state.candidates);
    if particles.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut material = data.material.clone();
    let mut method = manifest.method.clone();
    if refit {
        let pf = property_fit(&problem, &state.params, &data.material, &manifest.config)?;
        material = pf.material;
        method.push_str("+property");
    }
    let mut report = MetricReport::structure(&data.spec.name, &method, &particles.position, &data.gt[0], &data.gt_mirror[0])?;
    report.cavity_size_rate = data.spec.cavity_size_rate;
    report.cavity_location = serde_json::to_value(data.spec.cavity_location)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default();
    let traj = simulate(&particles, &material, &data.sim, n)?;
    let pred: Vec<_> = traj.states.iter().map(|s| s.position.clone()).collect();
    report.cd_video = Some(cd_over_video(&pred, &data.gt[..n])?);
    report.acd_video = Some(cd_over_video(&pred, &data.gt_mirror[..n])?);
    if future {
        let score = future_prediction_eval(&particles, &material, &data.sim, &data.cameras, &data.observations, n)?;
        report.psnr = Some(score.psnr);
        report.ssim = Some(score.ssim);
    }
    report.runtime_s = manifest.runtime_s;
    report.validate()?;
    let dir = out.unwrap_or(run);
    create_dir(dir)?;
    report.write_json(&dir.join("metrics.json"))?;
    report.write_csv(&dir.join("metrics.csv"))?;
    log::info!("CD x1e3 {:.4}, ACD x1e3 {:.4}", 1e3 * report.cd_static, 1e3 * report.acd_static);
    Ok(report)
}

/// Writes `loss.png`, `mass.png` and `lr.png` into `run`. A run without a
/// loss history is skipped with a warning. Returns the files written.
pub fn export_plots(run: &Path) -> Result<Vec<PathBuf>> {
    let path = run.join("history.csv");
    if !path.exists() {
        log::warn!("{} has no history.csv; nothing to plot", run.display());
        return Ok(Vec::new());
    }
    let all = read_history(&path)?;
    let dynamic: Vec<&IterRecord> = all.iter().filter(|r| r.stage == "dynamic").collect();
    let rows: Vec<&IterRecord> = if dynamic.is_empty() { all.iter().collect() } else { dynamic };
    if rows.is_empty() {
        log::warn!("{} is empty; nothing to plot", path.display());
        return Ok(Vec::new());
    }
    let series = |f: &dyn Fn(&IterRecord) -> f64| rows.iter().map(|r| (r.iteration as f64, f(r))).collect::<Vec<_>>();
    let target = RunManifest::read(run).ok().map(|m| m.target_mass);
    let mut written = Vec::new();
    let loss = run.join("loss.png");
    line_plot(
        &loss,
        &[
            Series::new([20, 20, 20], series(&|r| r.total)),
            Series::new([200, 40, 40], series(&|r| r.pixel)),
            Series::new([40, 90, 200], series(&|r| r.mass_loss)),
        ],
        true,
    )?;
    written.push(loss);
    let mass = run.join("mass.png");
    let mut ms = vec![Series::new([40, 90, 200], series(&|r| r.mass))];
    if let Some(t) = target {
        let (a, b) = (rows[0].iteration as f64, rows[rows.len() - 1].iteration as f64);
        ms.push(Series::new([120, 120, 120], vec![(a, t), (b, t)]));
    }
    line_plot(&mass, &ms, false)?;
    written.push(mass);
    let lr = run.join("lr.png");
    line_plot(&lr, &[Series::new([30, 150, 60], series(&|r| r.lr))], true)?;
    written.push(lr);
    Ok(written)
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate { scene, out, seed } => cmd_generate(scene, out, *seed),
        Command::FitStatic(a) => cmd_fit_static(a),
        Command::FitDynamic { fit, method, from } => cmd_fit_dynamic(fit, *method, from.as_deref()),
        Command::Eval {
            data,
            run,
            future,
            property_fit,
            out,
        } => cmd_eval(data, run, *future, *property_fit, out.as_deref()).map(|_| ()),
        Command::Tables { input, out, by } => {
            let n = write_table(input, out, *by)?;
            log::info!("wrote {n} rows to {}", out.display());
            Ok(())
        }
        Command::Export { run } => {
            for p in export_plots(run)? {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::FitStatic(_) => "fit-static",
            Command::FitDynamic { .. } => "fit-dynamic",
            Command::Eval { .. } => "eval",
            Command::Tables { .. } => "tables",
            Command::Export { .. } => "export",
        }
    }

    /// Directory a failure record belongs in.
    fn record_dir(&self) -> Option<&Path> {
        match self {
            Command::Generate { out, .. } => Some(out),
            Command::Tables { out, .. } => out.parent(),
            Command::FitStatic(a) | Command::FitDynamic { fit: a, .. } => Some(&a.out),
            Command::Eval { out, run, .. } => Some(out.as_deref().unwrap_or(run)),
            Command::Export { run } => Some(run),
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SFC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("SFC_THREADS must be a positive integer, got {v:?}")))?;
    // a second initialisation in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit status.
/// Failures print a JSON record to stderr and, where the command names an
/// output directory, also write it there as `error.json`.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return 0;
            }
            let rec = ErrorRecord {
                kind: "usage".into(),
                message: e.to_string(),
                command: String::new(),
            };
            let _ = e.print();
            eprintln!("{}", serde_json::to_string(&rec).unwrap_or_default());
            return 2;
        }
    };
    let result = configure_threads().and_then(|_| run(&cli));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let rec = ErrorRecord {
                kind: e.kind().into(),
                message: e.to_string(),
                command: cli.command.name().into(),
            };
            let json = serde_json::to_string_pretty(&rec).unwrap_or_default();
            eprintln!("error: {e}");
            eprintln!("{json}");
            if let Some(dir) = cli.command.record_dir().filter(|d| !d.as_os_str().is_empty()) {
                if fs::create_dir_all(dir).is_ok() {
                    let _ = fs::write(dir.join(ERROR_RECORD), &json);
                }
            }
            1
        }
    }
}
