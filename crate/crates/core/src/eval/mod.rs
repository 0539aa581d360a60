//! Structure metrics (chamfer and anti-chamfer, per frame and over a video)
//! and image metrics for future prediction.

mod chamfer;
mod image_metrics;

pub use chamfer::{anti_chamfer, cd_over_video, chamfer, chamfer_brute_force};
pub use image_metrics::{psnr, psnr_ssim, ssim, PSNR_CAP};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{p2g, ParticleState};
use crate::mpm::{simulate, MaterialSpec, SimConfig};
use crate::render::{render_color, Camera, Image, Observation};
use crate::{Error, Result, Vec3};

/// Metrics of one fitted scene. Chamfer values are raw; reports and tables
/// scale them by 10^3.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: String,
    pub method: String,
    #[serde(default)]
    pub cavity_size_rate: f64,
    #[serde(default)]
    pub cavity_location: String,
    pub cd_static: f64,
    pub acd_static: f64,
    pub cd_video: Option<f64>,
    pub acd_video: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub n_pred: usize,
    pub n_gt: usize,
    pub runtime_s: f64,
}

impl MetricReport {
    /// Chamfer metrics of a predicted t0 set against the true and mirrored
    /// ground truths.
    pub fn structure(scene: &str, method: &str, pred: &[Vec3], gt: &[Vec3], gt_mirror: &[Vec3]) -> Result<Self> {
        Ok(Self {
            scene: scene.into(),
            method: method.into(),
            cd_static: chamfer(pred, gt)?,
            acd_static: anti_chamfer(pred, gt_mirror)?,
            n_pred: pred.len(),
            n_gt: gt.len(),
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cd_static, self.acd_static, self.runtime_s]
            .into_iter()
            .chain(self.cd_video)
            .chain(self.acd_video)
            .chain(self.psnr)
            .chain(self.ssim)
            .all(f64::is_finite);
        if !finite || self.cd_static < 0.0 || self.ssim.is_some_and(|s| s > 1.0) {
            return Err(Error::InvalidArgument(format!("invalid metric report {self:?}")));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes the report as a one-row CSV with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        w.serialize(self)
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<Self>> {
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
}

/// Held-out image quality of a simulated prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionScore {
    pub psnr: f64,
    pub ssim: f64,
}

/// Simulates `initial` through every observed frame and scores the color
/// renders of frames `first_eval..` against the observations.
pub fn future_prediction_eval(
    initial: &ParticleState,
    material: &MaterialSpec,
    sim: &SimConfig,
    cameras: &[Camera],
    observations: &[Vec<Observation>],
    first_eval: usize,
) -> Result<PredictionScore> {
    let n = observations.len();
    if first_eval >= n {
        return Err(Error::InvalidArgument(format!(
            "evaluation starts at frame {first_eval} but only {n} frames exist"
        )));
    }
    let traj = simulate(initial, material, sim, n)?;
    let mut pred: Vec<Image> = Vec::new();
    let mut truth: Vec<&Image> = Vec::new();
    for f in first_eval..n {
        let field = p2g(&traj.states[f], &sim.grid);
        let views: Vec<Image> = cameras.par_iter().map(|c| render_color(&field, c).0).collect();
        for (img, o) in views.into_iter().zip(&observations[f]) {
            pred.push(img);
            truth.push(&o.color);
        }
    }
    let pred_refs: Vec<&Image> = pred.iter().collect();
    let (psnr, ssim) = psnr_ssim(&pred_refs, &truth)?;
    Ok(PredictionScore { psnr, ssim })
}
