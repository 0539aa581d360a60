use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Layout, SceneSpec};
use crate::field::{read_point_cloud, write_point_cloud};
use crate::mpm::{MaterialSpec, SimConfig};
use crate::render::{read_png, read_sidecar, write_png, write_sidecar, Camera, Observation};
use crate::{Error, Result};

pub const MANIFEST: &str = "scene.manifest";

/// Everything in `scene.manifest`: the spec it was generated from plus the
/// quantities derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub format: String,
    pub spec: SceneSpec,
    pub material: MaterialSpec,
    pub sim: SimConfig,
    pub layout: Layout,
    pub n_particles: usize,
    pub cameras: Vec<Camera>,
}

fn frame_path(dir: &Path, kind: &str, cam: usize, frame: usize, ext: &str) -> PathBuf {
    dir.join(kind).join(format!("c{cam}_t{frame}.{ext}"))
}

fn gt_path(dir: &Path, mirror: bool, frame: usize) -> PathBuf {
    let tag = if mirror { "particles_mirror" } else { "particles" };
    dir.join("gt").join(format!("{tag}_t{frame}.txt"))
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
    let manifest = SceneManifest {
        format: "sfc-scene v1".into(),
        spec: data.spec.clone(),
        material: data.material.clone(),
        sim: data.sim.clone(),
        layout: data.layout.clone(),
        n_particles: data.gt.first().map_or(0, |g| g.len()),
        cameras: data.cameras.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    data.observations.par_iter().flatten().try_for_each(|o| -> Result<()> {
        write_png(&frame_path(dir, "frames", o.camera, o.frame, "png"), &o.color)?;
        write_sidecar(&frame_path(dir, "frames", o.camera, o.frame, "f32"), &o.color)?;
        write_png(&frame_path(dir, "masks", o.camera, o.frame, "png"), &o.mask)?;
        write_sidecar(&frame_path(dir, "masks", o.camera, o.frame, "f32"), &o.mask)
    })?;
    let dx = data.sim.grid.spacing;
    for (mirror, sets) in [(false, &data.gt), (true, &data.gt_mirror)] {
        for (f, pos) in sets.iter().enumerate() {
            write_point_cloud(&gt_path(dir, mirror, f), pos, &vec![1.0; pos.len()], dx)?;
        }
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<SceneManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path,
        message: e.to_string(),
    })
}

/// Reads one image, preferring the lossless sidecar over the PNG.
fn read_image(dir: &Path, kind: &str, cam: &Camera, c: usize, f: usize, channels: usize) -> Result<crate::render::Image> {
    let side = frame_path(dir, kind, c, f, "f32");
    if side.exists() {
        read_sidecar(&side, cam.width, cam.height, channels)
    } else {
        read_png(&frame_path(dir, kind, c, f, "png"))
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    let n_frames = m.spec.n_frames;
    let observations = (0..n_frames)
        .map(|f| {
            m.cameras
                .iter()
                .enumerate()
                .map(|(c, cam)| {
                    let o = Observation {
                        frame: f,
                        camera: c,
                        color: read_image(dir, "frames", cam, c, f, 3)?,
                        mask: read_image(dir, "masks", cam, c, f, 1)?,
                    };
                    o.validate(cam)?;
                    Ok(o)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let read_gt = |mirror: bool| -> Result<Vec<_>> {
        (0..n_frames)
            .map(|f| read_point_cloud(&gt_path(dir, mirror, f)).map(|pc| pc.position))
            .collect()
    };
    Ok(Dataset {
        spec: m.spec,
        material: m.material,
        sim: m.sim,
        layout: m.layout,
        cameras: m.cameras,
        observations,
        gt: read_gt(false)?,
        gt_mirror: read_gt(true)?,
    })
}
