//! Loading a scene's frames, annotations and earlier stage outputs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use dynregion::density::{read_density, DensityMap};
use dynregion::detections::{attach_heads, load_detections, load_heads, FrameDetections, FrameGeometry, FrameId};
use dynregion::division::{read_mask_pgm, DivisionMask};
use dynregion::idcnn::{frame_tensor, Tensor};
use dynregion::raster::read_rgb;
use dynregion::Scalar;

use crate::config::{Input, PipelineConfig};
use crate::error::{CliError, Context};
use crate::io::{frame_image, frame_stem};

pub struct Scene {
    pub geometry: FrameGeometry,
    /// Every known frame, by ascending id, with low-confidence boxes removed.
    pub frames: Vec<FrameDetections>,
    /// The first `train_count` frames form the training split.
    pub train_count: usize,
}

impl Scene {
    pub fn train(&self) -> &[FrameDetections] {
        &self.frames[..self.train_count]
    }

    pub fn test(&self) -> &[FrameDetections] {
        &self.frames[self.train_count..]
    }
}

fn image_ids(dir: &Path) -> Vec<FrameId> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    entries
        .filter_map(|e| {
            let path = e.ok()?.path();
            let ext = path.extension()?.to_str()?;
            if !matches!(ext, "ppm" | "pgm" | "pnm") {
                return None;
            }
            path.file_stem()?.to_str()?.parse().ok()
        })
        .collect()
}

/// Frame size from the config, or from the first frame image.
pub fn geometry(cfg: &PipelineConfig) -> Result<FrameGeometry, CliError> {
    if let Some(g) = cfg.geometry {
        return FrameGeometry::new(g.width, g.height).map_err(|e| CliError::Config(e.to_string()));
    }
    let first = image_ids(&cfg.paths.frames).into_iter().min().ok_or_else(|| {
        CliError::Config(format!(
            "no [geometry] given and no frame images in {}",
            cfg.paths.frames.display()
        ))
    })?;
    let path = frame_image(&cfg.paths.frames, first)?;
    let (w, h, _) = read_rgb(&path).context(|| format!("reading {}", path.display()))?;
    FrameGeometry::new(w, h).context(|| format!("reading {}", path.display()))
}

/// Loads detections and, when present or required, head annotations.
pub fn load_scene(cfg: &PipelineConfig, require_heads: bool) -> Result<Scene, CliError> {
    cfg.require(&[Input::Detections])?;
    if require_heads {
        cfg.require(&[Input::Heads])?;
    }
    let geometry = geometry(cfg)?;
    let det = load_detections(&cfg.paths.detections, geometry)
        .context(|| format!("loading {}", cfg.paths.detections.display()))?;
    if det.dropped() > 0 {
        log::warn!(
            "dropped {} boxes outside the frame and {} degenerate boxes",
            det.dropped_outside,
            det.dropped_degenerate
        );
    }
    let mut frames = det.frames;
    if cfg.paths.heads.exists() {
        let (heads, _) =
            load_heads(&cfg.paths.heads, geometry).context(|| format!("loading {}", cfg.paths.heads.display()))?;
        frames = attach_heads(frames, heads, geometry);
    }
    let known: BTreeSet<FrameId> = frames.iter().map(|f| f.frame_id).collect();
    for id in image_ids(&cfg.paths.frames) {
        if !known.contains(&id) {
            frames.push(FrameDetections::new(id, geometry));
        }
    }
    frames.sort_by_key(|f| f.frame_id);
    for f in &mut frames {
        f.retain_confident(cfg.division.confidence_threshold);
    }
    if frames.is_empty() {
        return Err(CliError::Input("the scene has no frames".into()));
    }
    let n = frames.len();
    let train_count = ((n as f64 * cfg.training.train_fraction).floor() as usize).clamp(1, n);
    log::info!("{n} frames, {train_count} for training");
    Ok(Scene {
        geometry,
        frames,
        train_count,
    })
}

pub fn masks_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.output.join("masks")
}

pub fn density_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.output.join("density")
}

pub fn checkpoint_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.output.join("checkpoint.bin")
}

pub fn read_mask(cfg: &PipelineConfig, id: FrameId, geometry: FrameGeometry) -> Result<DivisionMask, CliError> {
    let path = masks_dir(cfg).join(format!("{}.pgm", frame_stem(id)));
    if !path.exists() {
        return Err(CliError::Input(format!("missing mask {}; run `divide` first", path.display())));
    }
    let mask = read_mask_pgm(&path).context(|| format!("reading {}", path.display()))?;
    if mask.geometry() != geometry {
        return Err(CliError::Input(format!("mask {} does not match the frame size", path.display())));
    }
    Ok(mask)
}

pub fn read_ground_truth<T: Scalar>(cfg: &PipelineConfig, id: FrameId) -> Result<DensityMap<T>, CliError> {
    let base = density_dir(cfg).join(frame_stem(id));
    if !base.with_extension("hdr").exists() {
        return Err(CliError::Input(format!(
            "missing density map {}; run `densify` first",
            base.display()
        )));
    }
    read_density(&base).context(|| format!("reading {}", base.display()))
}

/// `[3, H, W]` tensor of a frame image scaled to `[0, 1]`.
pub fn read_frame<T: Scalar>(cfg: &PipelineConfig, id: FrameId, geometry: FrameGeometry) -> Result<Tensor<T>, CliError> {
    let path = frame_image(&cfg.paths.frames, id)?;
    let (w, h, rgb) = read_rgb(&path).context(|| format!("reading {}", path.display()))?;
    if (w, h) != (geometry.width, geometry.height) {
        return Err(CliError::Input(format!(
            "{} is {w}x{h}, expected {}x{}",
            path.display(),
            geometry.width,
            geometry.height
        )));
    }
    frame_tensor(&rgb, w as usize, h as usize).context(|| format!("reading {}", path.display()))
}
