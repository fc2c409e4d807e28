//! One function per subcommand.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use dynregion::density::{
    fit_perspective, flip_horizontal, render_density, write_density, write_false_color, DensityOptions,
    PerspectiveModel,
};
use dynregion::detections::{write_detections, write_heads, FrameDetections, FrameGeometry, FrameId};
use dynregion::division::{
    boundary_diff, expectation_height, generate_mask, height_histogram, select_straddlers, write_mask_pgm,
    write_mask_sidecar, DivisionMask, DivisionMode, ExpectationLine,
};
use dynregion::fusion::{
    count_nearby_with, emit_curves, write_summary, CountReport, FrameCount, NearbyOptions, SceneTable,
};
use dynregion::idcnn::{
    predict_count, prepare_sample, read_checkpoint, train, write_checkpoint, Checkpoint, InputNormalizer, Network,
    Sample, Tensor, TrainOptions, TrainState,
};
use dynregion::raster::write_gray;
use dynregion::synth::generate_scene;
use dynregion::Scalar;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Input, PipelineConfig, Precision};
use crate::error::{CliError, Context};
use crate::io::{frame_stem, prepare_output, write_atomic, write_text, StagedDir};
use crate::scene::{
    checkpoint_path, density_dir, load_scene, masks_dir, read_frame, read_ground_truth, read_mask, Scene,
};

/// Creates the output directory and records the effective config for `command`.
pub fn begin(cfg: &PipelineConfig, command: &str) -> Result<(), CliError> {
    prepare_output(&cfg.paths.output)?;
    write_text(&cfg.paths.output.join(format!("{command}.config.toml")), &cfg.to_toml())
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub width: u32,
    pub height: u32,
    pub slope: f64,
    pub intercept: f64,
    pub frames: usize,
    pub pedestrians: Vec<usize>,
}

/// Writes a synthetic scene to the configured frame, detection and head paths.
pub fn synth(cfg: &PipelineConfig) -> Result<SynthTruth, CliError> {
    let s = &cfg.synth;
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(g) = cfg.geometry {
        if (g.width, g.height) != (s.width, s.height) {
            return Err(CliError::Config("[geometry] disagrees with [synth] width/height".into()));
        }
    }
    begin(cfg, "synth")?;
    let scene = generate_scene(s).context(|| "generating synthetic scene".into())?;

    let staged = StagedDir::new(&cfg.paths.frames)?;
    scene.frames.par_iter().try_for_each(|f| {
        let path = staged.path().join(format!("{}.pgm", frame_stem(f.detections.frame_id)));
        write_gray(&path, s.width, s.height, &f.image).context(|| format!("writing {}", path.display()))
    })?;
    staged.commit()?;

    let frames: Vec<FrameDetections> = scene.frames.iter().map(|f| f.detections.clone()).collect();
    write_atomic(&cfg.paths.detections, |w| {
        write_detections(w, &frames).context(|| "writing detections".into())
    })?;
    write_atomic(&cfg.paths.heads, |w| write_heads(w, &frames).context(|| "writing heads".into()))?;

    let truth = SynthTruth {
        width: s.width,
        height: s.height,
        slope: s.slope,
        intercept: s.intercept,
        frames: frames.len(),
        pedestrians: frames.iter().map(|f| f.boxes.len()).collect(),
    };
    json(&cfg.paths.output.join("synth_truth.json"), &truth)?;
    log::info!("wrote {} synthetic frames", truth.frames);
    Ok(truth)
}

/// The expectation line over the training frames.
pub fn expectation_line(cfg: &PipelineConfig, scene: &Scene) -> Result<ExpectationLine<f64>, CliError> {
    let hist = height_histogram(scene.train(), cfg.division.height_anchor)
        .context(|| "building the detection height distribution".into())?;
    expectation_height(&hist).context(|| "computing the expectation height".into())
}

struct FrameDivision {
    frame_id: FrameId,
    straddlers: Vec<dynregion::detections::BoundingBox>,
    mask: DivisionMask,
    diff: Vec<(usize, i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivisionSummary {
    pub expectation_height: f64,
    pub expectation_row: i64,
    pub frames: usize,
    pub straddlers: usize,
    pub differing_columns: usize,
}

/// Writes one mask and sidecar per frame, a division report and the
/// strict-versus-envelope difference table.
pub fn divide(cfg: &PipelineConfig) -> Result<DivisionSummary, CliError> {
    let scene = load_scene(cfg, false)?;
    begin(cfg, "divide")?;
    let line = expectation_line(cfg, &scene)?;
    log::info!("expectation height {:.3} (row {})", line.h, line.row);
    let alpha = cfg.division.alpha;
    let divisions: Vec<FrameDivision> = scene
        .frames
        .par_iter()
        .map(|f| {
            let straddlers =
                select_straddlers(f, &line, alpha).context(|| format!("frame {}", f.frame_id))?;
            let strict = generate_mask(DivisionMode::Strict, scene.geometry, &straddlers, &line);
            let envelope = generate_mask(DivisionMode::Envelope, scene.geometry, &straddlers, &line);
            let diff = boundary_diff(&strict, &envelope);
            let mask = match cfg.division.mode {
                DivisionMode::Strict => strict,
                DivisionMode::Envelope => envelope,
            };
            Ok(FrameDivision {
                frame_id: f.frame_id,
                straddlers,
                mask,
                diff,
            })
        })
        .collect::<Result<_, CliError>>()?;

    let staged = StagedDir::new(&masks_dir(cfg))?;
    divisions.par_iter().try_for_each(|d| {
        let stem = frame_stem(d.frame_id);
        let pgm = staged.path().join(format!("{stem}.pgm"));
        write_mask_pgm(&d.mask, &pgm).context(|| format!("writing {}", pgm.display()))?;
        let sidecar = staged.path().join(format!("{stem}.txt"));
        let mut w = std::io::BufWriter::new(File::create(&sidecar).context(|| format!("writing {}", sidecar.display()))?);
        write_mask_sidecar(&mut w, &d.mask, &line, alpha, cfg.division.mode, &d.straddlers)
            .context(|| format!("writing {}", sidecar.display()))?;
        w.flush().context(|| format!("writing {}", sidecar.display()))
    })?;
    staged.commit()?;

    let mut report = String::new();
    writeln!(report, "expectation_height {}", line.h).ok();
    writeln!(report, "expectation_row {}", line.row).ok();
    writeln!(report, "mode {}", cfg.division.mode).ok();
    writeln!(report, "alpha {alpha}").ok();
    writeln!(report, "training_frames {}", scene.train_count).ok();
    writeln!(report, "# frame_id straddlers distant_pixels").ok();
    for d in &divisions {
        writeln!(report, "{} {} {}", d.frame_id, d.straddlers.len(), d.mask.distant_pixels()).ok();
    }
    write_text(&cfg.paths.output.join("division.txt"), &report)?;

    let mut diff = String::from("frame_id,column,strict,envelope\n");
    for d in &divisions {
        for (c, s, e) in &d.diff {
            writeln!(diff, "{},{c},{s},{e}", d.frame_id).ok();
        }
    }
    write_text(&cfg.paths.output.join("division_diff.csv"), &diff)?;

    Ok(DivisionSummary {
        expectation_height: line.h,
        expectation_row: line.row,
        frames: divisions.len(),
        straddlers: divisions.iter().map(|d| d.straddlers.len()).sum(),
        differing_columns: divisions.iter().map(|d| d.diff.len()).sum(),
    })
}

/// Fits the perspective line over every detection in the scene.
pub fn perspective<T: Scalar>(scene: &Scene) -> Result<PerspectiveModel<T>, CliError> {
    let boxes: Vec<_> = scene.frames.iter().flat_map(|f| f.boxes.iter().copied()).collect();
    fit_perspective(&boxes, scene.geometry).context(|| "fitting the perspective line".into())
}

/// Renders a ground-truth density map for every annotated frame.
pub fn densify(cfg: &PipelineConfig) -> Result<PerspectiveModel<f64>, CliError> {
    let scene = load_scene(cfg, true)?;
    begin(cfg, "densify")?;
    let model = perspective::<f64>(&scene)?;
    log::info!("perspective size = {:.5} * row + {:.4}", model.slope, model.intercept);
    json(&cfg.paths.output.join("perspective.json"), &model)?;

    let opts = DensityOptions {
        sigma_factor: cfg.density.sigma_factor,
        normalization: cfg.density.normalization,
    };
    let annotated: Vec<&FrameDetections> = scene.frames.iter().filter(|f| f.head_points.is_some()).collect();
    let staged = StagedDir::new(&density_dir(cfg))?;
    let rows: Vec<String> = annotated
        .par_iter()
        .map(|f| {
            let mask = read_mask(cfg, f.frame_id, scene.geometry)?;
            let map = render_density(f, &model, &mask, &opts).context(|| format!("frame {}", f.frame_id))?;
            let base = staged.path().join(frame_stem(f.frame_id));
            write_density(&map, &base).context(|| format!("writing {}", base.display()))?;
            if cfg.density.previews {
                let ppm = base.with_extension("ppm");
                write_false_color(&map, &ppm).context(|| format!("writing {}", ppm.display()))?;
            }
            let distant = f
                .head_points
                .iter()
                .flatten()
                .filter(|p| mask.is_distant(p.x, p.y))
                .count();
            Ok(format!("{},{distant},{}", f.frame_id, map.sum()))
        })
        .collect::<Result<_, CliError>>()?;
    let mut summary = String::from("frame_id,distant_heads,mass\n");
    for r in rows {
        summary.push_str(&r);
        summary.push('\n');
    }
    std::fs::write(staged.path().join("summary.csv"), summary).context(|| "writing density summary".into())?;
    staged.commit()?;
    if annotated.is_empty() {
        log::warn!("no annotated frames; no density maps written");
    }
    Ok(model)
}

/// Masked, cropped and normalized training samples, mirrored when configured.
fn training_samples<T: Scalar>(
    cfg: &PipelineConfig,
    scene: &Scene,
) -> Result<(Vec<Sample<T>>, InputNormalizer<T>), CliError> {
    let frames: Vec<&FrameDetections> = scene.train().iter().filter(|f| f.head_points.is_some()).collect();
    let skipped = scene.train_count - frames.len();
    if skipped > 0 {
        log::warn!("{skipped} training frames have no head annotations and are skipped");
    }
    let loaded: Vec<(Tensor<T>, DivisionMask, _, &FrameDetections)> = frames
        .par_iter()
        .map(|f| {
            Ok((
                read_frame::<T>(cfg, f.frame_id, scene.geometry)?,
                read_mask(cfg, f.frame_id, scene.geometry)?,
                read_ground_truth::<T>(cfg, f.frame_id)?,
                *f,
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let normalizer =
        InputNormalizer::fit(loaded.iter().map(|l| &l.0)).context(|| "computing input statistics".into())?;

    let mut samples = Vec::new();
    for (mut image, mask, gt, f) in loaded {
        normalizer.apply(&mut image).context(|| format!("frame {}", f.frame_id))?;
        let ctx = || format!("frame {}", f.frame_id);
        samples.extend(prepare_sample(&image, &mask, &gt).context(ctx)?);
        if cfg.training.flip {
            let (image, gt, _) = flip_horizontal(&image, &gt, f).context(ctx)?;
            samples.extend(prepare_sample(&image, &mask.flipped(), &gt).context(ctx)?);
        }
    }
    if samples.is_empty() {
        return Err(CliError::Input("no training frame has a distant region".into()));
    }
    Ok((samples, normalizer))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub samples: usize,
    pub steps: u64,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
}

fn train_typed<T: Scalar>(cfg: &PipelineConfig) -> Result<TrainSummary, CliError> {
    let scene = load_scene(cfg, true)?;
    let (samples, normalizer) = training_samples::<T>(cfg, &scene)?;
    log::info!("training on {} samples", samples.len());
    let state = TrainState::new(cfg.network, T::of(cfg.training.learning_rate), cfg.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let options = TrainOptions {
        steps: cfg.training.steps,
        batch_size: cfg.training.batch_size,
    };
    let every = (options.steps / 20).max(1);
    let mut losses: Vec<f64> = Vec::new();
    let state = train(state, &samples, options, |step, loss| {
        let loss = loss.as_f64();
        log::debug!("step {step} loss {loss:e}");
        if step % every == 0 {
            log::info!("step {step} loss {loss:.6e}");
        }
        losses.push(loss);
        true
    })
    .context(|| "training".into())?;

    let mut log_text = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(log_text, "{i},{l:e}").ok();
    }
    write_text(&cfg.paths.output.join("train_log.csv"), &log_text)?;
    let ckpt = Checkpoint {
        network: state.network,
        normalizer,
    };
    write_atomic(&checkpoint_path(cfg), |w| {
        write_checkpoint(w, &ckpt).context(|| "writing checkpoint".into())
    })?;
    Ok(TrainSummary {
        samples: samples.len(),
        steps: losses.len() as u64,
        first_loss: losses.first().copied(),
        last_loss: losses.last().copied(),
    })
}

pub fn train_network(cfg: &PipelineConfig) -> Result<TrainSummary, CliError> {
    begin(cfg, "train")?;
    match cfg.training.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn load_checkpoint<T: Scalar>(cfg: &PipelineConfig) -> Result<Checkpoint<T>, CliError> {
    let path = checkpoint_path(cfg);
    let file = File::open(&path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}; run `train` first", path.display())))?;
    let ckpt: Checkpoint<T> =
        read_checkpoint(BufReader::new(file)).context(|| format!("reading {}", path.display()))?;
    if ckpt.network.config != cfg.network {
        log::warn!("checkpoint network differs from [network]; using the checkpoint");
    }
    Ok(ckpt)
}

fn distant_estimates<T: Scalar>(
    cfg: &PipelineConfig,
    geometry: FrameGeometry,
    frames: &[&FrameDetections],
) -> Result<Vec<f64>, CliError> {
    let ckpt = load_checkpoint::<T>(cfg)?;
    let net: &Network<T> = &ckpt.network;
    frames
        .par_iter()
        .map(|f| {
            let mut image = read_frame::<T>(cfg, f.frame_id, geometry)?;
            ckpt.normalizer.apply(&mut image).context(|| format!("frame {}", f.frame_id))?;
            let mask = read_mask(cfg, f.frame_id, geometry)?;
            let z = predict_count(net, &image, &mask).context(|| format!("frame {}", f.frame_id))?;
            Ok(z.as_f64())
        })
        .collect()
}

fn estimates(cfg: &PipelineConfig, geometry: FrameGeometry, frames: &[&FrameDetections]) -> Result<Vec<f64>, CliError> {
    cfg.require(&[Input::Frames])?;
    match cfg.training.precision {
        Precision::F32 => distant_estimates::<f32>(cfg, geometry, frames),
        Precision::F64 => distant_estimates::<f64>(cfg, geometry, frames),
    }
}

/// Distant-region estimates for every frame with an image.
pub fn predict(cfg: &PipelineConfig) -> Result<Vec<(FrameId, f64)>, CliError> {
    let scene = load_scene(cfg, false)?;
    begin(cfg, "predict")?;
    let frames: Vec<&FrameDetections> = scene.frames.iter().collect();
    let z = estimates(cfg, scene.geometry, &frames)?;
    let out: Vec<(FrameId, f64)> = frames.iter().map(|f| f.frame_id).zip(z).collect();
    let mut text = String::from("frame_id,distant\n");
    for (id, z) in &out {
        writeln!(text, "{id},{z}").ok();
    }
    write_text(&cfg.paths.output.join("predictions.csv"), &text)?;
    Ok(out)
}

/// Fused counts and MAE on the held-out frames.
pub fn evaluate(cfg: &PipelineConfig) -> Result<CountReport, CliError> {
    let scene = load_scene(cfg, false)?;
    begin(cfg, "evaluate")?;
    let test: Vec<&FrameDetections> = scene.test().iter().collect();
    if test.is_empty() {
        return Err(CliError::Input("the test split is empty; lower training.train_fraction".into()));
    }
    let z = estimates(cfg, scene.geometry, &test)?;
    let opts = NearbyOptions {
        confidence_threshold: cfg.division.confidence_threshold,
        anchor: cfg.evaluation.nearby_anchor,
        alpha: cfg.division.alpha,
    };
    let counts = test
        .par_iter()
        .zip(z)
        .map(|(f, z)| {
            let mask = read_mask(cfg, f.frame_id, scene.geometry)?;
            let nearby = count_nearby_with(f, &mask, &opts).context(|| format!("frame {}", f.frame_id))?;
            // a tiny negative value can only come from an unrectified head
            FrameCount::new(f.frame_id, nearby, z.max(0.0), f.gt_count.map(|g| g as u64))
                .context(|| format!("frame {}", f.frame_id))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = CountReport::new(cfg.scene_id.clone(), counts).context(|| "building the count report".into())?;

    json(&cfg.paths.output.join("report.json"), &report)?;
    write_atomic(&cfg.paths.output.join("curves.csv"), |w| {
        emit_curves(&report, w).context(|| "writing count curves".into())
    })?;
    write_atomic(&cfg.paths.output.join("summary.txt"), |w| {
        write_summary(&report, w).context(|| "writing summary".into())
    })?;
    log::info!("scene {}: MAE {:.4} (raw {:.4}) over {} frames", report.scene_id, report.mae, report.mae_raw, report.n);
    Ok(report)
}

/// Per-scene MAE table from one or more evaluation reports.
pub fn report(cfg: &PipelineConfig, reports: &[PathBuf]) -> Result<SceneTable, CliError> {
    let default = [cfg.paths.output.join("report.json")];
    let paths = if reports.is_empty() { &default[..] } else { reports };
    let scenes: Vec<CountReport> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    begin(cfg, "report")?;
    let table = SceneTable::new(&scenes).context(|| "building the scene table".into())?;
    json(&cfg.paths.output.join("table.json"), &table)?;
    write_atomic(&cfg.paths.output.join("table.txt"), |w| {
        table.write_text(w).context(|| "writing the scene table".into())
    })?;
    Ok(table)
}
