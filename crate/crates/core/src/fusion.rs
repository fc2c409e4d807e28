//! Fusing nearby and distant counts, and scoring them.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detections::{center_of, head_point_of, FrameDetections, FrameId};
use crate::division::DivisionMask;
use crate::error::{Error, Result};
use crate::scalar::{round_half_up, Scalar};

/// Default minimum detection confidence.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

/// Point of a detection that decides its region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountAnchor {
    /// Box center.
    #[default]
    Center,
    /// Middle of the head band.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearbyOptions {
    pub confidence_threshold: f64,
    pub anchor: CountAnchor,
    /// Head fraction, used by [`CountAnchor::Head`].
    pub alpha: f64,
}

impl Default for NearbyOptions {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            anchor: CountAnchor::Center,
            alpha: 0.3,
        }
    }
}

/// Confident detections whose box center lies in the nearby region.
pub fn count_nearby(frame: &FrameDetections, mask: &DivisionMask, confidence_threshold: f64) -> Result<u64> {
    count_nearby_with(
        frame,
        mask,
        &NearbyOptions {
            confidence_threshold,
            ..Default::default()
        },
    )
}

pub fn count_nearby_with(frame: &FrameDetections, mask: &DivisionMask, options: &NearbyOptions) -> Result<u64> {
    if mask.geometry() != frame.geometry {
        return Err(Error::shape(
            format!("mask for frame {}", frame.frame_id),
            format!("{}x{}", frame.geometry.width, frame.geometry.height),
            format!("{}x{}", mask.geometry().width, mask.geometry().height),
        ));
    }
    let h = frame.geometry.height as i64 - 1;
    let mut n = 0;
    for b in frame.boxes.iter().filter(|b| b.accepted(options.confidence_threshold)) {
        let p = match options.anchor {
            CountAnchor::Center => center_of(b),
            CountAnchor::Head => head_point_of(b, options.alpha)?,
        };
        if !mask.is_distant(p.x, p.y.clamp(0, h)) {
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameCount<T = f64> {
    pub frame_id: FrameId,
    pub nearby: u64,
    pub distant: T,
    pub fused: T,
    pub fused_rounded: i64,
    pub gt: Option<u64>,
}

/// `nearby + distant`, and that sum rounded half-up.
pub fn fuse<T: Scalar>(nearby: u64, distant: T) -> Result<(T, i64)> {
    if !(distant >= T::zero()) {
        return Err(Error::Argument(format!("distant count must be nonnegative, got {distant}")));
    }
    let fused = T::of(nearby as f64) + distant;
    Ok((fused, round_half_up(fused)))
}

impl<T: Scalar> FrameCount<T> {
    pub fn new(frame_id: FrameId, nearby: u64, distant: T, gt: Option<u64>) -> Result<Self> {
        let (fused, fused_rounded) = fuse(nearby, distant)?;
        Ok(Self {
            frame_id,
            nearby,
            distant,
            fused,
            fused_rounded,
            gt,
        })
    }
}

/// Which estimate is compared against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaeMode {
    /// Integer count, `fused_rounded`.
    #[default]
    Rounded,
    /// Raw `fused`.
    Raw,
}

/// Mean of `|estimate - gt|` over frames with ground truth.
pub fn mae<T: Scalar>(frames: &[FrameCount<T>], mode: MaeMode) -> Result<T> {
    let errors: Vec<T> = frames
        .iter()
        .filter_map(|f| {
            let gt = T::of(f.gt? as f64);
            let z = match mode {
                MaeMode::Rounded => T::of(f.fused_rounded as f64),
                MaeMode::Raw => f.fused,
            };
            Some((z - gt).abs())
        })
        .collect();
    if errors.is_empty() {
        return Err(Error::Argument("MAE needs at least one frame with ground truth".into()));
    }
    let n = T::of_usize(errors.len());
    Ok(errors.into_iter().sum::<T>() / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReport<T = f64> {
    pub scene_id: String,
    /// Sorted by frame id.
    pub frames: Vec<FrameCount<T>>,
    /// MAE of the rounded fused counts.
    pub mae: T,
    /// MAE of the raw fused counts.
    pub mae_raw: T,
    /// Frames with ground truth.
    pub n: usize,
}

impl<T: Scalar> CountReport<T> {
    pub fn new(scene_id: impl Into<String>, mut frames: Vec<FrameCount<T>>) -> Result<Self> {
        frames.sort_by_key(|f| f.frame_id);
        let skipped = frames.iter().filter(|f| f.gt.is_none()).count();
        if skipped > 0 {
            log::warn!("{skipped} frames without ground truth are excluded from the MAE");
        }
        Ok(Self {
            scene_id: scene_id.into(),
            mae: mae(&frames, MaeMode::Rounded)?,
            mae_raw: mae(&frames, MaeMode::Raw)?,
            n: frames.len() - skipped,
            frames,
        })
    }
}

/// Per-frame count curves: `frame_id,gt,nearby,distant,fused`, sorted by frame id.
pub fn emit_curves<T: Scalar, W: Write>(report: &CountReport<T>, mut out: W) -> Result<()> {
    if report.frames.is_empty() {
        return Err(Error::Argument("empty report".into()));
    }
    let mut frames: Vec<&FrameCount<T>> = report.frames.iter().collect();
    frames.sort_by_key(|f| f.frame_id);
    writeln!(out, "frame_id,gt,nearby,distant,fused")?;
    for f in frames {
        let gt = f.gt.map(|g| g.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", f.frame_id, gt, f.nearby, f.distant, f.fused)?;
    }
    Ok(())
}

/// Scenes as rows, with an average row, in the layout of a per-scene MAE table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTable {
    pub rows: Vec<SceneRow>,
    pub average_mae: f64,
    pub average_mae_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene_id: String,
    pub mae: f64,
    pub mae_raw: f64,
    pub n: usize,
}

impl SceneTable {
    pub fn new<T: Scalar>(reports: &[CountReport<T>]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Argument("no scene reports".into()));
        }
        let rows: Vec<SceneRow> = reports
            .iter()
            .map(|r| SceneRow {
                scene_id: r.scene_id.clone(),
                mae: r.mae.as_f64(),
                mae_raw: r.mae_raw.as_f64(),
                n: r.n,
            })
            .collect();
        let k = rows.len() as f64;
        Ok(Self {
            average_mae: rows.iter().map(|r| r.mae).sum::<f64>() / k,
            average_mae_raw: rows.iter().map(|r| r.mae_raw).sum::<f64>() / k,
            rows,
        })
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{:<24} {:>8} {:>8} {:>6}", "scene", "mae", "mae_raw", "n")?;
        for r in &self.rows {
            writeln!(out, "{:<24} {:>8.3} {:>8.3} {:>6}", r.scene_id, r.mae, r.mae_raw, r.n)?;
        }
        writeln!(out, "{:<24} {:>8.3} {:>8.3}", "average", self.average_mae, self.average_mae_raw)?;
        Ok(())
    }
}

/// Human-readable summary of one scene.
pub fn write_summary<T: Scalar, W: Write>(report: &CountReport<T>, mut out: W) -> Result<()> {
    writeln!(out, "scene {}", report.scene_id)?;
    writeln!(out, "frames {} (with ground truth {})", report.frames.len(), report.n)?;
    writeln!(out, "mae {:.4}", report.mae.as_f64())?;
    writeln!(out, "mae_raw {:.4}", report.mae_raw.as_f64())?;
    Ok(())
}

/// Pairs detections with head annotations, nearest box center first, accepting
/// a pair only when the distance is under half the box height. Returns
/// `(box index, head index)` pairs.
pub fn match_heads(frame: &FrameDetections) -> Vec<(usize, usize)> {
    let Some(heads) = frame.head_points.as_ref() else {
        return Vec::new();
    };
    let mut candidates: Vec<(i64, usize, usize)> = Vec::new();
    for (bi, b) in frame.boxes.iter().enumerate() {
        let c = center_of(b);
        let limit = b.height() as f64 * 0.5;
        for (hi, p) in heads.iter().enumerate() {
            let d2 = (c.x - p.x).pow(2) + (c.y - p.y).pow(2);
            if (d2 as f64) < limit * limit {
                candidates.push((d2, bi, hi));
            }
        }
    }
    candidates.sort_unstable();
    let mut used_box = vec![false; frame.boxes.len()];
    let mut used_head = vec![false; heads.len()];
    let mut pairs = Vec::new();
    for (_, bi, hi) in candidates {
        if !used_box[bi] && !used_head[hi] {
            used_box[bi] = true;
            used_head[hi] = true;
            pairs.push((bi, hi));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Head annotations per region: `(nearby, distant)`.
pub fn split_annotations(frame: &FrameDetections, mask: &DivisionMask) -> (usize, usize) {
    let mut counts = BTreeMap::from([(false, 0usize), (true, 0usize)]);
    for p in frame.head_points.iter().flatten() {
        if frame.geometry.contains(*p) {
            *counts.entry(mask.is_distant(p.x, p.y)).or_default() += 1;
        }
    }
    (counts[&false], counts[&true])
}
