//! Perspective-adaptive ground-truth density maps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detections::{center_of, BoundingBox, FrameDetections, FrameGeometry, FrameId};
use crate::division::DivisionMask;
use crate::error::{Error, Result};
use crate::idcnn::Tensor;
use crate::scalar::Scalar;

/// Ratio between kernel width and perspective size.
pub const DEFAULT_SIGMA_FACTOR: f64 = 0.15;
/// Smallest perspective size, in pixels.
pub const MIN_PERSPECTIVE_SIZE: f64 = 2.0;

/// Expected pedestrian size `M(y) = slope * y + intercept` at bottom-origin row
/// `y`, clamped to `[min_size, max_size]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveModel<T = f64> {
    pub slope: T,
    pub intercept: T,
    pub min_size: T,
    pub max_size: T,
}

impl<T: Scalar> PerspectiveModel<T> {
    pub fn new(slope: T, intercept: T, frame_height: u32) -> Self {
        Self {
            slope,
            intercept,
            min_size: T::of(MIN_PERSPECTIVE_SIZE),
            max_size: T::of(frame_height as f64).max(T::of(MIN_PERSPECTIVE_SIZE)),
        }
    }

    pub fn unclamped(&self, row: T) -> T {
        self.slope * row + self.intercept
    }

    pub fn size_at(&self, row: T) -> T {
        self.unclamped(row).max(self.min_size).min(self.max_size)
    }

    pub fn sigma_at(&self, row: T, factor: T) -> T {
        factor * self.size_at(row)
    }

    /// True if the raw line leaves `[min_size, max_size]` anywhere in `0..height`.
    pub fn clamps_within(&self, height: u32) -> bool {
        let top = T::of((height.max(1) - 1) as f64);
        [T::zero(), top]
            .iter()
            .any(|&r| self.unclamped(r) < self.min_size || self.unclamped(r) > self.max_size)
    }
}

/// Least-squares line through (center row, box height) over all boxes.
pub fn fit_perspective<T: Scalar>(boxes: &[BoundingBox], geometry: FrameGeometry) -> Result<PerspectiveModel<T>> {
    let xs: Vec<T> = boxes.iter().map(|b| T::of_i64(center_of(b).y)).collect();
    let ys: Vec<T> = boxes.iter().map(|b| T::of_i64(b.height())).collect();
    let mut rows: Vec<i64> = boxes.iter().map(|b| center_of(b).y).collect();
    rows.sort_unstable();
    rows.dedup();
    if rows.len() < 2 {
        return Err(Error::DegenerateRegression { distinct: rows.len() });
    }

    let n = T::of_usize(xs.len());
    let mean_x = xs.iter().copied().sum::<T>() / n;
    let mean_y = ys.iter().copied().sum::<T>() / n;
    let (mut sxx, mut sxy) = (T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let model = PerspectiveModel::new(slope, mean_y - slope * mean_x, geometry.height);
    if model.clamps_within(geometry.height) {
        log::warn!(
            "perspective line {}*y + {} leaves [{}, {}] inside the frame; sizes are clamped",
            model.slope,
            model.intercept,
            model.min_size,
            model.max_size
        );
    }
    Ok(model)
}

/// `0.15 * M(row)`.
pub fn sigma_at<T: Scalar>(model: &PerspectiveModel<T>, row: T) -> T {
    model.sigma_at(row, T::of(DEFAULT_SIGMA_FACTOR))
}

/// How splatted kernels are weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each head contributes mass 1, so the map integrates to the head count.
    #[default]
    PerKernel,
    /// Every kernel is additionally scaled by `1 / |annotated heads|`.
    WholeFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    pub sigma_factor: f64,
    pub normalization: Normalization,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            sigma_factor: DEFAULT_SIGMA_FACTOR,
            normalization: Normalization::PerKernel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSplat<T> {
    /// Bottom-origin head position.
    pub center: crate::detections::Point,
    pub sigma: T,
}

/// Nonnegative raster, top-origin and row-major, whose sum is a count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap<T> {
    pub geometry: FrameGeometry,
    pub values: Vec<T>,
    /// 1 at frame resolution, 4 after quarter downsampling.
    pub scale: u32,
    pub frame_id: Option<FrameId>,
}

impl<T: Scalar> DensityMap<T> {
    pub fn zeros(geometry: FrameGeometry, scale: u32) -> Self {
        Self {
            geometry,
            values: vec![T::zero(); geometry.pixels()],
            scale,
            frame_id: None,
        }
    }

    pub fn width(&self) -> usize {
        self.geometry.width as usize
    }

    pub fn height(&self) -> usize {
        self.geometry.height as usize
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.values[row * self.width() + col]
    }

    /// Sum over cells where `keep` is true.
    pub fn masked_sum(&self, keep: &[bool]) -> T {
        self.values
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .sum()
    }

    pub fn flipped(&self) -> Self {
        let w = self.width();
        let mut values = self.values.clone();
        for row in values.chunks_mut(w) {
            row.reverse();
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Gaussian splat of every distant head. Each kernel is truncated to radius
/// `ceil(3 sigma)`, restricted to distant pixels inside the frame, and
/// renormalized there, so a head contributes exactly its weight to the
/// distant region. Heads in the nearby region are left to the detector.
pub fn render_density<T: Scalar>(
    frame: &FrameDetections,
    model: &PerspectiveModel<T>,
    mask: &DivisionMask,
    options: &DensityOptions,
) -> Result<DensityMap<T>> {
    let g = frame.geometry;
    if mask.geometry() != g {
        return Err(Error::shape(
            format!("mask for frame {}", frame.frame_id),
            format!("{}x{}", g.width, g.height),
            format!("{}x{}", mask.geometry().width, mask.geometry().height),
        ));
    }
    let heads = frame.head_points.as_ref().ok_or_else(|| {
        Error::Argument(format!("frame {} has no head annotations", frame.frame_id))
    })?;

    let mut map = DensityMap::zeros(g, 1);
    map.frame_id = Some(frame.frame_id);
    let weight = match options.normalization {
        Normalization::PerKernel => T::one(),
        Normalization::WholeFrame if heads.is_empty() => T::zero(),
        Normalization::WholeFrame => T::one() / T::of_usize(heads.len()),
    };
    let factor = T::of(options.sigma_factor);
    let mut outside = 0usize;
    for &p in heads {
        if !g.contains(p) {
            outside += 1;
            continue;
        }
        if !mask.is_distant(p.x, p.y) {
            continue;
        }
        let splat = HeadSplat {
            center: p,
            sigma: model.sigma_at(T::of_i64(p.y), factor),
        };
        splat_into(&mut map, mask, &splat, weight);
    }
    if outside > 0 {
        log::warn!("frame {}: skipped {outside} head points outside the frame", frame.frame_id);
    }
    Ok(map)
}

fn splat_into<T: Scalar>(map: &mut DensityMap<T>, mask: &DivisionMask, splat: &HeadSplat<T>, weight: T) {
    let g = map.geometry;
    let (w, h) = (g.width as i64, g.height as i64);
    let radius = (T::of(3.0) * splat.sigma).ceil().to_i64().unwrap_or(0).max(0);
    let inv_two_var = T::one() / (T::of(2.0) * splat.sigma * splat.sigma);
    let (cx, cy) = (splat.center.x, splat.center.y);

    let mut taps: Vec<(usize, T)> = Vec::new();
    let mut total = T::zero();
    for y in (cy - radius).max(0)..=(cy + radius).min(h - 1) {
        for x in (cx - radius).max(0)..=(cx + radius).min(w - 1) {
            if !mask.is_distant(x, y) {
                continue;
            }
            let (dx, dy) = (T::of_i64(x - cx), T::of_i64(y - cy));
            let v = (-(dx * dx + dy * dy) * inv_two_var).exp();
            let idx = g.flip_row(y) as usize * w as usize + x as usize;
            taps.push((idx, v));
            total += v;
        }
    }
    // the center pixel is distant and has weight 1, so total >= 1
    let scale = weight / total;
    for (idx, v) in taps {
        map.values[idx] += v * scale;
    }
}

/// Sum-pools 4x4 blocks, zero-padding the right and bottom edges first.
pub fn downsample_quarter<T: Scalar>(map: &DensityMap<T>) -> Result<DensityMap<T>> {
    if map.scale != 1 {
        return Err(Error::Argument(format!(
            "downsample_quarter expects a full-resolution map, got scale {}",
            map.scale
        )));
    }
    let (w, h) = (map.width(), map.height());
    let (qw, qh) = (w.div_ceil(4), h.div_ceil(4));
    let mut values = vec![T::zero(); qw * qh];
    for r in 0..h {
        let out_row = &mut values[(r / 4) * qw..(r / 4 + 1) * qw];
        for (c, &v) in map.values[r * w..(r + 1) * w].iter().enumerate() {
            out_row[c / 4] += v;
        }
    }
    Ok(DensityMap {
        geometry: FrameGeometry::new(qw as u32, qh as u32)?,
        values,
        scale: 4,
        frame_id: map.frame_id,
    })
}

/// Mirrors a frame image `[C, H, W]`, its density map and its detections.
pub fn flip_horizontal<T: Scalar>(
    image: &Tensor<T>,
    map: &DensityMap<T>,
    detections: &FrameDetections,
) -> Result<(Tensor<T>, DensityMap<T>, FrameDetections)> {
    let g = detections.geometry;
    let expected = [image.shape()[0], g.height as usize, g.width as usize];
    if image.shape() != expected {
        return Err(Error::shape("flip image", format!("{expected:?}"), format!("{:?}", image.shape())));
    }
    let scaled_w = (g.width as usize).div_ceil(map.scale as usize);
    if map.width() != scaled_w {
        return Err(Error::shape("flip density map width", scaled_w, map.width()));
    }
    Ok((image.flip_width(), map.flipped(), detections.flipped()))
}

fn header_path(base: &Path) -> PathBuf {
    base.with_extension("hdr")
}

fn raw_path(base: &Path) -> PathBuf {
    base.with_extension("raw")
}

/// Writes `<base>.raw` (row-major little-endian f32) and `<base>.hdr`.
pub fn write_density<T: Scalar>(map: &DensityMap<T>, base: impl AsRef<Path>) -> Result<()> {
    let base = base.as_ref();
    let mut header = String::new();
    writeln!(header, "width {}", map.width()).ok();
    writeln!(header, "height {}", map.height()).ok();
    writeln!(header, "scale {}", map.scale).ok();
    match map.frame_id {
        Some(id) => writeln!(header, "frame_id {id}").ok(),
        None => writeln!(header, "frame_id -").ok(),
    };
    let mut raw = Vec::with_capacity(4 * map.values.len());
    for v in &map.values {
        raw.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    fs::write(header_path(base), header)?;
    fs::write(raw_path(base), raw)?;
    Ok(())
}

pub fn read_density<T: Scalar>(base: impl AsRef<Path>) -> Result<DensityMap<T>> {
    let base = base.as_ref();
    let hpath = header_path(base);
    let text = fs::read_to_string(&hpath)?;
    let (mut width, mut height, mut scale, mut frame_id) = (None, None, None, None);
    for (i, line) in text.lines().enumerate() {
        let bad = |m: &str| Error::Parse {
            path: hpath.clone(),
            line: i as u64 + 1,
            message: m.to_string(),
        };
        let Some((key, value)) = line.split_once(' ') else {
            continue;
        };
        match key {
            "width" => width = Some(value.parse::<u32>().map_err(|_| bad("bad width"))?),
            "height" => height = Some(value.parse::<u32>().map_err(|_| bad("bad height"))?),
            "scale" => scale = Some(value.parse::<u32>().map_err(|_| bad("bad scale"))?),
            "frame_id" if value != "-" => {
                frame_id = Some(value.parse::<FrameId>().map_err(|_| bad("bad frame_id"))?)
            }
            _ => {}
        }
    }
    let missing = |k: &str| Error::Parse {
        path: hpath.clone(),
        line: 0,
        message: format!("missing `{k}`"),
    };
    let geometry = FrameGeometry::new(width.ok_or_else(|| missing("width"))?, height.ok_or_else(|| missing("height"))?)?;
    let raw = fs::read(raw_path(base))?;
    if raw.len() != 4 * geometry.pixels() {
        return Err(Error::shape("density raster bytes", 4 * geometry.pixels(), raw.len()));
    }
    let values = raw
        .chunks_exact(4)
        .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    Ok(DensityMap {
        geometry,
        values,
        scale: scale.ok_or_else(|| missing("scale"))?,
        frame_id,
    })
}

/// Writes a black-red-yellow-white rendering scaled to the map's maximum.
pub fn write_false_color<T: Scalar>(map: &DensityMap<T>, path: impl AsRef<Path>) -> Result<()> {
    let max = map.values.iter().fold(0.0f64, |m, v| m.max(v.as_f64()));
    let mut rgb = Vec::with_capacity(3 * map.values.len());
    for v in &map.values {
        let t = if max > 0.0 { (v.as_f64() / max).clamp(0.0, 1.0) } else { 0.0 };
        let ch = |lo: f64| (((t - lo) * 3.0).clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb.extend_from_slice(&[ch(0.0), ch(1.0 / 3.0), ch(2.0 / 3.0)]);
    }
    crate::raster::write_rgb(path, map.geometry.width, map.geometry.height, &rgb)
}
