//! Pedestrian detections and head annotations.
//!
//! Everything past the loader works in bottom-origin pixel rows: row 0 is the
//! bottom edge of the frame and rows increase upward. Files carry the usual
//! top-origin raster coordinates and are converted on the way in and out.
//!
//! Detection file, one record per line:
//!
//! ```text
//! record     := frame_id "," x_min "," y_min "," x_max "," y_max [ "," confidence ]
//! frame_id   := unsigned integer
//! x_*, y_*   := real, top-origin pixel coordinates (inclusive)
//! confidence := real in [0, 1]
//! ```
//!
//! Head annotation file: `frame_id "," x "," y`, top-origin. Blank lines and
//! lines starting with `#` are ignored in both.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{round_half_up, Scalar};

pub type FrameId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: u32,
    pub height: u32,
}

impl FrameGeometry {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "frame geometry must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0 && p.y >= 0 && p.x < self.width as i64 && p.y < self.height as i64
    }

    /// Converts between top-origin and bottom-origin rows (the map is an involution).
    #[inline]
    pub fn flip_row(&self, row: i64) -> i64 {
        self.height as i64 - 1 - row
    }
}

/// Integer pixel coordinate. Bottom-origin unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

pub type PedestrianCenter = Point;

/// Detected pedestrian. Pixels `top_left.x..=bottom_right.x` by
/// `bottom_right.y..=top_left.y` belong to the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top_left: Point,
    pub bottom_right: Point,
    pub confidence: Option<f64>,
}

impl BoundingBox {
    /// Builds a box from any two opposite corners in bottom-origin coordinates.
    pub fn from_corners(a: Point, b: Point, confidence: Option<f64>) -> Self {
        Self {
            top_left: Point::new(a.x.min(b.x), a.y.max(b.y)),
            bottom_right: Point::new(a.x.max(b.x), a.y.min(b.y)),
            confidence,
        }
    }

    pub fn left(&self) -> i64 {
        self.top_left.x
    }

    pub fn right(&self) -> i64 {
        self.bottom_right.x
    }

    pub fn top(&self) -> i64 {
        self.top_left.y
    }

    pub fn bottom(&self) -> i64 {
        self.bottom_right.y
    }

    /// Pixel height as the corner difference `tf.y - br.y`.
    pub fn height(&self) -> i64 {
        self.top() - self.bottom()
    }

    pub fn width(&self) -> i64 {
        self.right() - self.left()
    }

    pub fn covers_column(&self, col: i64) -> bool {
        col >= self.left() && col <= self.right()
    }

    pub fn contains(&self, p: Point) -> bool {
        self.covers_column(p.x) && p.y >= self.bottom() && p.y <= self.top()
    }

    pub fn accepted(&self, threshold: f64) -> bool {
        self.confidence.is_none_or(|c| c >= threshold)
    }

    /// Mirror image across the vertical center line of a frame `width` pixels wide.
    pub fn flipped(&self, width: u32) -> Self {
        let w = width as i64 - 1;
        Self::from_corners(
            Point::new(w - self.left(), self.top()),
            Point::new(w - self.right(), self.bottom()),
            self.confidence,
        )
    }
}

/// Midpoint of the two corners, rounded half-up.
pub fn center_of(b: &BoundingBox) -> PedestrianCenter {
    Point::new(
        (b.left() + b.right() + 1).div_euclid(2),
        (b.top() + b.bottom() + 1).div_euclid(2),
    )
}

/// Bottom edge of the head band, the top `alpha` fraction of the box:
/// `(1 - alpha) * tf.y + alpha * br.y`.
pub fn head_band_bottom<T: Scalar>(b: &BoundingBox, alpha: T) -> Result<T> {
    check_alpha(alpha)?;
    Ok((T::one() - alpha) * T::of_i64(b.top()) + alpha * T::of_i64(b.bottom()))
}

/// Pixel at the middle of the head band, used when a detection should be
/// placed where its head is rather than at its center.
pub fn head_point_of<T: Scalar>(b: &BoundingBox, alpha: T) -> Result<Point> {
    let band_bottom = head_band_bottom(b, alpha)?;
    let mid = (band_bottom + T::of_i64(b.top())) * T::of(0.5);
    Ok(Point::new(center_of(b).x, round_half_up(mid)))
}

pub(crate) fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha > T::zero() && alpha < T::one() {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "head fraction alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Which point of a box defines the row a pedestrian is counted at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightAnchor {
    #[default]
    Center,
    Top,
    Bottom,
}

impl HeightAnchor {
    pub fn row(self, b: &BoundingBox) -> i64 {
        match self {
            HeightAnchor::Center => center_of(b).y,
            HeightAnchor::Top => b.top(),
            HeightAnchor::Bottom => b.bottom(),
        }
    }
}

impl std::str::FromStr for HeightAnchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Self::Center),
            "top" => Ok(Self::Top),
            "bottom" => Ok(Self::Bottom),
            other => Err(Error::Argument(format!("unknown height anchor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_id: FrameId,
    pub geometry: FrameGeometry,
    pub boxes: Vec<BoundingBox>,
    /// Annotated head centers, bottom-origin. `None` when the frame has no annotation.
    pub head_points: Option<Vec<Point>>,
    pub gt_count: Option<usize>,
}

impl FrameDetections {
    pub fn new(frame_id: FrameId, geometry: FrameGeometry) -> Self {
        Self {
            frame_id,
            geometry,
            boxes: Vec::new(),
            head_points: None,
            gt_count: None,
        }
    }

    pub fn set_heads(&mut self, heads: Vec<Point>) {
        self.gt_count = Some(heads.len());
        self.head_points = Some(heads);
    }

    /// Sorts boxes by left edge, then top row descending, keeping input order on ties.
    pub fn sort_boxes(&mut self) {
        self.boxes
            .sort_by(|a, b| a.left().cmp(&b.left()).then(b.top().cmp(&a.top())));
    }

    /// Drops detections below the confidence threshold.
    pub fn retain_confident(&mut self, threshold: f64) {
        self.boxes.retain(|b| b.accepted(threshold));
    }

    pub fn flipped(&self) -> Self {
        let w = self.geometry.width as i64 - 1;
        let mut out = Self {
            frame_id: self.frame_id,
            geometry: self.geometry,
            boxes: self.boxes.iter().map(|b| b.flipped(self.geometry.width)).collect(),
            head_points: self
                .head_points
                .as_ref()
                .map(|hs| hs.iter().map(|p| Point::new(w - p.x, p.y)).collect()),
            gt_count: self.gt_count,
        };
        out.sort_boxes();
        out
    }
}

/// Result of reading a detection file.
#[derive(Debug, Clone, Default)]
pub struct LoadedDetections {
    pub frames: Vec<FrameDetections>,
    /// Boxes lying entirely outside the frame.
    pub dropped_outside: usize,
    /// Boxes with zero width or height after clamping.
    pub dropped_degenerate: usize,
}

impl LoadedDetections {
    pub fn dropped(&self) -> usize {
        self.dropped_outside + self.dropped_degenerate
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader)
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
    line: u64,
) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing field `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("field `{name}` is not a number: `{raw}`")))
}

/// Loads a detection file. See the module docs for the grammar.
pub fn load_detections(path: impl AsRef<Path>, geometry: FrameGeometry) -> Result<LoadedDetections> {
    let path = path.as_ref();
    read_detections(File::open(path)?, path, geometry)
}

/// Parses detection records from any reader; `source` names it in errors.
pub fn read_detections<R: Read>(
    reader: R,
    source: &Path,
    geometry: FrameGeometry,
) -> Result<LoadedDetections> {
    let mut frames: BTreeMap<FrameId, FrameDetections> = BTreeMap::new();
    let mut out = LoadedDetections::default();
    let (w, h) = (geometry.width as i64, geometry.height as i64);

    for record in csv_reader(reader).records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 && record.len() != 6 {
            return Err(parse_err(
                source,
                line,
                format!("expected 5 or 6 fields, found {}", record.len()),
            ));
        }
        let frame_id: FrameId = field(&record, 0, "frame_id", source, line)?;
        let coords: [f64; 4] = [
            field(&record, 1, "x_min", source, line)?,
            field(&record, 2, "y_min", source, line)?,
            field(&record, 3, "x_max", source, line)?,
            field(&record, 4, "y_max", source, line)?,
        ];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(parse_err(source, line, "non-finite coordinate"));
        }
        let confidence = if record.len() == 6 {
            let c: f64 = field(&record, 5, "confidence", source, line)?;
            if !(0.0..=1.0).contains(&c) {
                return Err(parse_err(source, line, format!("confidence {c} outside [0, 1]")));
            }
            Some(c)
        } else {
            None
        };

        let frame = frames
            .entry(frame_id)
            .or_insert_with(|| FrameDetections::new(frame_id, geometry));

        let [x0, y0, x1, y1] = coords.map(round_half_up);
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        if x1 < 0 || y1 < 0 || x0 >= w || y0 >= h {
            out.dropped_outside += 1;
            continue;
        }
        let (x0, x1) = (x0.clamp(0, w - 1), x1.clamp(0, w - 1));
        let (y0, y1) = (y0.clamp(0, h - 1), y1.clamp(0, h - 1));
        if x0 == x1 || y0 == y1 {
            out.dropped_degenerate += 1;
            continue;
        }
        frame.boxes.push(BoundingBox::from_corners(
            Point::new(x0, geometry.flip_row(y0)),
            Point::new(x1, geometry.flip_row(y1)),
            confidence,
        ));
    }

    if out.dropped() > 0 {
        log::warn!(
            "{}: dropped {} boxes outside the frame and {} degenerate boxes",
            source.display(),
            out.dropped_outside,
            out.dropped_degenerate
        );
    }
    out.frames = frames.into_values().collect();
    for f in &mut out.frames {
        f.sort_boxes();
    }
    Ok(out)
}

/// Head annotations per frame, bottom-origin, plus the number of points
/// discarded for lying outside the frame.
pub fn load_heads(
    path: impl AsRef<Path>,
    geometry: FrameGeometry,
) -> Result<(BTreeMap<FrameId, Vec<Point>>, usize)> {
    let path = path.as_ref();
    read_heads(File::open(path)?, path, geometry)
}

pub fn read_heads<R: Read>(
    reader: R,
    source: &Path,
    geometry: FrameGeometry,
) -> Result<(BTreeMap<FrameId, Vec<Point>>, usize)> {
    let mut heads: BTreeMap<FrameId, Vec<Point>> = BTreeMap::new();
    let mut dropped = 0;
    for record in csv_reader(reader).records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(source, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(parse_err(
                source,
                line,
                format!("expected 3 fields, found {}", record.len()),
            ));
        }
        let frame_id: FrameId = field(&record, 0, "frame_id", source, line)?;
        let x: f64 = field(&record, 1, "x", source, line)?;
        let y: f64 = field(&record, 2, "y", source, line)?;
        let entry = heads.entry(frame_id).or_default();
        let p = Point::new(round_half_up(x), round_half_up(y));
        if !x.is_finite() || !y.is_finite() || !geometry.contains(p) {
            dropped += 1;
            continue;
        }
        entry.push(Point::new(p.x, geometry.flip_row(p.y)));
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} head points outside the frame", source.display());
    }
    Ok((heads, dropped))
}

/// Attaches head annotations to frames, creating frames that have heads but no detections.
pub fn attach_heads(
    frames: Vec<FrameDetections>,
    mut heads: BTreeMap<FrameId, Vec<Point>>,
    geometry: FrameGeometry,
) -> Vec<FrameDetections> {
    let mut by_id: BTreeMap<FrameId, FrameDetections> =
        frames.into_iter().map(|f| (f.frame_id, f)).collect();
    for (id, frame) in by_id.iter_mut() {
        if let Some(hs) = heads.remove(id) {
            frame.set_heads(hs);
        }
    }
    for (id, hs) in heads {
        let mut frame = FrameDetections::new(id, geometry);
        frame.set_heads(hs);
        by_id.insert(id, frame);
    }
    by_id.into_values().collect()
}

/// Writes boxes in the top-origin file format.
pub fn write_detections<W: Write>(mut out: W, frames: &[FrameDetections]) -> Result<()> {
    writeln!(out, "# frame_id,x_min,y_min,x_max,y_max,confidence")?;
    for f in frames {
        for b in &f.boxes {
            let g = f.geometry;
            write!(
                out,
                "{},{},{},{},{}",
                f.frame_id,
                b.left(),
                g.flip_row(b.top()),
                b.right(),
                g.flip_row(b.bottom())
            )?;
            match b.confidence {
                Some(c) => writeln!(out, ",{c}")?,
                None => writeln!(out)?,
            }
        }
    }
    Ok(())
}

/// Writes head annotations in the top-origin file format.
pub fn write_heads<W: Write>(mut out: W, frames: &[FrameDetections]) -> Result<()> {
    writeln!(out, "# frame_id,x,y")?;
    for f in frames {
        for p in f.head_points.iter().flatten() {
            writeln!(out, "{},{},{}", f.frame_id, p.x, f.geometry.flip_row(p.y))?;
        }
    }
    Ok(())
}
