//! Splitting a frame into a nearby and a distant region.
//!
//! The expectation line `H` is the mean detection row over a whole video.
//! Boxes whose head band crosses `H` would be cut by a straight split, so the
//! boundary is raised over them. Two generators are provided: [`generate_mask_strict`]
//! replays the original column-sweep fill, [`generate_mask_envelope`] takes the
//! per-column maximum and never cuts a box.
//!
//! Rows are bottom-origin. A fill "from row `r`" marks rows `r..height` as
//! distant; the boundary row itself is distant. A box occupying pixel rows
//! `br.y..=tf.y` has its upper edge at `tf.y + 1`, and columns `tf.x..=br.x`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detections::{
    check_alpha, head_band_bottom, BoundingBox, FrameDetections, FrameGeometry, HeightAnchor,
    PedestrianCenter,
};
use crate::error::{Error, Result};
use crate::scalar::{round_half_up, Scalar};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeightHistogram {
    /// `counts[h]` detections anchored at bottom-origin row `h`.
    pub counts: Vec<u64>,
    pub total: u64,
}

/// Counts detections per anchor row over every frame of a scene.
pub fn height_histogram(frames: &[FrameDetections], anchor: HeightAnchor) -> Result<HeightHistogram> {
    let geometry = match frames.first() {
        Some(f) => f.geometry,
        None => return Err(Error::EmptyDistribution),
    };
    let mut counts = vec![0u64; geometry.height as usize];
    let mut total = 0;
    for frame in frames {
        if frame.geometry != geometry {
            return Err(Error::shape(
                format!("frame {}", frame.frame_id),
                format!("{}x{}", geometry.width, geometry.height),
                format!("{}x{}", frame.geometry.width, frame.geometry.height),
            ));
        }
        for b in &frame.boxes {
            let row = anchor.row(b).clamp(0, geometry.height as i64 - 1);
            counts[row as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyDistribution);
    }
    Ok(HeightHistogram { counts, total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectationLine<T = f64> {
    /// Expected detection row.
    pub h: T,
    /// `h` rounded half-up.
    pub row: i64,
}

impl<T: Scalar> ExpectationLine<T> {
    pub fn new(h: T) -> Self {
        Self {
            h,
            row: round_half_up(h),
        }
    }
}

/// `H = sum_i p_i * h_i` with `p_i = k_i / sum_j k_j`.
pub fn expectation_height<T: Scalar>(hist: &HeightHistogram) -> Result<ExpectationLine<T>> {
    if hist.total == 0 {
        return Err(Error::EmptyDistribution);
    }
    let total = T::of(hist.total as f64);
    let h = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(_, &k)| k > 0)
        .map(|(row, &k)| T::of(k as f64) / total * T::of_usize(row))
        .sum();
    Ok(ExpectationLine::new(h))
}

/// Boxes whose head band starts below `H` while their top row reaches the
/// distant side of the line. Input order is preserved.
pub fn select_straddlers<T: Scalar>(
    frame: &FrameDetections,
    line: &ExpectationLine<T>,
    alpha: T,
) -> Result<Vec<BoundingBox>> {
    check_alpha(alpha)?;
    let mut out = Vec::new();
    for b in &frame.boxes {
        if head_band_bottom(b, alpha)? < line.h && b.top() >= line.row {
            out.push(*b);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivisionMode {
    Strict,
    #[default]
    Envelope,
}

impl std::fmt::Display for DivisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DivisionMode::Strict => "strict",
            DivisionMode::Envelope => "envelope",
        })
    }
}

impl std::str::FromStr for DivisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Self::Strict),
            "envelope" => Ok(Self::Envelope),
            other => Err(Error::Argument(format!("unknown division mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Nearby,
    Distant,
}

/// Per-column boundary: pixels at or above `boundary[c]` are distant.
/// A value equal to the frame height means the column has no distant pixels.
pub type DivisionBoundary = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DivisionMask {
    geometry: FrameGeometry,
    boundary: DivisionBoundary,
}

impl DivisionMask {
    pub fn from_boundary(geometry: FrameGeometry, boundary: DivisionBoundary) -> Result<Self> {
        if boundary.len() != geometry.width as usize {
            return Err(Error::shape("division boundary", geometry.width, boundary.len()));
        }
        let h = geometry.height as i64;
        if let Some(c) = boundary.iter().position(|&b| !(0..=h).contains(&b)) {
            return Err(Error::Argument(format!(
                "boundary row {} at column {c} outside 0..={h}",
                boundary[c]
            )));
        }
        Ok(Self { geometry, boundary })
    }

    /// Straight horizontal split at `row`.
    pub fn straight(geometry: FrameGeometry, row: i64) -> Self {
        let row = row.clamp(0, geometry.height as i64);
        Self {
            geometry,
            boundary: vec![row; geometry.width as usize],
        }
    }

    /// Builds a mask from a bottom-origin raster (`bits[row * width + col]`),
    /// rejecting columns that are not a run of 0s followed by a run of 1s.
    pub fn from_bits(geometry: FrameGeometry, bits: &[bool]) -> Result<Self> {
        let (w, h) = (geometry.width as usize, geometry.height as usize);
        if bits.len() != w * h {
            return Err(Error::shape("mask raster", w * h, bits.len()));
        }
        let mut boundary = Vec::with_capacity(w);
        for c in 0..w {
            let b = (0..h).find(|&r| bits[r * w + c]).unwrap_or(h);
            if let Some(r) = (b..h).find(|&r| !bits[r * w + c]) {
                return Err(Error::Argument(format!(
                    "mask column {c} has a nearby pixel at row {r} above its boundary {b}"
                )));
            }
            boundary.push(b as i64);
        }
        Ok(Self { geometry, boundary })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn boundary(&self) -> &[i64] {
        &self.boundary
    }

    /// Bottom-origin test; `x`, `y` must be inside the frame.
    #[inline]
    pub fn is_distant(&self, x: i64, y: i64) -> bool {
        y >= self.boundary[x as usize]
    }

    /// Bottom-origin raster, `bits[row * width + col]`, true = distant.
    pub fn bits(&self) -> Vec<bool> {
        let (w, h) = (self.geometry.width as usize, self.geometry.height as usize);
        let mut bits = vec![false; w * h];
        for (c, &b) in self.boundary.iter().enumerate() {
            for r in b as usize..h {
                bits[r * w + c] = true;
            }
        }
        bits
    }

    /// Top-origin raster in image layout, true = distant.
    pub fn distant_raster(&self) -> Vec<bool> {
        let (w, h) = (self.geometry.width as usize, self.geometry.height as usize);
        let mut out = vec![false; w * h];
        for (c, &b) in self.boundary.iter().enumerate() {
            // bottom rows >= b are top rows <= h - 1 - b
            for top in 0..(h as i64 - b).max(0) as usize {
                out[top * w + c] = true;
            }
        }
        out
    }

    /// Top-origin raster at 1/4 resolution: a cell is distant if any pixel of
    /// its 4x4 block is. Dimensions round up.
    pub fn quarter_distant_raster(&self) -> (Vec<bool>, usize, usize) {
        let (w, h) = (self.geometry.width as usize, self.geometry.height as usize);
        let (qw, qh) = (w.div_ceil(4), h.div_ceil(4));
        let full = self.distant_raster();
        let mut out = vec![false; qw * qh];
        for r in 0..h {
            for c in 0..w {
                if full[r * w + c] {
                    out[(r / 4) * qw + c / 4] = true;
                }
            }
        }
        (out, qw, qh)
    }

    pub fn distant_pixels(&self) -> usize {
        let h = self.geometry.height as i64;
        self.boundary.iter().map(|&b| (h - b) as usize).sum()
    }

    pub fn flipped(&self) -> Self {
        let mut boundary = self.boundary.clone();
        boundary.reverse();
        Self {
            geometry: self.geometry,
            boundary,
        }
    }
}

/// Marks `row_from..height` distant over columns `cols`, clipped to the frame.
fn fill(bits: &mut [bool], geometry: FrameGeometry, row_from: i64, cols: std::ops::Range<i64>) {
    let (w, h) = (geometry.width as i64, geometry.height as i64);
    let (c0, c1) = (cols.start.max(0), cols.end.min(w));
    for r in row_from.max(0)..h {
        for c in c0..c1 {
            bits[(r * w + c) as usize] = true;
        }
    }
}

/// Column sweep over the straddlers in left-edge order. Inside an overlap
/// the previous box's top is carried up to the next box's left edge, which
/// can cut the previous box when the next one is lower.
pub fn generate_mask_strict<T: Scalar>(
    geometry: FrameGeometry,
    straddlers: &[BoundingBox],
    line: &ExpectationLine<T>,
) -> DivisionMask {
    let mut sorted = straddlers.to_vec();
    sorted.sort_by(|a, b| a.left().cmp(&b.left()).then(b.top().cmp(&a.top())));
    let straddlers = &sorted[..];
    let Some(first) = straddlers.first() else {
        return DivisionMask::straight(geometry, line.row);
    };
    let mut bits = vec![false; geometry.pixels()];
    let h_row = line.row;

    fill(&mut bits, geometry, h_row, 0..first.left());
    for pair in straddlers.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if cur.left() <= prev.right() {
            fill(&mut bits, geometry, prev.top() + 1, prev.left()..cur.left());
        } else {
            fill(&mut bits, geometry, prev.top() + 1, prev.left()..prev.right() + 1);
            fill(&mut bits, geometry, h_row, prev.right() + 1..cur.left());
        }
    }
    let last = straddlers.last().unwrap_or(first);
    fill(&mut bits, geometry, last.top() + 1, last.left()..last.right() + 1);
    fill(&mut bits, geometry, h_row, last.right() + 1..geometry.width as i64);

    DivisionMask::from_bits(geometry, &bits).expect("column fills always produce one transition per column")
}

/// `b(c) = max(H_row, max{tf.y + 1 : straddler covers c})`.
pub fn generate_mask_envelope<T: Scalar>(
    geometry: FrameGeometry,
    straddlers: &[BoundingBox],
    line: &ExpectationLine<T>,
) -> DivisionMask {
    let h = geometry.height as i64;
    let w = geometry.width as i64;
    let mut boundary = vec![line.row.clamp(0, h); w as usize];
    for b in straddlers {
        let top = (b.top() + 1).min(h);
        for c in b.left().max(0)..=b.right().min(w - 1) {
            let slot = &mut boundary[c as usize];
            *slot = (*slot).max(top);
        }
    }
    DivisionMask { geometry, boundary }
}

pub fn generate_mask<T: Scalar>(
    mode: DivisionMode,
    geometry: FrameGeometry,
    straddlers: &[BoundingBox],
    line: &ExpectationLine<T>,
) -> DivisionMask {
    match mode {
        DivisionMode::Strict => generate_mask_strict(geometry, straddlers, line),
        DivisionMode::Envelope => generate_mask_envelope(geometry, straddlers, line),
    }
}

pub fn region_of(mask: &DivisionMask, point: PedestrianCenter) -> Result<Region> {
    if !mask.geometry.contains(point) {
        return Err(Error::Argument(format!(
            "point ({}, {}) outside {}x{} frame",
            point.x, point.y, mask.geometry.width, mask.geometry.height
        )));
    }
    Ok(if mask.is_distant(point.x, point.y) {
        Region::Distant
    } else {
        Region::Nearby
    })
}

/// Columns where two masks disagree, as `(column, boundary_a, boundary_b)`.
pub fn boundary_diff(a: &DivisionMask, b: &DivisionMask) -> Vec<(usize, i64, i64)> {
    a.boundary
        .iter()
        .zip(&b.boundary)
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(c, (&x, &y))| (c, x, y))
        .collect()
}

/// Writes the mask as an 8-bit graymap, top-origin, 0 = nearby and 255 = distant.
pub fn write_mask_pgm(mask: &DivisionMask, path: impl AsRef<Path>) -> Result<()> {
    let g = mask.geometry;
    let data: Vec<u8> = mask
        .distant_raster()
        .into_iter()
        .map(|d| if d { 255 } else { 0 })
        .collect();
    crate::raster::write_gray(path, g.width, g.height, &data)
}

/// Reads a mask written by [`write_mask_pgm`]; any nonzero pixel is distant.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<DivisionMask> {
    let (w, h, data) = crate::raster::read_gray(path)?;
    let geometry = FrameGeometry::new(w, h)?;
    let (wu, hu) = (w as usize, h as usize);
    let mut bits = vec![false; wu * hu];
    for top in 0..hu {
        let bottom = hu - 1 - top;
        for c in 0..wu {
            bits[bottom * wu + c] = data[top * wu + c] != 0;
        }
    }
    DivisionMask::from_bits(geometry, &bits)
}

/// Text sidecar describing how a mask was produced.
pub fn write_mask_sidecar<W: Write, T: Scalar>(
    mut out: W,
    mask: &DivisionMask,
    line: &ExpectationLine<T>,
    alpha: T,
    mode: DivisionMode,
    straddlers: &[BoundingBox],
) -> Result<()> {
    writeln!(out, "width {}", mask.geometry.width)?;
    writeln!(out, "height {}", mask.geometry.height)?;
    writeln!(out, "expectation_height {}", line.h)?;
    writeln!(out, "expectation_row {}", line.row)?;
    writeln!(out, "alpha {alpha}")?;
    writeln!(out, "mode {mode}")?;
    writeln!(out, "straddlers {}", straddlers.len())?;
    for b in straddlers {
        writeln!(out, "straddler {} {} {} {}", b.left(), b.top(), b.right(), b.bottom())?;
    }
    let cols: Vec<String> = mask.boundary.iter().map(|b| b.to_string()).collect();
    writeln!(out, "boundary {}", cols.join(" "))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detections::{center_of, Point};
    use proptest::prelude::*;

    fn bx(left: i64, right: i64, top: i64, bottom: i64) -> BoundingBox {
        BoundingBox::from_corners(Point::new(left, top), Point::new(right, bottom), Some(1.0))
    }

    fn geom(w: u32, h: u32) -> FrameGeometry {
        FrameGeometry::new(w, h).unwrap()
    }

    fn frame_with(boxes: Vec<BoundingBox>, g: FrameGeometry) -> FrameDetections {
        let mut f = FrameDetections::new(0, g);
        f.boxes = boxes;
        f.sort_boxes();
        f
    }

    /// A box whose center row is `row`.
    fn at_row(row: i64) -> BoundingBox {
        bx(0, 4, row + 2, row - 2)
    }

    #[test]
    fn histogram_counts_rows() {
        let g = geom(10, 200);
        let f = frame_with(vec![at_row(50), at_row(50), at_row(150), at_row(150)], g);
        let hist = height_histogram(&[f], HeightAnchor::Center).unwrap();
        assert_eq!(hist.counts[50], 2);
        assert_eq!(hist.counts[150], 2);
        assert_eq!(hist.total, 4);

        let f = frame_with(vec![at_row(10)], g);
        let hist = height_histogram(&[f], HeightAnchor::Center).unwrap();
        assert_eq!(hist.counts[10], 1);
        assert_eq!(hist.total, 1);
    }

    #[test]
    fn histogram_anchor_switch() {
        let g = geom(10, 200);
        let f = frame_with(vec![bx(0, 4, 60, 40)], g);
        assert_eq!(height_histogram(&[f.clone()], HeightAnchor::Top).unwrap().counts[60], 1);
        assert_eq!(height_histogram(&[f], HeightAnchor::Bottom).unwrap().counts[40], 1);
    }

    #[test]
    fn empty_distribution_errors() {
        let g = geom(10, 20);
        assert!(matches!(
            height_histogram(&[FrameDetections::new(0, g)], HeightAnchor::Center),
            Err(Error::EmptyDistribution)
        ));
        assert!(matches!(height_histogram(&[], HeightAnchor::Center), Err(Error::EmptyDistribution)));
        let hist = HeightHistogram { counts: vec![0; 5], total: 0 };
        assert!(matches!(expectation_height::<f64>(&hist), Err(Error::EmptyDistribution)));
    }

    fn hist_of(pairs: &[(usize, u64)], len: usize) -> HeightHistogram {
        let mut counts = vec![0; len];
        for &(r, k) in pairs {
            counts[r] = k;
        }
        HeightHistogram { total: counts.iter().sum(), counts }
    }

    #[test]
    fn expectation_examples() {
        let line: ExpectationLine = expectation_height(&hist_of(&[(100, 7)], 200)).unwrap();
        assert_eq!(line.h, 100.0);
        let line: ExpectationLine = expectation_height(&hist_of(&[(50, 2), (150, 2)], 200)).unwrap();
        assert_eq!(line.h, 100.0);
        assert_eq!(line.row, 100);
        let line: ExpectationLine = expectation_height(&hist_of(&[(10, 1), (20, 3)], 200)).unwrap();
        assert!((line.h - 17.5).abs() < 1e-12);
        assert_eq!(line.row, 18);
        let line: ExpectationLine<f32> = expectation_height(&hist_of(&[(10, 1), (20, 3)], 200)).unwrap();
        assert!((line.h - 17.5).abs() < 1e-5);
    }

    #[test]
    fn straddler_examples() {
        let g = geom(50, 200);
        let line = ExpectationLine::new(100.0);
        let crossing = bx(0, 5, 120, 20);
        let below = bx(10, 15, 90, 10);
        let above = bx(20, 25, 160, 60); // head bottom 130
        let f = frame_with(vec![crossing, below, above], g);
        let s = select_straddlers(&f, &line, 0.3).unwrap();
        assert_eq!(s, vec![crossing]);
        assert!(select_straddlers(&f, &line, 1.5).is_err());
    }

    #[test]
    fn no_straddlers_is_straight_line() {
        let g = geom(4, 200);
        let line = ExpectationLine::new(100.0);
        for mask in [
            generate_mask_strict(g, &[], &line),
            generate_mask_envelope(g, &[], &line),
        ] {
            let bits = mask.bits();
            for r in 0..200 {
                for c in 0..4 {
                    assert_eq!(bits[r * 4 + c], r >= 100, "row {r} col {c}");
                }
            }
        }
    }

    fn expected_boundary(width: usize, base: i64, raised: &[(std::ops::RangeInclusive<usize>, i64)]) -> Vec<i64> {
        let mut b = vec![base; width];
        for (cols, v) in raised {
            for c in cols.clone() {
                b[c] = *v;
            }
        }
        b
    }

    #[test]
    fn single_straddler_golden() {
        // Box over columns 10..=20 with its top pixel row at 130: the boundary
        // sits just above it, at 131.
        let g = geom(32, 200);
        let line = ExpectationLine::new(100.0);
        let s = [bx(10, 20, 130, 40)];
        let want = expected_boundary(32, 100, &[(10..=20, 131)]);
        assert_eq!(generate_mask_strict(g, &s, &line).boundary(), want.as_slice());
        assert_eq!(generate_mask_envelope(g, &s, &line).boundary(), want.as_slice());
    }

    #[test]
    fn disjoint_straddlers_golden() {
        let g = geom(40, 200);
        let line = ExpectationLine::new(100.0);
        let s = [bx(5, 10, 120, 40), bx(20, 30, 140, 50)];
        let want = expected_boundary(40, 100, &[(5..=10, 121), (20..=30, 141)]);
        assert_eq!(generate_mask_strict(g, &s, &line).boundary(), want.as_slice());
        assert_eq!(generate_mask_envelope(g, &s, &line).boundary(), want.as_slice());
    }

    #[test]
    fn overlapping_straddlers_golden() {
        // First box (cols 10..=30) has top 150, second (cols 20..=40) top 130.
        // Strict: first box's top carried over 10..20, second box's top from 20.
        // Envelope keeps the taller box whole over the overlap 20..=30.
        let g = geom(48, 200);
        let line = ExpectationLine::new(100.0);
        let s = [bx(10, 30, 150, 60), bx(20, 40, 130, 50)];
        let strict = generate_mask_strict(g, &s, &line);
        let envelope = generate_mask_envelope(g, &s, &line);
        assert_eq!(
            strict.boundary(),
            expected_boundary(48, 100, &[(10..=19, 151), (20..=40, 131)]).as_slice()
        );
        assert_eq!(
            envelope.boundary(),
            expected_boundary(48, 100, &[(10..=30, 151), (31..=40, 131)]).as_slice()
        );
        assert_eq!(strict.boundary()[25], 131);
        assert_eq!(envelope.boundary()[25], 151);
    }

    #[test]
    fn region_lookup() {
        let g = geom(8, 20);
        let mask = DivisionMask::straight(g, 10);
        assert_eq!(region_of(&mask, Point::new(3, 9)).unwrap(), Region::Nearby);
        assert_eq!(region_of(&mask, Point::new(3, 10)).unwrap(), Region::Distant);
        assert_eq!(region_of(&mask, Point::new(3, 15)).unwrap(), Region::Distant);
        assert!(region_of(&mask, Point::new(8, 1)).is_err());
        assert!(region_of(&mask, Point::new(0, -1)).is_err());
    }

    #[test]
    fn from_bits_rejects_holes() {
        let g = geom(1, 4);
        assert!(DivisionMask::from_bits(g, &[false, true, false, true]).is_err());
        let m = DivisionMask::from_bits(g, &[false, false, true, true]).unwrap();
        assert_eq!(m.boundary(), &[2]);
        assert_eq!(DivisionMask::from_bits(g, &[false; 4]).unwrap().boundary(), &[4]);
    }

    #[test]
    fn rasters_agree_with_boundary() {
        let g = geom(5, 9);
        let m = DivisionMask::from_boundary(g, vec![0, 3, 9, 8, 4]).unwrap();
        let top = m.distant_raster();
        let bottom = m.bits();
        for r in 0..9 {
            for c in 0..5 {
                assert_eq!(top[(8 - r) * 5 + c], bottom[r * 5 + c]);
            }
        }
        let (q, qw, qh) = m.quarter_distant_raster();
        assert_eq!((qw, qh), (2, 3));
        // top-origin rows 0..4 of column 0 are distant; rows 8 (bottom row) only in cols 0
        assert!(q[0] && q[1]);
        assert!(q[2 * 2]);
        assert!(!q[2 * 2 + 1]);
        assert_eq!(m.distant_pixels(), 9 + 6 + 0 + 1 + 5);
    }

    #[test]
    fn mask_pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let g = geom(6, 7);
        let m = DivisionMask::from_boundary(g, vec![0, 3, 7, 6, 4, 4]).unwrap();
        let p = dir.path().join("m.pgm");
        write_mask_pgm(&m, &p).unwrap();
        assert_eq!(read_mask_pgm(&p).unwrap(), m);
    }

    #[test]
    fn sidecar_lists_boundary() {
        let g = geom(3, 10);
        let m = DivisionMask::from_boundary(g, vec![4, 6, 4]).unwrap();
        let mut buf = Vec::new();
        let line = ExpectationLine::new(3.6);
        write_mask_sidecar(&mut buf, &m, &line, 0.3, DivisionMode::Envelope, &[bx(1, 1, 5, 2)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("expectation_row 4"));
        assert!(text.contains("mode envelope"));
        assert!(text.contains("boundary 4 6 4"));
    }

    fn arb_boxes(w: i64, h: i64) -> impl Strategy<Value = Vec<BoundingBox>> {
        proptest::collection::vec((0..w, 0..h, 1i64..20, 1i64..60), 0..12).prop_map(move |v| {
            let mut boxes: Vec<BoundingBox> = v
                .into_iter()
                .map(|(x, y, bw, bh)| bx(x, (x + bw).min(w - 1).max(x + 1).min(w - 1), (y + bh).min(h - 1), y))
                .filter(|b| b.left() < b.right() && b.top() > b.bottom())
                .collect();
            boxes.sort_by(|a, b| a.left().cmp(&b.left()).then(b.top().cmp(&a.top())));
            boxes
        })
    }

    proptest! {
        #[test]
        fn envelope_never_cuts_a_straddler(boxes in arb_boxes(64, 120), h in 0.0f64..119.0) {
            let g = geom(64, 120);
            let line = ExpectationLine::new(h);
            let f = frame_with(boxes, g);
            let s = select_straddlers(&f, &line, 0.3).unwrap();
            let mask = generate_mask_envelope(g, &s, &line);
            for b in &s {
                for c in b.left()..=b.right() {
                    prop_assert!(b.top() < mask.boundary()[c as usize]);
                }
            }
            prop_assert!(mask.boundary().iter().all(|&b| b >= line.row && b <= 120));
        }

        #[test]
        fn strict_columns_have_one_transition(boxes in arb_boxes(64, 120), h in 0.0f64..119.0) {
            let g = geom(64, 120);
            let line = ExpectationLine::new(h);
            let s = select_straddlers(&frame_with(boxes, g), &line, 0.3).unwrap();
            let mask = generate_mask_strict(g, &s, &line);
            prop_assert!(DivisionMask::from_bits(g, &mask.bits()).is_ok());
            prop_assert!(mask.boundary().iter().all(|&b| b >= line.row && b <= 120));
        }

        #[test]
        fn modes_agree_without_overlap(boxes in arb_boxes(64, 120), h in 0.0f64..119.0) {
            let g = geom(64, 120);
            let line = ExpectationLine::new(h);
            let s = select_straddlers(&frame_with(boxes, g), &line, 0.3).unwrap();
            let disjoint = s.windows(2).all(|w| w[1].left() > w[0].right());
            prop_assume!(disjoint);
            prop_assert_eq!(generate_mask_strict(g, &s, &line), generate_mask_envelope(g, &s, &line));
        }

        #[test]
        fn raising_the_line_shrinks_the_distant_region(boxes in arb_boxes(64, 120), h in 0.0f64..100.0, dh in 0.0f64..19.0) {
            let g = geom(64, 120);
            let low = ExpectationLine::new(h);
            let high = ExpectationLine::new(h + dh);
            let s = select_straddlers(&frame_with(boxes, g), &low, 0.3).unwrap();
            for mode in [DivisionMode::Strict, DivisionMode::Envelope] {
                let a = generate_mask(mode, g, &s, &low).distant_pixels();
                let b = generate_mask(mode, g, &s, &high).distant_pixels();
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn expectation_matches_raw_mean(rows in proptest::collection::vec(0i64..300, 1..200)) {
            let g = geom(8, 300);
            let boxes: Vec<BoundingBox> = rows.iter().map(|&r| bx(0, 2, r, r)).collect();
            let f = frame_with(boxes, g);
            let hist = height_histogram(&[f.clone()], HeightAnchor::Center).unwrap();
            prop_assert_eq!(hist.total as usize, rows.len());
            let line: ExpectationLine = expectation_height(&hist).unwrap();
            let mean = f.boxes.iter().map(|b| center_of(b).y as f64).sum::<f64>() / rows.len() as f64;
            prop_assert!((line.h - mean).abs() < 1e-9);
        }
    }
}
