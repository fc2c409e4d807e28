//! Synthetic scenes with a known perspective line.
//!
//! Pedestrians are bright blobs (a body ellipse and a head disc) on a noisy
//! dark background. Box heights follow `slope * center_row + intercept` with
//! a small multiplicative jitter, so a perspective fit over the detections
//! recovers the generating line. The detector is perfect: one box per
//! pedestrian with a confidence near 1, and one head annotation per box at
//! the middle of its head band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detections::{head_point_of, BoundingBox, FrameDetections, FrameGeometry, FrameId, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub seed: u64,
    /// Pedestrian height per bottom-origin row; negative when people shrink upward.
    pub slope: f64,
    /// Pedestrian height at the bottom row.
    pub intercept: f64,
    pub min_people: usize,
    pub max_people: usize,
    /// Relative height jitter, uniform in `[-j, j]`.
    pub size_jitter: f64,
    /// Box width over box height.
    pub aspect: f64,
    pub background: u8,
    pub body_level: u8,
    pub head_level: u8,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub alpha: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            frames: 40,
            seed: 7,
            slope: -0.3,
            intercept: 36.0,
            min_people: 6,
            max_people: 14,
            size_jitter: 0.05,
            aspect: 0.4,
            background: 30,
            body_level: 120,
            head_level: 220,
            noise: 4.0,
            alpha: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn geometry(&self) -> Result<FrameGeometry> {
        FrameGeometry::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        let bad = |m: &str| Err(Error::Argument(format!("synthetic scene: {m}")));
        if self.min_people > self.max_people {
            return bad("min_people exceeds max_people");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(0.0..0.5).contains(&self.size_jitter) || !(self.aspect > 0.0) || !(self.noise >= 0.0) {
            return bad("jitter must lie in [0, 0.5), aspect must be positive, noise nonnegative");
        }
        let top = (self.height - 1) as f64;
        let (s0, s1) = (self.intercept, self.slope * top + self.intercept);
        if s0.min(s1) < 4.0 {
            return bad("pedestrians must be at least 4 pixels tall everywhere");
        }
        if s0.max(s1) * (1.0 + self.size_jitter) > top * 0.9 {
            return bad("pedestrians must fit well inside the frame");
        }
        Ok(())
    }

    pub fn size_at(&self, row: f64) -> f64 {
        self.slope * row + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    /// Boxes and head annotations, bottom-origin.
    pub detections: FrameDetections,
    /// Top-origin 8-bit graymap.
    pub image: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SynthConfig,
    pub geometry: FrameGeometry,
    pub frames: Vec<SyntheticFrame>,
}

fn frame_rng(seed: u64, frame_id: FrameId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (frame_id.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generates `config.frames` frames. Each frame draws from its own stream,
/// so a frame does not depend on how many frames precede it.
pub fn generate_scene(config: &SynthConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let geometry = config.geometry()?;
    let frames = (0..config.frames as FrameId)
        .map(|id| generate_frame(config, geometry, id))
        .collect::<Result<_>>()?;
    Ok(SyntheticScene {
        config: config.clone(),
        geometry,
        frames,
    })
}

fn place_box<R: Rng>(config: &SynthConfig, rng: &mut R) -> Option<BoundingBox> {
    let (w, h) = (config.width as i64, config.height as i64);
    for _ in 0..100 {
        let row = rng.random_range(0.0..(h - 1) as f64);
        let jitter = rng.random_range(-config.size_jitter..=config.size_jitter);
        let bh = (config.size_at(row) * (1.0 + jitter)).round() as i64;
        let bw = ((bh as f64 * config.aspect).round() as i64).max(2);
        let bottom = row.round() as i64 - bh / 2;
        let top = bottom + bh;
        if bottom < 0 || top >= h || bw >= w {
            continue;
        }
        let left = rng.random_range(0..w - bw);
        let conf = rng.random_range(0.9..=1.0);
        return Some(BoundingBox::from_corners(Point::new(left, top), Point::new(left + bw, bottom), Some(conf)));
    }
    None
}

fn generate_frame(config: &SynthConfig, geometry: FrameGeometry, frame_id: FrameId) -> Result<SyntheticFrame> {
    let mut rng = frame_rng(config.seed, frame_id);
    let n = rng.random_range(config.min_people..=config.max_people);
    let mut frame = FrameDetections::new(frame_id, geometry);
    while frame.boxes.len() < n {
        match place_box(config, &mut rng) {
            Some(b) => frame.boxes.push(b),
            None => return Err(Error::Argument("cannot place a pedestrian inside the frame".into())),
        }
    }
    frame.sort_boxes();
    let heads = frame
        .boxes
        .iter()
        .map(|b| head_point_of(b, config.alpha))
        .collect::<Result<Vec<_>>>()?;
    frame.set_heads(heads);

    let (w, h) = (config.width as usize, config.height as usize);
    let mut canvas = vec![config.background as f64; w * h];
    // far pedestrians first so nearer ones occlude them
    let mut order: Vec<usize> = (0..frame.boxes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(frame.boxes[i].bottom()));
    for i in order {
        let head = frame.head_points.as_ref().expect("heads were just set")[i];
        draw_pedestrian(&mut canvas, geometry, &frame.boxes[i], head, config);
    }
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Argument(e.to_string()))?;
    let image = canvas
        .into_iter()
        .map(|v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(SyntheticFrame { detections: frame, image })
}

fn draw_pedestrian(canvas: &mut [f64], g: FrameGeometry, b: &BoundingBox, head: Point, config: &SynthConfig) {
    let w = g.width as usize;
    let bh = b.height() as f64;
    let head_r = (0.5 * config.alpha * bh).max(1.0);
    let body_top = head.y as f64 - head_r;
    let (cx, half_w) = ((b.left() + b.right()) as f64 / 2.0, b.width() as f64 / 2.0);
    let (cy, half_h) = ((body_top + b.bottom() as f64) / 2.0, (body_top - b.bottom() as f64) / 2.0);
    for y in b.bottom()..=b.top() {
        let row = g.flip_row(y) as usize * w;
        for x in b.left()..=b.right() {
            let (fx, fy) = (x as f64, y as f64);
            let in_head = (fx - head.x as f64).powi(2) + (fy - head.y as f64).powi(2) <= head_r * head_r;
            let in_body = half_h > 0.0 && ((fx - cx) / half_w.max(0.5)).powi(2) + ((fy - cy) / half_h).powi(2) <= 1.0;
            let level = if in_head {
                config.head_level
            } else if in_body {
                config.body_level
            } else {
                continue;
            };
            canvas[row + x as usize] = level as f64;
        }
    }
}
