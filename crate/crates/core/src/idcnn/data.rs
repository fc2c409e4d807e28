//! Turning frames, masks and ground truth into network samples.
//!
//! Only the distant region is shown to the network: pixels outside it are
//! zeroed and the frame is cropped to the bounding rectangle of the distant
//! region, snapped outward to the 4-pixel grid so quarter-resolution cells
//! line up with the full-resolution ground truth.

use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tensor::Tensor;
use crate::density::{downsample_quarter, DensityMap};
use crate::detections::FrameId;
use crate::division::DivisionMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `[3, H, W]` tensor with 8-bit RGB scaled to `[0, 1]`.
pub fn frame_tensor<T: Scalar>(rgb: &[u8], width: usize, height: usize) -> Result<Tensor<T>> {
    let plane = width * height;
    if rgb.len() != 3 * plane {
        return Err(Error::shape("RGB frame", 3 * plane, rgb.len()));
    }
    let scale = T::of(1.0 / 255.0);
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::of(px[c] as f64) * scale;
        }
    }
    Tensor::from_vec(vec![3, height, width], data)
}

/// Per-channel mean subtraction with statistics gathered over a data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalizer<T> {
    pub mean: Vec<T>,
}

impl<T: Scalar> InputNormalizer<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
        }
    }

    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Self> {
        let mut sums: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for f in frames {
            let (c, h, w) = f.chw()?;
            if sums.is_empty() {
                sums = vec![0.0; c];
            } else if sums.len() != c {
                return Err(Error::shape("normalizer channels", sums.len(), c));
            }
            for (ch, s) in sums.iter_mut().enumerate() {
                *s += f.channel(ch).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            count += h * w;
        }
        if count == 0 {
            return Err(Error::Argument("no frames to compute input statistics from".into()));
        }
        Ok(Self {
            mean: sums.into_iter().map(|s| T::of(s / count as f64)).collect(),
        })
    }

    pub fn apply(&self, frame: &mut Tensor<T>) -> Result<()> {
        let (c, h, w) = frame.chw()?;
        if c != self.mean.len() {
            return Err(Error::shape("normalizer channels", self.mean.len(), c));
        }
        let plane = h * w;
        for (ch, &m) in self.mean.iter().enumerate() {
            for v in &mut frame.data_mut()[ch * plane..(ch + 1) * plane] {
                *v -= m;
            }
        }
        Ok(())
    }
}

/// Rectangle of quarter-resolution cells, top-origin, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistantCrop {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl DistantCrop {
    pub fn height(&self) -> usize {
        self.rows.1 - self.rows.0
    }

    pub fn width(&self) -> usize {
        self.cols.1 - self.cols.0
    }
}

/// Bounding rectangle of the distant quarter cells, or `None` if the mask has
/// no distant pixel.
pub fn distant_crop(mask: &DivisionMask) -> Option<DistantCrop> {
    let (q, qw, qh) = mask.quarter_distant_raster();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..qh {
        for c in 0..qw {
            if q[r * qw + c] {
                r0 = r0.min(r);
                r1 = r1.max(r + 1);
                c0 = c0.min(c);
                c1 = c1.max(c + 1);
            }
        }
    }
    (r1 > 0).then_some(DistantCrop {
        rows: (r0, r1),
        cols: (c0, c1),
    })
}

/// One training or inference example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub frame_id: Option<FrameId>,
    /// Masked and cropped frame, `[C, 4h, 4w]`.
    pub input: Tensor<T>,
    /// Quarter-resolution ground truth, `[1, h, w]`; zeros when unknown.
    pub target: Tensor<T>,
    /// Quarter-resolution distant cells, `h * w`.
    pub mask: Vec<bool>,
}

/// Cropped network input, its quarter-resolution distant cells and the crop.
pub type PreparedInput<T> = (Tensor<T>, Vec<bool>, DistantCrop);

/// Masks and crops a normalized `[C, H, W]` frame. Returns `None` when the
/// mask has no distant region.
pub fn prepare_input<T: Scalar>(image: &Tensor<T>, mask: &DivisionMask) -> Result<Option<PreparedInput<T>>> {
    let g = mask.geometry();
    let (c, h, w) = image.chw()?;
    if (h, w) != (g.height as usize, g.width as usize) {
        return Err(Error::shape("frame vs mask", format!("{}x{}", g.width, g.height), format!("{w}x{h}")));
    }
    let Some(crop) = distant_crop(mask) else {
        return Ok(None);
    };
    let full = mask.distant_raster();
    let (ch, cw) = (4 * crop.height(), 4 * crop.width());
    let (y0, x0) = (4 * crop.rows.0, 4 * crop.cols.0);
    let mut input = Tensor::zeros(vec![c, ch, cw]);
    for k in 0..c {
        let src = image.channel(k);
        let dst = &mut input.data_mut()[k * ch * cw..(k + 1) * ch * cw];
        for y in 0..ch {
            let sy = y0 + y;
            if sy >= h {
                break;
            }
            for x in 0..cw {
                let sx = x0 + x;
                if sx < w && full[sy * w + sx] {
                    dst[y * cw + x] = src[sy * w + sx];
                }
            }
        }
    }
    let (q, qw, _) = mask.quarter_distant_raster();
    let mut qmask = Vec::with_capacity(crop.height() * crop.width());
    for r in crop.rows.0..crop.rows.1 {
        qmask.extend_from_slice(&q[r * qw + crop.cols.0..r * qw + crop.cols.1]);
    }
    Ok(Some((input, qmask, crop)))
}

/// Builds a sample from a normalized frame, its mask and its full-resolution
/// ground truth.
pub fn prepare_sample<T: Scalar>(image: &Tensor<T>, mask: &DivisionMask, ground_truth: &DensityMap<T>) -> Result<Option<Sample<T>>> {
    if ground_truth.scale != 1 || ground_truth.geometry != mask.geometry() {
        return Err(Error::shape(
            "ground truth",
            format!("{}x{} at scale 1", mask.geometry().width, mask.geometry().height),
            format!("{}x{} at scale {}", ground_truth.width(), ground_truth.height(), ground_truth.scale),
        ));
    }
    let Some((input, qmask, crop)) = prepare_input(image, mask)? else {
        return Ok(None);
    };
    let quarter = downsample_quarter(ground_truth)?;
    let mut target = Vec::with_capacity(qmask.len());
    for r in crop.rows.0..crop.rows.1 {
        target.extend_from_slice(&quarter.values[r * quarter.width() + crop.cols.0..r * quarter.width() + crop.cols.1]);
    }
    Ok(Some(Sample {
        frame_id: ground_truth.frame_id,
        input,
        target: Tensor::from_vec(vec![1, crop.height(), crop.width()], target)?,
        mask: qmask,
    }))
}

/// Sum of the prediction over distant cells.
pub fn masked_prediction_sum<T: Scalar>(net: &Network<T>, input: &Tensor<T>, mask: &[bool]) -> Result<T> {
    let pred = net.forward(input)?;
    if pred.len() != mask.len() {
        return Err(Error::shape("prediction vs mask", mask.len(), pred.len()));
    }
    Ok(pred.data().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).sum())
}

/// Distant-region count estimate for a normalized frame.
pub fn predict_count<T: Scalar>(net: &Network<T>, image: &Tensor<T>, mask: &DivisionMask) -> Result<T> {
    match prepare_input(image, mask)? {
        Some((input, qmask, _)) => masked_prediction_sum(net, &input, &qmask),
        None => Ok(T::zero()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{render_density, DensityOptions, PerspectiveModel};
    use crate::detections::{FrameDetections, FrameGeometry, Point};

    #[test]
    fn frame_tensor_layout() {
        let t: Tensor<f64> = frame_tensor(&[255, 0, 51, 0, 255, 0], 2, 1).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 1.0, 0.2, 0.0]);
        assert!(frame_tensor::<f64>(&[0; 5], 2, 1).is_err());
    }

    #[test]
    fn normalizer_subtracts_channel_means() {
        let a: Tensor<f64> = frame_tensor(&[255, 0, 0, 255, 0, 0], 2, 1).unwrap();
        let b: Tensor<f64> = frame_tensor(&[0, 0, 255, 0, 0, 255], 2, 1).unwrap();
        let norm = InputNormalizer::fit([&a, &b]).unwrap();
        assert_eq!(norm.mean, vec![0.5, 0.0, 0.5]);
        let mut a2 = a.clone();
        norm.apply(&mut a2).unwrap();
        assert_eq!(a2.channel(0), &[0.5, 0.5]);
        assert!(InputNormalizer::<f64>::fit([]).is_err());
    }

    #[test]
    fn crop_snaps_to_grid() {
        let g = FrameGeometry::new(16, 12).unwrap();
        // distant: bottom rows >= 6 in columns 5..=9 -> top rows 0..=5
        let boundary: Vec<i64> = (0..16).map(|c| if (5..=9).contains(&c) { 6 } else { 12 }).collect();
        let mask = DivisionMask::from_boundary(g, boundary).unwrap();
        let crop = distant_crop(&mask).unwrap();
        assert_eq!(crop, DistantCrop { rows: (0, 2), cols: (1, 3) });
        assert!(distant_crop(&DivisionMask::straight(g, 12)).is_none());
    }

    #[test]
    fn sample_keeps_distant_mass_and_zeroes_nearby_pixels() {
        let g = FrameGeometry::new(16, 16).unwrap();
        let mask = DivisionMask::straight(g, 7);
        let mut f = FrameDetections::new(3, g);
        f.set_heads(vec![Point::new(8, 12), Point::new(3, 2)]);
        let gt: DensityMap<f64> =
            render_density(&f, &PerspectiveModel::new(0.0, 8.0, 16), &mask, &DensityOptions::default()).unwrap();
        let image = Tensor::from_vec(vec![3, 16, 16], vec![1.0; 768]).unwrap();
        let s = prepare_sample(&image, &mask, &gt).unwrap().unwrap();
        // top rows 0..=8 are distant -> quarter rows 0..3
        assert_eq!(s.input.shape(), &[3, 12, 16]);
        assert_eq!(s.target.shape(), &[1, 3, 4]);
        assert_eq!(s.frame_id, Some(3));
        assert!((s.target.sum() - 1.0).abs() < 1e-9);
        assert_eq!(s.input.channel(0)[8 * 16], 1.0);
        assert_eq!(s.input.channel(0)[9 * 16], 0.0);
        assert!(s.mask.iter().all(|&m| m));
    }

    #[test]
    fn predict_count_without_distant_region_is_zero() {
        let g = FrameGeometry::new(8, 8).unwrap();
        let net: Network<f64> = Network::init(Default::default(), 0);
        let image = Tensor::zeros(vec![3, 8, 8]);
        assert_eq!(predict_count(&net, &image, &DivisionMask::straight(g, 8)).unwrap(), 0.0);
    }
}
