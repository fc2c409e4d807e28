//! Dilated convolution, rectifier and 2x2 max pooling on `[C, H, W]` maps,
//! with their backward passes.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd square kernel size, 3 or 1 in this network.
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn dilated3x3(in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 3,
            dilation,
        }
    }

    pub const fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 1,
            dilation: 1,
        }
    }

    /// Same-size padding: `dilation * (kernel - 1) / 2`.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Tap offsets `(ky, kx, dy, dx)` relative to the output pixel.
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let k = self.kernel;
        let half = (k / 2) as isize;
        let d = self.dilation as isize;
        (0..k).flat_map(move |ky| {
            (0..k).map(move |kx| (ky, kx, (ky as isize - half) * d, (kx as isize - half) * d))
        })
    }

    fn check(&self, input: &Tensor<impl Scalar>, weight: &Tensor<impl Scalar>, bias: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
        if self.kernel.is_multiple_of(2) || self.dilation == 0 {
            return Err(Error::Argument(format!(
                "kernel {} must be odd and dilation {} positive",
                self.kernel, self.dilation
            )));
        }
        let (c, h, w) = input.chw()?;
        if c != self.in_channels {
            return Err(Error::shape("convolution input channels", self.in_channels, c));
        }
        if weight.shape() != self.weight_shape() {
            return Err(Error::shape(
                "convolution weight",
                format!("{:?}", self.weight_shape()),
                format!("{:?}", weight.shape()),
            ));
        }
        if bias.shape() != [self.out_channels] {
            return Err(Error::shape("convolution bias", format!("[{}]", self.out_channels), format!("{:?}", bias.shape())));
        }
        Ok((h, w))
    }
}

/// Index range `x` such that both `x` and `x + offset` lie in `0..len`.
#[inline]
fn valid_range(len: usize, offset: isize) -> std::ops::Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset.max(0)).max(0) as usize;
    lo.min(hi)..hi
}

/// Cross-correlation with taps spaced `dilation` apart and zero padding
/// `dilation` on every side, so the output keeps the input's height and width.
pub fn conv2d_dilated<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (h, w) = spec.check(input, weight, bias)?;
    let plane = h * w;
    let k2 = spec.kernel * spec.kernel;
    let mut out = Tensor::zeros(vec![spec.out_channels, h, w]);
    let wdata = weight.data();
    let out_data = out.data_mut();

    for o in 0..spec.out_channels {
        let out_plane = &mut out_data[o * plane..(o + 1) * plane];
        out_plane.fill(bias.data()[o]);
        for i in 0..spec.in_channels {
            let in_plane = input.channel(i);
            let kernel = &wdata[(o * spec.in_channels + i) * k2..][..k2];
            for (ky, kx, dy, dx) in spec.taps() {
                let wv = kernel[ky * spec.kernel + kx];
                if wv == T::zero() {
                    continue;
                }
                let xs = valid_range(w, dx);
                if xs.is_empty() {
                    continue;
                }
                for y in valid_range(h, dy) {
                    let src_row = (y as isize + dy) as usize * w;
                    let src = &in_plane[(src_row as isize + xs.start as isize + dx) as usize..][..xs.len()];
                    let dst = &mut out_plane[y * w + xs.start..][..xs.len()];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_dilated_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let (_, h, w) = input.chw()?;
    if grad_out.shape() != [spec.out_channels, h, w] {
        return Err(Error::shape(
            "convolution output gradient",
            format!("[{}, {h}, {w}]", spec.out_channels),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let plane = h * w;
    let k2 = spec.kernel * spec.kernel;
    let mut grad_w = Tensor::zeros(spec.weight_shape());
    let mut grad_b = Tensor::zeros(vec![spec.out_channels]);
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(vec![spec.in_channels, h, w]));

    for o in 0..spec.out_channels {
        let g_plane = grad_out.channel(o);
        grad_b.data_mut()[o] = g_plane.iter().copied().sum();
        for i in 0..spec.in_channels {
            let in_plane = input.channel(i);
            let base = (o * spec.in_channels + i) * k2;
            for (ky, kx, dy, dx) in spec.taps() {
                let tap = base + ky * spec.kernel + kx;
                let xs = valid_range(w, dx);
                if xs.is_empty() {
                    continue;
                }
                let wv = weight.data()[tap];
                let mut acc = T::zero();
                for y in valid_range(h, dy) {
                    let src_start = ((y as isize + dy) as usize * w) as isize + xs.start as isize + dx;
                    let src = &in_plane[src_start as usize..][..xs.len()];
                    let g = &g_plane[y * w + xs.start..][..xs.len()];
                    acc += g.iter().zip(src).map(|(&a, &b)| a * b).sum::<T>();
                    if let Some(gi) = grad_in.as_mut() {
                        let dst = &mut gi.data_mut()[i * plane + src_start as usize..][..xs.len()];
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d += wv * gv;
                        }
                    }
                }
                grad_w.data_mut()[tap] += acc;
            }
        }
    }
    Ok(ConvGrads {
        input: grad_in,
        weight: grad_w,
        bias: grad_b,
    })
}

pub fn relu_inplace<T: Scalar>(t: &mut Tensor<T>) {
    t.map_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes `grad` wherever the rectified `output` is not positive.
pub fn relu_backward_inplace<T: Scalar>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2. Odd edges behave as if padded with `-inf`.
/// Returns the pooled map and, for every output cell, the flat input index
/// of its maximum (first in scan order on ties).
pub fn maxpool2_with_indices<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    let mut idx = vec![0usize; c * oh * ow];
    let data = input.data();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = (ch * h + 2 * oy) * w + 2 * ox;
                let mut best = data[best_i];
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let i = (ch * h + y) * w + x;
                        if data[i] > best {
                            best = data[i];
                            best_i = i;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out.data_mut()[o] = best;
                idx[o] = best_i;
            }
        }
    }
    Ok((out, idx))
}

pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2_with_indices(input).map(|(t, _)| t)
}

/// Routes each pooled gradient back to the position of its maximum.
pub fn maxpool2_backward<T: Scalar>(input_shape: &[usize], indices: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape.to_vec());
    for (&i, &g) in indices.iter().zip(grad_out.data()) {
        grad.data_mut()[i] += g;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct evaluation of every output pixel from the definition.
    fn direct_conv(input: &Tensor<f64>, spec: &ConvSpec, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let (c, h, w) = input.chw().unwrap();
        let k = spec.kernel as isize;
        let d = spec.dilation as isize;
        let pad = spec.padding() as isize;
        let mut out = Tensor::zeros(vec![spec.out_channels, h, w]);
        for o in 0..spec.out_channels {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias.data()[o];
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y - pad + ky * d, x - pad + kx * d);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let wi = ((o * c + i) as isize * k + ky) * k + kx;
                                acc += weight.data()[wi as usize] * input.data()[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out.data_mut()[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(vec![1, 5, 5], &mut rng);
        let spec = ConvSpec::dilated3x3(1, 1, 1);
        let mut weight = Tensor::zeros(spec.weight_shape());
        weight.data_mut()[4] = 1.0;
        let out = conv2d_dilated(&input, &spec, &weight, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_dilation_two() {
        let input = Tensor::from_vec(vec![1, 5, 5], vec![1.0f64; 25]).unwrap();
        let spec = ConvSpec::dilated3x3(1, 1, 2);
        let weight = Tensor::from_vec(spec.weight_shape(), vec![1.0; 9]).unwrap();
        let out = conv2d_dilated(&input, &spec, &weight, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        assert_eq!(out.data()[0], 4.0);
        assert_eq!(out.data()[4 * 5 + 4], 4.0);
        // edge-centre: column taps at -2 clipped
        assert_eq!(out.data()[2], 6.0);
    }

    #[test]
    fn dilation_three_keeps_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (h, w) in [(1, 1), (4, 7), (9, 3)] {
            let input = random(vec![2, h, w], &mut rng);
            let spec = ConvSpec::dilated3x3(2, 3, 3);
            assert_eq!(spec.padding(), 3);
            let weight = random(spec.weight_shape(), &mut rng);
            let out = conv2d_dilated(&input, &spec, &weight, &Tensor::zeros(vec![3])).unwrap();
            assert_eq!(out.shape(), &[3, h, w]);
        }
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=3 {
            let input = random(vec![3, 7, 7], &mut rng);
            let spec = ConvSpec::dilated3x3(3, 4, d);
            let weight = random(spec.weight_shape(), &mut rng);
            let bias = random(vec![4], &mut rng);
            let fast = conv2d_dilated(&input, &spec, &weight, &bias).unwrap();
            let slow = direct_conv(&input, &spec, &weight, &bias);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "dilation {d}: {a} vs {b}");
            }
        }
        let spec = ConvSpec::pointwise(3, 2);
        let input = random(vec![3, 4, 5], &mut rng);
        let weight = random(spec.weight_shape(), &mut rng);
        let bias = random(vec![2], &mut rng);
        let fast = conv2d_dilated(&input, &spec, &weight, &bias).unwrap();
        let slow = direct_conv(&input, &spec, &weight, &bias);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_dimensions() {
        let input = Tensor::<f64>::zeros(vec![2, 4, 4]);
        let spec = ConvSpec::dilated3x3(3, 1, 1);
        let err = conv2d_dilated(&input, &spec, &Tensor::zeros(spec.weight_shape()), &Tensor::zeros(vec![1])).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let spec = ConvSpec::dilated3x3(2, 1, 1);
        let err = conv2d_dilated(&input, &spec, &Tensor::zeros(vec![1, 2, 1, 1]), &Tensor::zeros(vec![1])).unwrap_err();
        assert!(err.to_string().contains("weight"), "{err}");
    }

    /// Loss `sum(out * probe)`, so dL/dout = probe.
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ConvSpec::dilated3x3(2, 3, 2);
        let input = random(vec![2, 6, 5], &mut rng);
        let weight = random(spec.weight_shape(), &mut rng);
        let bias = random(vec![3], &mut rng);
        let probe = random(vec![3, 6, 5], &mut rng);
        let loss = |inp: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let out = conv2d_dilated(inp, &spec, wt, b).unwrap();
            out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let grads = conv2d_dilated_backward(&input, &spec, &weight, &probe, true).unwrap();
        let eps = 1e-6;
        let check = |analytic: &[f64], param: &Tensor<f64>, which: usize| {
            for j in 0..param.len() {
                let mut plus = param.clone();
                plus.data_mut()[j] += eps;
                let mut minus = param.clone();
                minus.data_mut()[j] -= eps;
                let (lp, lm) = match which {
                    0 => (loss(&plus, &weight, &bias), loss(&minus, &weight, &bias)),
                    1 => (loss(&input, &plus, &bias), loss(&input, &minus, &bias)),
                    _ => (loss(&input, &weight, &plus), loss(&input, &weight, &minus)),
                };
                let numeric = (lp - lm) / (2.0 * eps);
                assert!((numeric - analytic[j]).abs() < 1e-6, "param {which} index {j}");
            }
        };
        check(grads.input.as_ref().unwrap().data(), &input, 0);
        check(grads.weight.data(), &weight, 1);
        check(grads.bias.data(), &bias, 2);
    }

    #[test]
    fn maxpool_examples() {
        let constant = Tensor::from_vec(vec![2, 4, 6], vec![0.5f64; 48]).unwrap();
        let p = maxpool2(&constant).unwrap();
        assert_eq!(p.shape(), &[2, 2, 3]);
        assert!(p.data().iter().all(|&v| v == 0.5));

        let mut single = Tensor::<f64>::zeros(vec![1, 4, 4]);
        single.data_mut()[2 * 4 + 3] = 7.0;
        let (p, idx) = maxpool2_with_indices(&single).unwrap();
        assert_eq!(p.data(), &[0.0, 0.0, 0.0, 7.0]);
        assert_eq!(idx[3], 11);
        let twice = maxpool2(&maxpool2(&Tensor::<f32>::zeros(vec![3, 32, 16])).unwrap()).unwrap();
        assert_eq!(twice.shape(), &[3, 8, 4]);

        let odd = Tensor::from_vec(vec![1, 3, 3], vec![-1.0f64, -2.0, -3.0, -4.0, -5.0, -6.0, -7.0, -8.0, -9.0]).unwrap();
        let p = maxpool2(&odd).unwrap();
        assert_eq!(p.data(), &[-1.0, -3.0, -7.0, -9.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let t = Tensor::from_vec(vec![1, 2, 2], vec![1.0f64, 3.0, 2.0, 0.0]).unwrap();
        let (_, idx) = maxpool2_with_indices(&t).unwrap();
        let g = maxpool2_backward(t.shape(), &idx, &Tensor::from_vec(vec![1, 1, 1], vec![5.0]).unwrap());
        assert_eq!(g.data(), &[0.0, 5.0, 0.0, 0.0]);
    }
}
