use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    conv2d_dilated, conv2d_dilated_backward, maxpool2_backward, maxpool2_with_indices, relu_backward_inplace,
    relu_inplace, ConvSpec,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dilation rates of the three inception branches, in concatenation order.
pub const BRANCH_RATES: [usize; 3] = [1, 2, 3];
/// Dilation of the 3x3 convolution after the last inception layer.
pub const TAIL_DILATION: usize = 2;

/// Layer stack: three inception-dilated layers with a 2x2 max pool after the
/// first two, a dilated 3x3 convolution and a 1x1 convolution to one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub input_channels: usize,
    /// Per-branch output channels of each inception layer; a layer emits three times this.
    pub branch_widths: [usize; 3],
    pub tail_channels: usize,
    /// Rectify the 1x1 output so densities are nonnegative.
    pub final_rectifier: bool,
}

impl NetworkConfig {
    /// Desk-scale default.
    pub const fn tiny() -> Self {
        Self {
            input_channels: 3,
            branch_widths: [16, 32, 32],
            tail_channels: 32,
            final_rectifier: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.tail_channels == 0 || self.branch_widths.contains(&0) {
            return Err(Error::Argument(format!("network widths must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn inception_specs(&self, layer: usize) -> [ConvSpec; 3] {
        let input = if layer == 0 {
            self.input_channels
        } else {
            3 * self.branch_widths[layer - 1]
        };
        BRANCH_RATES.map(|d| ConvSpec::dilated3x3(input, self.branch_widths[layer], d))
    }

    pub fn tail_spec(&self) -> ConvSpec {
        ConvSpec::dilated3x3(3 * self.branch_widths[2], self.tail_channels, TAIL_DILATION)
    }

    pub fn head_spec(&self) -> ConvSpec {
        ConvSpec::pointwise(self.tail_channels, 1)
    }

    /// Every convolution in parameter declaration order, with its name.
    pub fn conv_specs(&self) -> Vec<(String, ConvSpec)> {
        let mut out = Vec::new();
        for layer in 0..3 {
            for (spec, rate) in self.inception_specs(layer).into_iter().zip(BRANCH_RATES) {
                out.push((format!("inception{}.rate{rate}", layer + 1), spec));
            }
        }
        out.push(("tail".into(), self.tail_spec()));
        out.push(("head".into(), self.head_spec()));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.conv_specs()
            .iter()
            .map(|(_, s)| s.fan_in() * s.out_channels + s.out_channels)
            .sum()
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub spec: ConvSpec,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        Self {
            spec,
            weight: Tensor::zeros(spec.weight_shape()),
            bias: Tensor::zeros(vec![spec.out_channels]),
        }
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, zero bias.
    pub fn init(spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (spec.fan_in() as f64).sqrt();
        let mut conv = Self::zeros(spec);
        for w in conv.weight.data_mut() {
            *w = T::of(rng.random_range(-bound..=bound));
        }
        conv
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_dilated(input, &self.spec, &self.weight, &self.bias)
    }
}

/// Three parallel 3x3 convolutions at dilation 1, 2 and 3 over the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionDilatedLayer<T> {
    pub branches: [Conv<T>; 3],
}

/// Branch outputs concatenated along channels in rate order, before rectification.
pub fn inception_forward<T: Scalar>(input: &Tensor<T>, layer: &InceptionDilatedLayer<T>) -> Result<Tensor<T>> {
    let outputs = layer
        .branches
        .iter()
        .map(|b| b.forward(input))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_channels(&outputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub inception: [InceptionDilatedLayer<T>; 3],
    pub tail: Conv<T>,
    pub head: Conv<T>,
}

/// Branch parameter gradients and, when requested, the gradient of the layer input.
type LayerGrads<T> = (Vec<Tensor<T>>, Option<Tensor<T>>);

/// Activations kept from a forward pass for the backward pass.
pub struct Trace<T> {
    /// Input of each inception layer.
    inputs: [Tensor<T>; 3],
    /// Rectified output of each inception layer.
    activations: [Tensor<T>; 3],
    pool_indices: [Vec<usize>; 2],
    tail_out: Tensor<T>,
    head_out: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    fn build(config: NetworkConfig, mut make: impl FnMut(ConvSpec) -> Conv<T>) -> Self {
        let inception = [0, 1, 2].map(|l| InceptionDilatedLayer {
            branches: config.inception_specs(l).map(&mut make),
        });
        let tail = make(config.tail_spec());
        let head = make(config.head_spec());
        Self {
            config,
            inception,
            tail,
            head,
        }
    }

    pub fn zeros(config: NetworkConfig) -> Self {
        Self::build(config, Conv::zeros)
    }

    /// Seeded initialization; identical seeds give identical parameters.
    pub fn init(config: NetworkConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |spec| Conv::init(spec, &mut rng))
    }

    fn convs(&self) -> Vec<&Conv<T>> {
        let mut v: Vec<&Conv<T>> = self.inception.iter().flat_map(|l| l.branches.iter()).collect();
        v.push(&self.tail);
        v.push(&self.head);
        v
    }

    /// `(name, tensor)` for every parameter in declaration order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        self.config
            .conv_specs()
            .into_iter()
            .zip(self.convs())
            .flat_map(|((name, _), c)| [(format!("{name}.weight"), &c.weight), (format!("{name}.bias"), &c.bias)])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::with_capacity(22);
        for l in &mut self.inception {
            for b in &mut l.branches {
                v.push(&mut b.weight);
                v.push(&mut b.bias);
            }
        }
        v.push(&mut self.tail.weight);
        v.push(&mut self.tail.bias);
        v.push(&mut self.head.weight);
        v.push(&mut self.head.bias);
        v
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameters().into_iter().map(|(n, _)| n).collect()
    }

    fn check_input(&self, frame: &Tensor<T>) -> Result<()> {
        let (c, h, w) = frame.chw()?;
        if c != self.config.input_channels {
            return Err(Error::shape("network input channels", self.config.input_channels, c));
        }
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Argument(format!(
                "network input {h}x{w} must have height and width divisible by 4; zero-pad the frame first"
            )));
        }
        Ok(())
    }

    /// Density prediction `[1, H/4, W/4]` for a `[C, H, W]` frame.
    pub fn forward(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_trace(frame).map(|(out, _)| out)
    }

    pub fn forward_trace(&self, frame: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(frame)?;
        let mut a1 = inception_forward(frame, &self.inception[0])?;
        relu_inplace(&mut a1);
        let (p1, i1) = maxpool2_with_indices(&a1)?;
        let mut a2 = inception_forward(&p1, &self.inception[1])?;
        relu_inplace(&mut a2);
        let (p2, i2) = maxpool2_with_indices(&a2)?;
        let mut a3 = inception_forward(&p2, &self.inception[2])?;
        relu_inplace(&mut a3);
        let mut tail_out = self.tail.forward(&a3)?;
        relu_inplace(&mut tail_out);
        let mut head_out = self.head.forward(&tail_out)?;
        if self.config.final_rectifier {
            relu_inplace(&mut head_out);
        }
        let trace = Trace {
            inputs: [frame.clone(), p1, p2],
            activations: [a1, a2, a3],
            pool_indices: [i1, i2],
            tail_out,
            head_out: head_out.clone(),
        };
        Ok((head_out, trace))
    }

    /// Parameter gradients in declaration order, given dL/d(prediction).
    pub fn backward(&self, trace: &Trace<T>, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut grad = grad_out.clone();
        if self.config.final_rectifier {
            relu_backward_inplace(&trace.head_out, &mut grad);
        }
        let head = conv2d_dilated_backward(&trace.tail_out, &self.head.spec, &self.head.weight, &grad, true)?;
        let mut grad = head.input.expect("input gradient requested");
        relu_backward_inplace(&trace.tail_out, &mut grad);
        let tail = conv2d_dilated_backward(&trace.activations[2], &self.tail.spec, &self.tail.weight, &grad, true)?;
        let mut grad = tail.input.expect("input gradient requested");

        let mut layer_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); 3];
        for l in (0..3).rev() {
            relu_backward_inplace(&trace.activations[l], &mut grad);
            let (branch_grads, grad_in) = self.inception_backward(l, &trace.inputs[l], &grad, l > 0)?;
            layer_grads[l] = branch_grads;
            if l > 0 {
                let grad_in = grad_in.expect("input gradient requested");
                grad = maxpool2_backward(trace.activations[l - 1].shape(), &trace.pool_indices[l - 1], &grad_in);
            }
        }

        let mut out: Vec<Tensor<T>> = layer_grads.into_iter().flatten().collect();
        out.extend([tail.weight, tail.bias, head.weight, head.bias]);
        Ok(out)
    }

    fn inception_backward(
        &self,
        layer: usize,
        input: &Tensor<T>,
        grad_concat: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<LayerGrads<T>> {
        let (_, h, w) = grad_concat.chw()?;
        let width = self.config.branch_widths[layer];
        let chunk = width * h * w;
        let mut params = Vec::with_capacity(6);
        let mut grad_in: Option<Tensor<T>> = None;
        for (b, conv) in self.inception[layer].branches.iter().enumerate() {
            let g = Tensor::from_vec(vec![width, h, w], grad_concat.data()[b * chunk..(b + 1) * chunk].to_vec())?;
            let grads = conv2d_dilated_backward(input, &conv.spec, &conv.weight, &g, need_input_grad)?;
            params.push(grads.weight);
            params.push(grads.bias);
            if let Some(gi) = grads.input {
                match grad_in.as_mut() {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += *v;
                        }
                    }
                    None => grad_in = Some(gi),
                }
            }
        }
        Ok((params, grad_in))
    }
}
