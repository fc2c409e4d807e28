use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Sample;
use super::loss::mse_with_grad;
use super::network::{Network, NetworkConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default plain gradient-descent step size.
pub const DEFAULT_LEARNING_RATE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub network: Network<T>,
    pub step: u64,
    pub learning_rate: T,
    pub rng_seed: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: NetworkConfig, learning_rate: T, rng_seed: u64) -> Result<Self> {
        config.validate()?;
        if !(learning_rate >= T::zero() && learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be finite and nonnegative, got {learning_rate}")));
        }
        Ok(Self {
            network: Network::init(config, rng_seed),
            step: 0,
            learning_rate,
            rng_seed,
        })
    }
}

impl<T: Scalar> Network<T> {
    /// Distant-region MSE of one sample and the gradient of every parameter.
    pub fn loss_and_gradients(&self, sample: &Sample<T>) -> Result<(T, Vec<Tensor<T>>)> {
        let (pred, trace) = self.forward_trace(&sample.input)?;
        if pred.shape() != sample.target.shape() {
            return Err(Error::shape(
                "prediction vs target",
                format!("{:?}", sample.target.shape()),
                format!("{:?}", pred.shape()),
            ));
        }
        let (loss, grad) = mse_with_grad(pred.data(), sample.target.data(), &sample.mask)?;
        let grad = Tensor::from_vec(pred.shape().to_vec(), grad)?;
        Ok((loss, self.backward(&trace, &grad)?))
    }
}

/// One gradient-descent step on the mean loss of `batch`. Per-sample
/// gradients are computed in parallel and summed in batch order, so results
/// do not depend on the thread count.
pub fn backward_and_step<T: Scalar>(mut state: TrainState<T>, batch: &[Sample<T>]) -> Result<(TrainState<T>, T)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty training batch".into()));
    }
    let per_sample: Vec<(T, Vec<Tensor<T>>)> = batch
        .par_iter()
        .map(|s| state.network.loss_and_gradients(s))
        .collect::<Result<_>>()?;

    let inv = T::one() / T::of_usize(batch.len());
    let mut iter = per_sample.into_iter();
    let (mut loss, mut grads) = iter.next().expect("batch is nonempty");
    for (l, g) in iter {
        loss += l;
        for (acc, t) in grads.iter_mut().zip(g) {
            for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += *v;
            }
        }
    }
    loss *= inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            layer: "loss".into(),
            step: state.step,
        });
    }
    let names = state.network.parameter_names();
    for (g, name) in grads.iter().zip(&names) {
        if !g.is_finite() {
            return Err(Error::NonFinite {
                layer: name.clone(),
                step: state.step,
            });
        }
    }
    let lr = state.learning_rate * inv;
    for (param, g) in state.network.parameters_mut().into_iter().zip(&grads) {
        for (p, v) in param.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * *v;
        }
    }
    state.step += 1;
    Ok((state, loss))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: u64,
    /// Samples per step; 0 or anything at least the data set size means full batch.
    pub batch_size: usize,
}

/// Runs `options.steps` steps. Minibatches are drawn by a seeded shuffle per
/// step. `on_step` receives the step index and the batch loss before the
/// update; returning `false` stops early.
pub fn train<T: Scalar>(
    mut state: TrainState<T>,
    samples: &[Sample<T>],
    options: TrainOptions,
    mut on_step: impl FnMut(u64, T) -> bool,
) -> Result<TrainState<T>> {
    if samples.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    let full = options.batch_size == 0 || options.batch_size >= samples.len();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch: Vec<Sample<T>> = Vec::new();
    for _ in 0..options.steps {
        let step = state.step;
        let (next, loss) = if full {
            backward_and_step(state, samples)?
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
            batch.clear();
            batch.extend(order[..options.batch_size].iter().map(|&i| samples[i].clone()));
            backward_and_step(state, &batch)?
        };
        state = next;
        if !on_step(step, loss) {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sample(seed: u64, h: usize, w: usize) -> Sample<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Tensor::from_vec(vec![3, h, w], (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let cells = h * w / 16;
        Sample {
            frame_id: None,
            input,
            target: Tensor::from_vec(vec![1, h / 4, w / 4], vec![0.5; cells]).unwrap(),
            mask: vec![true; cells],
        }
    }

    fn small() -> NetworkConfig {
        NetworkConfig {
            branch_widths: [2, 2, 2],
            tail_channels: 2,
            ..NetworkConfig::tiny()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let state = TrainState::new(small(), 0.0, 3).unwrap();
        let before = state.network.clone();
        let (after, _) = backward_and_step(state, &[sample(1, 8, 8)]).unwrap();
        assert_eq!(after.network, before);
        assert_eq!(after.step, 1);
    }

    #[test]
    fn constant_target_loss_decreases_monotonically() {
        let mut state = TrainState::new(small(), 0.05, 7).unwrap();
        state.network.head.bias.data_mut()[0] = 0.1;
        let batch = [sample(2, 8, 8)];
        let mut losses = Vec::new();
        for _ in 0..10 {
            let (next, loss) = backward_and_step(state, &batch).unwrap();
            losses.push(loss);
            state = next;
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = [sample(1, 8, 8), sample(2, 8, 8), sample(3, 8, 8)];
        let run = || {
            let state = TrainState::new(small(), 0.01, 11).unwrap();
            train(state, &data, TrainOptions { steps: 5, batch_size: 2 }, |_, _| true).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut state = TrainState::new(small(), 0.01, 1).unwrap();
        state.network.head.weight.data_mut()[0] = f64::NAN;
        let err = backward_and_step(state, &[sample(1, 8, 8)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_setup() {
        assert!(TrainState::<f64>::new(small(), -1.0, 0).is_err());
        let state = TrainState::new(small(), 0.1, 0).unwrap();
        assert!(backward_and_step(state.clone(), &[]).is_err());
        assert!(train(state, &[], TrainOptions { steps: 1, batch_size: 0 }, |_, _| true).is_err());
    }
}
