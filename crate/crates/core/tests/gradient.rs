//! Central-difference check of every parameter of a narrow network.

use dynregion::idcnn::{Network, NetworkConfig, Sample, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn narrow() -> NetworkConfig {
    NetworkConfig {
        branch_widths: [2, 3, 2],
        tail_channels: 3,
        ..NetworkConfig::tiny()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn every_parameter_matches_finite_differences() {
    const EPS: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut net = Network::<f64>::init(narrow(), 3);
    let sample = Sample {
        frame_id: None,
        input: random_tensor(&mut rng, vec![3, 8, 12], -1.0, 1.0),
        target: random_tensor(&mut rng, vec![1, 2, 3], 0.0, 1.0),
        mask: vec![true, true, false, true, true, true],
    };
    // random biases keep units off their kinks
    for (name, p) in net.parameter_names().into_iter().zip(net.parameters_mut()) {
        if name.ends_with(".bias") {
            for v in p.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
    }
    net.head.bias.data_mut()[0] = 0.5;

    let (_, grads) = net.loss_and_gradients(&sample).unwrap();
    let loss_at = |net: &Network<f64>| net.loss_and_gradients(&sample).unwrap().0;
    let names = net.parameter_names();
    let mut checked = 0;
    for (t, name) in names.iter().enumerate() {
        for i in 0..grads[t].len() {
            let orig = net.parameters()[t].1.data()[i];
            net.parameters_mut()[t].data_mut()[i] = orig + EPS;
            let up = loss_at(&net);
            net.parameters_mut()[t].data_mut()[i] = orig - EPS;
            let down = loss_at(&net);
            net.parameters_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let analytic = grads[t].data()[i];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(err < 1e-4, "{name}[{i}]: analytic {analytic:e}, numeric {numeric:e}");
            checked += 1;
        }
    }
    assert_eq!(checked, narrow().parameter_count());
}

#[test]
fn masked_cells_carry_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Network::<f64>::init(narrow(), 9);
    let input = random_tensor(&mut rng, vec![3, 8, 8], -1.0, 1.0);
    let sample = |target: Tensor<f64>| Sample {
        frame_id: None,
        input: input.clone(),
        target,
        mask: vec![true, false, false, false],
    };
    let a = net.loss_and_gradients(&sample(Tensor::from_vec(vec![1, 2, 2], vec![0.3, 0.0, 0.0, 0.0]).unwrap()));
    let b = net.loss_and_gradients(&sample(Tensor::from_vec(vec![1, 2, 2], vec![0.3, 5.0, -2.0, 9.0]).unwrap()));
    assert_eq!(a.unwrap(), b.unwrap());
}
