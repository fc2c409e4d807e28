//! Forward pass of a seeded network against stored output. Regenerate the
//! file with `DYNREGION_BLESS=1 cargo test --test forward_golden` after an
//! intended change to initialization or layer arithmetic.

use std::path::Path;

use dynregion::idcnn::{Conv, Network, NetworkConfig, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: &str = "tests/data/forward_16x16.txt";

fn setup() -> (Network<f64>, Tensor<f64>) {
    let mut net = Network::<f64>::init(NetworkConfig::tiny(), 21);
    net.head.bias.data_mut()[0] = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let input = Tensor::from_vec(vec![3, 16, 16], (0..768).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    (net, input)
}

fn output() -> Vec<f64> {
    let (net, input) = setup();
    let out = net.forward(&input).unwrap();
    assert_eq!(out.shape(), [1, 4, 4]);
    out.into_data()
}

/// Plain nested-loop layers over `Vec<Vec<Vec<f64>>>` feature maps.
type Maps = Vec<Vec<Vec<f64>>>;

fn naive_conv(x: &Maps, conv: &Conv<f64>) -> Maps {
    let (k, d) = (conv.spec.kernel as i64, conv.spec.dilation as i64);
    let (h, w) = (x[0].len() as i64, x[0][0].len() as i64);
    let wt = conv.weight.data();
    let cin = x.len();
    (0..conv.spec.out_channels)
        .map(|o| {
            (0..h)
                .map(|r| {
                    (0..w)
                        .map(|c| {
                            let mut acc = conv.bias.data()[o];
                            for (i, plane) in x.iter().enumerate() {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let (y, xx) = (r + (ky - k / 2) * d, c + (kx - k / 2) * d);
                                        if (0..h).contains(&y) && (0..w).contains(&xx) {
                                            let wi = ((o * cin + i) as i64 * k + ky) * k + kx;
                                            acc += wt[wi as usize] * plane[y as usize][xx as usize];
                                        }
                                    }
                                }
                            }
                            acc
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn relu(x: Maps) -> Maps {
    x.into_iter()
        .map(|p| p.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect())
        .collect()
}

fn pool(x: &Maps) -> Maps {
    x.iter()
        .map(|p| {
            (0..p.len() / 2)
                .map(|r| {
                    (0..p[0].len() / 2)
                        .map(|c| p[2 * r][2 * c].max(p[2 * r][2 * c + 1]).max(p[2 * r + 1][2 * c]).max(p[2 * r + 1][2 * c + 1]))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn naive_forward(net: &Network<f64>, input: &Tensor<f64>) -> Vec<f64> {
    let mut x: Maps = (0..3)
        .map(|c| input.channel(c).chunks(16).map(|r| r.to_vec()).collect())
        .collect();
    for (i, layer) in net.inception.iter().enumerate() {
        x = relu(layer.branches.iter().flat_map(|b| naive_conv(&x, b)).collect());
        if i < 2 {
            x = pool(&x);
        }
    }
    let x = relu(naive_conv(&relu(naive_conv(&x, &net.tail)), &net.head));
    x[0].concat()
}

#[test]
fn agrees_with_nested_loop_layers() {
    let (net, input) = setup();
    let want = naive_forward(&net, &input);
    for (i, (w, g)) in want.iter().zip(output()).enumerate() {
        assert!((w - g).abs() <= 1e-12, "cell {i}: loops {w}, network {g}");
    }
}

#[test]
fn matches_stored_output() {
    let got = output();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(GOLDEN);
    if std::env::var_os("DYNREGION_BLESS").is_some() {
        let text: String = got.iter().map(|v| format!("{v:.17e}\n")).collect();
        std::fs::write(&path, text).unwrap();
    }
    let want: Vec<f64> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(want.len(), got.len());
    assert!(want.iter().any(|&v| v > 0.0), "golden output is all zero");
    for (i, (w, g)) in want.iter().zip(&got).enumerate() {
        assert!((w - g).abs() <= 1e-12 * w.abs().max(1.0), "cell {i}: stored {w}, got {g}");
    }
}
