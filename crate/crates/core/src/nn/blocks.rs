//! Composite blocks used as the per-level units of the four networks.

use rand_chacha::ChaCha8Rng;

use super::layers::{BatchNorm, Branches, Conv2d, Layer, MaxPool3s1, Relu, Sequential};

pub const INCEPTION_KERNELS: [usize; 3] = [3, 5, 7];

/// Parallel `same` convolutions of the given kernel sizes, `n` filters each,
/// concatenated (`kernels.len() * n` channels).
pub fn inception(name: &str, cin: usize, n: usize, kernels: &[usize], rng: &mut ChaCha8Rng) -> Branches {
    Branches::new(
        kernels
            .iter()
            .map(|&k| Box::new(Conv2d::new(&format!("{name}.k{k}"), k, cin, n, rng)) as Box<dyn Layer>)
            .collect(),
    )
}

/// Inception, batch norm, ReLU.
pub fn inception_block(name: &str, cin: usize, n: usize, kernels: &[usize], rng: &mut ChaCha8Rng) -> Sequential {
    let width = n * kernels.len();
    Sequential::new(vec![
        Box::new(inception(name, cin, n, kernels, rng)),
        Box::new(BatchNorm::new(&format!("{name}.bn"), width)),
        Box::new(Relu::new()),
    ])
}

fn conv_bn_relu(name: &str, k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Vec<Box<dyn Layer>> {
    vec![
        Box::new(Conv2d::new(name, k, cin, cout, rng)),
        Box::new(BatchNorm::new(&format!("{name}.bn"), cout)),
        Box::new(Relu::new()),
    ]
}

/// GoogLeNet-style module with four branches of `n` channels each:
/// 1x1; 1x1 then 3x3; 1x1 then two 3x3; 3x3 stride-1 max pool then 1x1.
pub fn orig_inception(name: &str, cin: usize, n: usize, rng: &mut ChaCha8Rng) -> Branches {
    let b1 = conv_bn_relu(&format!("{name}.b1"), 1, cin, n, rng);

    let mut b2 = conv_bn_relu(&format!("{name}.b2a"), 1, cin, n, rng);
    b2.extend(conv_bn_relu(&format!("{name}.b2b"), 3, n, n, rng));

    let mut b3 = conv_bn_relu(&format!("{name}.b3a"), 1, cin, n, rng);
    b3.push(Box::new(Conv2d::new(&format!("{name}.b3b"), 3, n, n, rng)));
    b3.extend(conv_bn_relu(&format!("{name}.b3c"), 3, n, n, rng));

    let mut b4: Vec<Box<dyn Layer>> = vec![Box::new(MaxPool3s1::new())];
    b4.extend(conv_bn_relu(&format!("{name}.b4"), 1, cin, n, rng));

    Branches::new(vec![
        Box::new(Sequential::new(b1)),
        Box::new(Sequential::new(b2)),
        Box::new(Sequential::new(b3)),
        Box::new(Sequential::new(b4)),
    ])
}

/// Two conv-BN-ReLU units; the first uses kernel `k_first`.
pub fn double_conv(name: &str, cin: usize, n: usize, k_first: usize, rng: &mut ChaCha8Rng) -> Sequential {
    let mut layers = conv_bn_relu(&format!("{name}.c1"), k_first, cin, n, rng);
    layers.extend(conv_bn_relu(&format!("{name}.c2"), 3, n, n, rng));
    Sequential::new(layers)
}
