//! MNIST architectures.

use crate::nn::adam::AdamHyper;
use crate::nn::network::{BackwardSampling, LayerSpec};
use crate::nn::train::{Budget, TrainConfig};
use crate::sampling::Policy;
use crate::tensor::{Backend, PaddingMode};

pub const MNIST_INPUT: [usize; 3] = [28, 28, 1];
pub const BATCH_SIZE: usize = 50;
/// Smallest sample count of a sampled backward product.
pub const BACKWARD_MIN_K: usize = 10;

fn fc(inputs: usize, outputs: usize, forward: Option<Policy>, backward: Option<BackwardSampling>) -> LayerSpec {
    LayerSpec::Fc {
        inputs,
        outputs,
        forward,
        backward,
    }
}

/// 784-500-10 with ReLU.
pub fn mlp_layers(forward: Option<Policy>, backward: Option<BackwardSampling>) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Flatten,
        fc(784, 500, forward, backward),
        LayerSpec::Relu,
        fc(500, 10, forward, backward),
        LayerSpec::SoftmaxCrossEntropy,
    ]
}

/// Two 5×5 same-padded conv + 2×2 max-pool stages (32 and 64 channels),
/// fc 3136→1024 with ReLU and dropout 0.5, fc 1024→10. The first
/// convolution has a single input channel and is always exact.
/// Gradient-only backward sampling applies to the fc layers only.
pub fn cnn_layers(forward: Option<Policy>, backward: Option<BackwardSampling>) -> Vec<LayerSpec> {
    let conv_backward = match backward {
        Some(BackwardSampling::Crs(p)) => Some(p),
        _ => None,
    };
    let conv2 = LayerSpec::Conv {
        kh: 5,
        kw: 5,
        ic: 32,
        oc: 64,
        pad: PaddingMode::Same,
        forward,
        backward: conv_backward,
    };
    vec![
        LayerSpec::conv(5, 5, 1, 32, PaddingMode::Same),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        conv2,
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        fc(7 * 7 * 64, 1024, forward, backward),
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        fc(1024, 10, forward, backward),
        LayerSpec::SoftmaxCrossEntropy,
    ]
}

pub fn mnist_config(layers: Vec<LayerSpec>, budget: Budget, seed: u64) -> TrainConfig {
    TrainConfig {
        layers,
        input: MNIST_INPUT,
        adam: AdamHyper::default(),
        batch_size: BATCH_SIZE,
        budget,
        seed,
        eval_every: None,
        eval_batch: 1000,
        backend: Backend::Fast,
    }
}
