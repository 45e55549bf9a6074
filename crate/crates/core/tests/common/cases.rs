//! The gradient-check suite: every layer type and both architectures.

use super::*;
use pseudoct::networks::{DenoiserConfig, DenoiserNet, NoiseNet, NoiseNetConfig};

fn image(shape: [usize; 4], seed: u64) -> Tensor {
    random_tensor(shape, seed).map(|v| 0.5 + 0.2 * v)
}

pub fn conv_same_padding() -> Vec<GradReport> {
    let conv = Conv2d::he_normal(3, 2, 3, 1, 1, &mut rng(1));
    vec![check_conv(
        "conv3x3",
        &conv,
        &random_tensor([2, 2, 6, 6], 2),
        3,
    )]
}

pub fn conv_strided() -> Vec<GradReport> {
    let conv = Conv2d::he_normal(4, 2, 3, 2, 1, &mut rng(4));
    vec![check_conv(
        "conv3x3/s2",
        &conv,
        &random_tensor([1, 2, 8, 8], 5),
        6,
    )]
}

pub fn conv_pointwise() -> Vec<GradReport> {
    let conv = Conv2d::he_normal(2, 3, 1, 1, 0, &mut rng(7));
    vec![check_conv(
        "conv1x1",
        &conv,
        &random_tensor([1, 3, 6, 6], 8),
        9,
    )]
}

pub fn relu() -> Vec<GradReport> {
    vec![check_relu(&random_tensor([1, 2, 10, 10], 10), 11)]
}

pub fn upsample() -> Vec<GradReport> {
    vec![check_upsample(&random_tensor([1, 2, 8, 8], 12), 2, 13)]
}

pub fn concat() -> Vec<GradReport> {
    let a = random_tensor([1, 2, 6, 6], 14);
    let b = random_tensor([1, 1, 6, 6], 15);
    vec![check_concat(&a, &b, 16)]
}

pub fn losses() -> Vec<GradReport> {
    let pred = random_tensor([1, 1, 12, 12], 17);
    let target = random_tensor([1, 1, 12, 12], 18);
    vec![
        check_loss("l1", false, &pred, &target, 19),
        check_loss("mse", true, &pred, &target, 20),
    ]
}

pub fn denoiser() -> Vec<GradReport> {
    let mut net = DenoiserNet::new(
        DenoiserConfig {
            depth: 3,
            channels: 4,
        },
        21,
    )
    .unwrap();
    rerandomize(&mut net, 121);
    vec![check_network(
        "denoiser",
        &net,
        &image([1, 1, 16, 16], 22),
        23,
    )]
}

pub fn noise_net() -> Vec<GradReport> {
    let mut net = NoiseNet::new(
        NoiseNetConfig {
            levels: 2,
            channels: 4,
        },
        24,
    )
    .unwrap();
    rerandomize(&mut net, 124);
    vec![check_network(
        "noisenet",
        &net,
        &image([1, 1, 16, 16], 25),
        26,
    )]
}

pub fn all() -> Vec<GradReport> {
    [
        conv_same_padding,
        conv_strided,
        conv_pointwise,
        relu,
        upsample,
        concat,
        losses,
        denoiser,
        noise_net,
    ]
    .iter()
    .flat_map(|f| f())
    .collect()
}
