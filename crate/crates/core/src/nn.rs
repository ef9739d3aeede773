//! Parameterised layers and the naming scheme used for checkpoints.

use rand::Rng;
use sdtl_tensor::{Element, Tensor};

use crate::error::Result;

/// Anything that owns trainable tensors. Names are dotted paths, visited in
/// a fixed order so checkpoints and optimizer state line up across runs.
pub trait Module<T: Element> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));

    fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params(prefix, &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Weights ~ U(−1/√fan_in, 1/√fan_in).
pub fn uniform_weight<T: Element, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng).into_param()
}

pub fn zeros_param<T: Element>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).into_param()
}

/// `y = x·W + b` on `[N, in]` rows. `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: uniform_weight(&[input, output], input, rng),
            bias: zeros_param(&[output]),
        }
    }

    pub fn zeroed(input: usize, output: usize) -> Self {
        Linear {
            weight: zeros_param(&[input, output]),
            bias: zeros_param(&[output]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Element> Conv2d<T> {
    /// Same-padded `k×k` convolution (`pad = k/2`).
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        Conv2d {
            weight: uniform_weight(&[cout, cin, k, k], cin * k * k, rng),
            bias: zeros_param(&[cout]),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(&self.weight, Some(&self.bias), self.stride, self.pad)?)
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

/// 3×3 conv → GELU → 1×1 conv.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Element> {
    pub spatial: Conv2d<T>,
    pub pointwise: Conv2d<T>,
}

impl<T: Element> ConvBlock<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        ConvBlock {
            spatial: Conv2d::new(cin, cout, 3, 1, rng),
            pointwise: Conv2d::new(cout, cout, 1, 1, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.pointwise.forward(&self.spatial.forward(x)?.gelu())
    }
}

impl<T: Element> Module<T> for ConvBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.spatial.visit_params(&join(prefix, "spatial"), f);
        self.pointwise.visit_params(&join(prefix, "pointwise"), f);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm<T: Element> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Tensor::ones(&[dim]).into_param(),
            bias: zeros_param(&[dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.layer_norm(&self.gain, &self.bias)?)
    }
}

impl<T: Element> Module<T> for LayerNorm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "gain"), &self.gain);
        f(join(prefix, "bias"), &self.bias);
    }
}

/// Two linears with GELU in between.
#[derive(Debug, Clone)]
pub struct Mlp<T: Element> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Element> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::new(input, hidden, rng),
            fc2: Linear::new(hidden, output, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}

impl<T: Element> Module<T> for Mlp<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }
}

/// `[C,H,W]` feature map to `[H·W, C]` token rows.
pub fn to_rows<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    Ok(x.reshape(&[s[0], s[1] * s[2]])?.transpose_last()?)
}

/// `[H·W, C]` token rows back to a `[C,H,W]` feature map.
pub fn from_rows<T: Element>(rows: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let c = rows.shape()[1];
    Ok(rows.transpose_last()?.reshape(&[c, h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_dotted_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ConvBlock::<f32>::new(2, 3, &mut rng);
        let names: Vec<String> = block.named_params("m").into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            ["m.spatial.weight", "m.spatial.bias", "m.pointwise.weight", "m.pointwise.bias"]
        );
        assert_eq!(block.param_count(), 3 * 2 * 9 + 3 + 3 * 3 + 3);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::<f32>::new(16, 4, &mut rng);
        assert!(lin.weight.to_vec().iter().all(|w| w.abs() <= 0.25));
        assert!(lin.bias.to_vec().iter().all(|&b| b == 0.0));
        assert!(lin.weight.requires_grad());
    }

    #[test]
    fn rows_round_trip() {
        let x = Tensor::<f32>::from_vec((0..12).map(|v| v as f32).collect(), &[3, 2, 2]).unwrap();
        let rows = to_rows(&x).unwrap();
        assert_eq!(rows.shape(), &[4, 3]);
        assert_eq!(&rows.to_vec()[..3], &[0.0, 4.0, 8.0]);
        assert_eq!(from_rows(&rows, 2, 2).unwrap().to_vec(), x.to_vec());
    }
}
