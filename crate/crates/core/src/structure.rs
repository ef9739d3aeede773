//! Edge-derived structure guidance at both wavelet resolutions.

use rand::Rng;
use sdtl_tensor::{Element, Tensor};

use crate::error::{Result, SdtlError};
use crate::nn::{join, Conv2d, Module};

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Sobel gradient magnitude of the luma plane, replicate padding.
/// Input `[3,H,W]` in `[0,1]`, output `[1,H,W]`. Not differentiable.
pub fn sobel_edge<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(SdtlError::Shape(format!("sobel_edge expects [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = x.data();
    let plane = h * w;
    let luma: Vec<f64> = (0..plane)
        .map(|i| (0..3).map(|c| LUMA[c] * d[c * plane + i].to_f64c()).sum())
        .collect();
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        let j = j.clamp(0, w as isize - 1) as usize;
        luma[i * w + j]
    };
    let mut out = Vec::with_capacity(plane);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let gx = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
            let gy = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1))
                - (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
            out.push(T::from_f64c((gx * gx + gy * gy).sqrt()));
        }
    }
    Ok(Tensor::from_vec(out, &[1, h, w])?)
}

/// Structure features aligned with the level-1 (`s1`) and level-2 (`s2`)
/// subband planes.
#[derive(Debug, Clone)]
pub struct StructureMaps<T: Element> {
    pub s1: Tensor<T>,
    pub s2: Tensor<T>,
}

/// 3×3 conv → GELU → stride-2 3×3 conv.
#[derive(Debug, Clone)]
pub struct DownBlock<T: Element> {
    pub conv: Conv2d<T>,
    pub down: Conv2d<T>,
}

impl<T: Element> DownBlock<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        DownBlock {
            conv: Conv2d::new(cin, cout, 3, 1, rng),
            down: Conv2d::new(cout, cout, 3, 2, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.down.forward(&self.conv.forward(x)?.gelu())
    }
}

impl<T: Element> Module<T> for DownBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.down.visit_params(&join(prefix, "down"), f);
    }
}

#[derive(Debug, Clone)]
pub struct StructurePrior<T: Element> {
    pub block1: DownBlock<T>,
    pub block2: DownBlock<T>,
}

impl<T: Element> StructurePrior<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        StructurePrior {
            block1: DownBlock::new(1, channels, rng),
            block2: DownBlock::new(channels, channels, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.block1.down.weight.shape()[0]
    }

    /// `[1,H,W]` edge map to half- and quarter-resolution features.
    pub fn forward(&self, edge: &Tensor<T>) -> Result<StructureMaps<T>> {
        let s = edge.shape();
        if s.len() != 3 || s[0] != 1 || s[1] % 4 != 0 || s[2] % 4 != 0 {
            return Err(SdtlError::Shape(format!(
                "structure features need a [1,H,W] edge map with H, W multiples of 4, got {s:?}"
            )));
        }
        let s1 = self.block1.forward(edge)?;
        let s2 = self.block2.forward(&s1)?;
        Ok(StructureMaps { s1, s2 })
    }
}

impl<T: Element> Module<T> for StructurePrior<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.block1.visit_params(&join(prefix, "block1"), f);
        self.block2.visit_params(&join(prefix, "block2"), f);
    }
}
