//! Structure enhancement: per-band bi-directional channel attention between
//! band features and structure features, then gated fusion across the three
//! directional bands.

use rand::Rng;
use sdtl_tensor::{Element, Tensor};

use crate::error::{Result, SdtlError};
use crate::nn::{from_rows, join, to_rows, Conv2d, ConvBlock, LayerNorm, Linear, Mlp, Module};

pub const BAND_NAMES: [&str; 3] = ["hl", "lh", "hh"];

/// Gate squeeze ratio.
pub const SQUEEZE: usize = 4;

/// `softmax(Kᵀ·Q / √c)` over the rows of a `c×c` map.
pub fn channel_attention<T: Element>(k: &Tensor<T>, q: &Tensor<T>) -> Result<Tensor<T>> {
    let c = k.shape()[1];
    let logits = k.transpose_last()?.matmul(q)?.scale(1.0 / (c as f64).sqrt());
    Ok(logits.softmax(1)?)
}

/// One stream of the bi-directional exchange.
#[derive(Debug, Clone)]
pub struct Stream<T: Element> {
    pub input: Linear<T>,
    pub key: Linear<T>,
    pub query: Linear<T>,
    pub out: Linear<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Element> Stream<T> {
    fn new<R: Rng + ?Sized>(cin: usize, width: usize, rng: &mut R) -> Self {
        Stream {
            input: Linear::new(cin, width, rng),
            key: Linear::new(width, width, rng),
            query: Linear::new(width, width, rng),
            out: Linear::new(width, width, rng),
            norm: LayerNorm::new(width),
        }
    }
}

impl<T: Element> Module<T> for Stream<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.input.visit_params(&join(prefix, "input"), f);
        self.key.visit_params(&join(prefix, "key"), f);
        self.query.visit_params(&join(prefix, "query"), f);
        self.out.visit_params(&join(prefix, "out"), f);
        self.norm.visit_params(&join(prefix, "norm"), f);
    }
}

/// Enhancement stage for a single band.
#[derive(Debug, Clone)]
pub struct EnhanceBand<T: Element> {
    pub feature: Stream<T>,
    pub structure: Stream<T>,
    pub merge: ConvBlock<T>,
}

/// Result of [`EnhanceBand::forward_traced`].
pub struct EnhanceTrace<T: Element> {
    pub output: Tensor<T>,
    /// Feature-stream and structure-stream attention maps, each `Ĉ×Ĉ`.
    pub attention: [Tensor<T>; 2],
}

impl<T: Element> EnhanceBand<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, struct_channels: usize, rng: &mut R) -> Self {
        let width = channels;
        EnhanceBand {
            feature: Stream::new(channels, width, rng),
            structure: Stream::new(struct_channels, width, rng),
            merge: ConvBlock::new(2 * width, channels, rng),
        }
    }

    pub fn forward(&self, band: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(band, s)?.output)
    }

    pub fn forward_traced(&self, band: &Tensor<T>, s: &Tensor<T>) -> Result<EnhanceTrace<T>> {
        let (bs, ss) = (band.shape(), s.shape());
        if bs.len() != 3 || ss.len() != 3 || bs[1..] != ss[1..] {
            return Err(SdtlError::Shape(format!(
                "band {bs:?} and structure {ss:?} are not spatially aligned"
            )));
        }
        let (h, w) = (bs[1], bs[2]);
        let xi = self.feature.input.forward(&to_rows(band)?)?;
        let xs = self.structure.input.forward(&to_rows(s)?)?;

        let ai = channel_attention(&self.feature.key.forward(&xi)?, &self.feature.query.forward(&xi)?)?;
        let as_ = channel_attention(&self.structure.key.forward(&xs)?, &self.structure.query.forward(&xs)?)?;

        // Each map re-weights the channels of the other stream: (A·Xᵀ)ᵀ = X·Aᵀ.
        let ei = xs.matmul(&ai.transpose_last()?)?;
        let es = xi.matmul(&as_.transpose_last()?)?;
        let yi = xi.add(&self.feature.norm.forward(&self.feature.out.forward(&ei)?)?)?;
        let ys = xs.add(&self.structure.norm.forward(&self.structure.out.forward(&es)?)?)?;

        let merged = from_rows(&Tensor::concat(&[yi, ys], 1)?, h, w)?;
        Ok(EnhanceTrace {
            output: self.merge.forward(&merged)?,
            attention: [ai, as_],
        })
    }
}

impl<T: Element> Module<T> for EnhanceBand<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.feature.visit_params(&join(prefix, "feature"), f);
        self.structure.visit_params(&join(prefix, "structure"), f);
        self.merge.visit_params(&join(prefix, "merge"), f);
    }
}

/// `σ(MLP(AvgPool(x))) · x`, one gate per channel.
pub fn channel_gate<T: Element>(x: &Tensor<T>, mlp: &Mlp<T>) -> Result<Tensor<T>> {
    let c = x.shape()[0];
    let pooled = x.global_avg_pool()?.reshape(&[1, c])?;
    let gates = mlp.forward(&pooled)?.sigmoid().reshape(&[c, 1, 1])?;
    Ok(x.mul(&gates)?)
}

/// Fusion parameters for one target band.
#[derive(Debug, Clone)]
pub struct FuseBand<T: Element> {
    pub conv: Conv2d<T>,
    pub gate: Mlp<T>,
    pub project: Conv2d<T>,
}

impl<T: Element> Module<T> for FuseBand<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.gate.visit_params(&join(prefix, "gate"), f);
        self.project.visit_params(&join(prefix, "project"), f);
    }
}

#[derive(Debug, Clone)]
pub struct Fusion<T: Element> {
    pub bands: [FuseBand<T>; 3],
    pub summary: ConvBlock<T>,
}

impl<T: Element> Fusion<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let hidden = (2 * channels / SQUEEZE).max(1);
        let mut band = || FuseBand {
            conv: Conv2d::new(channels, channels, 3, 1, rng),
            gate: Mlp::new(2 * channels, hidden, 2 * channels, rng),
            project: Conv2d::new(2 * channels, channels, 1, 1, rng),
        };
        let bands = [band(), band(), band()];
        Fusion {
            bands,
            summary: ConvBlock::new(3 * channels, channels, rng),
        }
    }

    /// Every band is updated from the same pre-fusion inputs.
    pub fn forward(&self, bands: &[Tensor<T>; 3]) -> Result<[Tensor<T>; 3]> {
        let shape = bands[0].shape();
        if bands.iter().any(|b| b.shape() != shape) {
            return Err(SdtlError::Shape(format!(
                "fusion bands disagree: {:?}",
                bands.iter().map(|b| b.shape().to_vec()).collect::<Vec<_>>()
            )));
        }
        let mut fused = Vec::with_capacity(3);
        for (d, p) in self.bands.iter().enumerate() {
            let others = Tensor::concat(&[bands[(d + 1) % 3].clone(), bands[(d + 2) % 3].clone()], 0)?;
            let gated = p.project.forward(&channel_gate(&others, &p.gate)?)?;
            fused.push(p.conv.forward(&bands[d])?.add(&gated)?);
        }
        let correction = self.summary.forward(&Tensor::concat(&fused, 0)?)?;
        let mut out = fused.into_iter().map(|b| b.add(&correction));
        Ok([out.next().unwrap()?, out.next().unwrap()?, out.next().unwrap()?])
    }
}

impl<T: Element> Module<T> for Fusion<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (p, name) in self.bands.iter().zip(BAND_NAMES) {
            p.visit_params(&join(prefix, name), f);
        }
        self.summary.visit_params(&join(prefix, "summary"), f);
    }
}

/// Either stage may be absent; with both absent the module is the identity.
#[derive(Debug, Clone)]
pub struct Sem<T: Element> {
    pub enhance: Option<[EnhanceBand<T>; 3]>,
    pub fusion: Option<Fusion<T>>,
}

impl<T: Element> Sem<T> {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        struct_channels: usize,
        enhance: bool,
        fusion: bool,
        rng: &mut R,
    ) -> Self {
        let enhance = enhance.then(|| {
            [
                EnhanceBand::new(channels, struct_channels, rng),
                EnhanceBand::new(channels, struct_channels, rng),
                EnhanceBand::new(channels, struct_channels, rng),
            ]
        });
        let fusion = fusion.then(|| Fusion::new(channels, rng));
        Sem { enhance, fusion }
    }

    pub fn forward(&self, bands: &[Tensor<T>; 3], s: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
        let enhanced = match &self.enhance {
            Some(e) => [e[0].forward(&bands[0], s)?, e[1].forward(&bands[1], s)?, e[2].forward(&bands[2], s)?],
            None => bands.clone(),
        };
        match &self.fusion {
            Some(f) => f.forward(&enhanced),
            None => Ok(enhanced),
        }
    }
}

impl<T: Element> Module<T> for Sem<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        if let Some(e) = &self.enhance {
            for (p, name) in e.iter().zip(BAND_NAMES) {
                p.visit_params(&join(&join(prefix, "enhance"), name), f);
            }
        }
        if let Some(fu) = &self.fusion {
            fu.visit_params(&join(prefix, "fusion"), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enhance_preserves_shape_and_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = EnhanceBand::<f64>::new(8, 8, &mut rng);
        let band = Tensor::randn(&[8, 16, 16], &mut rng);
        let s = Tensor::randn(&[8, 16, 16], &mut rng);
        let tr = e.forward_traced(&band, &s).unwrap();
        assert_eq!(tr.output.shape(), &[8, 16, 16]);
        for a in &tr.attention {
            for row in a.to_vec().chunks(8) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        assert!(e.forward(&band, &Tensor::zeros(&[8, 16, 8])).is_err());
    }

    #[test]
    fn zeroed_gate_halves_input() {
        let x = Tensor::<f64>::from_vec((0..18).map(|v| v as f64).collect(), &[2, 3, 3]).unwrap();
        let mlp = Mlp { fc1: Linear::zeroed(2, 1), fc2: Linear::zeroed(1, 2) };
        let y = channel_gate(&x, &mlp).unwrap();
        for (a, b) in x.to_vec().iter().zip(y.to_vec()) {
            assert!((0.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_fusion_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = 3;
        let fu = Fusion::<f64>::new(c, &mut rng);
        fu.visit_params("", &mut |_, t| t.set_data(vec![0.0; t.numel()]).unwrap());
        for b in &fu.bands {
            let mut w = vec![0.0; c * c * 9];
            for i in 0..c {
                w[(i * c + i) * 9 + 4] = 1.0;
            }
            b.conv.weight.set_data(w).unwrap();
        }
        let bands = [
            Tensor::randn(&[c, 4, 4], &mut rng),
            Tensor::randn(&[c, 4, 4], &mut rng),
            Tensor::randn(&[c, 4, 4], &mut rng),
        ];
        let out = fu.forward(&bands).unwrap();
        for (a, b) in bands.iter().zip(&out) {
            assert_eq!(a.to_vec(), b.to_vec());
        }
    }

    #[test]
    fn swapping_bands_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sem = Sem::<f64>::new(4, 4, true, true, &mut rng);
        let s = Tensor::randn(&[4, 6, 6], &mut rng);
        let (a, b, c) = (
            Tensor::randn(&[4, 6, 6], &mut rng),
            Tensor::randn(&[4, 6, 6], &mut rng),
            Tensor::randn(&[4, 6, 6], &mut rng),
        );
        let o1 = sem.forward(&[a.clone(), b.clone(), c.clone()], &s).unwrap();
        let o2 = sem.forward(&[b, a, c], &s).unwrap();
        let diff: f64 = o1[0].to_vec().iter().zip(o2[1].to_vec()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn without_fusion_matches_enhance_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let full = Sem::<f64>::new(4, 4, true, true, &mut rng);
        let enhance_only = Sem { enhance: full.enhance.clone(), fusion: None };
        let s = Tensor::randn(&[4, 4, 4], &mut rng);
        let bands = [
            Tensor::randn(&[4, 4, 4], &mut rng),
            Tensor::randn(&[4, 4, 4], &mut rng),
            Tensor::randn(&[4, 4, 4], &mut rng),
        ];
        let out = enhance_only.forward(&bands, &s).unwrap();
        for (i, e) in full.enhance.as_ref().unwrap().iter().enumerate() {
            assert_eq!(out[i].to_vec(), e.forward(&bands[i], &s).unwrap().to_vec());
        }
        let names: Vec<_> = enhance_only.named_params("sem1").into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().all(|n| n.starts_with("sem1.enhance.")));
    }
}
