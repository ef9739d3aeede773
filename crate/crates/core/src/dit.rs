//! Diffusion-transformer noise predictor: patch tokens, additive timestep
//! conditioning, SDT blocks (ViT block followed by a structure-guided
//! attention block) wired encoder → skip → decoder, and a zero-initialised
//! output head.

use rand::Rng;
use sdtl_tensor::{Element, Tensor};

use crate::error::{Result, SdtlError};
use crate::nn::{join, LayerNorm, Linear, Mlp, Module};

#[derive(Debug, Clone, PartialEq)]
pub struct DitConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    /// Channels of the noisy state plus the condition.
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channels of the structure map fed to the SAB.
    pub struct_channels: usize,
    /// Token grid the positional embedding is learned on.
    pub grid: (usize, usize),
    /// Number of diffusion steps; valid timesteps are `0..steps`.
    pub steps: usize,
    pub sab: bool,
}

impl Default for DitConfig {
    fn default() -> Self {
        DitConfig {
            depth: 6,
            embed_dim: 384,
            heads: 6,
            patch: 4,
            encoder_blocks: 4,
            decoder_blocks: 2,
            in_channels: 6,
            out_channels: 3,
            struct_channels: 32,
            grid: (16, 16),
            steps: 200,
            sab: true,
        }
    }
}

impl DitConfig {
    /// Decoder count for a given depth: a third of the stack, at least one.
    pub fn split_depth(depth: usize) -> (usize, usize) {
        let dec = (depth / 3).max(1);
        (depth.saturating_sub(dec), dec)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(SdtlError::Config(m));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return err(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if self.embed_dim % 2 != 0 {
            return err(format!("embed_dim {} must be even for the sinusoidal embedding", self.embed_dim));
        }
        if self.encoder_blocks + self.decoder_blocks != self.depth {
            return err(format!(
                "encoder_blocks {} + decoder_blocks {} != depth {}",
                self.encoder_blocks, self.decoder_blocks, self.depth
            ));
        }
        if self.encoder_blocks == 0 || self.decoder_blocks > self.encoder_blocks {
            return err(format!(
                "need 1 <= decoder_blocks <= encoder_blocks for skip pairing, got {}/{}",
                self.encoder_blocks, self.decoder_blocks
            ));
        }
        if self.patch == 0 || self.grid.0 == 0 || self.grid.1 == 0 || self.steps == 0 {
            return err("patch, grid and steps must be positive".into());
        }
        Ok(())
    }
}

/// `[C,H,W]` → `[N, C·p²]`, patches in row-major grid order.
pub fn patchify<T: Element>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 3 || p == 0 || s[1] % p != 0 || s[2] % p != 0 {
        return Err(SdtlError::Config(format!("cannot split {s:?} into {p}x{p} patches")));
    }
    let (c, gh, gw) = (s[0], s[1] / p, s[2] / p);
    Ok(x.reshape(&[c, gh, p, gw, p])?
        .permute(&[1, 3, 0, 2, 4])?
        .reshape(&[gh * gw, c * p * p])?)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Element>(tokens: &Tensor<T>, c: usize, p: usize, grid: (usize, usize)) -> Result<Tensor<T>> {
    let (gh, gw) = grid;
    if tokens.shape() != [gh * gw, c * p * p] {
        return Err(SdtlError::Shape(format!(
            "tokens {:?} do not match grid {gh}x{gw} with {c} channels and patch {p}",
            tokens.shape()
        )));
    }
    Ok(tokens
        .reshape(&[gh, gw, c, p, p])?
        .permute(&[2, 0, 3, 1, 4])?
        .reshape(&[c, gh * p, gw * p])?)
}

/// Half sines then half cosines of `t·ω_k`, `ω_k = 10000^(−k/half)`.
pub fn sinusoid(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    out
}

/// Bilinear (align-corners) resampling matrix from a `from` grid to a `to`
/// grid, `[to.0·to.1, from.0·from.1]`.
fn resample_matrix(from: (usize, usize), to: (usize, usize)) -> Vec<f64> {
    let axis = |n_from: usize, n_to: usize| -> Vec<(usize, usize, f64)> {
        (0..n_to)
            .map(|i| {
                let pos = if n_to == 1 || n_from == 1 {
                    0.0
                } else {
                    i as f64 * (n_from - 1) as f64 / (n_to - 1) as f64
                };
                let lo = (pos.floor() as usize).min(n_from - 1);
                let hi = (lo + 1).min(n_from - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let (ry, rx) = (axis(from.0, to.0), axis(from.1, to.1));
    let cols = from.0 * from.1;
    let mut m = vec![0.0; to.0 * to.1 * cols];
    for (i, &(y0, y1, fy)) in ry.iter().enumerate() {
        for (j, &(x0, x1, fx)) in rx.iter().enumerate() {
            let row = &mut m[(i * to.1 + j) * cols..][..cols];
            row[y0 * from.1 + x0] += (1.0 - fy) * (1.0 - fx);
            row[y0 * from.1 + x1] += (1.0 - fy) * fx;
            row[y1 * from.1 + x0] += fy * (1.0 - fx);
            row[y1 * from.1 + x1] += fy * fx;
        }
    }
    m
}

/// Split `[N, heads·dh]` into `[heads, N, dh]`.
fn split_heads<T: Element>(x: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    Ok(x.reshape(&[n, heads, d / heads])?.permute(&[1, 0, 2])?)
}

fn merge_heads<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, n, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Ok(x.permute(&[1, 0, 2])?.reshape(&[n, h * dh])?)
}

/// Scaled dot-product attention per head; returns the output rows and the
/// `[heads, Nq, Nk]` probabilities.
pub fn multi_head_attention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let dh = q.shape()[1] / heads;
    let (q, k, v) = (split_heads(q, heads)?, split_heads(k, heads)?, split_heads(v, heads)?);
    let probs = q
        .bmm(&k.permute(&[0, 2, 1])?)?
        .scale(1.0 / (dh as f64).sqrt())
        .softmax(2)?;
    let out = merge_heads(&probs.bmm(&v)?)?;
    Ok((out, probs))
}

#[derive(Debug, Clone)]
pub struct SelfAttention<T: Element> {
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    pub heads: usize,
}

impl<T: Element> SelfAttention<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        SelfAttention {
            qkv: Linear::new(dim, 3 * dim, rng),
            proj: Linear::new(dim, dim, rng),
            heads,
        }
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let d = x.shape()[1];
        let qkv = self.qkv.forward(x)?;
        let (q, k, v) = (qkv.narrow(1, 0, d)?, qkv.narrow(1, d, d)?, qkv.narrow(1, 2 * d, d)?);
        let (out, probs) = multi_head_attention(&q, &k, &v, self.heads)?;
        Ok((self.proj.forward(&out)?, probs))
    }
}

impl<T: Element> Module<T> for SelfAttention<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.qkv.visit_params(&join(prefix, "qkv"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}

/// Pre-norm transformer block.
#[derive(Debug, Clone)]
pub struct VitBlock<T: Element> {
    pub norm1: LayerNorm<T>,
    pub attn: SelfAttention<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Element> VitBlock<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        VitBlock {
            norm1: LayerNorm::new(dim),
            attn: SelfAttention::new(dim, heads, rng),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, 4 * dim, dim, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (a, probs) = self.attn.forward_traced(&self.norm1.forward(x)?)?;
        let x = x.add(&a)?;
        let out = x.add(&self.mlp.forward(&self.norm2.forward(&x)?)?)?;
        Ok((out, probs))
    }
}

impl<T: Element> Module<T> for VitBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm1.visit_params(&join(prefix, "norm1"), f);
        self.attn.visit_params(&join(prefix, "attn"), f);
        self.norm2.visit_params(&join(prefix, "norm2"), f);
        self.mlp.visit_params(&join(prefix, "mlp"), f);
    }
}

/// Structure-guided attention block.
///
/// Tokens cross-attend to structure tokens; the fused sequence supplies the
/// query and key of a `D×D` channel attention whose values come from the
/// un-fused tokens. The result is projected and added back residually.
#[derive(Debug, Clone)]
pub struct Sab<T: Element> {
    pub norm: LayerNorm<T>,
    pub struct_norm: LayerNorm<T>,
    pub cross_q: Linear<T>,
    pub cross_kv: Linear<T>,
    pub cross_proj: Linear<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub out: Linear<T>,
    pub heads: usize,
}

/// SAB output with its attention maps: cross-attention `[heads, N, N]`
/// and channel attention `[D, D]`.
pub struct SabTrace<T: Element> {
    pub output: Tensor<T>,
    pub cross: Tensor<T>,
    pub channel: Tensor<T>,
}

impl<T: Element> Sab<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        Sab {
            norm: LayerNorm::new(dim),
            struct_norm: LayerNorm::new(dim),
            cross_q: Linear::new(dim, dim, rng),
            cross_kv: Linear::new(dim, 2 * dim, rng),
            cross_proj: Linear::new(dim, dim, rng),
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x, s)?.output)
    }

    pub fn forward_traced(&self, x: &Tensor<T>, s: &Tensor<T>) -> Result<SabTrace<T>> {
        if x.shape() != s.shape() {
            return Err(SdtlError::Shape(format!(
                "SAB token grid {:?} does not match structure tokens {:?}",
                x.shape(),
                s.shape()
            )));
        }
        let d = x.shape()[1];
        let xn = self.norm.forward(x)?;
        let sn = self.struct_norm.forward(s)?;
        let kv = self.cross_kv.forward(&sn)?;
        let (cross, cross_probs) = multi_head_attention(
            &self.cross_q.forward(&xn)?,
            &kv.narrow(1, 0, d)?,
            &kv.narrow(1, d, d)?,
            self.heads,
        )?;
        let fused = xn.add(&self.cross_proj.forward(&cross)?)?;
        let q = self.query.forward(&fused)?;
        let k = self.key.forward(&fused)?;
        let v = self.value.forward(&xn)?;
        let channel = crate::sem::channel_attention(&k, &q)?;
        let attended = v.matmul(&channel.transpose_last()?)?;
        Ok(SabTrace {
            output: x.add(&self.out.forward(&attended)?)?,
            cross: cross_probs,
            channel,
        })
    }
}

impl<T: Element> Module<T> for Sab<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.struct_norm.visit_params(&join(prefix, "struct_norm"), f);
        self.cross_q.visit_params(&join(prefix, "cross_q"), f);
        self.cross_kv.visit_params(&join(prefix, "cross_kv"), f);
        self.cross_proj.visit_params(&join(prefix, "cross_proj"), f);
        self.query.visit_params(&join(prefix, "query"), f);
        self.key.visit_params(&join(prefix, "key"), f);
        self.value.visit_params(&join(prefix, "value"), f);
        self.out.visit_params(&join(prefix, "out"), f);
    }
}

#[derive(Debug, Clone)]
pub struct SdtBlock<T: Element> {
    pub vit: VitBlock<T>,
    pub sab: Option<Sab<T>>,
}

impl<T: Element> SdtBlock<T> {
    pub fn forward(&self, x: &Tensor<T>, s: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let x = self.vit.forward(x)?;
        match (&self.sab, s) {
            (Some(sab), Some(s)) => sab.forward(&x, s),
            _ => Ok(x),
        }
    }
}

impl<T: Element> Module<T> for SdtBlock<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.vit.visit_params(&join(prefix, "vit"), f);
        if let Some(sab) = &self.sab {
            sab.visit_params(&join(prefix, "sab"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser<T: Element> {
    pub cfg: DitConfig,
    pub patch_embed: Linear<T>,
    pub pos_embed: Tensor<T>,
    pub time_mlp: Mlp<T>,
    /// Structure-token embedding, present only with SAB enabled.
    pub sab_embed: Option<Linear<T>>,
    pub blocks: Vec<SdtBlock<T>>,
    pub skips: Vec<Linear<T>>,
    pub norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Element> Denoiser<T> {
    pub fn new<R: Rng + ?Sized>(cfg: DitConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (d, p) = (cfg.embed_dim, cfg.patch);
        let n = cfg.grid.0 * cfg.grid.1;
        let blocks = (0..cfg.depth)
            .map(|_| SdtBlock {
                vit: VitBlock::new(d, cfg.heads, rng),
                sab: cfg.sab.then(|| Sab::new(d, cfg.heads, rng)),
            })
            .collect();
        Ok(Denoiser {
            patch_embed: Linear::new(cfg.in_channels * p * p, d, rng),
            pos_embed: Tensor::rand_uniform(&[n, d], -0.02, 0.02, rng).into_param(),
            time_mlp: Mlp::new(d, d, d, rng),
            sab_embed: cfg.sab.then(|| Linear::new(cfg.struct_channels * p * p, d, rng)),
            blocks,
            skips: (0..cfg.decoder_blocks).map(|_| Linear::new(2 * d, d, rng)).collect(),
            norm: LayerNorm::new(d),
            head: Linear::zeroed(d, cfg.out_channels * p * p),
            cfg,
        })
    }

    pub fn timestep_embedding(&self, t: usize) -> Result<Tensor<T>> {
        if t >= self.cfg.steps {
            return Err(SdtlError::Contract(format!(
                "timestep {t} outside 0..{}",
                self.cfg.steps
            )));
        }
        let raw = Tensor::from_f64_slice(&sinusoid(t, self.cfg.embed_dim), &[1, self.cfg.embed_dim])?;
        self.time_mlp.forward(&raw)
    }

    /// Positional embedding for a token grid, resampled bilinearly when it
    /// differs from the training grid.
    pub fn positions(&self, grid: (usize, usize)) -> Result<Tensor<T>> {
        if grid == self.cfg.grid {
            return Ok(self.pos_embed.clone());
        }
        let m = resample_matrix(self.cfg.grid, grid);
        let m = Tensor::from_f64_slice(&m, &[grid.0 * grid.1, self.cfg.grid.0 * self.cfg.grid.1])?;
        Ok(m.matmul(&self.pos_embed)?)
    }

    /// Tokens after patch embedding, positions and timestep embedding.
    pub fn embed(&self, x: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 3 || s[0] != self.cfg.in_channels {
            return Err(SdtlError::Config(format!(
                "denoiser expects [{}, H, W], got {s:?}",
                self.cfg.in_channels
            )));
        }
        let p = self.cfg.patch;
        let tokens = self.patch_embed.forward(&patchify(x, p)?)?;
        let grid = (s[1] / p, s[2] / p);
        Ok(tokens.add(&self.positions(grid)?)?.add(&self.timestep_embedding(t)?)?)
    }

    /// `[C_in,H,W]` noisy state plus condition, structure map `[C_s,H,W]`
    /// → predicted noise `[C_out,H,W]`.
    pub fn forward(&self, x: &Tensor<T>, t: usize, structure: &Tensor<T>) -> Result<Tensor<T>> {
        let p = self.cfg.patch;
        let (h, w) = (x.shape().get(1).copied().unwrap_or(0), x.shape().get(2).copied().unwrap_or(0));
        let mut seq = self.embed(x, t)?;
        let s_tokens = match &self.sab_embed {
            Some(e) => {
                if structure.shape().len() != 3 || structure.shape()[1..] != [h, w] {
                    return Err(SdtlError::Shape(format!(
                        "structure map {:?} does not match denoiser input {:?}",
                        structure.shape(),
                        x.shape()
                    )));
                }
                Some(e.forward(&patchify(structure, p)?)?)
            }
            None => None,
        };
        let enc = self.cfg.encoder_blocks;
        let mut cache = vec![seq.clone()];
        for block in &self.blocks[..enc] {
            seq = block.forward(&seq, s_tokens.as_ref())?;
            cache.push(seq.clone());
        }
        for (i, block) in self.blocks[enc..].iter().enumerate() {
            let partner = &cache[enc - 1 - i];
            seq = self.skips[i].forward(&Tensor::concat(&[seq, partner.clone()], 1)?)?;
            seq = block.forward(&seq, s_tokens.as_ref())?;
        }
        let out = self.head.forward(&self.norm.forward(&seq)?)?;
        unpatchify(&out, self.cfg.out_channels, p, (h / p, w / p))
    }
}

impl<T: Element> Module<T> for Denoiser<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.patch_embed.visit_params(&join(prefix, "patch_embed"), f);
        f(join(prefix, "pos_embed"), &self.pos_embed);
        self.time_mlp.visit_params(&join(prefix, "time_mlp"), f);
        if let Some(e) = &self.sab_embed {
            e.visit_params(&join(prefix, "sab_embed"), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, s) in self.skips.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("skips.{i}")), f);
        }
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(depth: usize) -> DitConfig {
        let (e, d) = DitConfig::split_depth(depth);
        DitConfig {
            depth,
            embed_dim: 16,
            heads: 2,
            patch: 2,
            encoder_blocks: e,
            decoder_blocks: d,
            struct_channels: 2,
            grid: (2, 2),
            steps: 10,
            ..DitConfig::default()
        }
    }

    #[test]
    fn depth_split() {
        assert_eq!(DitConfig::split_depth(6), (4, 2));
        assert_eq!(DitConfig::split_depth(4), (3, 1));
        assert_eq!(DitConfig::split_depth(2), (1, 1));
    }

    #[test]
    fn patch_round_trip_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::randn(&[6, 64, 64], &mut rng);
        let tokens = patchify(&x, 4).unwrap();
        assert_eq!(tokens.shape(), &[256, 96]);
        assert_eq!(unpatchify(&tokens, 6, 4, (16, 16)).unwrap().to_vec(), x.to_vec());
        assert!(matches!(patchify(&x, 5), Err(SdtlError::Config(_))));
    }

    #[test]
    fn patch_layout() {
        let x = Tensor::<f32>::from_vec((0..16).map(|v| v as f32).collect(), &[1, 4, 4]).unwrap();
        let t = patchify(&x, 2).unwrap().to_vec();
        assert_eq!(&t[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&t[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn sinusoid_at_zero() {
        let s = sinusoid(0, 8);
        assert_eq!(&s[..4], &[0.0; 4]);
        assert_eq!(&s[4..], &[1.0; 4]);
    }

    #[test]
    fn timestep_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Denoiser::<f64>::new(tiny(2), &mut rng).unwrap();
        let a = net.timestep_embedding(0).unwrap().to_vec();
        let b = net.timestep_embedding(9).unwrap().to_vec();
        assert_eq!(a, net.timestep_embedding(0).unwrap().to_vec());
        assert!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 0.0);
        assert!(matches!(net.timestep_embedding(10), Err(SdtlError::Contract(_))));
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Denoiser::<f32>::new(tiny(2), &mut rng).unwrap();
        let y = net
            .forward(&Tensor::randn(&[6, 4, 4], &mut rng), 3, &Tensor::randn(&[2, 4, 4], &mut rng))
            .unwrap();
        assert_eq!(y.shape(), &[3, 4, 4]);
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn other_grid_resamples_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Denoiser::<f32>::new(tiny(2), &mut rng).unwrap();
        let same = net.positions((2, 2)).unwrap();
        assert_eq!(same.to_vec(), net.pos_embed.to_vec());
        let up = net.positions((3, 3)).unwrap().to_vec();
        let pe = net.pos_embed.to_vec();
        // corners are copied, centre is the average of all four
        assert_eq!(&up[..16], &pe[..16]);
        for k in 0..16 {
            let avg = (pe[k] + pe[16 + k] + pe[32 + k] + pe[48 + k]) / 4.0;
            assert!((up[4 * 16 + k] - avg).abs() < 1e-6);
        }
        let y = net
            .forward(&Tensor::randn(&[6, 6, 6], &mut rng), 0, &Tensor::randn(&[2, 6, 6], &mut rng))
            .unwrap();
        assert_eq!(y.shape(), &[3, 6, 6]);
    }

    #[test]
    fn sab_zero_output_projection_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sab = Sab::<f64>::new(8, 2, &mut rng);
        sab.out.weight.set_data(vec![0.0; 64]).unwrap();
        let x = Tensor::randn(&[4, 8], &mut rng);
        let tr = sab.forward_traced(&x, &Tensor::randn(&[4, 8], &mut rng)).unwrap();
        assert_eq!(tr.output.to_vec(), x.to_vec());
        for row in tr.channel.to_vec().chunks(8).chain(tr.cross.to_vec().chunks(4)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(sab.forward(&x, &Tensor::zeros(&[5, 8])).is_err());
    }

    #[test]
    fn params_grow_with_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let counts: Vec<usize> = [2, 4, 6]
            .iter()
            .map(|&d| Denoiser::<f32>::new(tiny(d), &mut rng).unwrap().param_count())
            .collect();
        assert!(counts[0] < counts[1] && counts[1] < counts[2]);
    }
}
