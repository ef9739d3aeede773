//! The full enhancement model.
//!
//! Images enter in `[0,1]` and are mapped to `[−1,1]` before the wavelet
//! transform. Only the high bands of the low-light decomposition feed the
//! network; its low-frequency band is discarded. The diffusion variable is
//! the ground truth's level-2 LL divided by 4, so a constant image `v` maps
//! to `v`. Learned heads estimate the high bands at both levels and two
//! inverse transforms rebuild the output.

use rand::Rng;
use sdtl_tensor::{no_grad, Element, Tensor};

use crate::config::RunConfig;
use crate::diffusion::{ddim_sample, make_linear_schedule, training_loss, NoiseSchedule};
use crate::dit::{Denoiser, DitConfig};
use crate::error::{Result, SdtlError};
use crate::nn::{join, Conv2d, Module};
use crate::sem::{Sem, BAND_NAMES};
use crate::structure::{sobel_edge, StructureMaps, StructurePrior};
use crate::wavelet::{dwt2_level2, iwt2, SubbandSet};

/// Gain of the level-2 LL band relative to pixel values.
pub const LL2_GAIN: f64 = 4.0;

pub type Bands<T> = [Tensor<T>; 3];

#[derive(Debug, Clone)]
pub struct SdtlModel<T: Element> {
    pub cfg: RunConfig,
    pub prior: StructurePrior<T>,
    /// Per level, per band: 3 → C lifting conv.
    pub embed: [[Conv2d<T>; 3]; 2],
    pub sem: [Option<Sem<T>>; 2],
    pub cond: Conv2d<T>,
    /// Per level, per band: C → 3 high-band estimate.
    pub heads: [[Conv2d<T>; 3]; 2],
    pub dit: Denoiser<T>,
    pub schedule: NoiseSchedule,
}

/// Intermediate products of [`SdtlModel::condition`].
#[derive(Clone)]
pub struct Condition<T: Element> {
    pub cond: Tensor<T>,
    pub enhanced: [Bands<T>; 2],
    pub structure: StructureMaps<T>,
}

/// Replacement values for [`SdtlModel::enhance_with`]; `None` keeps the
/// model's own estimate.
#[derive(Default)]
pub struct EnhanceOverrides<T: Element> {
    /// Level-2 diffusion sample `x̂0` (`LL2 / 4`).
    pub x0: Option<Tensor<T>>,
    pub highs1: Option<Bands<T>>,
    pub highs2: Option<Bands<T>>,
}

/// Per-sample loss terms.
pub struct Losses<T: Element> {
    pub diffusion: Tensor<T>,
    pub high_freq: Tensor<T>,
    pub t: usize,
}

impl<T: Element> Losses<T> {
    pub fn total(&self, lambda_hf: f64) -> Result<Tensor<T>> {
        Ok(self.diffusion.add(&self.high_freq.scale(lambda_hf))?)
    }
}

pub fn dit_config(cfg: &RunConfig) -> DitConfig {
    let (enc, dec) = DitConfig::split_depth(cfg.depth);
    let g = cfg.crop / 4 / cfg.patch.max(1);
    DitConfig {
        depth: cfg.depth,
        embed_dim: cfg.embed_dim,
        heads: cfg.heads,
        patch: cfg.patch,
        encoder_blocks: enc,
        decoder_blocks: dec,
        in_channels: 6,
        out_channels: 3,
        struct_channels: cfg.sem_channels,
        grid: (g, g),
        steps: cfg.steps,
        sab: !cfg.no_sab,
    }
}

fn band_convs<T: Element, R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> [Conv2d<T>; 3] {
    [
        Conv2d::new(cin, cout, 3, 1, rng),
        Conv2d::new(cin, cout, 3, 1, rng),
        Conv2d::new(cin, cout, 3, 1, rng),
    ]
}

fn apply3<T: Element>(convs: &[Conv2d<T>; 3], bands: &Bands<T>) -> Result<Bands<T>> {
    Ok([convs[0].forward(&bands[0])?, convs[1].forward(&bands[1])?, convs[2].forward(&bands[2])?])
}

/// `[0,1]` → `[−1,1]`.
pub fn to_signed<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.scale(2.0).add_scalar(-1.0)
}

/// Level-2 LL of `x_high` (in `[−1,1]`) rescaled to pixel range.
pub fn diffusion_target<T: Element>(x_high: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, l2) = dwt2_level2(x_high)?;
    Ok(l2.ll.scale(1.0 / LL2_GAIN))
}

impl<T: Element> SdtlModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &RunConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.sem_channels;
        let use_sem = !cfg.no_sem && !(cfg.no_sem_enhance && cfg.no_sem_fusion);
        let mut sem = || use_sem.then(|| Sem::new(c, c, !cfg.no_sem_enhance, !cfg.no_sem_fusion, rng));
        let sem = [sem(), sem()];
        Ok(SdtlModel {
            prior: StructurePrior::new(c, rng),
            embed: [band_convs(3, c, rng), band_convs(3, c, rng)],
            sem,
            cond: Conv2d::new(3 * c, 3, 3, 1, rng),
            heads: [band_convs(c, 3, rng), band_convs(c, 3, rng)],
            dit: Denoiser::new(dit_config(cfg), rng)?,
            schedule: make_linear_schedule(cfg.steps, cfg.beta_start, cfg.beta_end)?,
            cfg: cfg.clone(),
        })
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params("").into_iter().map(|(_, t)| t).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let s = x.shape();
        let q = 4 * self.cfg.patch;
        if s.len() != 3 || s[0] != 3 || s[1] == 0 || s[2] == 0 || s[1] % q != 0 || s[2] % q != 0 {
            return Err(SdtlError::Config(format!(
                "input must be [3,H,W] with H, W multiples of {q} (4 x patch), got {s:?}"
            )));
        }
        Ok((s[1], s[2]))
    }

    /// Condition from a `[0,1]` low-light image.
    pub fn condition(&self, x_low: &Tensor<T>) -> Result<Condition<T>> {
        self.check_input(x_low)?;
        let (l1, l2) = dwt2_level2(&to_signed(x_low))?;
        self.condition_from_highs(x_low, &l1.highs(), &l2.highs())
    }

    /// Everything downstream of the decomposition. Takes only the high
    /// bands, so the low-light LL cannot reach the network.
    pub fn condition_from_highs(&self, x_low: &Tensor<T>, highs1: &Bands<T>, highs2: &Bands<T>) -> Result<Condition<T>> {
        let structure = self.prior.forward(&sobel_edge(x_low)?)?;
        let mut enhanced = Vec::with_capacity(2);
        for (level, (highs, s)) in [(highs1, &structure.s1), (highs2, &structure.s2)].into_iter().enumerate() {
            let lifted = apply3(&self.embed[level], highs)?;
            enhanced.push(match &self.sem[level] {
                Some(sem) => sem.forward(&lifted, s)?,
                None => lifted,
            });
        }
        let enh2 = enhanced.pop().unwrap();
        let enh1 = enhanced.pop().unwrap();
        let cond = self.cond.forward(&Tensor::concat(&enh2, 0)?)?;
        Ok(Condition { cond, enhanced: [enh1, enh2], structure })
    }

    /// Predicted high bands per level, `[3,h,w]` each.
    pub fn predict_highs(&self, c: &Condition<T>) -> Result<[Bands<T>; 2]> {
        Ok([apply3(&self.heads[0], &c.enhanced[0])?, apply3(&self.heads[1], &c.enhanced[1])?])
    }

    /// Noise prediction for the level-2 state `x_t` under condition `c`.
    pub fn predict_noise(&self, xt: &Tensor<T>, t: usize, c: &Condition<T>) -> Result<Tensor<T>> {
        let input = Tensor::concat(&[xt.clone(), c.cond.clone()], 0)?;
        self.dit.forward(&input, t, &c.structure.s2)
    }

    /// Loss terms for one `[0,1]` image pair.
    pub fn losses<R: Rng + ?Sized>(&self, x_low: &Tensor<T>, x_high: &Tensor<T>, rng: &mut R) -> Result<Losses<T>> {
        self.check_input(x_low)?;
        let (l1, l2) = dwt2_level2(&to_signed(x_low))?;
        self.losses_from_highs(x_low, &l1.highs(), &l2.highs(), x_high, rng)
    }

    pub fn losses_from_highs<R: Rng + ?Sized>(
        &self,
        x_low: &Tensor<T>,
        highs1: &Bands<T>,
        highs2: &Bands<T>,
        x_high: &Tensor<T>,
        rng: &mut R,
    ) -> Result<Losses<T>> {
        if x_low.shape() != x_high.shape() {
            return Err(SdtlError::Shape(format!(
                "pair sizes differ: {:?} vs {:?}",
                x_low.shape(),
                x_high.shape()
            )));
        }
        let c = self.condition_from_highs(x_low, highs1, highs2)?;
        let (g1, g2) = dwt2_level2(&to_signed(x_high))?;
        let x0 = g2.ll.scale(1.0 / LL2_GAIN);
        let (diffusion, t) = training_loss(|xt, t| self.predict_noise(xt, t, &c), &x0, &self.schedule, rng)?;

        let pred = self.predict_highs(&c)?;
        let mut abs_sum: Option<Tensor<T>> = None;
        let mut count = 0;
        for (p, g) in pred.iter().flatten().zip(g1.highs().iter().chain(g2.highs().iter())) {
            let s = p.sub(g)?.abs().sum();
            count += g.numel();
            abs_sum = Some(match abs_sum {
                Some(acc) => acc.add(&s)?,
                None => s,
            });
        }
        let high_freq = abs_sum.expect("six bands").scale(1.0 / count as f64);
        Ok(Losses { diffusion, high_freq, t })
    }

    /// Enhance a `[0,1]` image; output is `[0,1]` and the same shape.
    pub fn enhance<R: Rng + ?Sized>(&self, x_low: &Tensor<T>, ddim_steps: usize, rng: &mut R) -> Result<Tensor<T>> {
        self.enhance_with(x_low, ddim_steps, rng, EnhanceOverrides::default())
    }

    pub fn enhance_with<R: Rng + ?Sized>(
        &self,
        x_low: &Tensor<T>,
        ddim_steps: usize,
        rng: &mut R,
        overrides: EnhanceOverrides<T>,
    ) -> Result<Tensor<T>> {
        no_grad(|| {
            let (h, w) = self.check_input(x_low)?;
            let c = self.condition(x_low)?;
            let x0 = match overrides.x0 {
                Some(x0) => x0,
                None => ddim_sample(
                    |xt, t| self.predict_noise(xt, t, &c),
                    &[3, h / 4, w / 4],
                    &self.schedule,
                    ddim_steps,
                    rng,
                )?,
            };
            let [pred1, pred2] = match (&overrides.highs1, &overrides.highs2) {
                (Some(a), Some(b)) => [a.clone(), b.clone()],
                _ => self.predict_highs(&c)?,
            };
            let highs1 = overrides.highs1.unwrap_or(pred1);
            let highs2 = overrides.highs2.unwrap_or(pred2);
            let ll1 = iwt2(&SubbandSet::from_parts(x0.scale(LL2_GAIN), highs2))?;
            let img = iwt2(&SubbandSet::from_parts(ll1, highs1))?;
            let out = img
                .to_vec()
                .into_iter()
                .map(|v| (v.max(-T::one()).min(T::one()) + T::one()) * T::from_f64c(0.5))
                .collect();
            Ok(Tensor::from_vec(out, &[3, h, w])?)
        })
    }
}

impl<T: Element> Module<T> for SdtlModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.prior.visit_params(&join(prefix, "prior"), f);
        for (level, convs) in self.embed.iter().enumerate() {
            for (conv, band) in convs.iter().zip(BAND_NAMES) {
                conv.visit_params(&join(prefix, &format!("embed{}.{band}", level + 1)), f);
            }
        }
        for (level, sem) in self.sem.iter().enumerate() {
            if let Some(sem) = sem {
                sem.visit_params(&join(prefix, &format!("sem{}", level + 1)), f);
            }
        }
        self.cond.visit_params(&join(prefix, "cond"), f);
        for (level, convs) in self.heads.iter().enumerate() {
            for (conv, band) in convs.iter().zip(BAND_NAMES) {
                conv.visit_params(&join(prefix, &format!("head{}.{band}", level + 1)), f);
            }
        }
        self.dit.visit_params(&join(prefix, "dit"), f);
    }
}
