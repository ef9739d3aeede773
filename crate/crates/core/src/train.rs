//! Epoch loop: shuffled batches of random crops, Adam with step decay,
//! periodic checkpoints and held-out evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use sdtl_tensor::{Adam, StepLr, Tensor};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{random_crop_pair, ImageBuf};
use crate::error::{Result, SdtlError};
use crate::metrics::{psnr, ssim, FloatImage};
use crate::pipeline::SdtlModel;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub diffusion: f64,
    pub high_freq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub diffusion: f64,
    pub high_freq: f64,
    /// Held-out `(psnr, ssim)` when evaluated this epoch.
    pub holdout: Option<(f64, f64)>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let mut s = format!(
            "epoch={} lr={:e} steps={} loss_diff={:.6} loss_hf={:.6}",
            self.epoch, self.lr, self.steps, self.diffusion, self.high_freq
        );
        if let Some((p, q)) = self.holdout {
            s.push_str(&format!(" holdout_psnr={p:.4} holdout_ssim={q:.4}"));
        }
        s
    }
}

pub struct Trainer {
    pub model: SdtlModel<f32>,
    pub adam: Adam<f32>,
    pub schedule: StepLr,
    pub epoch: usize,
    shuffle_rng: ChaCha8Rng,
    crop_rng: ChaCha8Rng,
    diffusion_rng: ChaCha8Rng,
    params: Vec<Tensor<f32>>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let model = SdtlModel::new(cfg, &mut stream(cfg.seed, Stream::Init))?;
        Self::from_model(model)
    }

    pub fn from_model(model: SdtlModel<f32>) -> Result<Self> {
        let cfg = model.cfg.clone();
        let params = model.params();
        Ok(Trainer {
            adam: Adam::new(&params, cfg.lr),
            schedule: StepLr::new(cfg.lr, cfg.step_size, cfg.gamma)?,
            epoch: 0,
            shuffle_rng: stream(cfg.seed, Stream::Shuffle),
            crop_rng: stream(cfg.seed, Stream::Crop),
            diffusion_rng: stream(cfg.seed, Stream::Diffusion),
            params,
            model,
        })
    }

    /// One optimizer step on a batch of `[0,1]` tensor pairs. The gradient
    /// is that of the batch-mean loss.
    pub fn train_batch(&mut self, batch: &[(Tensor<f32>, Tensor<f32>)], lr: f64) -> Result<StepLosses> {
        if batch.is_empty() {
            return Err(SdtlError::Input("empty batch".into()));
        }
        for p in &self.params {
            p.zero_grad();
        }
        let scale = 1.0 / batch.len() as f64;
        let (mut diff, mut hf) = (0.0, 0.0);
        for (low, high) in batch {
            let l = self.model.losses(low, high, &mut self.diffusion_rng)?;
            diff += l.diffusion.item() as f64 * scale;
            hf += l.high_freq.item() as f64 * scale;
            l.total(self.model.cfg.lambda_hf)?.scale(scale).backward()?;
        }
        self.adam.lr = lr;
        self.adam.step(&self.params)?;
        Ok(StepLosses { diffusion: diff, high_freq: hf })
    }

    /// One pass over `data` in shuffled batches (the last may be partial).
    pub fn run_epoch(&mut self, data: &[(ImageBuf, ImageBuf)]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(SdtlError::Input("dataset is empty".into()));
        }
        let cfg = self.model.cfg.clone();
        let lr = self.schedule.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let (mut diff, mut hf, mut steps) = (0.0, 0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let (low, high) = &data[i];
                    let (a, b, _) = random_crop_pair(low, high, cfg.crop, &mut self.crop_rng)?;
                    Ok((a.to_tensor(), b.to_tensor()))
                })
                .collect::<Result<Vec<_>>>()?;
            let l = self.train_batch(&batch, lr)?;
            diff += l.diffusion;
            hf += l.high_freq;
            steps += 1;
        }
        let log = EpochLog {
            epoch: self.epoch,
            lr,
            steps,
            diffusion: diff / steps as f64,
            high_freq: hf / steps as f64,
            holdout: None,
        };
        self.epoch += 1;
        Ok(log)
    }
}

/// Largest top-left region with sides divisible by `multiple`.
pub fn fit_crop(img: &ImageBuf, multiple: usize) -> ImageBuf {
    let w = img.width / multiple * multiple;
    let h = img.height / multiple * multiple;
    let mut pixels = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        pixels.extend_from_slice(&img.pixels[y * img.width * 3..][..w * 3]);
    }
    ImageBuf { width: w, height: h, pixels }
}

/// PSNR/SSIM of the enhanced low-light image against its reference.
pub fn evaluate_pair(model: &SdtlModel<f32>, low: &ImageBuf, high: &ImageBuf, seed: u64) -> Result<(f64, f64)> {
    let q = 4 * model.cfg.patch;
    let (low, high) = (fit_crop(low, q), fit_crop(high, q));
    let out = model.enhance(&low.to_tensor(), model.cfg.ddim_steps, &mut stream(seed, Stream::Sampling))?;
    let pred = FloatImage::from_buf(&ImageBuf::from_tensor(&out)?);
    let gt = FloatImage::from_buf(&high);
    Ok((psnr(&pred, &gt)?, ssim(&pred, &gt)?))
}

pub struct TrainOutput {
    pub trainer: Trainer,
    pub logs: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Run `cfg.epochs` epochs. Checkpoints go to `out_dir` every
/// `cfg.ckpt_every` epochs and always after the last one (`final.sdtl`).
pub fn train_loop(
    cfg: &RunConfig,
    data: &[(ImageBuf, ImageBuf)],
    holdout: Option<&(ImageBuf, ImageBuf)>,
    out_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(SdtlError::Input("dataset is empty".into()));
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| SdtlError::io(dir, e))?;
    }
    for e in 0..cfg.epochs {
        let mut log = trainer.run_epoch(data)?;
        let periodic = cfg.ckpt_every > 0 && (e + 1) % cfg.ckpt_every == 0;
        let last = e + 1 == cfg.epochs;
        if periodic || last {
            if let Some((low, high)) = holdout {
                log.holdout = Some(evaluate_pair(&trainer.model, low, high, cfg.seed)?);
            }
            if let Some(dir) = out_dir {
                let path = if last { dir.join("final.sdtl") } else { dir.join(format!("epoch_{:04}.sdtl", e + 1)) };
                checkpoint::save(&trainer.model, &path)?;
                checkpoints.push(path);
            }
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutput { trainer, logs, checkpoints })
}
