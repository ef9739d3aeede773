//! Plain-text run configuration: `key = value` lines, `#` comments.
//! Every key has a default; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::diffusion::{DEFAULT_BETA_END, DEFAULT_BETA_START};
use crate::error::{Result, SdtlError};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub patch: usize,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub ddim_steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub crop: usize,
    pub epochs: usize,
    pub step_size: usize,
    pub gamma: f64,
    pub lambda_hf: f64,
    pub seed: u64,
    pub no_sem: bool,
    pub no_sem_enhance: bool,
    pub no_sem_fusion: bool,
    pub no_sab: bool,
    /// Band and structure channel width inside the SEMs.
    pub sem_channels: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub ckpt_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            depth: 6,
            embed_dim: 384,
            heads: 6,
            patch: 4,
            steps: 200,
            ddim_steps: 10,
            lr: 5e-4,
            batch: 8,
            crop: 256,
            epochs: 1000,
            step_size: 50,
            gamma: 0.90,
            lambda_hf: 0.1,
            seed: 0,
            no_sem: false,
            no_sem_enhance: false,
            no_sem_fusion: false,
            no_sab: false,
            sem_channels: 32,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            ckpt_every: 0,
        }
    }
}

pub const KEYS: [&str; 22] = [
    "depth",
    "embed_dim",
    "heads",
    "patch",
    "T",
    "ddim_steps",
    "lr",
    "batch",
    "crop",
    "epochs",
    "step_size",
    "gamma",
    "lambda_hf",
    "seed",
    "no_sem",
    "no_sem_enhance",
    "no_sem_fusion",
    "no_sab",
    "sem_channels",
    "beta_start",
    "beta_end",
    "ckpt_every",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| SdtlError::Config(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(SdtlError::Config(format!("key '{key}': expected true/false, got '{value}'"))),
    }
}

impl RunConfig {
    /// Small model for desk-scale runs: depth 2, width 96, 64-pixel crops.
    ///
    /// With a handful of pairs an epoch is a single optimizer step, so the
    /// learning-rate decay is spaced in steps rather than epochs.
    pub fn tiny() -> Self {
        RunConfig {
            depth: 2,
            embed_dim: 96,
            heads: 6,
            crop: 64,
            sem_channels: 16,
            batch: 4,
            epochs: 10,
            lr: 2e-3,
            step_size: 1000,
            gamma: 0.5,
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "depth" => self.depth = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "patch" => self.patch = parse(key, v)?,
            "T" => self.steps = parse(key, v)?,
            "ddim_steps" => self.ddim_steps = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "crop" => self.crop = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "step_size" => self.step_size = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda_hf" => self.lambda_hf = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "no_sem" => self.no_sem = parse_bool(key, v)?,
            "no_sem_enhance" => self.no_sem_enhance = parse_bool(key, v)?,
            "no_sem_fusion" => self.no_sem_fusion = parse_bool(key, v)?,
            "no_sab" => self.no_sab = parse_bool(key, v)?,
            "sem_channels" => self.sem_channels = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "ckpt_every" => self.ckpt_every = parse(key, v)?,
            _ => return Err(SdtlError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parse config text on top of the defaults. Errors name the line.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SdtlError::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            self.set(key.trim(), value).map_err(|e| match e {
                SdtlError::Config(m) => SdtlError::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SdtlError::io(path, e))?;
        Self::parse_str(&text).map_err(|e| match e {
            SdtlError::Config(m) => SdtlError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    fn get(&self, key: &str) -> String {
        match key {
            "depth" => self.depth.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "heads" => self.heads.to_string(),
            "patch" => self.patch.to_string(),
            "T" => self.steps.to_string(),
            "ddim_steps" => self.ddim_steps.to_string(),
            "lr" => format!("{:e}", self.lr),
            "batch" => self.batch.to_string(),
            "crop" => self.crop.to_string(),
            "epochs" => self.epochs.to_string(),
            "step_size" => self.step_size.to_string(),
            "gamma" => format!("{:e}", self.gamma),
            "lambda_hf" => format!("{:e}", self.lambda_hf),
            "seed" => self.seed.to_string(),
            "no_sem" => self.no_sem.to_string(),
            "no_sem_enhance" => self.no_sem_enhance.to_string(),
            "no_sem_fusion" => self.no_sem_fusion.to_string(),
            "no_sab" => self.no_sab.to_string(),
            "sem_channels" => self.sem_channels.to_string(),
            "beta_start" => format!("{:e}", self.beta_start),
            "beta_end" => format!("{:e}", self.beta_end),
            "ckpt_every" => self.ckpt_every.to_string(),
            _ => unreachable!("key list and getter out of sync"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(SdtlError::Config(m.to_string()));
        if self.crop == 0 || self.crop % 4 != 0 {
            return err("crop must be a positive multiple of 4");
        }
        if (self.crop / 4) % self.patch.max(1) != 0 {
            return err("crop/4 must be divisible by patch");
        }
        if self.batch == 0 || self.sem_channels == 0 || self.step_size == 0 {
            return err("batch, sem_channels and step_size must be positive");
        }
        if !(self.lr > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda_hf >= 0.0) {
            return err("need lr > 0, gamma in (0,1], lambda_hf >= 0");
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.steps {
            return err("ddim_steps must be in 1..=T");
        }
        Ok(())
    }
}
