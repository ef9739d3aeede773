//! Gradient verification suite: every engine primitive plus the composite
//! blocks of the model, each compared against central finite differences
//! in 64-bit precision over many seeds.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdtl_tensor::gradcheck::{check_gradients_scaled, spread_coords, DEFAULT_STEP};
use sdtl_tensor::probes::{primitive_probes, COMPOSITE_TOLERANCE, PRIMITIVE_TOLERANCE};
use sdtl_tensor::{no_grad, Tensor};

use crate::config::RunConfig;
use crate::dit::{Denoiser, DitConfig, Sab, VitBlock};
use crate::error::Result;
use crate::nn::{Linear, Mlp, Module};
use crate::pipeline::SdtlModel;
use crate::sem::{channel_gate, EnhanceBand, Fusion, Sem};
use crate::structure::StructurePrior;

type T64 = Tensor<f64>;

/// Analytic-gradient multiplier used to simulate a broken backward rule.
pub const FAULT_SCALE: f64 = 1.01;

/// Coordinates sampled per checked tensor in composite probes.
const COORDS_PER_TENSOR: usize = 6;
/// Parameter tensors sampled per composite probe.
const PARAMS_PER_PROBE: usize = 5;

pub type CheckFn = fn(u64, f64) -> Result<f64>;

#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    pub composite: bool,
    pub run: CheckFn,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub worst: f64,
    pub error: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.worst.is_finite() && self.worst < self.tolerance
    }
}

/// Random-weighted scalar reduction of `f`, checked on all `inputs` and on
/// a sample of `params`.
fn check_module(
    rng: &mut ChaCha8Rng,
    inputs: &[T64],
    params: &[(String, T64)],
    f: impl Fn() -> Result<T64>,
    scale: f64,
) -> Result<f64> {
    let shape = no_grad(&f)?.shape().to_vec();
    let w = Tensor::rand_uniform(&shape, -1.0, 1.0, rng);
    let picked = sample(rng, params.len(), PARAMS_PER_PROBE.min(params.len()));
    let mut targets: Vec<(T64, Vec<usize>)> = inputs
        .iter()
        .map(|t| (t.clone(), spread_coords(t.numel(), COORDS_PER_TENSOR)))
        .collect();
    for i in picked {
        let p = &params[i].1;
        targets.push((p.clone(), spread_coords(p.numel(), COORDS_PER_TENSOR)));
    }
    let loss = || -> sdtl_tensor::Result<T64> {
        f().map(|y| y.mul(&w).map(|z| z.sum())).map_err(|e| sdtl_tensor::TensorError::Contract(e.to_string()))?
    };
    Ok(check_gradients_scaled(&targets, loss, DEFAULT_STEP, scale)?)
}

fn input(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    Tensor::rand_uniform(shape, -1.0, 1.0, rng).into_param()
}

fn check_sem_enhance(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = EnhanceBand::<f64>::new(4, 4, &mut r);
    let (band, s) = (input(&[4, 4, 4], &mut r), input(&[4, 4, 4], &mut r));
    let params = m.named_params("");
    check_module(&mut r, &[band.clone(), s.clone()], &params, || m.forward(&band, &s), scale)
}

fn check_channel_gate(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mlp = Mlp::<f64>::new(4, 2, 4, &mut r);
    let x = input(&[4, 3, 3], &mut r);
    let params = mlp.named_params("");
    check_module(&mut r, &[x.clone()], &params, || channel_gate(&x, &mlp), scale)
}

fn check_sem_fusion(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = Fusion::<f64>::new(3, &mut r);
    let bands = [input(&[3, 4, 4], &mut r), input(&[3, 4, 4], &mut r), input(&[3, 4, 4], &mut r)];
    let params = m.named_params("");
    check_module(
        &mut r,
        &bands,
        &params,
        || Ok(Tensor::concat(&m.forward(&bands)?, 0)?),
        scale,
    )
}

fn check_sem(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = Sem::<f64>::new(3, 3, true, true, &mut r);
    let bands = [input(&[3, 4, 4], &mut r), input(&[3, 4, 4], &mut r), input(&[3, 4, 4], &mut r)];
    let s = input(&[3, 4, 4], &mut r);
    let params = m.named_params("");
    check_module(
        &mut r,
        &[bands[0].clone(), s.clone()],
        &params,
        || Ok(Tensor::concat(&m.forward(&bands, &s)?, 0)?),
        scale,
    )
}

fn check_structure(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = StructurePrior::<f64>::new(3, &mut r);
    let edge = input(&[1, 8, 8], &mut r);
    let params = m.named_params("");
    check_module(
        &mut r,
        &[edge.clone()],
        &params,
        || {
            let maps = m.forward(&edge)?;
            Ok(Tensor::concat(&[maps.s1.reshape(&[48])?, maps.s2.reshape(&[12])?], 0)?)
        },
        scale,
    )
}

fn check_vit(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = VitBlock::<f64>::new(8, 2, &mut r);
    let x = input(&[4, 8], &mut r);
    let params = m.named_params("");
    check_module(&mut r, &[x.clone()], &params, || m.forward(&x), scale)
}

fn check_sab(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = Sab::<f64>::new(8, 2, &mut r);
    let (x, s) = (input(&[4, 8], &mut r), input(&[4, 8], &mut r));
    let params = m.named_params("");
    check_module(&mut r, &[x.clone(), s.clone()], &params, || m.forward(&x, &s), scale)
}

fn randomize_head(head: &Linear<f64>, rng: &mut ChaCha8Rng) {
    let n = head.weight.numel();
    head.weight.set_data((0..n).map(|_| rng.random_range(-0.3..0.3)).collect()).unwrap();
}

fn check_denoiser(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DitConfig {
        depth: 2,
        embed_dim: 8,
        heads: 2,
        patch: 2,
        encoder_blocks: 1,
        decoder_blocks: 1,
        struct_channels: 2,
        grid: (2, 2),
        steps: 10,
        ..DitConfig::default()
    };
    let m = Denoiser::<f64>::new(cfg, &mut r)?;
    randomize_head(&m.head, &mut r);
    let (x, s) = (input(&[6, 4, 4], &mut r), input(&[2, 4, 4], &mut r));
    let t = r.random_range(0..10);
    let params = m.named_params("");
    check_module(&mut r, &[x.clone(), s.clone()], &params, || m.forward(&x, t, &s), scale)
}

/// Config of the smallest complete model, used by the end-to-end probe.
pub fn micro_config() -> RunConfig {
    RunConfig {
        depth: 2,
        embed_dim: 8,
        heads: 2,
        patch: 2,
        crop: 8,
        sem_channels: 2,
        steps: 20,
        ddim_steps: 4,
        ..RunConfig::default()
    }
}

fn check_end_to_end(seed: u64, scale: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = SdtlModel::<f64>::new(&micro_config(), &mut r)?;
    randomize_head(&m.dit.head, &mut r);
    let low = Tensor::rand_uniform(&[3, 8, 8], 0.0, 0.4, &mut r);
    let high = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, &mut r);
    let noise_seed: u64 = r.random();
    let params = m.named_params("");
    let loss = || {
        let mut nr = ChaCha8Rng::seed_from_u64(noise_seed);
        let l = m.losses(&low, &high, &mut nr)?;
        Ok(l.total(0.5)?)
    };
    check_module(&mut r, &[], &params, loss, scale)
}

pub fn composite_checks() -> Vec<Check> {
    let c = |name, tolerance, run| Check { name, tolerance, composite: true, run };
    vec![
        c("sem_enhance", COMPOSITE_TOLERANCE, check_sem_enhance as CheckFn),
        c("channel_gate", PRIMITIVE_TOLERANCE, check_channel_gate),
        c("sem_fusion", COMPOSITE_TOLERANCE, check_sem_fusion),
        c("sem", COMPOSITE_TOLERANCE, check_sem),
        c("structure_prior", PRIMITIVE_TOLERANCE, check_structure),
        c("vit_block", COMPOSITE_TOLERANCE, check_vit),
        c("sab", COMPOSITE_TOLERANCE, check_sab),
        c("denoiser", COMPOSITE_TOLERANCE, check_denoiser),
        c("sdtl_end_to_end", COMPOSITE_TOLERANCE, check_end_to_end),
    ]
}

fn primitive_run(index: usize, seed: u64, scale: f64) -> Result<f64> {
    Ok((primitive_probes()[index].run)(seed, scale)?)
}

macro_rules! primitive_fns {
    ($($i:literal),*) => {
        [$(|seed, scale| primitive_run($i, seed, scale)),*]
    };
}

/// Primitives followed by composites; every name appears once.
pub fn all_checks() -> Vec<Check> {
    let prims = primitive_probes();
    let fns: [CheckFn; 25] = primitive_fns!(0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24);
    assert_eq!(prims.len(), fns.len(), "primitive list and dispatch table out of sync");
    let mut out: Vec<Check> = prims
        .iter()
        .zip(fns)
        .map(|(p, run)| Check { name: p.name, tolerance: p.tolerance, composite: false, run })
        .collect();
    out.extend(composite_checks());
    out
}

/// Run every check over `seeds`, keeping the worst error per check.
/// `fault` names a check whose analytic gradient is corrupted.
pub fn run_suite(seeds: &[u64], fault: Option<&str>) -> Vec<CheckResult> {
    all_checks()
        .into_iter()
        .map(|c| {
            let scale = if fault == Some(c.name) { FAULT_SCALE } else { 1.0 };
            let mut worst: f64 = 0.0;
            let mut error = None;
            for &s in seeds {
                match (c.run)(s, scale) {
                    Ok(e) => worst = worst.max(if e.is_nan() { f64::INFINITY } else { e }),
                    Err(e) => {
                        error = Some(format!("seed {s}: {e}"));
                        break;
                    }
                }
            }
            CheckResult { name: c.name, tolerance: c.tolerance, worst, error }
        })
        .collect()
}

/// `count` consecutive seeds derived from a root seed.
pub fn seeds_from(root: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| root.wrapping_mul(1000).wrapping_add(i)).collect()
}
