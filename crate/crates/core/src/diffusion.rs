//! Noise schedule, forward corruption, the ε-prediction objective and the
//! DDPM / DDIM reverse processes.
//!
//! Timesteps are 0-based: `t ∈ 0..T`, with `alpha_bars[0] = 1 − β_0`.
//! Models are passed as closures `(x_t, t) -> ε̂` so that any conditioning
//! is captured by the caller.

use rand::Rng;
use sdtl_tensor::{standard_normal_vec, Element, Tensor};

use crate::error::{Result, SdtlError};

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub sqrt_alpha_bars: Vec<f64>,
    pub sqrt_one_minus_alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(SdtlError::Contract(format!("timestep {t} outside 0..{}", self.steps())));
        }
        Ok(())
    }
}

/// Betas linearly spaced from `beta_start` to `beta_end` inclusive.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(SdtlError::Config(format!(
            "schedule needs T >= 1 and 0 < beta_start <= beta_end < 1, got T={steps}, [{beta_start}, {beta_end}]"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars: Vec<f64> = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        sqrt_alpha_bars: alpha_bars.iter().map(|a| a.sqrt()).collect(),
        sqrt_one_minus_alpha_bars: alpha_bars.iter().map(|a| (1.0 - a).sqrt()).collect(),
        betas,
        alphas,
        alpha_bars,
    })
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`. Differentiable in both inputs.
pub fn q_sample<T: Element>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check(t)?;
    Ok(x0
        .scale(sched.sqrt_alpha_bars[t])
        .add(&eps.scale(sched.sqrt_one_minus_alpha_bars[t]))?)
}

pub fn gaussian<T: Element, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_f64_slice(&standard_normal_vec(n, rng), shape).expect("shape product matches")
}

/// One draw of the ε-prediction objective: uniform `t`, standard-normal
/// `ε`, `mean((ε − model(x_t, t))²)`. Returns the loss and the drawn `t`.
pub fn training_loss<T: Element, R: Rng + ?Sized>(
    model: impl FnOnce(&Tensor<T>, usize) -> Result<Tensor<T>>,
    x0: &Tensor<T>,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Tensor<T>, usize)> {
    let t = rng.random_range(0..sched.steps());
    let eps = gaussian(x0.shape(), rng);
    let xt = q_sample(x0, t, &eps, sched)?;
    let pred = model(&xt, t)?;
    Ok((pred.sub(&eps)?.square().mean(), t))
}

/// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
pub fn predict_x0<T: Element>(xt: &Tensor<T>, eps: &Tensor<T>, t: usize, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check(t)?;
    Ok(xt
        .sub(&eps.scale(sched.sqrt_one_minus_alpha_bars[t]))?
        .scale(1.0 / sched.sqrt_alpha_bars[t]))
}

/// Posterior mean `(1/√α_t)(x_t − β_t/√(1−ᾱ_t)·ε̂)`.
pub fn ddpm_mean<T: Element>(xt: &Tensor<T>, eps: &Tensor<T>, t: usize, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check(t)?;
    let coef = sched.betas[t] / sched.sqrt_one_minus_alpha_bars[t];
    Ok(xt.sub(&eps.scale(coef))?.scale(1.0 / sched.alphas[t].sqrt()))
}

/// One ancestral step with `σ_t² = β_t`; no noise is added at `t = 0`.
pub fn ddpm_step<T: Element, R: Rng + ?Sized>(
    model: impl FnOnce(&Tensor<T>, usize) -> Result<Tensor<T>>,
    xt: &Tensor<T>,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Tensor<T>> {
    sched.check(t)?;
    let eps = model(xt, t)?;
    let mean = ddpm_mean(xt, &eps, t, sched)?;
    if t == 0 {
        return Ok(mean);
    }
    let z: Tensor<T> = gaussian(xt.shape(), rng);
    Ok(mean.add(&z.scale(sched.betas[t].sqrt()))?)
}

/// Evenly spaced integer timesteps from `T−1` down to 0.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(SdtlError::Config(format!(
            "DDIM needs 1 <= steps <= T, got steps={steps} with T={total}"
        )));
    }
    if steps == 1 {
        return Ok(vec![total - 1]);
    }
    let mut ts: Vec<usize> = (0..steps)
        .map(|i| ((total - 1) as f64 * (steps - 1 - i) as f64 / (steps - 1) as f64).round() as usize)
        .collect();
    ts.dedup();
    Ok(ts)
}

/// Deterministic (η = 0) DDIM from `x_{T−1} ~ N(0, I)`. Returns the final
/// `x̂0`, clamped to `[−1, 1]`.
pub fn ddim_sample<T: Element, R: Rng + ?Sized>(
    mut model: impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
    shape: &[usize],
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let ts = ddim_timesteps(sched.steps(), steps)?;
    let xt = gaussian(shape, rng);
    ddim_from(&mut model, xt, &ts, sched)
}

/// DDIM trajectory from a given starting state over explicit timesteps.
pub fn ddim_from<T: Element>(
    model: &mut impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
    mut xt: Tensor<T>,
    ts: &[usize],
    sched: &NoiseSchedule,
) -> Result<Tensor<T>> {
    let mut x0 = xt.clone();
    for (i, &t) in ts.iter().enumerate() {
        let eps = model(&xt, t)?;
        x0 = predict_x0(&xt, &eps, t, sched)?;
        if let Some(&prev) = ts.get(i + 1) {
            xt = x0
                .scale(sched.sqrt_alpha_bars[prev])
                .add(&eps.scale(sched.sqrt_one_minus_alpha_bars[prev]))?;
        }
    }
    let clamped = x0.to_vec().into_iter().map(|v| v.max(-T::one()).min(T::one())).collect();
    Ok(Tensor::from_vec(clamped, x0.shape())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = make_linear_schedule(200, 1e-4, 2e-2).unwrap();
        assert_eq!(s.betas[0], 1e-4);
        assert!((s.betas[199] - 2e-2).abs() < 1e-15);
        assert!((s.alpha_bars[0] - (1.0 - 1e-4)).abs() < 1e-15);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bars.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn schedule_rejects_bad_range() {
        for (a, b) in [(0.0, 0.1), (0.2, 0.1), (0.1, 1.0)] {
            assert!(matches!(make_linear_schedule(10, a, b), Err(SdtlError::Config(_))));
        }
    }

    #[test]
    fn timestep_grid() {
        assert_eq!(ddim_timesteps(200, 10).unwrap(), vec![199, 177, 155, 133, 111, 88, 66, 44, 22, 0]);
        assert_eq!(ddim_timesteps(5, 5).unwrap(), vec![4, 3, 2, 1, 0]);
        assert!(ddim_timesteps(200, 300).is_err());
        assert!(ddim_timesteps(200, 0).is_err());
    }

    #[test]
    fn noise_free_q_sample() {
        let s = make_linear_schedule(10, 1e-3, 0.2).unwrap();
        let x0 = Tensor::<f64>::from_vec(vec![1.0, -2.0], &[2]).unwrap();
        let xt = q_sample(&x0, 4, &Tensor::zeros(&[2]), &s).unwrap().to_vec();
        assert!((xt[0] - s.sqrt_alpha_bars[4]).abs() < 1e-15);
        assert!(q_sample(&x0, 10, &x0, &s).is_err());
    }
}
