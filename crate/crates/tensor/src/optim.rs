//! Adam with a step-decay learning-rate schedule.

use crate::element::Element;
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Bias-corrected Adam. Moment buffers are kept per parameter, in the
/// order the parameters were registered.
#[derive(Debug, Clone)]
pub struct Adam<T: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently stored on `params`.
    /// Parameters without a gradient are treated as having a zero one.
    pub fn step(&mut self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(config_err(
                "adam",
                format!("optimizer tracks {} parameters, got {}", self.m.len(), params.len()),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            if p.numel() != m.len() {
                return Err(config_err("adam", format!("parameter {:?} changed size", p.shape())));
            }
            let Some(g) = p.grad() else {
                m.iter_mut().for_each(|x| *x *= b1);
                v.iter_mut().for_each(|x| *x *= b2);
                continue;
            };
            let lr = self.lr;
            let eps = self.eps;
            p.update_data(|w| {
                for i in 0..w.len() {
                    m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                    v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                    let m_hat = m[i].to_f64c() / bc1;
                    let v_hat = v[i].to_f64c() / bc2;
                    let delta = lr * m_hat / (v_hat.sqrt() + eps);
                    w[i] = T::from_f64c(w[i].to_f64c() - delta);
                }
            });
        }
        Ok(())
    }
}

/// `lr(e) = base_lr · gamma^floor(e / step_size)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLr {
    pub base_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn new(base_lr: f64, step_size: usize, gamma: f64) -> Result<Self> {
        if !(base_lr > 0.0) || step_size == 0 || !(gamma > 0.0 && gamma <= 1.0) {
            return Err(config_err(
                "step_lr",
                format!("need base_lr > 0, step_size > 0, gamma in (0,1]; got {base_lr}, {step_size}, {gamma}"),
            ));
        }
        Ok(StepLr {
            base_lr,
            step_size,
            gamma,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.gamma.powi((epoch / self.step_size) as i32)
    }
}
