//! Randomised finite-difference probes, one per differentiable primitive.
//!
//! Each probe draws shapes and values from its seed, reduces the op output
//! to a scalar with random weights, and reports the worst relative error
//! between `backward` and central differences over every input coordinate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{check_gradients_scaled, DEFAULT_STEP};
use crate::tensor::{no_grad, Tensor};

/// Threshold for single primitives.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;
/// Threshold for composite blocks built from many primitives.
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

/// `run(seed, analytic_scale)` returns the max relative error. An
/// `analytic_scale` other than 1 corrupts the analytic gradient, which
/// must make the probe fail.
pub type ProbeFn = fn(u64, f64) -> Result<f64>;

#[derive(Clone, Copy)]
pub struct Probe {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: ProbeFn,
}

impl std::fmt::Debug for Probe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Probe").field("name", &self.name).field("tolerance", &self.tolerance).finish()
    }
}

type T64 = Tensor<f64>;

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> T64 {
    Tensor::rand_uniform(shape, lo, hi, rng).into_param()
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Check `f(inputs)` reduced by a random weighting.
pub fn weighted_check(
    rng: &mut ChaCha8Rng,
    inputs: &[T64],
    f: impl Fn(&[T64]) -> Result<T64>,
    scale: f64,
) -> Result<f64> {
    let shape = no_grad(|| f(inputs))?.shape().to_vec();
    let w = Tensor::rand_uniform(&shape, -1.0, 1.0, rng);
    let targets: Vec<(T64, Vec<usize>)> = inputs.iter().map(|t| (t.clone(), (0..t.numel()).collect())).collect();
    check_gradients_scaled(&targets, || f(inputs)?.mul(&w).map(|y| y.sum()), DEFAULT_STEP, scale)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probe_add(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (a, b) = (dim(&mut r, 1, 4), dim(&mut r, 1, 5));
    let x = uniform(&[a, b], -1.0, 1.0, &mut r);
    let y = uniform(&[b], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x, y], |t| t[0].add(&t[1]), scale)
}

fn probe_sub(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (a, b) = (dim(&mut r, 1, 4), dim(&mut r, 1, 5));
    let x = uniform(&[a, 1], -1.0, 1.0, &mut r);
    let y = uniform(&[a, b], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x, y], |t| t[0].sub(&t[1]), scale)
}

fn probe_mul(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (c, h, w) = (dim(&mut r, 1, 3), dim(&mut r, 1, 4), dim(&mut r, 1, 4));
    let x = uniform(&[c, h, w], -1.0, 1.0, &mut r);
    let g = uniform(&[c, 1, 1], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x, g], |t| t[0].mul(&t[1]), scale)
}

fn probe_div(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let n = dim(&mut r, 1, 6);
    let x = uniform(&[n], -1.0, 1.0, &mut r);
    let y = uniform(&[n], 0.5, 2.0, &mut r);
    weighted_check(&mut r, &[x, y], |t| t[0].div(&t[1]), scale)
}

fn probe_scale(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let n = dim(&mut r, 1, 6);
    let s = r.random_range(-3.0..3.0);
    let x = uniform(&[n], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x], move |t| Ok(t[0].scale(s).add_scalar(0.5)), scale)
}

macro_rules! unary_probe {
    ($fn_name:ident, $method:ident, $lo:expr, $hi:expr) => {
        fn $fn_name(seed: u64, scale: f64) -> Result<f64> {
            let mut r = rng_for(seed);
            let (a, b) = (dim(&mut r, 1, 4), dim(&mut r, 1, 6));
            let x = uniform(&[a, b], $lo, $hi, &mut r);
            weighted_check(&mut r, &[x], |t| Ok(t[0].$method()), scale)
        }
    };
}

unary_probe!(probe_sigmoid, sigmoid, -4.0, 4.0);
unary_probe!(probe_gelu, gelu, -3.0, 3.0);
unary_probe!(probe_exp, exp, -2.0, 2.0);
unary_probe!(probe_sqrt, sqrt, 0.2, 3.0);
unary_probe!(probe_square, square, -2.0, 2.0);
unary_probe!(probe_tanh, tanh, -2.0, 2.0);
unary_probe!(probe_neg, neg, -2.0, 2.0);

fn probe_abs(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let n = dim(&mut r, 1, 8);
    // Keep clear of the kink at 0.
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..2.0);
            if r.random::<bool>() { m } else { -m }
        })
        .collect();
    let x = Tensor::from_vec(vals, &[n])?.into_param();
    weighted_check(&mut r, &[x], |t| Ok(t[0].abs()), scale)
}

fn probe_matmul(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (m, k, n) = (dim(&mut r, 1, 5), dim(&mut r, 1, 5), dim(&mut r, 1, 5));
    let a = uniform(&[m, k], -1.0, 1.0, &mut r);
    let b = uniform(&[k, n], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[a, b], |t| t[0].matmul(&t[1]), scale)
}

fn probe_bmm(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (bt, m, k, n) = (dim(&mut r, 1, 3), dim(&mut r, 1, 4), dim(&mut r, 1, 4), dim(&mut r, 1, 4));
    let a = uniform(&[bt, m, k], -1.0, 1.0, &mut r);
    let b = uniform(&[bt, k, n], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[a, b], |t| t[0].bmm(&t[1]), scale)
}

fn probe_softmax(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (a, b, c) = (dim(&mut r, 2, 3), dim(&mut r, 2, 7), dim(&mut r, 2, 3));
    let axis = r.random_range(0..3);
    let x = uniform(&[a, b, c], -2.0, 2.0, &mut r);
    weighted_check(&mut r, &[x], move |t| t[0].softmax(axis), scale)
}

fn probe_layer_norm(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (rows, d) = (dim(&mut r, 1, 4), dim(&mut r, 2, 9));
    let x = uniform(&[rows, d], -2.0, 2.0, &mut r);
    let g = uniform(&[d], 0.5, 1.5, &mut r);
    let b = uniform(&[d], -0.5, 0.5, &mut r);
    weighted_check(&mut r, &[x, g, b], |t| t[0].layer_norm(&t[1], &t[2]), scale)
}

fn probe_conv2d(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (cin, cout) = (dim(&mut r, 1, 3), dim(&mut r, 1, 3));
    let (h, w) = (dim(&mut r, 3, 6), dim(&mut r, 3, 6));
    let k = if r.random::<bool>() { 3 } else { 1 };
    let stride = dim(&mut r, 1, 2);
    let pad = if k == 3 { 1 } else { 0 };
    let x = uniform(&[cin, h, w], -1.0, 1.0, &mut r);
    let wt = uniform(&[cout, cin, k, k], -1.0, 1.0, &mut r);
    let b = uniform(&[cout], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x, wt, b], move |t| t[0].conv2d(&t[1], Some(&t[2]), stride, pad), scale)
}

fn probe_global_avg_pool(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let x = uniform(&[dim(&mut r, 1, 4), dim(&mut r, 1, 5), dim(&mut r, 1, 5)], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x], |t| t[0].global_avg_pool(), scale)
}

fn probe_reshape(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (a, b) = (dim(&mut r, 1, 4), dim(&mut r, 1, 4));
    let x = uniform(&[a, b], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x], move |t| t[0].reshape(&[b, a]), scale)
}

fn probe_permute(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let x = uniform(&[dim(&mut r, 1, 3), dim(&mut r, 1, 4), dim(&mut r, 1, 3)], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x], |t| t[0].permute(&[2, 0, 1]), scale)
}

fn probe_concat(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let (h, w) = (dim(&mut r, 1, 3), dim(&mut r, 1, 3));
    let a = uniform(&[dim(&mut r, 1, 3), h, w], -1.0, 1.0, &mut r);
    let b = uniform(&[dim(&mut r, 1, 3), h, w], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[a, b], |t| Tensor::concat(t, 0), scale)
}

fn probe_narrow(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let n = dim(&mut r, 2, 6);
    let x = uniform(&[dim(&mut r, 1, 3), n], -1.0, 1.0, &mut r);
    let start = r.random_range(0..n - 1);
    weighted_check(&mut r, &[x], move |t| t[0].narrow(1, start, n - start - 1), scale)
}

fn probe_sum(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let x = uniform(&[dim(&mut r, 1, 4), dim(&mut r, 1, 4)], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x], |t| Ok(t[0].sum()), scale)
}

fn probe_mean(seed: u64, scale: f64) -> Result<f64> {
    let mut r = rng_for(seed);
    let x = uniform(&[dim(&mut r, 1, 4), dim(&mut r, 1, 4)], -1.0, 1.0, &mut r);
    weighted_check(&mut r, &[x], |t| Ok(t[0].mean()), scale)
}

fn prim(name: &'static str, run: ProbeFn) -> Probe {
    Probe {
        name,
        tolerance: PRIMITIVE_TOLERANCE,
        run,
    }
}

/// Every differentiable primitive of the engine, each listed once.
pub fn primitive_probes() -> Vec<Probe> {
    vec![
        prim("add", probe_add),
        prim("sub", probe_sub),
        prim("mul", probe_mul),
        prim("div", probe_div),
        prim("scale", probe_scale),
        prim("neg", probe_neg),
        prim("sigmoid", probe_sigmoid),
        prim("gelu", probe_gelu),
        prim("exp", probe_exp),
        prim("sqrt", probe_sqrt),
        prim("square", probe_square),
        prim("abs", probe_abs),
        prim("tanh", probe_tanh),
        prim("matmul", probe_matmul),
        prim("bmm", probe_bmm),
        prim("softmax", probe_softmax),
        prim("layer_norm", probe_layer_norm),
        prim("conv2d", probe_conv2d),
        prim("global_avg_pool", probe_global_avg_pool),
        prim("reshape", probe_reshape),
        prim("permute", probe_permute),
        prim("concat", probe_concat),
        prim("narrow", probe_narrow),
        prim("sum", probe_sum),
        prim("mean", probe_mean),
    ]
}
