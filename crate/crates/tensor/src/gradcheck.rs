//! Central finite differences as an independent oracle for `backward`.

use crate::element::Element;
use crate::error::Result;
use crate::tensor::{no_grad, Tensor};

/// Step used for central differences in 64-bit mode.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Largest [`relative_error`] over paired coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for the requested coordinates of `x`.
/// `x` is perturbed in place and restored before returning.
pub fn finite_diff_coords<T: Element>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    coords: &[usize],
    h: f64,
) -> Vec<f64> {
    let original = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    no_grad(|| {
        for &i in coords {
            let mut probe = original.clone();
            probe[i] = T::from_f64c(original[i].to_f64c() + h);
            x.set_data(probe.clone()).expect("same size");
            let plus = f(x).to_f64c();
            probe[i] = T::from_f64c(original[i].to_f64c() - h);
            x.set_data(probe).expect("same size");
            let minus = f(x).to_f64c();
            out.push((plus - minus) / (2.0 * h));
        }
        x.set_data(original.clone()).expect("same size");
    });
    out
}

/// Full central-difference gradient of scalar `f` at `x`, same shape as `x`.
pub fn finite_diff_grad<T: Element>(f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, h: f64) -> Tensor<T> {
    let coords: Vec<usize> = (0..x.numel()).collect();
    let g = finite_diff_coords(f, x, &coords, h);
    Tensor::from_vec(g.into_iter().map(T::from_f64c).collect(), x.shape()).expect("shape preserved")
}

/// Up to `max` coordinates spread evenly over `0..n`.
pub fn spread_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max + (n / max) / 2).collect()
}

/// Compare `backward` against central differences for the given
/// `(parameter, coordinates)` pairs of a scalar loss. Returns the maximum
/// relative error. Existing gradients on the parameters are cleared.
pub fn check_gradients<T: Element>(
    targets: &[(Tensor<T>, Vec<usize>)],
    loss: impl Fn() -> Result<Tensor<T>>,
    h: f64,
) -> Result<f64> {
    check_gradients_scaled(targets, loss, h, 1.0)
}

/// [`check_gradients`] with the analytic side multiplied by
/// `analytic_scale`; anything but 1 simulates a broken backward rule.
pub fn check_gradients_scaled<T: Element>(
    targets: &[(Tensor<T>, Vec<usize>)],
    loss: impl Fn() -> Result<Tensor<T>>,
    h: f64,
    analytic_scale: f64,
) -> Result<f64> {
    for (p, _) in targets {
        p.zero_grad();
    }
    loss()?.backward()?;
    let mut worst: f64 = 0.0;
    for (p, coords) in targets {
        let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
        let analytic: Vec<f64> = coords.iter().map(|&i| grad[i].to_f64c() * analytic_scale).collect();
        let mut failed = None;
        let numeric = finite_diff_coords(
            |_| match loss() {
                Ok(l) => l.item(),
                Err(e) => {
                    failed = Some(e);
                    T::zero()
                }
            },
            p,
            coords,
            h,
        );
        if let Some(e) = failed {
            return Err(e);
        }
        worst = worst.max(max_relative_error(&analytic, &numeric));
        p.zero_grad();
    }
    Ok(worst)
}
