use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtl_tensor::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};
use sdtl_tensor::probes::primitive_probes;
use sdtl_tensor::{no_grad, Tensor, TensorError};

#[test]
fn every_primitive_passes_finite_differences_over_twenty_seeds() {
    for probe in primitive_probes() {
        for seed in 0..20 {
            let err = (probe.run)(seed, 1.0).unwrap();
            assert!(err < probe.tolerance, "{} seed {seed}: rel err {err:e}", probe.name);
        }
    }
}

#[test]
fn corrupted_backward_is_detected() {
    for probe in primitive_probes() {
        let err = (probe.run)(3, 1.01).unwrap();
        assert!(err >= probe.tolerance, "{} did not notice a 1% gradient error", probe.name);
    }
}

#[test]
fn probe_names_unique() {
    let mut names: Vec<_> = primitive_probes().iter().map(|p| p.name).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}

#[test]
fn sum_loss_gives_ones() {
    let x = Tensor::<f32>::from_vec(vec![0.5, -1.0, 2.0, 3.0], &[2, 2]).unwrap().into_param();
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
}

#[test]
fn mse_against_detached_copy_is_stationary() {
    let x = Tensor::<f32>::from_vec(vec![0.5, -1.0, 2.0], &[3]).unwrap().into_param();
    let target = x.detach();
    x.sub(&target).unwrap().square().mean().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0; 3]);
    assert!(target.grad().is_none());
}

#[test]
fn backward_twice_accumulates_double() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Tensor::<f64>::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng).into_param();
    let b = Tensor::<f64>::rand_uniform(&[4, 2], -1.0, 1.0, &mut rng).into_param();
    let loss = a.matmul(&b).unwrap().gelu().sum();
    loss.backward().unwrap();
    let once = a.grad().unwrap();
    loss.backward().unwrap();
    let twice = a.grad().unwrap();
    for (o, t) in once.iter().zip(&twice) {
        assert_eq!(2.0 * o, *t);
    }
}

#[test]
fn backward_on_non_scalar_is_contract_error() {
    let x = Tensor::<f32>::ones(&[2]).into_param();
    let y = x.scale(2.0);
    assert!(matches!(y.backward(), Err(TensorError::Contract(_))));
}

#[test]
fn fan_out_accumulates() {
    let x = Tensor::<f64>::scalar(1.5).into_param();
    // y = x*x + x  ->  dy/dx = 2x + 1
    let y = x.mul(&x).unwrap().add(&x).unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0]);
}

#[test]
fn no_grad_records_nothing() {
    let x = Tensor::<f32>::ones(&[2]).into_param();
    let y = no_grad(|| x.scale(3.0));
    assert!(!y.requires_grad());
    assert!(y.op_name().is_none());
}

#[test]
fn softmax_of_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = Tensor::<f64>::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng).into_param();
    let b = Tensor::<f64>::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
    let f = |a: &Tensor<f64>| a.matmul(&b).unwrap().softmax(1).unwrap().mul(&w).unwrap().sum();
    f(&a).backward().unwrap();
    let numeric = finite_diff_grad(|a| f(a).item(), &a, DEFAULT_STEP);
    let err = max_relative_error(&a.grad().unwrap(), &numeric.to_vec());
    assert!(err < 1e-5, "{err:e}");
}

#[test]
fn matmul_gradcheck_4x5_by_5x3() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = Tensor::<f64>::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng).into_param();
    let b = Tensor::<f64>::rand_uniform(&[5, 3], -1.0, 1.0, &mut rng).into_param();
    a.matmul(&b).unwrap().square().sum().backward().unwrap();
    let na = finite_diff_grad(|a| a.matmul(&b).unwrap().square().sum().item(), &a, DEFAULT_STEP);
    let nb = finite_diff_grad(|b| a.matmul(b).unwrap().square().sum().item(), &b, DEFAULT_STEP);
    assert!(max_relative_error(&a.grad().unwrap(), &na.to_vec()) < 1e-5);
    assert!(max_relative_error(&b.grad().unwrap(), &nb.to_vec()) < 1e-5);
}

#[test]
fn global_avg_pool_gradient_is_uniform() {
    let x = Tensor::<f64>::full(&[2, 3, 4], 0.7).into_param();
    x.global_avg_pool().unwrap().sum().backward().unwrap();
    let numeric = finite_diff_grad(|x| x.global_avg_pool().unwrap().sum().item(), &x, DEFAULT_STEP);
    for (a, n) in x.grad().unwrap().iter().zip(numeric.to_vec()) {
        assert!((a - 1.0 / 12.0).abs() < 1e-12);
        assert!((n - 1.0 / 12.0).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn add_commutes_under_broadcast(
        rows in 1usize..4, cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Tensor::<f32>::rand_uniform(&[rows, cols], -5.0, 5.0, &mut rng);
        let b = Tensor::<f32>::rand_uniform(&[cols], -5.0, 5.0, &mut rng);
        prop_assert_eq!(a.add(&b).unwrap().to_vec(), b.add(&a).unwrap().to_vec());
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::rand_uniform(&[3, n], -30.0, 30.0, &mut rng);
        let y = x.softmax(1).unwrap().to_vec();
        for row in y.chunks(n) {
            prop_assert!(row.iter().all(|&v| v >= 0.0 && v <= 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_output_centered(seed in any::<u64>(), d in 2usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::rand_uniform(&[4, d], -10.0, 10.0, &mut rng);
        let y = x.layer_norm(&Tensor::ones(&[d]), &Tensor::zeros(&[d])).unwrap().to_vec();
        for row in y.chunks(d) {
            let mean: f32 = row.iter().sum::<f32>() / d as f32;
            prop_assert!(mean.abs() < 1e-5);
        }
    }
}
