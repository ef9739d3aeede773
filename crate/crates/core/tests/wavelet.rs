use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtl_core::tensor::Tensor;
use sdtl_core::wavelet::{dwt2, dwt2_level2, iwt2, iwt2_level2};

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn energy(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum()
}

#[test]
fn full_size_input_gives_64_plane() {
    let x = Tensor::<f32>::zeros(&[3, 256, 256]);
    let (l1, l2) = dwt2_level2(&x).unwrap();
    assert_eq!(l1.ll.shape(), &[3, 128, 128]);
    assert_eq!(l2.hh.shape(), &[3, 64, 64]);
    assert_eq!(x.numel(), 16 * l2.ll.numel());
}

#[test]
fn constant_input_has_no_detail_at_either_level() {
    let (l1, l2) = dwt2_level2(&Tensor::<f32>::full(&[3, 8, 8], 0.7)).unwrap();
    for b in l1.highs().iter().chain(l2.highs().iter()) {
        assert!(b.to_vec().iter().all(|&v| v.abs() < 1e-6));
    }
}

#[test]
fn reconstruction_on_many_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let x = Tensor::<f32>::rand_uniform(&[3, 64, 64], -1.0, 1.0, &mut rng);
        let s = dwt2(&x).unwrap();
        assert!(max_abs_diff(&iwt2(&s).unwrap().to_vec(), &x.to_vec()) < 1e-6);
        let (l1, l2) = dwt2_level2(&x).unwrap();
        assert!(max_abs_diff(&iwt2_level2(&l1.highs(), &l2).unwrap().to_vec(), &x.to_vec()) < 1e-6);
        let e = energy(&x.to_vec());
        assert!((s.energy() - e).abs() <= 1e-5 * e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perfect_reconstruction(seed in any::<u64>(), c in 1usize..4, h in 1usize..6, w in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::rand_uniform(&[c, 4 * h, 4 * w], -2.0, 2.0, &mut rng);
        let (l1, l2) = dwt2_level2(&x).unwrap();
        let back = iwt2_level2(&l1.highs(), &l2).unwrap();
        prop_assert!(max_abs_diff(&back.to_vec(), &x.to_vec()) < 1e-6);
    }

    #[test]
    fn parseval(seed in any::<u64>(), h in 1usize..8, w in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::rand_uniform(&[2, 2 * h, 2 * w], -1.0, 1.0, &mut rng);
        let e = energy(&x.to_vec());
        prop_assert!((dwt2(&x).unwrap().energy() - e).abs() <= 1e-5 * e);
    }

    #[test]
    fn linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::rand_uniform(&[3, 8, 6], -1.0, 1.0, &mut rng);
        let y = Tensor::<f32>::rand_uniform(&[3, 8, 6], -1.0, 1.0, &mut rng);
        let lhs = dwt2(&x.scale(a).add(&y.scale(b)).unwrap()).unwrap();
        let (sx, sy) = (dwt2(&x).unwrap(), dwt2(&y).unwrap());
        for (l, (p, q)) in [&lhs.ll, &lhs.hl, &lhs.lh, &lhs.hh]
            .iter()
            .zip([&sx.ll, &sx.hl, &sx.lh, &sx.hh].iter().zip([&sy.ll, &sy.hl, &sy.lh, &sy.hh]))
        {
            let rhs = p.scale(a).add(&q.scale(b)).unwrap();
            prop_assert!(max_abs_diff(&l.to_vec(), &rhs.to_vec()) < 1e-5);
        }
    }
}
