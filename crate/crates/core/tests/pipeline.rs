use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtl_core::checkpoint;
use sdtl_core::config::RunConfig;
use sdtl_core::data::{procedural_scene, synth_lowlight, ImageBuf};
use sdtl_core::dit::patchify;
use sdtl_core::nn::Module;
use sdtl_core::pipeline::{diffusion_target, to_signed, EnhanceOverrides, SdtlModel};
use sdtl_core::tensor::{no_grad, Tensor};
use sdtl_core::train::{train_loop, Trainer};
use sdtl_core::verify::micro_config;
use sdtl_core::wavelet::{dwt2_level2, iwt2, SubbandSet};

fn pair(size: usize, seed: u64) -> (ImageBuf, ImageBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let high = procedural_scene(size, size, &mut rng);
    let low = synth_lowlight(&high, 3.0, 0.03, &mut rng).unwrap();
    (low, high)
}

fn model(cfg: &RunConfig, seed: u64) -> SdtlModel<f32> {
    SdtlModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn default_config_shape_contract() {
    let cfg = RunConfig { depth: 2, ..RunConfig::default() };
    let m = model(&cfg, 0);
    let x = pair(256, 1).0.to_tensor::<f32>();
    let c = no_grad(|| m.condition(&x)).unwrap();
    assert_eq!(c.cond.shape(), &[3, 64, 64]);
    let input = Tensor::concat(&[Tensor::zeros(&[3, 64, 64]), c.cond.clone()], 0).unwrap();
    assert_eq!(input.shape(), &[6, 64, 64]);
    assert_eq!(patchify(&input, 4).unwrap().shape()[0], 256);
    let eps = no_grad(|| m.predict_noise(&Tensor::zeros(&[3, 64, 64]), 10, &c)).unwrap();
    assert_eq!(eps.shape(), &[3, 64, 64]);
}

#[test]
fn parameter_count_grows_with_depth() {
    let counts: Vec<usize> = [2, 4, 6]
        .iter()
        .map(|&depth| model(&RunConfig { depth, ..RunConfig::default() }, 0).param_count())
        .collect();
    assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
}

#[test]
fn target_round_trip() {
    let x = to_signed(&pair(16, 2).1.to_tensor::<f32>());
    let target = diffusion_target(&x).unwrap();
    assert_eq!(target.shape(), &[3, 4, 4]);
    let (l1, l2) = dwt2_level2(&x).unwrap();
    let ll1 = iwt2(&SubbandSet::from_parts(target.scale(4.0), l2.highs())).unwrap();
    let back = iwt2(&SubbandSet::from_parts(ll1, l1.highs())).unwrap();
    assert!(max_diff(&back.to_vec(), &x.to_vec()) < 1e-6);
}

#[test]
fn oracle_reconstruction_is_exact() {
    let cfg = RunConfig { crop: 32, ..micro_config() };
    let m = model(&cfg, 3);
    let (low, high) = pair(32, 4);
    let gt = high.to_tensor::<f32>();
    let (g1, g2) = dwt2_level2(&to_signed(&gt)).unwrap();
    let out = m
        .enhance_with(
            &low.to_tensor(),
            4,
            &mut ChaCha8Rng::seed_from_u64(0),
            EnhanceOverrides { x0: Some(g2.ll.scale(0.25)), highs1: Some(g1.highs()), highs2: Some(g2.highs()) },
        )
        .unwrap();
    assert!(max_diff(&out.to_vec(), &gt.to_vec()) <= 1e-5);
}

#[test]
fn low_light_ll_does_not_affect_losses() {
    let m = model(&micro_config(), 5);
    let (low, high) = pair(8, 6);
    let (x, y) = (low.to_tensor::<f32>(), high.to_tensor::<f32>());
    let (l1, l2) = dwt2_level2(&to_signed(&x)).unwrap();
    let run = |ll2: &Tensor<f32>| {
        let bands = SubbandSet::from_parts(ll2.clone(), l2.highs());
        no_grad(|| m.losses_from_highs(&x, &l1.highs(), &bands.highs(), &y, &mut ChaCha8Rng::seed_from_u64(1)))
            .unwrap()
    };
    let a = run(&l2.ll);
    let b = run(&l2.ll.add_scalar(0.37));
    assert_eq!(a.diffusion.item(), b.diffusion.item());
    assert_eq!(a.high_freq.item(), b.high_freq.item());
}

#[test]
fn zero_init_baselines() {
    let cfg = micro_config();
    let m = model(&cfg, 7);
    for heads in &m.heads {
        for h in heads {
            h.weight.set_data(vec![0.0; h.weight.numel()]).unwrap();
        }
    }
    let (low, high) = pair(8, 8);
    let (x, y) = (low.to_tensor::<f32>(), high.to_tensor::<f32>());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut diff = 0.0;
    let mut hf = 0.0;
    for _ in 0..200 {
        let l = no_grad(|| m.losses(&x, &y, &mut rng)).unwrap();
        diff += l.diffusion.item() as f64 / 200.0;
        hf = l.high_freq.item() as f64;
    }
    assert!((diff - 1.0).abs() < 0.1, "{diff}");
    let (g1, g2) = dwt2_level2(&to_signed(&y)).unwrap();
    let all: Vec<f32> = g1.highs().iter().chain(g2.highs().iter()).flat_map(|t| t.to_vec()).collect();
    let expect = all.iter().map(|v| v.abs() as f64).sum::<f64>() / all.len() as f64;
    assert!((hf - expect).abs() < 1e-5, "{hf} vs {expect}");
}

#[test]
fn gradients_reach_every_group() {
    let cfg = micro_config();
    let m = model(&cfg, 9);
    m.dit.head.weight.set_data(vec![0.1; m.dit.head.weight.numel()]).unwrap();
    let (low, high) = pair(8, 10);
    let l = m.losses(&low.to_tensor(), &high.to_tensor(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    l.total(0.1).unwrap().backward().unwrap();
    for prefix in ["prior.", "sem1.", "sem2.", "embed1.", "cond.", "head1.", "head2.", "dit.blocks.0.vit.", "dit.blocks.0.sab.", "dit.pos_embed", "dit.time_mlp."] {
        let norm: f32 = m
            .named_params("")
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .flat_map(|(_, t)| t.grad().unwrap_or_default())
            .map(|g| g.abs())
            .sum();
        assert!(norm > 0.0, "no gradient reaches {prefix}");
    }
}

#[test]
fn loss_decreases_on_a_repeated_pair() {
    let cfg = RunConfig { crop: 16, lr: 2e-3, batch: 1, ..micro_config() };
    let mut trainer = Trainer::new(&cfg).unwrap();
    let (low, high) = pair(16, 11);
    let batch = vec![(low.to_tensor(), high.to_tensor())];
    let totals: Vec<f64> = (0..50)
        .map(|_| {
            let l = trainer.train_batch(&batch, cfg.lr).unwrap();
            l.diffusion + cfg.lambda_hf * l.high_freq
        })
        .collect();
    let avg = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = avg(&totals[..10]);
    let last = avg(&totals[40..]);
    assert!(last < first, "moving average did not fall: {first} -> {last}");
}

#[test]
fn one_epoch_of_eight_pairs_is_one_step() {
    let cfg = RunConfig { crop: 8, batch: 8, epochs: 1, ..micro_config() };
    let data: Vec<_> = (0..8).map(|i| pair(12, 20 + i)).collect();
    let out = train_loop(&cfg, &data, None, None, |_| {}).unwrap();
    assert_eq!(out.trainer.adam.steps_taken(), 1);
    assert_eq!(out.logs[0].steps, 1);
    assert!(train_loop(&cfg, &[], None, None, |_| {}).is_err());
}

#[test]
fn lr_trace_over_120_epochs() {
    let cfg = RunConfig::default();
    let trainer_sched = sdtl_core::tensor::StepLr::new(cfg.lr, cfg.step_size, cfg.gamma).unwrap();
    for e in 0..120 {
        let expect = if e < 50 { 5e-4 } else if e < 100 { 4.5e-4 } else { 4.05e-4 };
        assert!((trainer_sched.lr_at(e) - expect).abs() < 1e-15, "epoch {e}");
    }
}

#[test]
fn checkpoint_round_trip_reproduces_next_loss() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { crop: 8, batch: 2, epochs: 2, ..micro_config() };
    let data: Vec<_> = (0..2).map(|i| pair(8, 30 + i)).collect();
    let out = train_loop(&cfg, &data, None, Some(dir.path()), |_| {}).unwrap();
    let path = out.checkpoints.last().unwrap();
    let loaded = checkpoint::load(path).unwrap();
    let a = checkpoint::collect(&out.trainer.model);
    let b = checkpoint::collect(&loaded);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.name, y.name);
        let bits = |v: &[f32]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.data), bits(&y.data));
    }
    let (x, y) = (data[0].0.to_tensor::<f32>(), data[0].1.to_tensor::<f32>());
    let l1 = no_grad(|| out.trainer.model.losses(&x, &y, &mut ChaCha8Rng::seed_from_u64(5))).unwrap();
    let l2 = no_grad(|| loaded.losses(&x, &y, &mut ChaCha8Rng::seed_from_u64(5))).unwrap();
    assert_eq!(l1.diffusion.item().to_bits(), l2.diffusion.item().to_bits());
    assert_eq!(l1.high_freq.item().to_bits(), l2.high_freq.item().to_bits());
}

#[test]
fn ablations_remove_their_groups() {
    let names = |cfg: RunConfig| -> Vec<String> { model(&cfg, 0).named_params("").into_iter().map(|(n, _)| n).collect() };
    let full = names(micro_config());
    let check = |cfg: RunConfig, removed: &dyn Fn(&str) -> bool| {
        let got = names(cfg);
        let expect: Vec<String> = full.iter().filter(|n| !removed(n)).cloned().collect();
        assert_eq!(got, expect);
        assert!(got.len() < full.len());
    };
    check(RunConfig { no_sem: true, ..micro_config() }, &|n| n.starts_with("sem"));
    check(RunConfig { no_sem_enhance: true, ..micro_config() }, &|n| n.contains(".enhance."));
    check(RunConfig { no_sem_fusion: true, ..micro_config() }, &|n| n.contains(".fusion."));
    check(RunConfig { no_sab: true, ..micro_config() }, &|n| n.contains("sab"));
}

#[test]
fn enhance_is_deterministic() {
    let m = model(&micro_config(), 12);
    let x = pair(16, 13).0.to_tensor::<f32>();
    let a = m.enhance(&x, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = m.enhance(&x, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
    assert_eq!(a.shape(), &[3, 16, 16]);
    assert!(a.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
}
