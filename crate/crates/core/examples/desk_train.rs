//! Train the tiny configuration on a handful of synthetic pairs and report
//! the loss trajectory and training-set quality.
//!
//! ```text
//! cargo run --release -p sdtl-core --example desk_train -- [steps] [pairs]
//! ```

use std::time::Instant;

use sdtl_core::config::RunConfig;
use sdtl_core::data::{procedural_scene, synth_lowlight};
use sdtl_core::rng::{stream, Stream};
use sdtl_core::train::{evaluate_pair, Trainer};

fn main() -> sdtl_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(300);
    let n = args.get(1).copied().unwrap_or(4);
    let cfg = RunConfig { epochs: steps, ..RunConfig::tiny() };
    let mut rng = stream(cfg.seed, Stream::Synthesis);
    let data: Vec<_> = (0..n)
        .map(|_| {
            let high = procedural_scene(64, 64, &mut rng);
            let low = synth_lowlight(&high, 3.0, 0.03, &mut rng).unwrap();
            (low, high)
        })
        .collect();
    let mut trainer = Trainer::new(&cfg)?;
    let started = Instant::now();
    let mut window = Vec::new();
    for e in 0..steps {
        let log = trainer.run_epoch(&data)?;
        window.push(log.diffusion);
        if (e + 1) % 50 == 0 {
            let avg = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            println!(
                "step {:5}  diff(avg50)={avg:.4}  hf={:.4}  {:.1}s",
                e + 1,
                log.high_freq,
                started.elapsed().as_secs_f64()
            );
        }
    }
    for (i, (low, high)) in data.iter().enumerate() {
        let (p, s) = evaluate_pair(&trainer.model, low, high, cfg.seed)?;
        println!("pair {i}: psnr={p:.2} ssim={s:.3}");
    }
    Ok(())
}
