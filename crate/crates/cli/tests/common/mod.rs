#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtl_core::data::{procedural_scene, save_image};

pub const MICRO: &[&str] = &[
    "depth=2", "embed_dim=8", "heads=2", "patch=2", "crop=8", "sem_channels=2", "T=20", "ddim_steps=4", "batch=2",
];

pub fn sdtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdtl")).args(args).output().expect("spawn sdtl")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// `n` procedural `size×size` scenes saved as `scene_i.png` under `dir`.
pub fn write_sources(dir: &Path, n: usize, size: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        save_image(&dir.join(format!("scene_{i}.png")), &procedural_scene(size, size, &mut rng)).unwrap();
    }
}

/// Synthesize a paired dataset under `root` from `n` procedural scenes.
pub fn make_dataset(root: &Path, n: usize, size: usize) {
    let src = root.join("src");
    write_sources(&src, n, size, 7);
    let o = sdtl(&["synth-data", "--src", p(&src), "--out", p(root), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Train the micro model; returns the run's stdout.
pub fn train_micro(data: &Path, out: &Path, epochs: usize, extra: &[&str]) -> String {
    let epochs = epochs.to_string();
    let mut args = vec!["train", "--data", p(data), "--out", p(out), "--epochs", &epochs, "--seed", "3"];
    for kv in MICRO.iter().chain(extra) {
        args.extend(["--set", kv]);
    }
    let o = sdtl(&args);
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    stdout(&o)
}
