//! Subcommand bodies. Each returns `Ok(true)` on full success, `Ok(false)`
//! when some items failed but the batch completed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sdtl_core::checkpoint;
use sdtl_core::config::RunConfig;
use sdtl_core::data::{list_images, load_image, save_image, stem, synth_lowlight, ImageBuf, PairedDataset};
use sdtl_core::metrics::{psnr, ssim, FloatImage, MetricReport, MetricRow};
use sdtl_core::rng::{stream, Stream};
use sdtl_core::train::train_loop;
use sdtl_core::verify::{run_suite, seeds_from};

use crate::{EnhanceArgs, EvalArgs, GradcheckArgs, SynthArgs, TrainArgs};

pub fn synth_data(a: SynthArgs) -> Result<bool> {
    if !matches!(a.format.as_str(), "ppm" | "png") {
        bail!("--format must be ppm or png, got {}", a.format);
    }
    let mut sources = list_images(&a.src).with_context(|| format!("reading {}", a.src.display()))?;
    if sources.is_empty() {
        bail!("{}: no ppm/png images", a.src.display());
    }
    if let Some(n) = a.count {
        sources.truncate(n);
    }
    let (low_dir, high_dir) = (a.out.join("low"), a.out.join("high"));
    for d in [&low_dir, &high_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let mut rng = stream(a.seed, Stream::Synthesis);
    for src in &sources {
        let img = load_image(src)?;
        let low = synth_lowlight(&img, a.gamma, a.sigma, &mut rng)?;
        let name = format!("{}.{}", stem(src), a.format);
        save_image(&high_dir.join(&name), &img)?;
        save_image(&low_dir.join(&name), &low)?;
    }
    println!("wrote {} pairs to {}", sources.len(), a.out.display());
    Ok(true)
}

fn load_pairs(root: &Path) -> Result<Vec<(ImageBuf, ImageBuf)>> {
    let ds = PairedDataset::open(root)?;
    (0..ds.len()).map(|i| Ok(ds.load_pair(i)?)).collect()
}

pub fn train(a: TrainArgs) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects key=value, got '{kv}'"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let data = load_pairs(&a.data)?;
    let holdout = match &a.holdout {
        Some(root) => load_pairs(root)?.into_iter().next(),
        None => None,
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let log_path = a.out.join("train.log");
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let started = Instant::now();
    let mut write_err = None;
    let out = train_loop(&cfg, &data, holdout.as_ref(), Some(&a.out), |e| {
        let line = e.line();
        println!("{line}");
        if let Err(err) = writeln!(log, "{line}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context(log_path.display().to_string());
    }
    if let Some(last) = out.checkpoints.last() {
        println!(
            "done: {} epochs, {} optimizer steps in {:.1}s, checkpoint {}",
            cfg.epochs,
            out.trainer.adam.steps_taken(),
            started.elapsed().as_secs_f64(),
            last.display()
        );
    }
    Ok(true)
}

/// Stable per-file seed offset (FNV-1a of the name).
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Run `f` over `items` on up to `jobs` threads; results keep input order.
fn parallel_map<I: Sync, O: Send>(items: &[I], jobs: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let slots: Vec<Mutex<Option<O>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for j in 0..jobs {
            let (f, slots) = (&f, &slots);
            s.spawn(move || {
                for i in (j..items.len()).step_by(jobs) {
                    *slots[i].lock().unwrap() = Some(f(&items[i]));
                }
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().expect("every slot filled")).collect()
}

pub fn enhance(a: EnhanceArgs) -> Result<bool> {
    let model = checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let steps = a.steps.unwrap_or(model.cfg.ddim_steps);
    if steps == 0 || steps > model.cfg.steps {
        bail!("configuration error: --steps {steps} must be in 1..={} (T)", model.cfg.steps);
    }
    let inputs = list_images(&a.input)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let results = parallel_map(&inputs, a.jobs, |path: &PathBuf| -> Result<()> {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let img = load_image(path)?;
        let mut rng = stream(a.seed ^ name_hash(&name), Stream::Sampling);
        let out = model.enhance(&img.to_tensor(), steps, &mut rng)?;
        save_image(&a.out.join(&name), &ImageBuf::from_tensor(&out)?)?;
        Ok(())
    });
    let mut ok = true;
    for (path, r) in inputs.iter().zip(results) {
        match r {
            Ok(()) => println!("enhanced {}", path.display()),
            Err(e) => {
                eprintln!("{}: {e:#}", path.display());
                ok = false;
            }
        }
    }
    Ok(ok)
}

pub fn eval(a: EvalArgs) -> Result<bool> {
    let by_stem = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        Ok(list_images(dir)?.into_iter().map(|p| (stem(&p), p)).collect())
    };
    let (pred, gt) = (by_stem(&a.pred)?, by_stem(&a.gt)?);
    let mut ok = true;
    for name in pred.keys().filter(|k| !gt.contains_key(*k)) {
        eprintln!("unmatched prediction: {}", pred[name].display());
        ok = false;
    }
    for name in gt.keys().filter(|k| !pred.contains_key(*k)) {
        eprintln!("unmatched reference: {}", gt[name].display());
        ok = false;
    }
    let matched: Vec<(&String, &PathBuf, &PathBuf)> =
        pred.iter().filter_map(|(k, p)| gt.get(k).map(|g| (k, p, g))).collect();
    if matched.is_empty() {
        bail!("no prediction/reference pairs share a file stem");
    }
    let rows = parallel_map(&matched, a.jobs, |(_, p, g)| -> Result<MetricRow> {
        let (x, y) = (FloatImage::from_buf(&load_image(p)?), FloatImage::from_buf(&load_image(g)?));
        Ok(MetricRow {
            name: p.file_name().unwrap().to_string_lossy().to_string(),
            psnr: psnr(&x, &y)?,
            ssim: ssim(&x, &y)?,
        })
    });
    let mut report = MetricReport::default();
    for ((_, p, _), r) in matched.iter().zip(rows) {
        match r {
            Ok(row) => report.rows.push(row),
            Err(e) => {
                eprintln!("{}: {e:#}", p.display());
                ok = false;
            }
        }
    }
    if report.rows.is_empty() {
        bail!("no pair could be evaluated");
    }
    fs::write(&a.out, report.to_csv()).with_context(|| format!("writing {}", a.out.display()))?;
    let (p, s) = report.mean();
    println!("MEAN,{p:.6},{s:.6}");
    Ok(ok)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let seeds = seeds_from(a.seed, a.seeds.max(1));
    let started = Instant::now();
    let results = run_suite(&seeds, a.inject_fault.as_deref());
    let mut failed = Vec::new();
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        match &r.error {
            Some(e) => println!("{:<18} {status:<4} error: {e}", r.name),
            None => println!("{:<18} {status:<4} max_rel_err={:.3e} tol={:.0e}", r.name, r.worst, r.tolerance),
        }
        if !r.passed() {
            failed.push(r.name);
        }
    }
    println!("{} checks over {} seeds in {:.1}s", results.len(), seeds.len(), started.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(true)
    } else {
        eprintln!("failing checks: {}", failed.join(", "));
        Ok(false)
    }
}
