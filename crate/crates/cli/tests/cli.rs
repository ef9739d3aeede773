mod common;

use common::*;
use sdtl_core::checkpoint;
use sdtl_core::data::{load_image, save_image, ImageBuf};

#[test]
fn synth_data_writes_matching_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    write_sources(&src, 4, 16, 1);
    let out = dir.path().join("ds");
    let o = sdtl(&["synth-data", "--src", p(&src), "--out", p(&out), "--format", "png"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for sub in ["low", "high"] {
        assert_eq!(std::fs::read_dir(out.join(sub)).unwrap().count(), 4);
    }
    let high = load_image(&out.join("high/scene_0.png")).unwrap();
    let low = load_image(&out.join("low/scene_0.png")).unwrap();
    let mean = |b: &ImageBuf| b.pixels.iter().map(|&v| v as f64).sum::<f64>() / b.pixels.len() as f64;
    assert!(mean(&low) < mean(&high));
}

#[test]
fn identity_degradation_copies_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    write_sources(&src, 2, 12, 2);
    let out = dir.path().join("ds");
    let o = sdtl(&["synth-data", "--src", p(&src), "--out", p(&out), "--gamma", "1", "--sigma", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["scene_0.ppm", "scene_1.ppm"] {
        assert_eq!(std::fs::read(out.join("low").join(name)).unwrap(), std::fs::read(out.join("high").join(name)).unwrap());
    }
}

#[test]
fn missing_required_flag_is_usage_error() {
    let o = sdtl(&["synth-data", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sdtl(&["enhance", "--ckpt", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_logs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    make_dataset(&data, 3, 12);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let log_a = train_micro(&data, &a, 2, &[]);
    train_micro(&data, &b, 2, &[]);
    assert!(log_a.lines().next().unwrap().starts_with("epoch=0 lr=5e-4"), "{log_a}");
    let file_log = std::fs::read_to_string(a.join("train.log")).unwrap();
    assert_eq!(file_log.lines().count(), 2);
    assert_eq!(std::fs::read(a.join("final.sdtl")).unwrap(), std::fs::read(b.join("final.sdtl")).unwrap());
}

#[test]
fn no_sem_checkpoint_has_no_sem_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    make_dataset(&data, 2, 8);
    let out = dir.path().join("run");
    train_micro(&data, &out, 1, &["no_sem=true"]);
    let tensors = checkpoint::read(&out.join("final.sdtl")).unwrap();
    assert!(!tensors.is_empty());
    assert!(tensors.iter().all(|t| !t.name.starts_with("sem")));
}

#[test]
fn bad_config_key_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    make_dataset(&data, 1, 8);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "depth = 2\nwidth = 9\n").unwrap();
    let o = sdtl(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn enhance_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("ds");
    make_dataset(&data, 3, 16);
    let run = dir.path().join("run");
    train_micro(&data, &run, 1, &[]);
    let ckpt = run.join("final.sdtl");
    let low = data.join("low");
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    for (out, jobs) in [(&o1, "1"), (&o2, "3")] {
        let o = sdtl(&["enhance", "--ckpt", p(&ckpt), "--in", p(&low), "--out", p(out), "--seed", "9", "--jobs", jobs]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&o1).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in &names {
        assert_eq!(std::fs::read(o1.join(n)).unwrap(), std::fs::read(o2.join(n)).unwrap());
        assert_eq!(load_image(&o1.join(n)).unwrap().width, 16);
    }

    let o = sdtl(&["enhance", "--ckpt", p(&ckpt), "--in", p(&low), "--out", p(&o1), "--steps", "300"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("configuration error"), "{}", stderr(&o));

    let mixed = dir.path().join("mixed");
    std::fs::create_dir(&mixed).unwrap();
    std::fs::copy(low.join("scene_0.ppm"), mixed.join("good.ppm")).unwrap();
    save_image(&mixed.join("odd.ppm"), &ImageBuf::new(10, 10, vec![40; 300]).unwrap()).unwrap();
    let o3 = dir.path().join("o3");
    let o = sdtl(&["enhance", "--ckpt", p(&ckpt), "--in", p(&mixed), "--out", p(&o3)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("odd.ppm"), "{}", stderr(&o));
    assert!(o3.join("good.ppm").exists());
    assert!(!o3.join("odd.ppm").exists());
}

#[test]
fn eval_reports_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    write_sources(&gt, 3, 16, 4);
    let csv = dir.path().join("m.csv");
    let o = sdtl(&["eval", "--pred", p(&gt), "--gt", p(&gt), "--out", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("MEAN,99.000000,1.000000"), "{}", stdout(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with("filename")).count(), 4);

    let pred = dir.path().join("pred");
    write_sources(&pred, 2, 16, 5);
    std::fs::rename(pred.join("scene_1.png"), pred.join("other.png")).unwrap();
    let o = sdtl(&["eval", "--pred", p(&pred), "--gt", p(&gt), "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("other.png"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with("filename")).count(), 2);

    let empty = dir.path().join("none");
    write_sources(&empty, 1, 16, 6);
    std::fs::rename(empty.join("scene_0.png"), empty.join("zzz.png")).unwrap();
    let o = sdtl(&["eval", "--pred", p(&empty), "--gt", p(&gt), "--out", p(&csv)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_lists_every_check_once() {
    let o = sdtl(&["gradcheck", "--seeds", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    let names: Vec<&str> = out.lines().filter_map(|l| l.split_whitespace().next()).filter(|n| !n.chars().next().unwrap().is_ascii_digit()).collect();
    let mut uniq = names.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(names.len(), uniq.len());
    assert_eq!(names.len(), sdtl_core::verify::all_checks().len());

    let o = sdtl(&["gradcheck", "--seeds", "3", "--inject-fault", "matmul"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("matmul"));
}
