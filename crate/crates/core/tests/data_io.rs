use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtl_core::data::{
    load_image, procedural_scene, random_crop_pair, save_image, synth_lowlight, ImageBuf, PairedDataset,
};
use sdtl_core::SdtlError;

fn random_buf(w: usize, h: usize, seed: u64) -> ImageBuf {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuf::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

#[test]
fn lossless_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_buf(16, 16, 1);
    for ext in ["ppm", "png"] {
        let p = dir.path().join(format!("a.{ext}"));
        save_image(&p, &img).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }
}

#[test]
fn sixteen_bit_png_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("deep.png");
    let f = std::fs::File::create(&p).unwrap();
    let mut enc = png::Encoder::new(f, 2, 2);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut w = enc.write_header().unwrap();
    w.write_image_data(&[0u8; 24]).unwrap();
    w.finish().unwrap();
    assert!(matches!(load_image(&p), Err(SdtlError::Format { .. })));
}

#[test]
fn truncated_ppm_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.ppm");
    let mut bytes = b"P6\n4 4\n255\n".to_vec();
    bytes.extend([0u8; 40]);
    std::fs::write(&p, bytes).unwrap();
    let msg = load_image(&p).unwrap_err().to_string();
    assert!(msg.contains("expected 48") && msg.contains("found 40") && msg.contains("byte 11"), "{msg}");
}

#[test]
fn crop_offsets_are_shared_and_in_range() {
    let low = random_buf(600, 400, 2);
    let high = random_buf(600, 400, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let (a, b, (x, y)) = random_crop_pair(&low, &high, 256, &mut rng).unwrap();
        assert!(x <= 344 && y <= 144);
        assert_eq!(a, low.crop(x, y, 256));
        assert_eq!(b, high.crop(x, y, 256));
        assert_eq!(a.width % 4, 0);
    }
}

#[test]
fn dataset_pairs_by_stem_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["low", "high"] {
        std::fs::create_dir(dir.path().join(sub)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["b", "a", "c"] {
        let high = procedural_scene(8, 8, &mut rng);
        save_image(&dir.path().join("high").join(format!("{name}.png")), &high).unwrap();
        let low = synth_lowlight(&high, 3.0, 0.0, &mut rng).unwrap();
        save_image(&dir.path().join("low").join(format!("{name}.ppm")), &low).unwrap();
    }
    let ds = PairedDataset::open(dir.path()).unwrap();
    let stems: Vec<String> = ds.pairs.iter().map(|(l, _)| sdtl_core::data::stem(l)).collect();
    assert_eq!(stems, ["a", "b", "c"]);
    assert!(ds.load_pair(0).is_ok());
    std::fs::remove_file(dir.path().join("high").join("c.png")).unwrap();
    assert!(matches!(PairedDataset::open(dir.path()), Err(SdtlError::Input(_))));
    let empty = tempfile::tempdir().unwrap();
    std::fs::create_dir(empty.path().join("low")).unwrap();
    std::fs::create_dir(empty.path().join("high")).unwrap();
    assert!(matches!(PairedDataset::open(empty.path()), Err(SdtlError::Input(_))));
}

#[test]
fn float_conversion_stays_within_one_step() {
    let img = random_buf(5, 3, 6);
    let t = img.to_tensor::<f32>();
    for (i, px) in img.pixels.iter().enumerate() {
        let c = i % 3;
        let p = i / 3;
        let v = t.to_vec()[c * 15 + p];
        assert!((v - *px as f32 / 255.0).abs() <= 1.0 / 255.0);
    }
}
