//! Image buffers, PPM/PNG I/O, paired datasets, cropping and synthetic
//! low-light degradation.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sdtl_tensor::{Element, Tensor};

use crate::error::{Result, SdtlError};

/// Interleaved 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(SdtlError::Input(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(ImageBuf { width, height, pixels })
    }

    /// Planar `[3,H,W]` tensor in `[0,1]`.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut v = vec![T::zero(); 3 * plane];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                v[c * plane + i] = T::from_f64c(px[c] as f64 / 255.0);
            }
        }
        Tensor::from_vec(v, &[3, self.height, self.width]).expect("size checked at construction")
    }

    /// From a `[3,H,W]` tensor; values are clamped to `[0,1]` and rounded.
    pub fn from_tensor<T: Element>(x: &Tensor<T>) -> Result<Self> {
        let s = x.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(SdtlError::Shape(format!("expected [3,H,W] image tensor, got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let plane = h * w;
        let d = x.data();
        let mut pixels = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                pixels[3 * i + c] = quantize(d[c * plane + i].to_f64c());
            }
        }
        ImageBuf::new(w, h, pixels)
    }

    pub fn crop(&self, x: usize, y: usize, size: usize) -> ImageBuf {
        let mut pixels = Vec::with_capacity(size * size * 3);
        for row in y..y + size {
            let start = (row * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + size * 3]);
        }
        ImageBuf { width: size, height: size, pixels }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> SdtlError {
    SdtlError::Parse { path: path.to_path_buf(), offset, msg: msg.into() }
}

/// Binary PPM (`P6`, maxval 255).
pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageBuf> {
    let mut pos = 0;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(parse_err(path, 0, "missing P6 magic"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, pos, format!("expected {name}")));
        }
        fields[k] = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| parse_err(path, start, format!("{name} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_err(path, pos, "expected single whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(SdtlError::Format { path: path.to_path_buf(), msg: format!("PPM maxval {maxval}, only 255 supported") });
    }
    if w == 0 || h == 0 {
        return Err(parse_err(path, pos, format!("empty image {w}x{h}")));
    }
    let need = w * h * 3;
    let have = bytes.len() - pos;
    if have < need {
        return Err(parse_err(path, pos, format!("truncated pixel data: expected {need} bytes, found {have}")));
    }
    ImageBuf::new(w, h, bytes[pos..pos + need].to_vec())
}

pub fn encode_ppm(img: &ImageBuf) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageBuf> {
    let fmt = |msg: String| SdtlError::Format { path: path.to_path_buf(), msg };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| fmt(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| fmt("PNG too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| fmt(format!("PNG: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(fmt(format!("PNG bit depth {:?}, only 8-bit supported", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let pixels = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(fmt(format!("PNG color type {other:?}"))),
    };
    ImageBuf::new(w, h, pixels)
}

fn encode_png(img: &ImageBuf, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| SdtlError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| SdtlError::Format { path: path.to_path_buf(), msg: format!("PNG: {e}") };
    let mut writer = enc.write_header().map_err(fmt)?;
    writer.write_image_data(&img.pixels).map_err(fmt)?;
    writer.finish().map_err(fmt)
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn is_image(path: &Path) -> bool {
    matches!(extension(path).as_str(), "ppm" | "png")
}

pub fn load_image(path: &Path) -> Result<ImageBuf> {
    let bytes = fs::read(path).map_err(|e| SdtlError::io(path, e))?;
    match extension(path).as_str() {
        "ppm" => decode_ppm(&bytes, path),
        "png" => decode_png(&bytes, path),
        e => Err(SdtlError::Format { path: path.to_path_buf(), msg: format!("unsupported extension '{e}'") }),
    }
}

pub fn save_image(path: &Path, img: &ImageBuf) -> Result<()> {
    match extension(path).as_str() {
        "ppm" => fs::write(path, encode_ppm(img)).map_err(|e| SdtlError::io(path, e)),
        "png" => encode_png(img, path),
        e => Err(SdtlError::Format { path: path.to_path_buf(), msg: format!("unsupported extension '{e}'") }),
    }
}

/// Image files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| SdtlError::io(dir, e))? {
        let p = entry.map_err(|e| SdtlError::io(dir, e))?.path();
        if p.is_file() && is_image(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string()
}

/// `<root>/low/*` paired with `<root>/high/*` by file stem.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

impl PairedDataset {
    pub fn open(root: &Path) -> Result<Self> {
        let low = list_images(&root.join("low"))?;
        let high = list_images(&root.join("high"))?;
        let mut pairs = Vec::with_capacity(low.len());
        for l in &low {
            let s = stem(l);
            let matches: Vec<&PathBuf> = high.iter().filter(|h| stem(h) == s).collect();
            match matches.as_slice() {
                [h] => pairs.push((l.clone(), (*h).clone())),
                [] => return Err(SdtlError::Input(format!("{}: no partner in high/", l.display()))),
                _ => return Err(SdtlError::Input(format!("{}: several partners in high/", l.display()))),
            }
        }
        if pairs.is_empty() {
            return Err(SdtlError::Input(format!("{}: dataset is empty", root.display())));
        }
        Ok(PairedDataset { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load_pair(&self, i: usize) -> Result<(ImageBuf, ImageBuf)> {
        let (l, h) = &self.pairs[i];
        let (a, b) = (load_image(l)?, load_image(h)?);
        if (a.width, a.height) != (b.width, b.height) {
            return Err(SdtlError::Input(format!(
                "{}: pair sizes differ ({}x{} vs {}x{})",
                l.display(),
                a.width,
                a.height,
                b.width,
                b.height
            )));
        }
        Ok((a, b))
    }
}

/// The same random `size×size` window from both images. Returns the crops
/// and the `(x, y)` offset.
pub fn random_crop_pair<R: Rng + ?Sized>(
    low: &ImageBuf,
    high: &ImageBuf,
    size: usize,
    rng: &mut R,
) -> Result<(ImageBuf, ImageBuf, (usize, usize))> {
    if size == 0 || size % 4 != 0 {
        return Err(SdtlError::Config(format!("crop size {size} must be a positive multiple of 4")));
    }
    if (low.width, low.height) != (high.width, high.height) {
        return Err(SdtlError::Input("pair images differ in size".into()));
    }
    if low.width < size || low.height < size {
        return Err(SdtlError::Input(format!(
            "image {}x{} smaller than crop {size}",
            low.width, low.height
        )));
    }
    let x = rng.random_range(0..=low.width - size);
    let y = rng.random_range(0..=low.height - size);
    Ok((low.crop(x, y, size), high.crop(x, y, size), (x, y)))
}

pub const DEFAULT_GAMMA: f64 = 3.0;
pub const DEFAULT_SIGMA: f64 = 0.03;

/// `v ← clamp(v^γ + N(0, σ))` per sample.
pub fn synth_lowlight<R: Rng + ?Sized>(x: &ImageBuf, gamma: f64, sigma: f64, rng: &mut R) -> Result<ImageBuf> {
    if !(gamma >= 1.0) || !(sigma >= 0.0) {
        return Err(SdtlError::Config(format!("need gamma >= 1 and sigma >= 0, got {gamma}, {sigma}")));
    }
    let noise = Normal::new(0.0, sigma).expect("sigma checked");
    let pixels = x
        .pixels
        .iter()
        .map(|&p| {
            let v = (p as f64 / 255.0).powf(gamma);
            let n = if sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            quantize(v + n)
        })
        .collect();
    ImageBuf::new(x.width, x.height, pixels)
}

/// Smooth colour gradient with a few rectangles and discs: structured
/// test content with both flat regions and edges.
pub fn procedural_scene<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> ImageBuf {
    let base: [f64; 3] = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    let slope: [f64; 3] = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let mut img = vec![0.0f64; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / width as f64 - 0.5;
            let v = y as f64 / height as f64 - 0.5;
            for c in 0..3 {
                img[(y * width + x) * 3 + c] = base[c] + slope[c] * (u + v);
            }
        }
    }
    for _ in 0..rng.random_range(3..6) {
        let colour: [f64; 3] = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let r = rng.random_range(0.1..0.3) * width.min(height) as f64;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let inside = if disc { dx * dx + dy * dy < r * r } else { dx.abs() < r && dy.abs() < 0.6 * r };
                if inside {
                    img[(y * width + x) * 3..][..3].copy_from_slice(&colour);
                }
            }
        }
    }
    ImageBuf { width, height, pixels: img.into_iter().map(quantize).collect() }
}
