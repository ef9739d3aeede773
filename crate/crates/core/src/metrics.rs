//! Full-reference quality metrics on `[0,1]` float images.

use std::fmt::Write as _;

use crate::error::{Result, SdtlError};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Planar float image, `3×H×W`, values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(SdtlError::Input(format!(
                "{width}x{height} image needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(FloatImage { width, height, data })
    }

    pub fn from_buf(img: &crate::data::ImageBuf) -> Self {
        let t = img.to_tensor::<f64>();
        FloatImage { width: img.width, height: img.height, data: t.to_vec() }
    }

    pub fn luma(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        (0..plane)
            .map(|i| 0.299 * self.data[i] + 0.587 * self.data[plane + i] + 0.114 * self.data[2 * plane + i])
            .collect()
    }
}

fn same_shape(a: &FloatImage, b: &FloatImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) || a.data.len() != b.data.len() {
        return Err(SdtlError::Input(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// `10·log10(1/MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalized Gaussian.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..k).map(|i| g[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|i| g[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Single-scale SSIM on luma: 11×11 Gaussian window (σ = 1.5), averaged
/// over all valid window positions.
pub fn ssim(a: &FloatImage, b: &FloatImage) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(SdtlError::Input(format!("image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    if a.data == b.data {
        return Ok(1.0);
    }
    let (x, y) = (a.luma(), b.luma());
    let g = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, my) = (filter_valid(&x, w, h, &g), filter_valid(&y, w, h, &g));
    let (sxx, syy, sxy) = (filter_valid(&xx, w, h, &g), filter_valid(&yy, w, h, &g), filter_valid(&xy, w, h, &g));
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn mean(&self) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        (
            self.rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            self.rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        )
    }

    /// `filename,psnr_db,ssim` rows followed by a `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("filename,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6}", r.name, r.psnr, r.ssim);
        }
        let (p, q) = self.mean();
        let _ = writeln!(s, "MEAN,{p:.6},{q:.6}");
        s
    }
}
