//! One- and two-level orthonormal Haar analysis/synthesis on `[C,H,W]`
//! tensors.
//!
//! For every non-overlapping 2×2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2      HL = (a − b + c − d) / 2
//! LH = (a + b − c − d) / 2      HH = (a − b − c + d) / 2
//! ```
//!
//! HL is the horizontal high-pass (it responds to vertical edges), LH the
//! vertical high-pass, HH the diagonal detail. The transform is its own
//! transpose, so synthesis uses the same butterfly.
//!
//! These functions work on values; the results are constant tensors that
//! do not record a backward graph.

use sdtl_tensor::{Element, Tensor};

use crate::error::{Result, SdtlError};

/// The four subbands of one decomposition level, each `[C, H/2, W/2]`.
#[derive(Debug, Clone)]
pub struct SubbandSet<T: Element> {
    pub ll: Tensor<T>,
    pub hl: Tensor<T>,
    pub lh: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Element> SubbandSet<T> {
    /// High-frequency bands in `HL, LH, HH` order.
    pub fn highs(&self) -> [Tensor<T>; 3] {
        [self.hl.clone(), self.lh.clone(), self.hh.clone()]
    }

    pub fn from_parts(ll: Tensor<T>, highs: [Tensor<T>; 3]) -> Self {
        let [hl, lh, hh] = highs;
        SubbandSet { ll, hl, lh, hh }
    }

    /// Sum of squares over all four planes.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.hl, &self.lh, &self.hh]
            .iter()
            .map(|t| t.to_f64_vec().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

fn half(v: f64) -> f64 {
    v * 0.5
}

/// Single-level 2-D Haar analysis. Requires even `H` and `W`.
pub fn dwt2<T: Element>(x: &Tensor<T>) -> Result<SubbandSet<T>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(SdtlError::Shape(format!("dwt2 expects [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(SdtlError::Shape(format!("dwt2 needs even non-zero H and W, got {h}x{w}")));
    }
    let (h2, w2) = (h / 2, w / 2);
    let n = c * h2 * w2;
    let (mut ll, mut hl, mut lh, mut hh) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let d = x.data();
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let top = (ch * h + 2 * i) * w + 2 * j;
                let bot = top + w;
                let (a, b, cc, dd) = (d[top].to_f64c(), d[top + 1].to_f64c(), d[bot].to_f64c(), d[bot + 1].to_f64c());
                let o = (ch * h2 + i) * w2 + j;
                ll[o] = T::from_f64c(half(a + b + cc + dd));
                hl[o] = T::from_f64c(half(a - b + cc - dd));
                lh[o] = T::from_f64c(half(a + b - cc - dd));
                hh[o] = T::from_f64c(half(a - b - cc + dd));
            }
        }
    }
    let shape = [c, h2, w2];
    Ok(SubbandSet {
        ll: Tensor::from_vec(ll, &shape)?,
        hl: Tensor::from_vec(hl, &shape)?,
        lh: Tensor::from_vec(lh, &shape)?,
        hh: Tensor::from_vec(hh, &shape)?,
    })
}

/// Exact inverse of [`dwt2`].
pub fn iwt2<T: Element>(bands: &SubbandSet<T>) -> Result<Tensor<T>> {
    let s = bands.ll.shape().to_vec();
    for t in [&bands.hl, &bands.lh, &bands.hh] {
        if t.shape() != s.as_slice() {
            return Err(SdtlError::Shape(format!(
                "iwt2 subband shapes disagree: LL {s:?} vs {:?}",
                t.shape()
            )));
        }
    }
    if s.len() != 3 {
        return Err(SdtlError::Shape(format!("iwt2 expects [C,H,W] planes, got {s:?}")));
    }
    let (c, h2, w2) = (s[0], s[1], s[2]);
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = vec![T::zero(); c * h * w];
    let (ll, hl, lh, hh) = (bands.ll.data(), bands.hl.data(), bands.lh.data(), bands.hh.data());
    for ch in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                let o = (ch * h2 + i) * w2 + j;
                let (l, x, y, z) = (ll[o].to_f64c(), hl[o].to_f64c(), lh[o].to_f64c(), hh[o].to_f64c());
                let top = (ch * h + 2 * i) * w + 2 * j;
                let bot = top + w;
                out[top] = T::from_f64c(half(l + x + y + z));
                out[top + 1] = T::from_f64c(half(l - x + y - z));
                out[bot] = T::from_f64c(half(l + x - y - z));
                out[bot + 1] = T::from_f64c(half(l - x - y + z));
            }
        }
    }
    Ok(Tensor::from_vec(out, &[c, h, w])?)
}

/// Two nested levels: `level2 = dwt2(level1.ll)`. Requires `H`, `W`
/// multiples of 4; level-2 planes hold 1/16 of the input's pixels.
pub fn dwt2_level2<T: Element>(x: &Tensor<T>) -> Result<(SubbandSet<T>, SubbandSet<T>)> {
    let s = x.shape();
    if s.len() != 3 || s[1] % 4 != 0 || s[2] % 4 != 0 {
        return Err(SdtlError::Shape(format!(
            "two-level DWT needs [C,H,W] with H, W multiples of 4, got {s:?}"
        )));
    }
    let level1 = dwt2(x)?;
    let level2 = dwt2(&level1.ll)?;
    Ok((level1, level2))
}

/// Inverse of [`dwt2_level2`]: rebuild level-1 LL from level 2, then the image.
pub fn iwt2_level2<T: Element>(level1_highs: &[Tensor<T>; 3], level2: &SubbandSet<T>) -> Result<Tensor<T>> {
    let ll1 = iwt2(level2)?;
    iwt2(&SubbandSet::from_parts(ll1, level1_highs.clone()))
}
