use crate::element::{gemm, Element};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Epsilon inside the layer-norm variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Element> Tensor<T> {
    /// Softmax along `axis`, stabilised by subtracting the running max.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(config_err("softmax", format!("axis {axis} out of range for rank {rank}")));
        }
        let len = self.shape()[axis];
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut y = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let mx = (0..len).map(|j| y[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (y[at(j)] - mx).exp();
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    y[at(j)] /= total;
                }
            }
        }
        let saved = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: T = (0..len).map(|j| g[at(j)] * saved[at(j)]).sum();
                        for j in 0..len {
                            gx[at(j)] = saved[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Layer normalisation over the last axis with affine `gain`/`bias`
    /// (both of length equal to that axis).
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| config_err("layer_norm", "rank-0 input"))?;
        if d == 0 {
            return Err(config_err("layer_norm", "normalized axis has length 0"));
        }
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(shape_err("layer_norm", self.shape(), gain.shape()));
        }
        let rows = self.numel() / d;
        let eps = T::from_f64c(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_usize(d).expect("usize fits");
        let mut xhat = self.to_vec();
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &mut xhat[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * rs);
            rstd[r] = rs;
        }
        let mut y = xhat.clone();
        {
            let (gd, bd) = (gain.data(), bias.data());
            for row in y.chunks_mut(d) {
                for ((v, &g), &b) in row.iter_mut().zip(gd.iter()).zip(bd.iter()) {
                    *v = *v * g + b;
                }
            }
        }
        let (pg, pb) = (gain.clone(), bias.clone());
        let need_x = self.requires_grad();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "layer_norm",
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                let gd = pg.data();
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                let mut gx = need_x.then(|| vec![T::zero(); g.len()]);
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for j in 0..d {
                        ggain[j] += gr[j] * xr[j];
                        gbias[j] += gr[j];
                        let dxh = gr[j] * gd[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xr[j];
                    }
                    if let Some(gx) = gx.as_mut() {
                        let (m1, m2) = (sum_dxh * inv_d, sum_dxh_xh * inv_d);
                        for j in 0..d {
                            gx[r * d + j] = rstd[r] * (gr[j] * gd[j] - m1 - xr[j] * m2);
                        }
                    }
                }
                vec![gx, pg.requires_grad().then_some(ggain), pb.requires_grad().then_some(gbias)]
            }),
        ))
    }

    /// 2-D cross-correlation of a `[C_in,H,W]` input with `[C_out,C_in,k,k]`
    /// weights, zero padding `pad` on every side. Output side is
    /// `floor((H + 2·pad − k) / stride) + 1`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] {
            return Err(shape_err("conv2d", xs, ws));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(config_err("conv2d", format!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(config_err("conv2d", "stride must be positive"));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(config_err("conv2d", format!("kernel {k} larger than padded input {h}x{w}")));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(shape_err("conv2d bias", b.shape(), &[cout]));
            }
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { cin, h, w, k, stride, pad, ho, wo };
        let cols = im2col(&self.data(), &geom);
        let l = ho * wo;
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); cout * l];
        gemm(cout, ckk, l, &weight.data(), false, &cols, false, &mut out, false);
        if let Some(b) = bias {
            let bd = b.data();
            for (co, row) in out.chunks_mut(l).enumerate() {
                row.iter_mut().for_each(|v| *v += bd[co]);
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (px, pw) = (self.clone(), weight.clone());
        let pbias = bias.cloned();
        let keep_cols = weight.requires_grad();
        let cols = if keep_cols { cols } else { Vec::new() };
        Ok(Tensor::from_op(
            out,
            vec![cout, ho, wo],
            "conv2d",
            parents,
            Box::new(move |g| {
                let gx = px.requires_grad().then(|| {
                    let mut dcols = vec![T::zero(); ckk * l];
                    gemm(ckk, cout, l, &pw.data(), true, g, false, &mut dcols, false);
                    col2im(&dcols, &geom)
                });
                let gw = pw.requires_grad().then(|| {
                    let mut gw = vec![T::zero(); cout * ckk];
                    gemm(cout, l, ckk, g, false, &cols, true, &mut gw, false);
                    gw
                });
                let mut grads = vec![gx, gw];
                if let Some(b) = &pbias {
                    grads.push(b.requires_grad().then(|| g.chunks(l).map(|row| row.iter().copied().sum()).collect()));
                }
                grads
            }),
        ))
    }

    /// Per-channel spatial mean, `[C,H,W] → [C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 3 || s[1] == 0 || s[2] == 0 {
            return Err(config_err("global_avg_pool", format!("expected non-empty [C,H,W], got {s:?}")));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        let inv = T::one() / T::from_usize(hw).expect("usize fits");
        let data = self.data().chunks(hw).map(|ch| ch.iter().copied().sum::<T>() * inv).collect();
        Ok(Tensor::from_op(
            data,
            vec![c],
            "global_avg_pool",
            vec![self.clone()],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(c * hw);
                for &gc in g {
                    gx.extend(std::iter::repeat_n(gc * inv, hw));
                }
                vec![Some(gx)]
            }),
        ))
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Input coordinate for output `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + t).checked_sub(self.pad)?;
        (p < limit).then_some(p)
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let l = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.cin * g.k * g.k * l];
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * l;
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let xrow = &x[(c * g.h + iy) * g.w..(c * g.h + iy + 1) * g.w];
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            *d = xrow[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Element>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let l = g.ho * g.wo;
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * l;
                for oy in 0..g.ho {
                    let Some(iy) = g.src(oy, ky, g.h) else { continue };
                    let base = (c * g.h + iy) * g.w;
                    for ox in 0..g.wo {
                        if let Some(ix) = g.src(ox, kx, g.w) {
                            x[base + ix] += cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}
